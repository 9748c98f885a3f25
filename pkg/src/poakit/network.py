"""Directed networks with one origin-destination pair.

A :class:`Network` is a multigraph of directed edges between named vertices,
with a single origin and destination. Routing happens on simple paths;
:func:`enumerate_paths` lists them in lexicographic edge-id order and
:class:`PathSet` caches the edge-path incidence matrix used by the solvers.

:func:`decompose_series_parallel` reduces the network to a binary
series/parallel composition tree when one exists.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .costs import CostFunction, cost_from_json, cost_to_json
from .errors import NoPath, NotSP, PathExplosion

__all__ = [
    "Edge",
    "Network",
    "PathSet",
    "enumerate_paths",
    "SPLeaf",
    "SPSeries",
    "SPParallel",
    "decompose_series_parallel",
    "sp_terminals",
    "load_network",
    "dump_network",
]

DEFAULT_PATH_CAP = 4096


@dataclass(frozen=True)
class Edge:
    """One directed edge. Ids are unique strings; self-loops are rejected."""

    id: str
    tail: str
    head: str


@dataclass(frozen=True)
class Network:
    """Directed multigraph with a designated origin and destination."""

    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]
    origin: str
    destination: str

    def __post_init__(self):
        vset = set(self.vertices)
        if len(vset) != len(self.vertices):
            raise ValueError("duplicate vertex names")
        ids = [e.id for e in self.edges]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate edge ids")
        for e in self.edges:
            if e.tail == e.head:
                raise ValueError(f"edge {e.id!r} is a self-loop")
            if e.tail not in vset or e.head not in vset:
                raise ValueError(f"edge {e.id!r} references unknown vertex")
        if self.origin not in vset or self.destination not in vset:
            raise ValueError("origin or destination is not a vertex")
        if self.origin == self.destination:
            raise ValueError("origin and destination must differ")

    @property
    def edge_ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.edges)

    def edge_index(self) -> dict[str, int]:
        return {e.id: i for i, e in enumerate(self.edges)}

    def out_edges(self, vertex: str) -> list[Edge]:
        return sorted((e for e in self.edges if e.tail == vertex), key=lambda e: e.id)


def enumerate_paths(net: Network, cap: int = DEFAULT_PATH_CAP) -> list[tuple[str, ...]]:
    """All simple origin-destination paths as tuples of edge ids.

    Paths come out in lexicographic order of their edge-id sequences. Raises
    :class:`NoPath` when none exists and :class:`PathExplosion` when more
    than ``cap`` paths would be produced.
    """
    out = {v: net.out_edges(v) for v in net.vertices}
    paths: list[tuple[str, ...]] = []
    trail: list[str] = []
    visited = {net.origin}

    def walk(vertex: str):
        if vertex == net.destination:
            if len(paths) >= cap:
                raise PathExplosion(f"more than {cap} origin-destination paths")
            paths.append(tuple(trail))
            return
        for e in out[vertex]:
            if e.head in visited:
                continue
            visited.add(e.head)
            trail.append(e.id)
            walk(e.head)
            trail.pop()
            visited.remove(e.head)

    walk(net.origin)
    if not paths:
        raise NoPath(f"no path from {net.origin!r} to {net.destination!r}")
    return paths


@dataclass(frozen=True)
class PathSet:
    """Paths of a network plus the edge-path incidence matrix.

    ``incidence[e, p]`` is 1 when path p uses edge e; edge rows follow
    ``net.edges`` order, path columns follow lexicographic path order.
    """

    net: Network
    paths: tuple[tuple[str, ...], ...]
    incidence: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def build(cls, net: Network, cap: int = DEFAULT_PATH_CAP) -> "PathSet":
        paths = tuple(enumerate_paths(net, cap=cap))
        index = net.edge_index()
        Z = np.zeros((len(net.edges), len(paths)))
        for p, path in enumerate(paths):
            for eid in path:
                Z[index[eid], p] = 1.0
        return cls(net=net, paths=paths, incidence=Z)

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def n_edges(self) -> int:
        return len(self.net.edges)

    def edge_loads(self, path_flows: np.ndarray) -> np.ndarray:
        return self.incidence @ np.asarray(path_flows, dtype=float)


# -- series-parallel decomposition -------------------------------------------


@dataclass(frozen=True)
class SPLeaf:
    edge_id: str


@dataclass(frozen=True)
class SPSeries:
    first: "SPTree"
    second: "SPTree"


@dataclass(frozen=True)
class SPParallel:
    first: "SPTree"
    second: "SPTree"


SPTree = SPLeaf | SPSeries | SPParallel


def sp_terminals(tree: SPTree) -> list[str]:
    """Edge ids at the leaves, left to right."""
    if isinstance(tree, SPLeaf):
        return [tree.edge_id]
    return sp_terminals(tree.first) + sp_terminals(tree.second)


def decompose_series_parallel(net: Network) -> SPTree:
    """Reduce the network to a series/parallel composition tree.

    Repeatedly merges parallel edge pairs and contracts internal vertices of
    in-degree one and out-degree one. A network that does not collapse to a
    single origin-destination edge raises :class:`NotSP`.
    """
    # working copy: list of (edge_id, tail, head); trees keyed by edge id
    work = [(e.id, e.tail, e.head) for e in net.edges]
    trees: dict[str, SPTree] = {e.id: SPLeaf(e.id) for e in net.edges}
    fresh = 0

    def new_id() -> str:
        nonlocal fresh
        fresh += 1
        return f"#{fresh}"

    changed = True
    while changed and len(work) > 1:
        changed = False
        # parallel step: fold together all edges sharing (tail, head)
        groups: dict[tuple[str, str], list[str]] = {}
        for eid, tail, head in work:
            groups.setdefault((tail, head), []).append(eid)
        for (tail, head), ids in sorted(groups.items()):
            if len(ids) < 2:
                continue
            ids.sort()
            merged = trees[ids[0]]
            for other in ids[1:]:
                merged = SPParallel(merged, trees[other])
            mid = new_id()
            trees[mid] = merged
            work = [(eid, t, h) for eid, t, h in work if eid not in ids]
            work.append((mid, tail, head))
            changed = True
        # series step: contract internal vertices with one edge in, one out
        indeg: dict[str, list[int]] = {}
        outdeg: dict[str, list[int]] = {}
        for i, (eid, tail, head) in enumerate(work):
            outdeg.setdefault(tail, []).append(i)
            indeg.setdefault(head, []).append(i)
        for v in sorted(set(indeg) & set(outdeg)):
            if v in (net.origin, net.destination):
                continue
            if len(indeg[v]) != 1 or len(outdeg[v]) != 1:
                continue
            i_in, i_out = indeg[v][0], outdeg[v][0]
            ein, eout = work[i_in], work[i_out]
            if ein[1] == eout[2]:
                continue  # contraction would create a self-loop
            mid = new_id()
            trees[mid] = SPSeries(trees[ein[0]], trees[eout[0]])
            work = [w for k, w in enumerate(work) if k not in (i_in, i_out)]
            work.append((mid, ein[1], eout[2]))
            changed = True
            break  # degree bookkeeping is stale; rescan

    if len(work) == 1 and work[0][1] == net.origin and work[0][2] == net.destination:
        return trees[work[0][0]]
    raise NotSP("network does not reduce to a series-parallel composition")


# -- JSON ---------------------------------------------------------------------


def network_from_json(doc: dict) -> tuple[Network, dict[str, CostFunction]]:
    """Build a network and its edge costs from a JSON document."""
    try:
        edges = tuple(Edge(id=str(e["id"]), tail=str(e["tail"]), head=str(e["head"]))
                      for e in doc["edges"])
        net = Network(
            vertices=tuple(str(v) for v in doc["vertices"]),
            edges=edges,
            origin=str(doc["origin"]),
            destination=str(doc["destination"]),
        )
        costs = {str(e["id"]): cost_from_json(e["cost"]) for e in doc["edges"]}
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed network document: {exc}") from exc
    return net, costs


def network_to_json(net: Network, costs: dict[str, CostFunction]) -> dict:
    return {
        "vertices": list(net.vertices),
        "edges": [
            {"id": e.id, "tail": e.tail, "head": e.head, "cost": cost_to_json(costs[e.id])}
            for e in net.edges
        ],
        "origin": net.origin,
        "destination": net.destination,
    }


def load_network(path: str) -> tuple[Network, dict[str, CostFunction]]:
    """Read a network JSON file; returns the network and per-edge costs."""
    with open(path) as fh:
        doc = json.load(fh)
    return network_from_json(doc)


def dump_network(path: str, net: Network, costs: dict[str, CostFunction]) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_json(net, costs), fh, indent=2, sort_keys=True)
        fh.write("\n")
