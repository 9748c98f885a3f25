"""Exact piecewise representation of affine-cost equilibria over demand.

For all-affine costs the equilibrium flow is piecewise affine in the demand:
f(mu) = mu*w + z on maximal intervals where the active edge set is constant,
with common cost lambda(mu) = alpha + beta*mu. :func:`trace_affine` walks
those intervals by continuation, locating the demands where the active
network changes (breakpoints) and fitting (w, z) per segment; the segment
algebra feeds the efficiency analytics downstream.

Optimum-side structure comes for free: the social optimum at demand mu is
half the equilibrium at demand 2*mu, so optimum breakpoints are equilibrium
breakpoints halved and each segment carries the constant ``gamma`` of the
optimum social-cost quadratic gamma + alpha*mu + beta*mu^2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .costs import Affine, CostFunction
from .errors import DegenerateSegmentWarning, SignViolation
from .network import Network, PathSet
from .equilibrium import EquilibriumSolution, solve_affine_exact

__all__ = [
    "TraceSegment",
    "Breakpoint",
    "AffineTrace",
    "trace_affine",
    "trace_to_completion",
    "segment_social_costs",
    "segment_solution",
    "optimum_breakpoints",
    "trace_to_json",
    "trace_from_json",
]

SIGN_TOL = 1e-9


@dataclass(frozen=True)
class TraceSegment:
    """One maximal interval (mu_lo, mu_hi] with a constant active network.

    ``mu*w + z`` is an equilibrium path-flow vector for every mu in the
    interval; ``alpha + beta*mu`` is the equilibrium cost; ``gamma`` is the
    constant term of the optimum social cost valid where 2*mu stays inside
    this segment.
    """

    mu_lo: float
    mu_hi: float
    paths: tuple[tuple[str, ...], ...]
    w: np.ndarray
    z: np.ndarray
    alpha: float
    beta: float
    gamma: float
    active_edges: frozenset[str]

    def flows(self, mu: float) -> np.ndarray:
        return mu * self.w + self.z

    def lam(self, mu: float) -> float:
        return self.alpha + self.beta * mu


@dataclass(frozen=True)
class Breakpoint:
    """Demand where the active edge set changes, with the sets on each side."""

    mu: float
    active_before: frozenset[str]
    active_after: frozenset[str]


@dataclass(frozen=True)
class AffineTrace:
    segments: tuple[TraceSegment, ...]
    breakpoints: tuple[Breakpoint, ...]
    mu_max: float
    complete: bool  # True when no further active-set change exists beyond mu_max

    @property
    def breakpoint_demands(self) -> tuple[float, ...]:
        return tuple(b.mu for b in self.breakpoints)

    def segment_at(self, mu: float) -> TraceSegment:
        """Segment owning demand mu; breakpoints belong to the left segment."""
        if mu <= 0:
            raise ValueError(f"demand must be positive, got {mu}")
        for seg in self.segments:
            if mu <= seg.mu_hi or seg is self.segments[-1]:
                return seg
        raise ValueError(f"demand {mu} beyond traced range {self.mu_max}")


# -- segment algebra -----------------------------------------------------------


def _path_quadratic(paths, costs: dict[str, CostFunction]):
    """A[p,q] = sum of slopes on shared edges; d[p] = sum of intercepts."""
    n = len(paths)
    edge_ids = sorted({e for p in paths for e in p})
    a = {e: costs[e].a for e in edge_ids}
    b = {e: costs[e].b for e in edge_ids}
    A = np.zeros((n, n))
    d = np.zeros(n)
    for i, p in enumerate(paths):
        sp = set(p)
        d[i] = sum(b[e] for e in p)
        for j, q in enumerate(paths):
            A[i, j] = sum(a[e] for e in sp.intersection(q))
    return A, d


def segment_social_costs(seg: TraceSegment, costs: dict[str, CostFunction]):
    """Social-cost coefficients of a segment: (alpha, beta, gamma).

    Equilibrium social cost is alpha*mu + beta*mu^2 on the segment; optimum
    social cost is gamma + alpha*mu + beta*mu^2 while 2*mu stays inside.
    Raises :class:`SignViolation` if alpha or beta is negative or gamma is
    positive beyond tolerance, which signals a mis-traced segment.
    """
    A, d = _path_quadratic(seg.paths, costs)
    w, z = seg.w, seg.z
    alpha = float((A @ z + d) @ w)
    beta = float(A @ w @ w)
    gamma = float(0.25 * (A @ z @ z) + 0.5 * (d @ z))
    scale = max(1.0, abs(alpha), abs(beta), abs(gamma))
    if alpha < -SIGN_TOL * scale or beta < -SIGN_TOL * scale or gamma > SIGN_TOL * scale:
        raise SignViolation(
            f"segment ({seg.mu_lo:.6g}, {seg.mu_hi:.6g}] has alpha={alpha:.3e}, "
            f"beta={beta:.3e}, gamma={gamma:.3e}")
    return alpha, beta, gamma


# -- the tracer ----------------------------------------------------------------


def _step_in(mu: float) -> float:
    return 1e-7 * max(1.0, mu)


def _forward_events(w, z, A, d, mu_ref: float, active_paths) -> list[float]:
    """Demands > mu_ref where the fitted line stops being an equilibrium.

    Two affine event families: a used path's flow reaching zero, and an
    unused path's cost falling to the common cost.
    """
    scale = max(1.0, mu_ref)
    tiny = 1e-11 * scale
    events: list[float] = []
    # flow hits zero
    for p in range(len(w)):
        if w[p] < -1e-13:
            root = -z[p] / w[p]
            if root > mu_ref + tiny:
                events.append(float(root))
    # cost gap of a non-optimal path hits zero
    cost_slope = A @ w
    cost_icept = A @ z + d
    lam_slope = float(w @ cost_slope)
    lam_icept = float(w @ cost_icept)
    for p in range(len(w)):
        if p in active_paths:
            continue
        gs = cost_slope[p] - lam_slope
        gi = cost_icept[p] - lam_icept
        gap_ref = gs * mu_ref + gi
        if gs < -1e-13 and gap_ref > tiny:
            root = -gi / gs
            if root > mu_ref + tiny:
                events.append(float(root))
    return sorted(events)


def _optimal_paths(A, d, w, z, mu: float) -> set[int]:
    """Paths whose cost sits at the common cost at demand mu on the line."""
    c = A @ (mu * w + z) + d
    lam = float(c.min())
    tol = 1e-9 * max(1.0, lam)
    return {p for p in range(len(c)) if c[p] <= lam + tol}


def trace_affine(net: Network, costs: dict[str, CostFunction], mu_max: float,
                 refine_tol: float = 1e-9,
                 path_cap: int | None = None) -> AffineTrace:
    """Trace the exact equilibrium structure over demands (0, mu_max].

    Forward continuation: fit the local flow line from two exact solves,
    compute candidate events in closed form, and validate each by re-solving
    just past it. Candidates that do not change the active edge set are
    selection artifacts (equilibria are non-unique there) and the scan
    continues; genuine changes are refined by bisection on active-set
    equality down to ``refine_tol`` and recorded as breakpoints. Each
    breakpoint belongs to the segment on its left.
    """
    if mu_max <= 0:
        raise ValueError(f"mu_max must be positive, got {mu_max}")
    cost_list = [costs[e.id] for e in net.edges]
    if not all(isinstance(c, Affine) for c in cost_list):
        raise ValueError("trace_affine requires every cost to be affine")
    ps = PathSet.build(net) if path_cap is None else PathSet.build(net, cap=path_cap)
    A, d = _path_quadratic(ps.paths, costs)

    seed: tuple[int, ...] | None = None

    def solve(mu: float):
        nonlocal seed
        sol = solve_affine_exact(net, costs, mu, seed_support=seed,
                                 path_cap=path_cap)
        seed = tuple(np.flatnonzero(sol.path_flows > 1e-9 * max(1.0, mu)).tolist())
        return sol

    def tight_active(sol) -> frozenset[str]:
        # exact-solver path costs are machine precision, so a band far below
        # the solver's reporting tolerance resolves activity right up against
        # a breakpoint without flipping early
        c = A @ sol.path_flows + d
        lam = float(c.min())
        tol = 1e-10 * max(1.0, lam)
        return frozenset(
            e for p, cp in zip(ps.paths, c) if cp <= lam + tol for e in p)

    def active_at(mu: float) -> frozenset[str]:
        return tight_active(solve(mu))

    def fit_line(mu_a: float, mu_b: float):
        fa = solve(mu_a).path_flows
        fb = solve(mu_b).path_flows
        w = (fb - fa) / (mu_b - mu_a)
        z = fa - mu_a * w
        return w, z

    segments: list[TraceSegment] = []
    breakpoints: list[Breakpoint] = []
    lo = 0.0
    complete = False
    guard = 0

    while lo < mu_max:
        guard += 1
        if guard > 1000:
            raise RuntimeError("tracer failed to make progress (over 1000 segments)")
        eps = _step_in(lo)
        probe = lo + eps
        act = active_at(probe)

        # scan forward inside this active-set interval
        cursor = probe
        hi: float | None = None  # demand of the next breakpoint, if any
        scan_guard = 0
        while True:
            scan_guard += 1
            if scan_guard > 200:
                raise RuntimeError(f"event scan stalled near demand {cursor}")
            h = 0.5 * max(1.0, cursor)
            while True:
                w, z = fit_line(cursor, cursor + h)
                mid = cursor + 0.5 * h
                f_mid = solve(mid).path_flows
                if np.abs(f_mid - (mid * w + z)).max() <= 1e-8 * max(1.0, mid) \
                        and (mid * w + z).min() >= -1e-9 * max(1.0, mid):
                    break
                h *= 0.5
                if h < 4 * eps:
                    # breakpoint closer than the smallest reliable fit step
                    w = z = None
                    break
            if w is None:
                if active_at(cursor + 4 * eps) == act:
                    raise RuntimeError(
                        f"line fit failed without an active-set change near {cursor}")
                hi = _bisect_breakpoint(active_at, act, cursor, cursor + 4 * eps,
                                        refine_tol)
                break
            events = _forward_events(w, z, A, d, cursor,
                                     _optimal_paths(A, d, w, z, cursor))
            nxt = events[0] if events else None
            if nxt is None:
                complete = True
                break
            if nxt >= mu_max:
                if active_at(mu_max) == act:
                    break
                hi = _bisect_breakpoint(active_at, act, cursor, mu_max, refine_tol)
                break
            step = _step_in(nxt)
            if active_at(nxt + step) == act:
                cursor = nxt + step  # selection kink only; refit and continue
                continue
            hi = _bisect_breakpoint(active_at, act, cursor, nxt + step, refine_tol)
            # snap to the closed-form root when the refinement agrees with it
            # to within its own resolution; the root is the sharper estimate
            if abs(nxt - hi) <= 10 * refine_tol * max(1.0, hi):
                hi = nxt
            break

        seg_hi = mu_max if hi is None else min(hi, mu_max)
        if seg_hi <= lo:
            warnings.warn(
                f"zero-length segment at demand {lo}", DegenerateSegmentWarning)
            seg_hi = lo + eps
        # anchor the reported line at the segment ends: any equilibria there
        # extend affinely across the whole segment
        f_lo = np.zeros(ps.n_paths) if lo == 0.0 else solve(lo).path_flows
        f_hi = solve(seg_hi).path_flows
        w = (f_hi - f_lo) / (seg_hi - lo)
        z = f_lo - lo * w
        alpha = float((A @ z + d) @ w)
        beta = float(A @ w @ w)
        gamma = float(0.25 * (A @ z @ z) + 0.5 * (d @ z))
        segments.append(TraceSegment(
            mu_lo=lo, mu_hi=seg_hi, paths=ps.paths, w=w, z=z,
            alpha=alpha, beta=beta, gamma=gamma, active_edges=act))
        if hi is not None and hi < mu_max:
            after = active_at(hi + _step_in(hi))
            breakpoints.append(Breakpoint(mu=hi, active_before=act, active_after=after))
            lo = hi
        else:
            if hi is not None and hi >= mu_max:
                complete = False
            break

    return AffineTrace(segments=tuple(segments), breakpoints=tuple(breakpoints),
                       mu_max=mu_max, complete=complete)


def _bisect_breakpoint(active_at, act_left: frozenset, lo: float, hi: float,
                       refine_tol: float) -> float:
    """Smallest demand in (lo, hi] whose right side leaves the active set
    ``act_left``, by bisection on active-set equality."""
    for _ in range(200):
        if hi - lo <= refine_tol * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        if active_at(mid) == act_left:
            lo = mid
        else:
            hi = mid
    return hi


def trace_to_completion(net: Network, costs: dict[str, CostFunction],
                        mu_start: float = 8.0, refine_tol: float = 1e-9,
                        max_doublings: int = 40,
                        path_cap: int | None = None) -> AffineTrace:
    """Trace with mu_max doubled until the structure stabilizes for good."""
    mu = mu_start
    for _ in range(max_doublings):
        trace = trace_affine(net, costs, mu, refine_tol=refine_tol,
                             path_cap=path_cap)
        if trace.complete:
            return trace
        mu *= 2.0
    raise RuntimeError(f"no terminal segment found up to demand {mu}")


def segment_solution(net: Network, costs: dict[str, CostFunction],
                     seg: TraceSegment, mu: float) -> EquilibriumSolution:
    """Equilibrium at ``mu`` reconstructed from a segment's flow line.

    The line is an equilibrium only on the segment's own demand interval
    (and beyond it for the terminal segment of a complete trace); endpoint
    roundoff dust in the flows is clipped, anything more negative surfaces
    as a cost-evaluation error.
    """
    f = np.asarray(seg.flows(mu), dtype=float)
    dust = 1e-9 * max(1.0, mu)
    f[(f < 0) & (f >= -dust)] = 0.0
    loads = {e.id: 0.0 for e in net.edges}
    for path, fp in zip(seg.paths, f):
        for eid in path:
            loads[eid] += fp
    x = np.array([loads[e.id] for e in net.edges])
    cost_list = [costs[e.id] for e in net.edges]
    edge_costs = np.array([c.evaluate(v) for c, v in zip(cost_list, x)])
    by_id = dict(zip((e.id for e in net.edges), edge_costs))
    c_path = np.array([sum(by_id[eid] for eid in p) for p in seg.paths])
    lam = float(c_path.min())
    social = float((x * edge_costs).sum())
    beckmann = float(sum(c.primitive(v) for c, v in zip(cost_list, x)))
    gap = float(f @ c_path - mu * lam)
    return EquilibriumSolution(
        demand=float(mu), edge_ids=tuple(e.id for e in net.edges),
        paths=seg.paths, path_flows=f, edge_loads=x, edge_costs=edge_costs,
        cost=lam, active_edges=seg.active_edges, beckmann_value=beckmann,
        duality_gap=gap, social_cost=social)


def optimum_breakpoints(breakpoints: tuple[Breakpoint, ...]) -> tuple[Breakpoint, ...]:
    """Breakpoints of the social optimum: equilibrium breakpoints halved.

    The optimum at demand mu is half the equilibrium at 2*mu, so the active
    sets on either side carry over unchanged.
    """
    return tuple(Breakpoint(mu=b.mu / 2.0, active_before=b.active_before,
                            active_after=b.active_after) for b in breakpoints)


# -- serialization ---------------------------------------------------------------


def _path_key(path: tuple[str, ...]) -> str:
    return "|".join(path)


def trace_to_json(trace: AffineTrace) -> dict:
    segments = []
    for seg in trace.segments:
        segments.append({
            "mu_lo": seg.mu_lo,
            "mu_hi": seg.mu_hi,
            "alpha": seg.alpha,
            "beta": seg.beta,
            "gamma": seg.gamma,
            "active_edges": sorted(seg.active_edges),
            "w": {_path_key(p): float(v) for p, v in zip(seg.paths, seg.w)},
            "z": {_path_key(p): float(v) for p, v in zip(seg.paths, seg.z)},
        })
    return {
        "mu_max": trace.mu_max,
        "complete": trace.complete,
        "segments": segments,
        "breakpoints": [
            {"mu": b.mu, "active_before": sorted(b.active_before),
             "active_after": sorted(b.active_after)}
            for b in trace.breakpoints
        ],
    }


def trace_from_json(doc: dict) -> AffineTrace:
    segments = []
    for s in doc["segments"]:
        paths = tuple(tuple(k.split("|")) for k in s["w"])
        segments.append(TraceSegment(
            mu_lo=float(s["mu_lo"]), mu_hi=float(s["mu_hi"]), paths=paths,
            w=np.array([s["w"][_path_key(p)] for p in paths]),
            z=np.array([s["z"][_path_key(p)] for p in paths]),
            alpha=float(s["alpha"]), beta=float(s["beta"]), gamma=float(s["gamma"]),
            active_edges=frozenset(s["active_edges"])))
    breakpoints = tuple(
        Breakpoint(mu=float(b["mu"]), active_before=frozenset(b["active_before"]),
                   active_after=frozenset(b["active_after"]))
        for b in doc["breakpoints"])
    return AffineTrace(segments=tuple(segments), breakpoints=breakpoints,
                       mu_max=float(doc["mu_max"]), complete=bool(doc["complete"]))
