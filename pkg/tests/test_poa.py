"""Tests for the demand-indexed inefficiency ratio: points, pieces, maxima, sweeps."""

import hashlib
import os
from fractions import Fraction

import numpy as np
import pytest

from poakit.costs import Affine
from poakit.errors import ClassificationConflict, GridExceedsBreakpointMax
from poakit.network import Network, Edge, load_network
from poakit.poa import (
    CSV_HEADER,
    PoAPiece,
    active_set_hash,
    classify_segments,
    compute_poa,
    find_poa_max,
    sweep_poa,
    write_sweep_csv,
    _classify,
)

from netgen import random_affine_network

FIXTURES = os.path.join(os.path.dirname(__file__), os.pardir, "fixtures")


def tracked(name):
    return load_network(os.path.join(FIXTURES, f"{name}.json"))


def pigou_instance():
    # x alongside 1: the textbook worst case for affine costs
    net = Network(vertices=("O", "D"),
                  edges=(Edge("lin", "O", "D"), Edge("con", "O", "D")),
                  origin="O", destination="D")
    return net, {"lin": Affine(1.0, 0.0), "con": Affine(0.0, 1.0)}


_CURVE_CACHE: dict = {}


def nested2_curve():
    """nested2 ratio curve over (0, 25], computed once per test run."""
    if "nested2" not in _CURVE_CACHE:
        net, costs = tracked("nested2")
        _CURVE_CACHE["nested2"] = (net, costs, classify_segments(net, costs, 25.0))
    return _CURVE_CACHE["nested2"]


def nested2_ratio_reference(mu):
    """Hand-derived closed form of the nested2 ratio, branch by branch.

    Each branch is the quadratic-over-quadratic from the per-interval cost
    coefficients, reduced by hand; an error in either the trace or the piece
    assembly would show up as a mismatch against these fractions.
    """
    if mu < 0.5:
        return 1.0
    if mu < 1:
        return 8 * mu * mu / (-1 + 4 * mu + 4 * mu * mu)
    if mu < 2:
        return (4 + 4 * mu) / (2 + 5 * mu)
    if mu < 3:
        return 1.0
    if mu < 6:
        return (4 * mu + 10 * mu * mu) / (-81 + 58 * mu + mu * mu)
    if mu < 7:
        return (58 * mu + mu * mu) / (-81 + 58 * mu + mu * mu)
    if mu < 7.5:
        return (58 * mu + mu * mu) / (-130 + 72 * mu)
    if mu < 10:
        return (290 * mu + 5 * mu * mu) / (-200 + 240 * mu + 8 * mu * mu)
    if mu < 14:
        return (58 + mu) / (40 + 2 * mu)
    if mu < 15:
        return 36 / (20 + mu)
    if mu < 20:
        return (120 + 4 * mu) / (100 + 5 * mu)
    return 1.0


class TestPointwiseRatio:
    def test_nested2_exact_values(self):
        net, costs, _ = nested2_curve()
        expected = {
            0.4: Fraction(1),
            1.0: Fraction(8, 7),
            1.5: Fraction(20, 19),
            2.5: Fraction(1),
            6.0: Fraction(384, 303),
            14.0: Fraction(18, 17),
            17.0: Fraction(188, 185),
            25.0: Fraction(1),
        }
        for mu, frac in expected.items():
            pt = compute_poa(net, costs, mu)
            assert pt.poa == pytest.approx(float(frac), abs=1e-9), f"mu={mu}"
            assert pt.sc_eq == pytest.approx(pt.poa * pt.sc_opt, rel=1e-12)

    def test_nested2_common_cost_values(self):
        net, costs, _ = nested2_curve()
        for mu, lam in [(4.0, 11.0), (6.0, 16.0), (14.0, 18.0)]:
            assert compute_poa(net, costs, mu).lam == pytest.approx(lam, abs=1e-8)

    def test_zero_demand_is_ratio_one(self):
        net, costs = tracked("fig1")
        pt = compute_poa(net, costs, 0.0)
        assert pt.poa == 1.0
        assert pt.sc_eq == 0.0
        assert pt.mu == 0.0

    def test_negative_demand_rejected(self):
        net, costs = tracked("fig1")
        with pytest.raises(ValueError, match="nonnegative"):
            compute_poa(net, costs, -1.0)

    def test_fig1_ratio_tails(self):
        net, costs = tracked("fig1")
        # below the first breakpoint a single path carries everything optimally
        assert compute_poa(net, costs, 0.5).poa == pytest.approx(1.0, abs=1e-9)
        # far out the quadratic terms dominate and the ratio decays toward one
        far = compute_poa(net, costs, 100.0).poa
        assert 1.0 - 1e-12 <= far <= 1.0005

    def test_quadratic_costs_use_iterative_route(self):
        # parallel_quad is not affine, so this point exercises the general solver
        net, costs = tracked("parallel_quad")
        assert compute_poa(net, costs, 3.0).poa == pytest.approx(1.0, abs=1e-9)

    def test_piecewise_linear_active_set_hashes(self):
        # the same routes resurface at high demand after a middle regime
        net, costs = tracked("wheatstone_pwl")
        h = {mu: compute_poa(net, costs, mu).active_hash for mu in (1.5, 3.0, 11.0)}
        assert h[3.0] == h[11.0]
        assert h[1.5] != h[3.0]

    def test_active_hash_matches_module_function(self):
        net, costs = tracked("nested2")
        pt = compute_poa(net, costs, 4.0)
        assert pt.active_hash == active_set_hash(pt.active_edges)
        assert pt.active_hash == active_set_hash(sorted(pt.active_edges, reverse=True))
        assert len(pt.active_hash) == 12
        int(pt.active_hash, 16)


class TestCurvePieces:
    def test_nested2_merged_breakpoints(self):
        _, _, curve = nested2_curve()
        assert np.allclose(curve.merged_breakpoints,
                           [0.5, 1, 2, 3, 6, 7, 7.5, 10, 14, 15, 20], atol=1e-9)
        assert np.allclose(curve.eq_breakpoints, [1, 2, 6, 14, 15, 20], atol=1e-9)
        assert np.allclose(curve.opt_breakpoints, [0.5, 1, 3, 7, 7.5, 10], atol=1e-9)

    def test_nested2_piece_formulas_match_reference(self):
        _, _, curve = nested2_curve()
        for mu in np.linspace(0.05, 25.0, 800):
            assert curve.value(mu) == pytest.approx(
                nested2_ratio_reference(mu), abs=1e-9), f"mu={mu}"

    def test_nested2_curve_matches_direct_solves(self):
        net, costs, curve = nested2_curve()
        for mu in (0.3, 0.8, 1.7, 4.0, 6.5, 9.0, 12.0, 18.0, 23.0):
            assert curve.value(mu) == pytest.approx(
                compute_poa(net, costs, mu).poa, abs=1e-9)

    def test_nested2_piece_shapes(self):
        _, _, curve = nested2_curve()
        shapes = [p.shape for p in curve.pieces]
        assert shapes == ["constant", "increasing", "decreasing", "constant",
                          "increasing", "decreasing", "decreasing", "decreasing",
                          "decreasing", "decreasing", "decreasing", "constant"]

    def test_pigou_piece_shapes(self):
        net, costs = pigou_instance()
        curve = classify_segments(net, costs, 3.0)
        assert np.allclose(curve.merged_breakpoints, [0.5, 1.0], atol=1e-9)
        assert [p.shape for p in curve.pieces] == ["constant", "increasing",
                                                   "decreasing"]

    def test_single_edge_is_constant_one(self):
        net = Network(vertices=("O", "D"), edges=(Edge("e", "O", "D"),),
                      origin="O", destination="D")
        costs = {"e": Affine(2.0, 3.0)}
        curve = classify_segments(net, costs, 5.0)
        piece, = curve.pieces
        assert piece.shape == "constant"
        for mu in (0.1, 1.0, 4.9):
            assert curve.value(mu) == pytest.approx(1.0, abs=1e-12)

    def test_coefficient_sign_contracts(self):
        # numerator alpha,beta >= 0 and denominator gamma <= 0 <= delta,eta
        for fixture in ("fig1", "nested2"):
            net, costs = tracked(fixture)
            curve = classify_segments(net, costs, 12.0)
            for p in curve.pieces:
                assert p.num_lin >= -1e-9 * max(1.0, abs(p.num_lin))
                assert p.num_quad >= -1e-9 * max(1.0, abs(p.num_quad))
                assert p.den_const <= 1e-9 * max(1.0, abs(p.den_const))
                assert p.den_lin >= -1e-9 * max(1.0, abs(p.den_lin))
                assert p.den_quad >= -1e-9 * max(1.0, abs(p.den_quad))

    def test_pieces_tile_the_demand_range(self):
        _, _, curve = nested2_curve()
        assert curve.pieces[0].mu_lo == 0.0
        assert curve.pieces[-1].mu_hi == pytest.approx(25.0)
        for left, right in zip(curve.pieces, curve.pieces[1:]):
            assert left.mu_hi == pytest.approx(right.mu_lo, abs=1e-12)

    def test_piece_at_validation(self):
        _, _, curve = nested2_curve()
        with pytest.raises(ValueError, match="positive"):
            curve.piece_at(0.0)
        assert curve.piece_at(0.25).mu_hi == pytest.approx(0.5)
        assert curve.piece_at(0.75).mu_lo == pytest.approx(0.5)
        assert curve.piece_at(25.0) is curve.pieces[-1]

    def test_classify_rejects_interior_maximum(self):
        # mu/(1+mu^2) peaks inside the interval; the contracts forbid that shape
        bad = PoAPiece(mu_lo=0.1, mu_hi=10.0, num_lin=1.0, num_quad=0.0,
                       den_const=1.0, den_lin=0.0, den_quad=1.0)
        with pytest.raises(ClassificationConflict):
            _classify(bad)

    def test_piece_value_guards_nonpositive_denominator(self):
        zero = PoAPiece(mu_lo=0.0, mu_hi=1.0, num_lin=1.0, num_quad=0.0,
                        den_const=0.0, den_lin=0.0, den_quad=0.0)
        with pytest.raises(ZeroDivisionError):
            zero.value(0.5)

    def test_mu_max_validation(self):
        net, costs = pigou_instance()
        with pytest.raises(ValueError, match="positive"):
            classify_segments(net, costs, 0.0)


class TestMaximum:
    def test_pigou_attains_four_thirds(self):
        net, costs = pigou_instance()
        mx = find_poa_max(net, costs)
        assert mx.mu == pytest.approx(1.0, abs=1e-9)
        assert mx.value == pytest.approx(4.0 / 3.0, abs=1e-9)
        assert mx.at_breakpoint
        assert mx.grid_value <= mx.value + 1e-7

    def test_fig1_maximum(self):
        net, costs = tracked("fig1")
        mx = find_poa_max(net, costs)
        assert mx.mu == pytest.approx(4.0, abs=1e-9)
        assert mx.value == pytest.approx(float(Fraction(360, 311)), abs=1e-9)
        assert mx.at_breakpoint

    def test_nested2_maximum(self):
        net, costs = tracked("nested2")
        mx = find_poa_max(net, costs, mu_max=25.0)
        assert mx.mu == pytest.approx(6.0, abs=1e-9)
        assert mx.value == pytest.approx(float(Fraction(384, 303)), abs=1e-9)
        assert mx.at_breakpoint

    def test_single_edge_maximum_is_one(self):
        net = Network(vertices=("O", "D"), edges=(Edge("e", "O", "D"),),
                      origin="O", destination="D")
        mx = find_poa_max(net, {"e": Affine(2.0, 3.0)})
        assert mx.value == pytest.approx(1.0, abs=1e-12)

    def test_negative_slack_trips_grid_check(self):
        # sanity check on the guard itself: an impossible slack must raise
        net, costs = pigou_instance()
        with pytest.raises(GridExceedsBreakpointMax):
            find_poa_max(net, costs, mu_max=3.0, grid_slack=-1.0)


class TestSweep:
    def test_rows_match_curve(self):
        net, costs, curve = nested2_curve()
        rows = sweep_poa(net, costs, 0.1, 25.0, 60)
        assert len(rows) == 60
        assert rows[0].mu == pytest.approx(0.1)
        assert rows[-1].mu == pytest.approx(25.0)
        for row in rows:
            assert row.poa == pytest.approx(curve.value(row.mu), abs=1e-9)
            assert row.poa == pytest.approx(nested2_ratio_reference(row.mu), abs=1e-9)

    def test_adaptive_refines_hash_changes(self):
        net, costs = pigou_instance()
        plain = sweep_poa(net, costs, 0.1, 2.0, 8)
        refined = sweep_poa(net, costs, 0.1, 2.0, 8, adaptive=True)
        assert len(refined) > len(plain)
        mus = [r.mu for r in refined]
        assert mus == sorted(mus)
        # refinement clusters samples around the activity change at mu=1
        gaps_near_bp = [b - a for a, b in zip(mus, mus[1:]) if a < 1.0 < b or a <= 1.0 <= b]
        assert min(b - a for a, b in zip(mus, mus[1:])) < (2.0 - 0.1) / 7 / 4

    def test_range_validation(self):
        net, costs = pigou_instance()
        with pytest.raises(ValueError, match="mu_lo"):
            sweep_poa(net, costs, -0.5, 2.0, 10)
        with pytest.raises(ValueError, match="mu_lo"):
            sweep_poa(net, costs, 2.0, 2.0, 10)
        with pytest.raises(ValueError, match="n_samples"):
            sweep_poa(net, costs, 0.0, 2.0, 1)

    def test_csv_format_and_determinism(self, tmp_path):
        net, costs = pigou_instance()
        rows = sweep_poa(net, costs, 0.25, 2.0, 5)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_sweep_csv(rows, p1)
        write_sweep_csv(rows, p2)
        data = p1.read_bytes()
        assert data == p2.read_bytes()
        lines = data.decode("utf-8").split("\n")
        assert lines[0] == CSV_HEADER
        assert CSV_HEADER == "mu,lambda,sc_eq,sc_opt,poa,active_set_hash"
        assert len(lines) == 7 and lines[-1] == ""
        for line, row in zip(lines[1:6], rows):
            cells = line.split(",")
            assert len(cells) == 6
            # 17 significant digits survive a float round trip exactly
            assert float(cells[0]) == row.mu
            assert float(cells[4]) == row.poa
            assert cells[5] == row.active_set_hash


def test_random_networks_stay_in_affine_bounds():
    rng = np.random.default_rng(33)
    for _ in range(6):
        net, costs = random_affine_network(rng)
        for mu in (0.4, 1.3, 3.7):
            pt = compute_poa(net, costs, mu)
            assert 1.0 - 1e-9 <= pt.poa <= 4.0 / 3.0 + 1e-6
