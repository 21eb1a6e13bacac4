"""Discretized levels, facility splitting, state construction, and the
invariant checkers.

The discretization properties are exercised with hypothesis over exact
rationals; the splitting equality is checked by solving both relaxations with
the exact solver and comparing rationals.
"""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkmedian._rational import R
from gkmedian.exactlp import solve_to_vertex
from gkmedian.instance import generate_instance
from gkmedian.lpiter import (
    Discretization,
    ExtraParams,
    FULL,
    PART,
    STAR,
    build_lp2,
    build_lp_iter,
    check_basic_invariants,
    check_extra_invariants,
    discretize,
    duplicate_and_extract_fballs,
    emit_lp,
    facility_vertex,
    state_snapshot,
)
from tests.synth import line_metric, line_state, pinned_disc, rounded_distances

# normalized metrics have no nonzero distance below 1, and the rounding
# guarantee d <= d' < tau*d only applies on that domain
rationals = st.fractions(min_value=1, max_value=10**6)


class TestDiscretization:
    def test_sentinel_levels(self):
        disc = pinned_disc(tau=2, alpha=1)
        assert disc.L(-2) == -1
        assert disc.L(-1) == 0
        assert disc.L(0) == 1
        assert disc.L(3) == 8

    def test_power_of_two_rounding(self):
        disc = pinned_disc(tau=2, alpha=1)
        assert disc.round_up(R(3)) == 4
        assert disc.level_of(R(3)) == 2
        assert disc.round_up(R(0)) == 0
        assert disc.round_up(R(4)) == 4

    def test_tau_at_most_one_rejected(self):
        with pytest.raises(ValueError):
            Discretization(R(1), 0)

    def test_seed_determinism_and_variation(self):
        first = Discretization(R("2.046"), 5)
        again = Discretization(R("2.046"), 5)
        assert first.offset_alpha == again.offset_alpha
        others = {Discretization(R("2.046"), s).offset_alpha for s in range(6)}
        assert len(others) > 1

    @given(d=rationals, seed=st.integers(0, 10**6))
    @settings(max_examples=150, deadline=None)
    def test_rounding_bounds(self, d, seed):
        disc = Discretization(R("2.046"), seed)
        d = R(d.numerator, d.denominator)
        dp = disc.round_up(d)
        assert d <= dp < disc.tau * d
        assert dp == disc.L(disc.level_of(d))

    @given(d=rationals)
    @settings(max_examples=80, deadline=None)
    def test_level_is_minimal(self, d):
        disc = pinned_disc(tau=3, alpha=2)
        d = R(d.numerator, d.denominator)
        lvl = disc.level_of(d)
        assert disc.L(lvl) >= d
        assert disc.L(lvl - 1) < d

    def test_mean_offset_approximates_the_closed_form(self):
        tau = 2.046
        total = 0.0
        trials = 2000
        for seed in range(trials):
            total += float(Discretization(R("2.046"), seed).offset_alpha)
        mean = total / trials
        expected = (tau - 1) / math.log(tau)
        assert abs(mean - expected) / expected < 0.03


def test_discretize_matrix_keeps_zeros_and_bounds():
    inst = generate_instance(4, 5, 6, kind="gkm")
    disc, dprime = discretize(inst, R(2), 9)
    dist = inst.metric.dist
    n = inst.metric.n
    for p in range(n):
        for q in range(n):
            if dist[p][q] == 0:
                assert dprime[p][q] == 0
            else:
                assert dist[p][q] <= dprime[p][q] < 2 * dist[p][q]


class TestSplitting:
    def test_integral_assignment_gives_singleton_balls(self):
        # two far-apart facility/client pairs, both facilities affordable
        state_inst = _line_gkm([0, 10], [0, 10], b=2, c=2)
        split = duplicate_and_extract_fballs(state_inst)
        assert all(v == 1 for v in split.y_prime)
        assert [len(ball) for ball in split.fballs] == [1, 1]
        assert split.fballs[0] != split.fballs[1]

    def test_two_thirds_vertex_splits_into_equal_copies(self):
        # single facility, budget 2/3, serve one unit across two clients:
        # the vertex is x = (2/3, 1/3), and the circular split puts the
        # larger assignment on both copies
        inst = _line_gkm([0], [1, 2], b=R(2, 3), c=1)
        split = duplicate_and_extract_fballs(inst)
        assert split.y_prime == (R(1, 3), R(1, 3))
        assert split.copy_of == (0, 0)
        balls = [tuple(sorted(ball)) for ball in split.fballs]
        assert balls == [(0, 1), (0,)]

    def test_ball_relaxation_on_split_matches_assignment_optimum(self):
        for seed in (1, 2, 8, 13):
            inst = generate_instance(seed, 4, 5, kind="gkm")
            split = duplicate_and_extract_fballs(inst)
            lp2 = build_lp2(split.instance, split.fballs)
            assert solve_to_vertex(lp2).objective_value == split.lp1_objective


class TestStateConstruction:
    def test_empty_ball_floors_the_level(self):
        state = line_state([0], [5], [[]], c=0)
        assert state.level[0] == -1
        assert state.inner[0] == set()
        check_basic_invariants(state).assert_ok()

    def test_level_covers_the_whole_ball(self):
        # ball radius reaches L(3) = 8: facility at 0 and 5, client at 5
        state = line_state([0, 5], [5], [[0, 1]])
        assert state.level[0] == 3
        assert state.inner[0] == {1}  # within L(2) = 4
        check_basic_invariants(state).assert_ok()

    def test_fresh_build_passes_all_checks(self):
        inst = generate_instance(21, 6, 7, kind="gkm")
        split = duplicate_and_extract_fballs(inst)
        disc = pinned_disc(tau=2, alpha=1)
        state = build_lp_iter(
            split.instance,
            split.fballs,
            disc,
            rounded_distances(disc, split.instance.metric),
            copy_of=split.copy_of,
        )
        report = check_basic_invariants(state)
        assert report.ok, report.failures()
        assert list(state.clients(PART)) == list(range(state.client_count))
        assert list(state.clients(FULL)) == []
        assert list(state.clients(STAR)) == []


class TestEmitLp:
    def test_all_partial_state_is_the_ball_relaxation_over_rounded_distances(self):
        inst = _line_gkm([0, 7], [1, 6, 8], b=1, c=2)
        disc = pinned_disc(tau=2, alpha=1)
        dprime = rounded_distances(disc, inst.metric)
        balls = [{0, 1}, {0, 1}, {1}]
        state = build_lp_iter(inst, [set(b) for b in balls], disc, dprime)
        nf = inst.metric.facility_count
        direct = build_lp2(inst, balls, dist=lambda i, j: dprime[i][nf + j])
        assert (
            solve_to_vertex(emit_lp(state)).objective_value
            == solve_to_vertex(direct).objective_value
        )

    def test_full_client_with_empty_inner_becomes_a_constant(self):
        state = line_state([0], [3], [[0]])
        state.tag[0] = FULL
        assert state.inner[0] == set()
        lp = emit_lp(state)
        # the unit must be paid at the ball radius L(2) = 4, as a constant
        assert lp.constant == 4
        assert all(label[0] != "CFull" for _, _, _, label in lp.rows)

    def test_vertex_values_keyed_by_facility(self):
        state = line_state([0, 9], [1, 8], [[0], [1]], b=2, c=2)
        lp = emit_lp(state)
        vertex = facility_vertex(lp, solve_to_vertex(lp))
        assert vertex.value(0) == 1
        assert vertex.value(1) == 1
        assert vertex.fractional() == []
        assert vertex.mass({0, 1}) == 2


class TestBasicChecker:
    def test_equal_level_pinned_neighbors_are_named(self):
        state = line_state([0], [1, 1], [[0], [0]], stars=(0, 1), c=2)
        report = check_basic_invariants(state)
        assert not report.ok
        names = [name for name, ok, _ in report.results if not ok]
        assert names == ["distinct-neighbors"]
        witness = dict((n, w) for n, _, w in report.results)["distinct-neighbors"]
        assert "0" in witness and "1" in witness

    def test_ball_beyond_radius_is_caught(self):
        state = line_state([0, 6], [1], [[0, 1]])
        state.level[0] = 1  # L(1) = 2 but facility 1 sits at rounded 8
        report = check_basic_invariants(state)
        assert not report.ok
        failed = {name for name, ok, _ in report.results if not ok}
        assert "ball-radius" in failed

    def test_dead_facility_reference_is_caught(self):
        state = line_state([0, 6], [1], [[0, 1]])
        state.facilities.discard(1)
        report = check_basic_invariants(state)
        failed = {name for name, ok, _ in report.results if not ok}
        assert "balls-alive" in failed

    def test_stale_inner_ball_is_caught(self):
        state = line_state([0, 5], [5], [[0, 1]])
        state.inner[0] = set()
        failed = {name for name, ok, _ in check_basic_invariants(state).results if not ok}
        assert "inner-ball" in failed

    def test_level_below_floor_is_caught(self):
        state = line_state([0], [1], [[0]])
        state.level[0] = -2
        failed = {name for name, ok, _ in check_basic_invariants(state).results if not ok}
        assert "level-floor" in failed


class TestExtraChecker:
    def test_huge_budget_passes_vacuously(self):
        metric = line_metric([0, 9], [2, 7])
        diameter = max(max(row) for row in metric.dist)
        extra = ExtraParams(
            rho=R(1, 4), delta=R(1, 4), U=R(10**6), radius=(diameter, diameter)
        )
        state = line_state([0, 9], [2, 7], [[0], [1]], b=2, c=2, extra=extra)
        check_extra_invariants(state, "knapsack").assert_ok()
        check_extra_invariants(state, "outliers").assert_ok()

    def test_pinned_dummy_clause(self):
        extra = ExtraParams(rho=R(1, 4), delta=R(1, 4), U=R(10**6), radius=(R(9), R(9)))
        state = line_state(
            [0, 0], [0, 8], [[0, 1], [0, 1]], b=2, c=1, dummies={0}, extra=extra
        )
        assert state.tag[0] == STAR
        assert state.level[0] == -1
        check_extra_invariants(state, "outliers").assert_ok()
        assert state.s0_facilities() == {0, 1}

        state.tag[0] = PART
        report = check_extra_invariants(state, "outliers")
        failed = {name for name, ok, _ in report.results if not ok}
        assert "pinned-dummies" in failed

    def test_expensive_facility_is_caught(self):
        extra = ExtraParams(rho=R(1, 100), delta=R(1, 4), U=R(10), radius=(R(9), R(9)))
        state = line_state([0], [4, 5], [[0], [0]], b=1, c=2, extra=extra)
        report = check_extra_invariants(state, "knapsack")
        failed = {name for name, ok, _ in report.results if not ok}
        assert "cheap-facilities" in failed

    def test_radius_cap_is_caught(self):
        extra = ExtraParams(rho=R(1, 4), delta=R(1, 4), U=R(10**6), radius=(R(1), R(9)))
        state = line_state([0, 9], [6, 7], [[0], [1]], b=2, c=2, extra=extra)
        # client 0 sits at rounded distance 8 = L(3) but claims radius 1
        report = check_extra_invariants(state, "outliers")
        failed = {name for name, ok, _ in report.results if not ok}
        assert "radius-cap" in failed

    def test_missing_extra_data_is_an_error(self):
        state = line_state([0], [1], [[0]])
        with pytest.raises(ValueError):
            check_extra_invariants(state, "knapsack")


def test_snapshot_captures_the_moving_parts():
    state = line_state([0, 5], [2, 4], [[0], [1]], b=2, c=2)
    snap = state_snapshot(state)
    for key in ("tau", "offset_alpha", "facilities", "tags", "levels", "fballs", "inner"):
        assert key in snap
    assert snap["levels"] == [1, 0]
    state.level[1] = 3
    assert state_snapshot(state)["levels"] == [1, 3]


def _line_gkm(fac_pts, cli_pts, *, b, c):
    metric = line_metric(fac_pts, cli_pts)
    nf, nc = metric.facility_count, metric.client_count
    from gkmedian.instance import GkmInstance

    return GkmInstance(
        metric,
        ((R(1),) * nf,),
        (R(b),),
        tuple((R(1),) for _ in range(nc)),
        (R(c),),
    )
