"""k-median with outliers: the greedy extraction and the recursive pipeline.

The extraction algorithm has three qualitatively different moves (cover a
bridging partial client, evict across a far bridge, evict an intersecting
peer). Each gets a hand-built state where that move is the only one
available and the whole outcome is frozen: opened set, served set, event
log, and the sliced instance handed to the recursion.
"""

import json

import pytest

from gkmedian._rational import R
from gkmedian.instance import (
    OutliersInstance,
    SchemaError,
    generate_instance,
)
from gkmedian.lpiter import (
    ExtraParams,
    FacilityVertex,
    check_basic_invariants,
    check_extra_invariants,
)
from gkmedian.oracle import brute_force, monte_carlo_ratio
from gkmedian.outliers import (
    DEFAULT_TAU,
    compute_partial,
    default_gap_c,
    outliers_postprocess,
    preprocess_outliers,
    solve_outliers,
)
from gkmedian.rounding import RoundingConfig

from tests.synth import line_metric, line_state

EPS = R(1, 10)
HALF = R(1, 2)


def _outlier_state(facility_points, client_points, fballs, stars, b, c):
    """Line state carrying the outliers side conditions: rho = delta = 1/4,
    U = 30, and per-client radii equal to the level values (so the radius cap
    holds with room to spare)."""
    state = line_state(
        facility_points,
        client_points,
        fballs,
        stars=stars,
        b=b,
        c=c,
        extra=ExtraParams(R(1, 4), R(1, 4), R(30), ()),
    )
    state.extra = ExtraParams(
        R(1, 4), R(1, 4), R(30), tuple(state.disc.L(l) for l in state.level)
    )
    check_basic_invariants(state).assert_ok()
    check_extra_invariants(state, "outliers").assert_ok()
    return state


class TestGapConstant:
    def test_power_of_two_boundary(self):
        assert default_gap_c(R(2), HALF) == 2

    def test_minimality_at_the_published_base(self):
        tau, eps_prime = R("1.2074"), R(1, 80)
        c = default_gap_c(tau, eps_prime)
        assert tau**c >= 2 / eps_prime
        assert tau ** (c - 1) < 2 / eps_prime

    def test_domain(self):
        with pytest.raises(SchemaError):
            default_gap_c(R(1), HALF)


class TestComputePartial:
    def test_near_bridge_is_covered(self):
        """Two disjoint pinned balls joined to partial clients; the bridge
        sits at the same level as its pinned client, so it is covered, and
        the opened facility in each ball is the one the leftover partial
        clients lean on."""
        state = _outlier_state(
            [0, 6, 12, 22, 30],
            [3, 9, 17, 21, 31],
            [[0, 1], [1, 2], [2, 3], [3], [4]],
            stars=(0, 2),
            b=3,
            c=4,
        )
        assert state.level == [2, 2, 3, 0, 0]
        vertex = FacilityVertex(
            values={i: HALF for i in range(5)}, objective=R(0), ep=None
        )
        partial, sliced = compute_partial(state, vertex, RoundingConfig(gap_c=1))
        assert partial.S == (0, 3)
        assert partial.served == (0, 1, 2, 3)
        assert partial.k_used == 2
        assert [e["kind"] for e in partial.events] == [
            "cover",
            "open",
            "open",
            "covered-bound",
        ]
        assert partial.events[0] == {"kind": "cover", "client": 1, "by": 0}
        assert partial.events[3]["within_proof"] is True
        assert sliced.client_count == 1
        assert sliced.copy_of == (4,)
        assert sliced.instance.b == (R(1),)
        assert sliced.instance.c == (R(0),)

    def test_far_bridge_evicts_the_peer(self):
        """The bridging partial client sits a full level gap below, so the
        far pinned client is evicted instead of the bridge being covered."""
        state = _outlier_state(
            [0, 6, 8, 18],
            [3, 7, 13],
            [[0, 1], [1, 2], [2, 3]],
            stars=(0, 2),
            b=2,
            c=3,
        )
        assert state.level == [2, 0, 3]
        vertex = FacilityVertex(
            values={i: HALF for i in range(4)}, objective=R(0), ep=None
        )
        partial, sliced = compute_partial(state, vertex, RoundingConfig(gap_c=1))
        assert partial.S == (1,)
        assert partial.served == (0, 1, 2)
        assert [e["kind"] for e in partial.events] == ["evict-far", "open"]
        assert partial.events[0] == {
            "kind": "evict-far",
            "client": 2,
            "bridge": 1,
            "by": 0,
        }
        assert sliced.client_count == 0
        assert sliced.copy_of == (2, 3)

    def test_intersecting_peer_is_evicted(self):
        state = _outlier_state(
            [0, 4, 8], [2, 7, 5], [[0, 1], [1, 2], [1]], stars=(0, 1), b=R(3, 2), c=R(1, 4)
        )
        assert state.level == [1, 2, 0]
        vertex = FacilityVertex(
            values={i: HALF for i in range(3)}, objective=R(0), ep=None
        )
        partial, sliced = compute_partial(state, vertex, RoundingConfig(gap_c=1))
        assert partial.S == (1,)
        assert [e["kind"] for e in partial.events] == ["evict-peer", "open"]
        assert sliced.client_count == 0
        assert sliced.instance.b == (HALF,)

    def test_needs_a_fractional_pinned_client(self):
        state = _outlier_state(
            [0, 4, 8], [2, 7, 5], [[0, 1], [1, 2], [1]], stars=(0, 1), b=R(3, 2), c=R(1, 4)
        )
        integral = FacilityVertex(
            values={0: R(1), 1: R(0), 2: R(1)}, objective=R(0), ep=None
        )
        with pytest.raises(ValueError, match="no fractional pinned"):
            compute_partial(state, integral, RoundingConfig(gap_c=1))


class TestPostprocessRecursion:
    def test_forced_half_vertex_extracts_then_bottoms_out(self):
        """The knapsack row pins the solved vertex at one half everywhere,
        so the recursion must take exactly one extraction step and then hit
        the integral base case on the sliced instance."""
        state = _outlier_state(
            [0, 4, 8], [2, 7, 5], [[0, 1], [1, 2], [1]], stars=(0, 1), b=R(3, 2), c=R(1, 4)
        )
        fragment = outliers_postprocess(state, RoundingConfig(gap_c=1))
        assert fragment == (1,)


def _desk_instance(seed, k=2, m=4):
    return generate_instance(seed, 5, 6, kind="outliers", k=k, m=m)


class TestPreprocess:
    def test_oracle_candidate_passes_every_checker(self):
        inst = _desk_instance(1)
        opt = brute_force(inst)
        assert opt.opt_cost > 0
        subs = preprocess_outliers(
            inst, R(1, 4), R(1, 4), 3 * opt.opt_cost, "oracle", oracle=opt
        )
        assert len(subs) == 1
        sub = subs[0]
        check_basic_invariants(sub.state).assert_ok()
        check_extra_invariants(sub.state, "outliers").assert_ok()
        assert sub.m_prime == inst.m - len(sub.removed)
        assert not set(sub.kept) & set(sub.removed)
        assert sorted(set(sub.kept) | set(sub.removed)) == list(
            range(inst.metric.client_count)
        )


class TestSolveOutliers:
    def test_published_discretization_base(self):
        assert DEFAULT_TAU == R("1.2074")

    def test_zero_target_serves_nobody(self):
        inst = _desk_instance(0)
        zero = OutliersInstance(inst.metric, inst.k, 0)
        solution = solve_outliers(zero, EPS, seed=0)
        assert solution.cost == 0
        assert solution.open_facilities == ()

    def test_target_above_population_is_rejected(self):
        metric = line_metric([0], [1, 2])
        with pytest.raises(SchemaError):
            solve_outliers(OutliersInstance(metric, 1, 3), EPS, seed=0)

    def test_desk_feasibility_and_ratio_smoke(self):
        bound = R("6.994") + EPS
        for inst_seed in (0, 3):
            inst = _desk_instance(inst_seed)
            opt = brute_force(inst)

            def run(instance, seed):
                solution = solve_outliers(instance, EPS, seed)
                assert len(solution.open_facilities) <= instance.k
                assert len(solution.served) == instance.m
                return solution

            stats = monte_carlo_ratio(run, inst, seeds=range(10), opt=opt.opt_cost)
            assert stats["trials"] == 10
            assert stats["mean"] >= 1
            assert stats["mean"] <= bound

    def test_serving_everyone_matches_plain_k_median(self):
        """With m = |C| the outlier pipeline is ordinary k-median; it must
        stay feasible and above the enumerated optimum."""
        inst = _desk_instance(5, k=2, m=6)
        opt = brute_force(inst)
        solution = solve_outliers(inst, EPS, seed=4)
        assert solution.served == tuple(range(6))
        assert solution.cost >= opt.opt_cost

    def test_same_seed_reproduces_the_report_bytes(self):
        inst = _desk_instance(2)
        blob = lambda s: json.dumps(s.to_dict(inst.metric), sort_keys=True)
        assert blob(solve_outliers(inst, EPS, seed=9)) == blob(
            solve_outliers(inst, EPS, seed=9)
        )

    def test_validation_mode_does_not_change_the_answer(self):
        inst = _desk_instance(2)
        assert solve_outliers(inst, EPS, seed=1) == solve_outliers(
            inst, EPS, seed=1, validate=True
        )
