"""The rounding loop: pin/unpin moves, the solve-delete-promote-shrink cycle,
pair eviction, and the certified translation back to an assignment.

Structural claims are asserted on both hand-built states (where the expected
move is forced and written out literally) and generated desk instances (where
only the invariants are predictable).
"""

import io
import json
import math

import pytest

from gkmedian._rational import R
from gkmedian.instance import generate_instance
from gkmedian.lpiter import (
    FULL,
    InvariantViolation,
    PART,
    STAR,
    FacilityVertex,
    build_lp_iter,
    check_basic_invariants,
    duplicate_and_extract_fballs,
    emit_lp,
    facility_vertex,
)
from gkmedian.exactlp import solve_to_vertex
from gkmedian.rounding import (
    GuardExceeded,
    RoundingConfig,
    TraceSink,
    assemble_fractional_solution,
    certify_reroute_bound,
    config_reroute,
    iterative_round,
    pseudo_alpha,
    pseudo_approximation,
    reroute,
    reroute_alpha,
)
from tests.synth import line_state, pinned_disc, rounded_distances


class TestReroute:
    def test_pins_when_no_stars_exist(self):
        state = line_state([0], [2], [[0]], c=0)
        state.tag[0] = FULL
        events = []
        assert reroute(state, 0, events=events)
        assert state.tag[0] == STAR
        assert [e.kind for e in events] == ["AddToStar"]

    def test_blocked_by_equal_level_neighbor(self):
        # both clients at rounded radius 4, sharing facility 0
        state = line_state([0, -6], [4, -3], [[0], [0, 1]], stars=(1,), c=0)
        assert state.level[0] == state.level[1] == 2
        state.tag[0] = FULL
        events = []
        assert not reroute(state, 0, events=events)
        assert events == []
        assert state.tag[0] == FULL

    def test_evicts_only_the_far_neighbor(self):
        # full client at level 1; pinned neighbors at levels 3 and 2 share
        # its facility, so pinning evicts the level-3 one and keeps the other
        state = line_state(
            [0, 10, -6],
            [2, 5, -3],
            [[0], [0, 1], [0, 2]],
            stars=(1, 2),
            c=0,
        )
        assert state.level == [1, 3, 2]
        state.tag[0] = FULL
        events = []
        assert reroute(state, 0, events=events)
        assert state.tag == [STAR, FULL, STAR]
        assert [e.kind for e in events] == ["AddToStar", "EvictFromStar"]
        evict = events[1]
        assert evict.client == 1
        assert evict.partner == 0
        assert evict.level_before >= state.level[0] + 2
        check_basic_invariants(state).assert_ok()

    def test_rejects_non_full_client(self):
        state = line_state([0], [2], [[0]], c=0)
        with pytest.raises(ValueError):
            reroute(state, 0)


def _star_only_state():
    """One pinned client forcing its facility open, one full client whose
    inner ball is empty: the LP optimum is integral and no listed constraint
    is tight, so the rounding loop must return immediately."""
    state = line_state([0], [1, 5], [[0], [0]], stars=(0,), c=0)
    state.tag[1] = FULL
    assert state.level == [0, 3]
    assert state.inner[1] == set()
    return state


class TestIterativeRound:
    def test_returns_immediately_on_integral_untight_vertex(self):
        state = _star_only_state()
        vertex, events = iterative_round(state)
        assert events == []
        assert vertex.value(0) == 1
        assert vertex.fractional() == []

    def test_forced_part_promotion_comes_first(self):
        state = line_state([0], [2], [[0]], c=1)
        vertex, events = iterative_round(state, RoundingConfig(validate=True))
        assert events[0].kind == "PartToFull"
        assert events[0].client == 0
        check_basic_invariants(state).assert_ok()

    def test_objective_never_increases_and_guard_trips(self):
        sink = io.StringIO()
        inst = generate_instance(5, 6, 7, kind="gkm")
        state = _fresh_state(inst)
        iterative_round(state, RoundingConfig(trace=TraceSink(sink), validate=True))
        objectives = [
            R(rec["objective"])
            for rec in map(json.loads, sink.getvalue().splitlines())
            if rec["type"] == "solve"
        ]
        assert len(objectives) >= 2
        assert all(a >= b for a, b in zip(objectives, objectives[1:]))

        with pytest.raises(GuardExceeded):
            iterative_round(_fresh_state(inst), RoundingConfig(max_iter_guard=1))

    def test_trace_file_is_sorted_key_jsonl(self, tmp_path):
        path = tmp_path / "run.jsonl"
        inst = generate_instance(5, 4, 5, kind="gkm")
        sink = TraceSink(path)
        iterative_round(_fresh_state(inst), RoundingConfig(trace=sink))
        sink.close()
        lines = path.read_text().splitlines()
        assert lines
        for line in lines:
            record = json.loads(line)
            assert "type" in record
            assert line == json.dumps(record, sort_keys=True)


def _fresh_state(inst, tau=2, alpha=1):
    split = duplicate_and_extract_fballs(inst)
    disc = pinned_disc(tau=tau, alpha=alpha)
    return build_lp_iter(
        split.instance,
        split.fballs,
        disc,
        rounded_distances(disc, split.instance.metric),
        copy_of=split.copy_of,
    )


def _four_chain():
    """Four pinned clients whose balls form a path a-b-c-d-e with levels
    2,3,2,3: the interior pair (1, 2) is a valid eviction pair."""
    state = line_state(
        [0, 8, 16, 22, 32],
        [4, 11, 19, 27],
        [[0, 1], [1, 2], [2, 3], [3, 4]],
        stars=(0, 1, 2, 3),
        c=0,
    )
    assert state.level == [2, 3, 2, 3]
    check_basic_invariants(state).assert_ok()
    vertex = FacilityVertex(
        values={i: R(1, 2) for i in range(5)}, objective=R(0), ep=None
    )
    return state, vertex


class TestConfigReroute:
    def test_valid_pair_demotes_the_higher_client(self):
        state, vertex = _four_chain()
        event = config_reroute(state, vertex, (1, 2))
        assert event.kind == "ConfigEvict"
        assert (event.client, event.partner) == (1, 2)
        assert state.tag[1] == FULL
        assert state.level[2] == state.level[1] - 1
        check_basic_invariants(state).assert_ok()

    def test_oversized_ball_rejected(self):
        state, vertex = _four_chain()
        state.fball[1].add(4)
        with pytest.raises(ValueError):
            config_reroute(state, vertex, (1, 2))

    def test_equal_levels_rejected(self):
        state, vertex = _four_chain()
        with pytest.raises(ValueError):
            config_reroute(state, vertex, (2, 0))


class TestPseudoApproximation:
    def test_integral_optimum_stays_integral(self):
        state = _star_only_state()
        vertex, events = pseudo_approximation(state)
        assert vertex.fractional() == []
        assert events == []

    def test_desk_instances_round_to_few_fractional_facilities(self):
        """Every intermediate state passes the structural checks, eviction
        events respect the level rules, and the final vertex has at most
        15r fractional facilities."""

        def hook(state, event):
            check_basic_invariants(state).assert_ok()
            if event.kind == "EvictFromStar":
                assert event.level_before >= state.level[event.partner] + 2
            if event.kind == "ConfigEvict":
                assert state.level[event.partner] == state.level[event.client] - 1

        for seed in range(10):
            inst = generate_instance(seed, 7, 8, kind="gkm")
            state = _fresh_state(inst)
            limit = 15 * state.instance.r
            sink = io.StringIO()
            vertex, _ = pseudo_approximation(
                state, RoundingConfig(trace=TraceSink(sink), event_hook=hook)
            )
            assert len(vertex.fractional()) <= limit
            objectives = [
                R(rec["objective"])
                for rec in map(json.loads, sink.getvalue().splitlines())
                if rec["type"] == "solve"
            ]
            assert all(a >= b for a, b in zip(objectives, objectives[1:]))
            check_basic_invariants(state).assert_ok()


class TestAssemble:
    def test_without_full_clients_cost_equals_lp_objective(self):
        # the unpressured partial client's facility drops to zero and is
        # deleted, leaving only a pinned and a partial client
        state = line_state([0, 9], [1, 8], [[0], [1]], stars=(0,), c=0)
        vertex, _ = iterative_round(state)
        assert list(state.clients(FULL)) == []
        assembled = assemble_fractional_solution(state, vertex)
        assert assembled.cost == vertex.objective
        assert assembled.lp_objective == vertex.objective

    def test_rerouted_mass_stays_within_the_radius_bound(self):
        alpha_seen = None
        for seed in (2, 4, 6, 9):
            inst = generate_instance(seed, 7, 8, kind="gkm")
            state = _fresh_state(inst)
            vertex, _ = pseudo_approximation(state)
            assembled = assemble_fractional_solution(state, vertex)
            alpha_seen = assembled.alpha
            bound = (2 + assembled.alpha) * vertex.objective
            assert assembled.cost <= bound
            metric = state.instance.metric
            for j in state.clients(FULL):
                limit = (2 + assembled.alpha) * state.disc.L(state.level[j])
                for i, mass in assembled.assignment[j]:
                    assert mass > 0
                    assert metric.dfc(i, j) <= limit
            for j in range(state.client_count):
                served = sum((m for _, m in assembled.assignment[j]), R(0))
                if state.tag[j] in (FULL, STAR):
                    assert served == 1
        assert alpha_seen == pseudo_alpha(R(2))

    def test_published_constant_reproduced_at_default_tau(self):
        tau = R("2.046")
        alpha = pseudo_alpha(tau)
        assert alpha == (tau**3 + 2 * tau**2 + 1) / (tau**3 - 1)
        ratio = float(2 + alpha) * (float(tau) - 1) / math.log(float(tau))
        assert abs(ratio - 6.387) < 1e-3


class TestRerouteCertificate:
    def test_vacuous_without_committed_clients(self):
        state = line_state([0], [1], [[0]], c=0)
        cert = certify_reroute_bound(state, {0}, R(1))
        assert cert.ok

    def test_unit_ball_cover_with_beta_one(self):
        state = line_state([0, 9], [1, 8], [[0], [1]], stars=(0, 1), c=0)
        cert = certify_reroute_bound(state, {0, 1}, R(1))
        assert cert.ok
        assert cert.alpha == pseudo_alpha(R(2))
        assert cert.worst_ratio <= 2 + cert.alpha

    def test_pinned_client_beyond_beta_radius_is_a_precondition_error(self):
        state = line_state([0, 40], [1, 41], [[0], [1]], stars=(0, 1), c=0)
        with pytest.raises(ValueError, match="1"):
            certify_reroute_bound(state, {0}, R(1))

    def test_far_full_client_fails_the_bound_with_witness(self):
        # full client at 100 sits on its own nearby facility, but the
        # candidate open set is the origin: 100 > (2 + alpha) * L(0)
        state = line_state([0, 99], [1, 100], [[0], [1]], stars=(0,), c=0)
        state.tag[1] = FULL
        cert = certify_reroute_bound(state, {0}, R(1))
        assert not cert.ok
        assert cert.witness
        assert "1" in cert.witness

    def test_alpha_formula_tracks_beta(self):
        tau = R("1.2074")
        for c_exp in (1, 2, 5):
            beta = 3 + 2 / tau**c_exp
            expected = max(beta, 1 + (1 + beta) / tau, pseudo_alpha(tau))
            assert reroute_alpha(tau, beta) == expected
        # large beta dominates both other branches
        assert reroute_alpha(R(2), R(50)) == 50
