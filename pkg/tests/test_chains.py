"""Intersection graphs of the pinned clients and the chain decomposition.

The hand-built states here pin every level, so the expected decomposition
(chain order, cut point, violating set, rank) is a literal. The generated
sweep at the bottom only checks the structural budgets.
"""

import pytest

from gkmedian._rational import R
from gkmedian.chains import (
    IntersectionGraph,
    build_graph,
    chain_decompose,
    check_bipartite,
    find_candidate_configuration,
    is_candidate_configuration,
    star_ball_count,
)
from gkmedian.instance import generate_instance
from gkmedian.lpiter import (
    FacilityVertex,
    InvariantViolation,
    build_lp_iter,
    check_basic_invariants,
    duplicate_and_extract_fballs,
)
from gkmedian.rounding import RoundingConfig, pseudo_approximation

from tests.synth import (
    assert_sound,
    grid_state,
    line_state,
    pinned_disc,
    rounded_distances,
)

HALF = R(1, 2)


def path_state():
    """Four pinned clients whose balls chain along the line a-b-c-d-e
    with levels 2,3,2,3."""
    state = line_state(
        [0, 8, 16, 22, 32],
        [4, 11, 19, 27],
        [[0, 1], [1, 2], [2, 3], [3, 4]],
        stars=(0, 1, 2, 3),
        c=0,
    )
    assert state.level == [2, 3, 2, 3]
    return state


def cycle_state():
    """Four pinned clients around an L1 square: each consecutive pair of
    balls shares one facility and the last wraps to the first, so the
    intersection graph is an even cycle."""
    state = grid_state(
        [(0, 0), (8, 0), (8, 8), (0, 8)],
        [(4, 0), (8, 3), (4, 8), (0, 5)],
        [[0, 1], [1, 2], [2, 3], [3, 0]],
        stars=(0, 1, 2, 3),
        c=0,
    )
    assert state.level == [2, 3, 2, 3]
    return state


def half_vertex(count):
    return FacilityVertex(
        values={i: HALF for i in range(count)}, objective=R(0), ep=None
    )


def graph_of(edges, vertices):
    adjacency = {v: [] for v in vertices}
    for a, b in edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    for v in adjacency:
        adjacency[v].sort()
    return IntersectionGraph(tuple(vertices), tuple(edges), adjacency)


class TestBuildGraph:
    def test_no_stars_gives_an_empty_graph(self):
        state = line_state([0], [1], [[0]])
        graph = build_graph(state)
        assert graph.vertices == ()
        assert graph.edges == ()

    def test_shared_facility_becomes_an_edge(self):
        state = line_state([0, 8, 16], [4, 11], [[0, 1], [1, 2]], stars=(0, 1), c=0)
        assert_sound(state)
        graph = build_graph(state)
        assert graph.vertices == (0, 1)
        assert graph.edges == ((0, 1),)
        assert graph.degree(0) == 1 and graph.degree(1) == 1

    def test_fractional_restriction_requires_the_vertex(self):
        state = path_state()
        with pytest.raises(ValueError):
            build_graph(state, fractional=True)

    def test_fractional_graph_drops_integrally_served_stars(self):
        state = path_state()
        vertex = FacilityVertex(
            values={0: R(1), 1: R(0), 2: HALF, 3: HALF, 4: HALF},
            objective=R(0),
            ep=None,
        )
        graph = build_graph(state, vertex, fractional=True)
        assert graph.vertices == (1, 2, 3)
        assert graph.edges == ((1, 2), (2, 3))


class TestCheckBipartite:
    def test_even_cycle_is_two_colored(self):
        graph = graph_of([(0, 1), (1, 2), (2, 3), (0, 3)], (0, 1, 2, 3))
        coloring, odd = check_bipartite(graph)
        assert odd is None
        assert set(coloring) == {0, 1, 2, 3}
        for a, b in graph.edges:
            assert coloring[a] != coloring[b]

    def test_triangle_returns_a_concrete_odd_cycle(self):
        graph = graph_of([(0, 1), (1, 2), (0, 2)], (0, 1, 2))
        coloring, odd = check_bipartite(graph)
        assert coloring is None
        assert len(odd) == 3
        assert set(odd) == {0, 1, 2}
        for q in range(len(odd)):
            pair = tuple(sorted((odd[q], odd[(q + 1) % len(odd)])))
            assert pair in graph.edges

    def test_isolated_vertices_are_colored_too(self):
        graph = graph_of([], (0, 1, 2))
        coloring, odd = check_bipartite(graph)
        assert odd is None
        assert set(coloring) == {0, 1, 2}

    def test_pinned_path_state_is_bipartite(self):
        state = path_state()
        coloring, odd = check_bipartite(build_graph(state))
        assert odd is None
        assert coloring[0] != coloring[1] != coloring[2]


class TestChainDecompose:
    def test_integral_vertex_decomposes_to_nothing(self):
        state = path_state()
        vertex = FacilityVertex(
            values={0: R(1), 1: R(0), 2: R(1), 3: R(0), 4: R(1)},
            objective=R(0),
            ep=None,
        )
        dec = chain_decompose(state, vertex)
        assert dec.chains == ()
        assert dec.violating == frozenset()
        assert dec.rank == 0
        assert dec.fractional_facilities == ()

    def test_path_of_four_is_one_chain(self):
        state = path_state()
        dec = chain_decompose(state, half_vertex(5))
        assert dec.chains == ((0, 1, 2, 3),)
        assert dec.violating == frozenset()
        assert dec.r == 2
        assert dec.rank == 4
        assert dec.fractional_facilities == (0, 1, 2, 3, 4)

    def test_even_cycle_is_cut_at_the_lowest_client(self):
        state = cycle_state()
        assert_sound(state)
        dec = chain_decompose(state, half_vertex(4))
        assert dec.chains == ((0, 1, 2, 3),)
        # the four incidence vectors of a 4-cycle sum to the same thing
        # along either pair of opposite edges, so one of them is redundant
        assert dec.rank == 3
        assert dec.fractional_facilities == (0, 1, 2, 3)

    def test_ball_of_three_is_violating_not_chained(self):
        state = line_state([0, 2, 4], [2], [[0, 1, 2]], stars=(0,), c=0)
        assert_sound(state)
        third = R(1, 3)
        vertex = FacilityVertex(
            values={0: third, 1: third, 2: third}, objective=R(0), ep=None
        )
        dec = chain_decompose(state, vertex)
        assert dec.violating == frozenset({0})
        assert dec.chains == ()

    def test_stray_integral_facility_in_a_star_ball_is_rejected(self):
        state = path_state()
        vertex = FacilityVertex(
            values={0: HALF, 1: HALF, 2: HALF, 3: HALF, 4: R(0)},
            objective=R(0),
            ep=None,
        )
        with pytest.raises(InvariantViolation, match="non-fractional"):
            chain_decompose(state, vertex)

    def test_singleton_fractional_ball_is_rejected(self):
        state = line_state([0], [0], [[0]], stars=(0,), c=0)
        vertex = FacilityVertex(values={0: HALF}, objective=R(0), ep=None)
        with pytest.raises(InvariantViolation, match="size < 2"):
            chain_decompose(state, vertex)


class TestCandidateConfiguration:
    def test_interior_descending_pair_is_found(self):
        state = path_state()
        assert find_candidate_configuration(state, half_vertex(5)) == (1, 2)

    def test_cut_cycle_also_yields_a_valid_pair(self):
        state = cycle_state()
        vertex = half_vertex(4)
        pair = find_candidate_configuration(state, vertex)
        assert pair is not None
        assert is_candidate_configuration(state, vertex, *pair)

    def test_chains_shorter_than_four_give_none(self):
        state = line_state([0, 8, 16], [4, 11], [[0, 1], [1, 2]], stars=(0, 1), c=0)
        assert find_candidate_configuration(state, half_vertex(3)) is None

    def test_each_clause_is_required(self):
        state = path_state()
        vertex = half_vertex(5)
        assert is_candidate_configuration(state, vertex, 1, 2)
        # second client must sit at least one level below the first
        assert not is_candidate_configuration(state, vertex, 2, 1)
        assert not is_candidate_configuration(state, vertex, 0, 1)
        # balls must intersect
        assert not is_candidate_configuration(state, vertex, 1, 3)
        # every facility of the pair must sit in exactly two star balls,
        # which the chain endpoint's outer facility does not
        assert not is_candidate_configuration(state, vertex, 1, 0)
        integral = FacilityVertex(
            values={i: R(1) for i in range(5)}, objective=R(0), ep=None
        )
        assert not is_candidate_configuration(state, integral, 1, 2)

    def test_star_ball_count_counts_all_pinned_balls(self):
        state = path_state()
        assert star_ball_count(state, 0) == 1
        assert star_ball_count(state, 1) == 2


class TestGeneratedDecompositions:
    def test_rounded_vertices_stay_within_the_chain_budget(self):
        """At every vertex the rounding loop hands back, the fractional
        stars decompose into at most 2r violating clients and 3r chains of
        pairwise-intersecting two-facility balls."""
        decomposed = 0

        def hook(state, vertex):
            nonlocal decomposed
            dec = chain_decompose(state, vertex)
            decomposed += 1
            assert dec.r == 2
            assert len(dec.violating) <= 4
            assert len(dec.chains) <= 6
            assert len(dec.fractional_facilities) <= dec.rank + dec.r
            for chain in dec.chains:
                assert not set(chain) & dec.violating
                for j in chain:
                    assert len(state.fball[j]) == 2
                for a, b in zip(chain, chain[1:]):
                    assert state.fball[a] & state.fball[b]
            coloring, odd = check_bipartite(
                build_graph(state, vertex, fractional=True)
            )
            assert odd is None

        for seed in range(8):
            inst = generate_instance(seed, 6, 7, kind="gkm")
            split = duplicate_and_extract_fballs(inst)
            disc = pinned_disc()
            state = build_lp_iter(
                split.instance,
                split.fballs,
                disc,
                rounded_distances(disc, split.instance.metric),
                copy_of=split.copy_of,
            )
            pseudo_approximation(state, RoundingConfig(vertex_hook=hook))
            check_basic_invariants(state).assert_ok()
        assert decomposed >= 8
