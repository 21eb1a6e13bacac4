"""Structure of the pinned clients at a rounded vertex.

The pinned (star) clients' facility balls form an intersection graph whose
shape is what makes the rounding loop finish: at any vertex where no ball
constraint or variable bound is tight, the fractionally-supported stars
decompose into a bounded set of "violating" clients plus at most 3r chains,
and once enough fractional facilities accumulate some chain of length four
yields a pair that can be safely evicted. This module computes that graph,
the decomposition (with every structural bound asserted, not assumed), and
the eviction pair search.
"""

from __future__ import annotations

from dataclasses import dataclass

from .exactlp import rank_of
from .lpiter import STAR, FacilityVertex, InvariantViolation, LpIterState

__all__ = [
    "IntersectionGraph",
    "ChainDecomposition",
    "build_graph",
    "check_bipartite",
    "chain_decompose",
    "find_candidate_configuration",
    "is_candidate_configuration",
]


@dataclass(frozen=True)
class IntersectionGraph:
    """Simple undirected graph: clients as vertices, shared facilities as
    edges. Always rebuilt from the live state, never cached."""

    vertices: tuple
    edges: tuple
    adjacency: dict

    def degree(self, v) -> int:
        return len(self.adjacency[v])


@dataclass(frozen=True)
class ChainDecomposition:
    chains: tuple
    violating: frozenset
    r: int
    rank: int  # rank of the fractional stars' ball incidence vectors
    fractional_facilities: tuple


def star_fractional(state: LpIterState, vertex: FacilityVertex):
    """Stars whose ball holds no integral facility, sorted by client index."""
    out = []
    for j in state.clients(STAR):
        if all(vertex.value(i) < 1 for i in state.fball[j]):
            out.append(j)
    return out


def build_graph(state: LpIterState, vertex: FacilityVertex | None = None, *,
                fractional: bool = False) -> IntersectionGraph:
    """Intersection graph of star balls, optionally restricted to the
    fractionally-supported stars (requires the solved vertex)."""
    if fractional:
        if vertex is None:
            raise ValueError("fractional graph needs the solved vertex")
        verts = star_fractional(state, vertex)
    else:
        verts = state.clients(STAR)
    edges = []
    adjacency = {v: [] for v in verts}
    for a in range(len(verts)):
        for b in range(a + 1, len(verts)):
            j1, j2 = verts[a], verts[b]
            if state.fball[j1] & state.fball[j2]:
                edges.append((j1, j2))
                adjacency[j1].append(j2)
                adjacency[j2].append(j1)
    for v in adjacency:
        adjacency[v].sort()
    return IntersectionGraph(tuple(verts), tuple(edges), adjacency)


def check_bipartite(graph: IntersectionGraph):
    """2-color the graph. Returns (coloring, None) on success or
    (None, odd_cycle) with a concrete odd cycle as a vertex tuple."""
    color = {}
    parent = {}
    for root in graph.vertices:
        if root in color:
            continue
        color[root] = 0
        parent[root] = None
        queue = [root]
        while queue:
            v = queue.pop(0)
            for w in graph.adjacency[v]:
                if w not in color:
                    color[w] = 1 - color[v]
                    parent[w] = v
                    queue.append(w)
                elif color[w] == color[v]:
                    return None, _odd_cycle(parent, v, w)
    return color, None


def _odd_cycle(parent, v, w):
    """Join the tree paths of two same-color endpoints of an edge."""
    anc_v = _ancestry(parent, v)
    anc_w = _ancestry(parent, w)
    common = None
    seen = set(anc_v)
    for node in anc_w:
        if node in seen:
            common = node
            break
    path_v = anc_v[: anc_v.index(common) + 1]
    path_w = anc_w[: anc_w.index(common) + 1]
    cycle = path_v + path_w[-2::-1]
    assert len(cycle) % 2 == 1
    return tuple(cycle)


def _ancestry(parent, v):
    out = [v]
    while parent[out[-1]] is not None:
        out.append(parent[out[-1]])
    return out


def _incidence(state, clients, columns):
    col_index = {i: p for p, i in enumerate(columns)}
    vectors = []
    for j in clients:
        vec = [0] * len(columns)
        for i in state.fball[j]:
            vec[col_index[i]] = 1
        vectors.append(vec)
    return vectors


def chain_decompose(state: LpIterState, vertex: FacilityVertex) -> ChainDecomposition:
    """Split the fractional stars into violating clients and chains.

    Requires a vertex where no ball constraint or variable bound is tight
    (the rounding loop's return condition); under that precondition every
    structural bound below is a theorem, so each one is asserted and any
    failure is a hard error carrying a witness.
    """
    r = state.instance.r1 + state.instance.r2
    frac_fac = vertex.fractional()
    frac_set = set(frac_fac)
    stars = star_fractional(state, vertex)

    for j in stars:
        stray = state.fball[j] - frac_set
        if stray:
            raise InvariantViolation(
                f"fractional star {j} holds non-fractional facility {min(stray)}"
            )
        if len(state.fball[j]) < 2:
            raise InvariantViolation(f"fractional star {j} has a ball of size < 2")

    violating = frozenset(j for j in stars if len(state.fball[j]) > 2)
    excess = sum(len(state.fball[j]) - 2 for j in stars)
    if excess > 2 * r:
        raise InvariantViolation(f"ball-size excess {excess} exceeds 2r = {2 * r}")
    if len(violating) > 2 * r:
        raise InvariantViolation(f"{len(violating)} violating clients exceed 2r = {2 * r}")

    graph = build_graph(state, vertex, fractional=True)
    keep = [j for j in stars if j not in violating]
    chains = _components_to_chains(graph, keep, state, r)

    rank = rank_of(_incidence(state, stars, frac_fac)) if stars else 0
    if len(frac_fac) > rank + r:
        raise InvariantViolation(
            f"{len(frac_fac)} fractional facilities exceed rank {rank} + r {r}"
        )
    if len(chains) > 3 * r:
        raise InvariantViolation(f"{len(chains)} chains exceed 3r = {3 * r}")

    _check_component_ranks(state, graph, keep, frac_fac, violating)
    return ChainDecomposition(
        chains=tuple(tuple(c) for c in chains),
        violating=violating,
        r=r,
        rank=rank,
        fractional_facilities=tuple(frac_fac),
    )


def _components_to_chains(graph, keep, state, r):
    keep_set = set(keep)
    adj = {v: [w for w in graph.adjacency[v] if w in keep_set] for v in keep}
    seen = set()
    chains = []
    for v in keep:
        if v in seen:
            continue
        comp = _component(adj, v)
        seen |= comp
        degs = {u: len(adj[u]) for u in comp}
        if any(d > 2 for d in degs.values()):
            raise InvariantViolation(
                f"component of client {min(comp)} has a degree-3 vertex"
            )
        ends = sorted(u for u in comp if degs[u] <= 1)
        if ends:
            chains.append(_walk(adj, ends[0], len(comp)))
        else:
            # cycle: must be even, cut at the lowest id
            if len(comp) % 2 == 1:
                raise InvariantViolation(f"odd cycle through client {min(comp)}")
            chains.append(_walk(adj, min(comp), len(comp)))
    return chains


def _component(adj, root):
    comp = {root}
    stack = [root]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in comp:
                comp.add(w)
                stack.append(w)
    return comp


def _walk(adj, start, size):
    """Trace a path or cut cycle from `start`, lower-id neighbor first."""
    seq = [start]
    visited = {start}
    while len(seq) < size:
        options = [w for w in adj[seq[-1]] if w not in visited]
        if not options:
            raise InvariantViolation(f"walk from client {start} stalled at {seq[-1]}")
        step = min(options)
        seq.append(step)
        visited.add(step)
    return seq


def _check_component_ranks(state, graph, keep, frac_fac, violating):
    """Per-component facility counts: path components span one more facility
    than their rank, cycle components are rank-deficient by exactly one, and
    the components' facility sets tile a subset of the fractional pool."""
    keep_set = set(keep)
    adj = {v: [w for w in graph.adjacency[v] if w in keep_set] for v in keep}
    seen = set()
    used_facilities = set()
    total = 0
    for v in keep:
        if v in seen:
            continue
        comp = sorted(_component(adj, v))
        seen |= set(comp)
        fset = set()
        for u in comp:
            fset |= state.fball[u]
        if fset & used_facilities:
            raise InvariantViolation(
                f"component of client {comp[0]} shares facilities with another"
            )
        used_facilities |= fset
        total += len(fset)
        vecs = _incidence(state, comp, sorted(fset))
        dim = rank_of(vecs)
        is_cycle = all(len(adj[u]) == 2 for u in comp) and len(comp) > 1
        if is_cycle:
            if dim != len(comp) - 1:
                raise InvariantViolation(
                    f"cycle at client {comp[0]}: rank {dim}, expected {len(comp) - 1}"
                )
        elif len(fset) < dim + 1:
            raise InvariantViolation(
                f"path at client {comp[0]}: {len(fset)} facilities < rank {dim} + 1"
            )
    if total > len(frac_fac):
        raise InvariantViolation(
            f"components span {total} facilities > {len(frac_fac)} fractional"
        )


def star_ball_count(state: LpIterState, i: int) -> int:
    """Number of star balls containing facility i."""
    return sum(1 for j in state.clients(STAR) if i in state.fball[j])


def is_candidate_configuration(state: LpIterState, vertex: FacilityVertex,
                               j: int, j2: int) -> bool:
    """All four clauses of the eviction-pair definition, checked literally."""
    frac = set(star_fractional(state, vertex))
    if j not in frac or j2 not in frac:
        return False
    if not state.fball[j] & state.fball[j2]:
        return False
    if state.level[j2] > state.level[j] - 1:
        return False
    if len(state.fball[j]) != 2 or len(state.fball[j2]) != 2:
        return False
    for i in state.fball[j] | state.fball[j2]:
        if star_ball_count(state, i) != 2:
            return False
    return True


def find_candidate_configuration(state: LpIterState, vertex: FacilityVertex):
    """First eviction pair along the chain decomposition, or None.

    Scans chains of length >= 4; for each adjacent interior pair the member
    with the strictly smaller level plays the second role. Every clause is
    re-validated before returning, so a None result really means no scanned
    pair qualifies.
    """
    dec = chain_decompose(state, vertex)
    for chain in dec.chains:
        if len(chain) < 4:
            continue
        for q in range(1, len(chain) - 2):
            a, b = chain[q], chain[q + 1]
            if state.level[a] == state.level[b]:
                continue
            pair = (a, b) if state.level[a] > state.level[b] else (b, a)
            if is_candidate_configuration(state, vertex, *pair):
                return pair
    return None
