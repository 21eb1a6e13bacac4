"""Knapsack median end to end: sparsify, pseudo-approximate, re-open.

The pipeline guesses a cost bound U, force-opens facilities whose optimal
service load exceeds rho*U (their clients ride along for free), runs the
iterative rounding on the sparsified sub-instance, and finally re-opens an
integral facility set of minimum weight subject to keeping one open unit in
every pinned ball. The re-opening LP is integral because the pinned balls
form a bipartite intersection structure; that is asserted, with a bounded
enumeration fallback rather than a silent acceptance of a fractional answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

from ._rational import R
from ._sparsify import (
    assemble_state,
    knapsack_density_ok,
    restricted_assignment_lp,
    s0_location_reps,
    u_grid,
)
from .exactlp import EQ, InfeasibleError, LinearProgram, solve_to_vertex
from .instance import KnapsackInstance, SchemaError, Solution, assign_served
from .lpiter import PART, STAR, InvariantViolation
from .oracle import brute_force
from .rounding import RoundingConfig, certify_reroute_bound, pseudo_approximation

__all__ = [
    "SubInstance",
    "preprocess_knapsack",
    "postprocess_knapsack",
    "solve_knapsack",
    "DEFAULT_TAU",
]

DEFAULT_TAU = R("2046/1000")
_ZERO = R(0)

# Reopening fallback cap: 2^20 integral settings is already far beyond the
# 15r-fractional guarantee; anything larger means the vertex bound is broken.
_FALLBACK_LIMIT = 20


@dataclass(frozen=True)
class SubInstance:
    """One sparsified candidate, ready for rounding.

    `kept` lists parent client ids in sub-instance order; `removed` are the
    clients pre-assigned to S0. `radius` is R_j per kept position.
    """

    parent: KnapsackInstance
    state: object
    s0: tuple
    removed: tuple
    kept: tuple
    radius: tuple
    rho: object
    delta: object
    U: object
    lp_objective: object

    @property
    def copy_of(self):
        return self.state.copy_of


def _oracle_candidate(instance: KnapsackInstance, opt_solution: Solution, cap):
    """S0, removed, kept, radius from the brute-force optimum at load cap."""
    metric = instance.metric
    opens = opt_solution.open_facilities
    load = {i: _ZERO for i in opens}
    serving = {}
    for j, i in opt_solution.assignment:
        load[i] += metric.dfc(i, j)
        serving[j] = i
    s0 = tuple(sorted(i for i in opens if load[i] > cap))
    s0_set = set(s0)
    removed = tuple(j for j in range(metric.client_count) if serving[j] in s0_set)
    kept = tuple(j for j in range(metric.client_count) if serving[j] not in s0_set)
    radius = tuple(min(metric.dfc(i, j) for i in opens) for j in kept)
    return s0, removed, kept, radius


def _build_sub(instance, s0, removed, kept, radius, rho, delta, U, tau, seed):
    """Solve the restricted LP, split, assemble, and gate on the checkers.

    Returns a SubInstance or None (infeasible candidate / checker failure).
    """
    metric = instance.metric
    cap = rho * U
    try:
        assignment = restricted_assignment_lp(
            metric,
            kept,
            s0,
            radius,
            cap,
            (instance.w,),
            (instance.budget,),
            R(len(kept)),
        )
    except InfeasibleError:
        return None
    assembled = assemble_state(
        metric,
        kept,
        s0,
        assignment,
        radius,
        kind="knapsack",
        rho=rho,
        delta=delta,
        U=U,
        tau=tau,
        seed=seed,
        knap_row_of=lambda orig: instance.w[orig],
        knap_rhs=instance.budget,
        cov_target=len(kept),
    )
    if not (assembled.basic.ok and assembled.extra.ok):
        return None
    return SubInstance(
        parent=instance,
        state=assembled.state,
        s0=tuple(s0),
        removed=tuple(removed),
        kept=tuple(kept),
        radius=tuple(radius),
        rho=rho,
        delta=delta,
        U=U,
        lp_objective=assignment.objective,
    )


def _enumerative_radii(metric, kept, rho, delta, U):
    """Largest grid radii passing the density clause, reduced greedily.

    The clause count is independent of R, so a violation at (j, r) with
    r <= R_j is repaired only by pulling R_j below r.
    """
    values = sorted(
        {metric.dist[metric.facility_count + j][q] for j in kept for q in range(metric.n)}
    )
    diam = max(max(row) for row in metric.dist)
    grid = sorted(set(values) | {diam})
    radius = [diam for _ in kept]
    bound = rho * U
    changed = True
    while changed:
        changed = False
        for jj, j in enumerate(kept):
            rj = radius[jj]
            if rj <= 0:
                continue
            candidates = sorted(
                {rj}
                | {
                    metric.dcc(j, j2) / delta
                    for j2 in kept
                    if 0 < metric.dcc(j, j2) / delta <= rj
                }
            )
            for r in candidates:
                ball = sum(1 for j2 in kept if metric.dcc(j, j2) <= delta * r)
                if ball * r > bound:
                    below = [g for g in grid if g < r]
                    radius[jj] = below[-1] if below else _ZERO
                    changed = True
                    break
    return tuple(radius)


def preprocess_knapsack(
    instance: KnapsackInstance,
    rho,
    delta,
    U,
    mode: str = "oracle",
    *,
    tau=DEFAULT_TAU,
    seed: int = 0,
    oracle=None,
):
    """Sparsify at cost guess U; emit the candidates passing every checker.

    oracle mode builds the single candidate implied by the brute-force
    optimum (S0 = facilities with service load above rho*U, their clients
    removed, R_j = d(j, S*)). enumerative mode tries small S0 sets with
    distance-threshold client removal and greedily maximal radii.
    """
    rho, delta, U = R(rho), R(delta), R(U)
    if not (0 < rho < R(1, 2) and 0 < delta < R(1, 2)):
        raise SchemaError("need 0 < rho, delta < 1/2")
    metric = instance.metric
    if mode == "oracle":
        opt = oracle if oracle is not None else brute_force(instance)
        sol = opt.solution(metric) if hasattr(opt, "solution") else opt
        s0, removed, kept, radius = _oracle_candidate(instance, sol, rho * U)
        if len(s0_location_reps(metric, s0)) != len(s0):
            raise InvariantViolation(
                "oracle optimum force-opens two collocated facilities"
            )
        sub = _build_sub(instance, s0, removed, kept, radius, rho, delta, U, tau, seed)
        return [sub] if sub is not None else []
    if mode != "enumerative":
        raise SchemaError(f"unknown mode {mode!r}")

    out = []
    nf, nc = metric.facility_count, metric.client_count
    max_s0 = min(math.ceil(1 / rho), 3)
    for size in range(0, max_s0 + 1):
        for s0 in combinations(range(nf), size):
            if len(s0_location_reps(metric, s0)) != len(s0):
                continue  # redundant: the per-location representative candidate exists
            if s0:
                near = [min(metric.dfc(i, j) for i in s0) for j in range(nc)]
                thetas = sorted({R(-1)} | set(near))
            else:
                thetas = [R(-1)]
            for theta in thetas:
                removed = tuple(
                    j for j in range(nc) if s0 and min(metric.dfc(i, j) for i in s0) <= theta
                )
                kept = tuple(j for j in range(nc) if j not in set(removed))
                radius = _enumerative_radii(metric, kept, rho, delta, U)
                sub = _build_sub(
                    instance, s0, removed, kept, radius, rho, delta, U, tau, seed
                )
                if sub is not None:
                    out.append(sub)
    return out


def _copy_weight(sub: SubInstance, copy: int):
    return sub.parent.w[sub.state.copy_of[copy]]


def _reopen_integral(sub: SubInstance, vertex):
    """Weight-minimal integral re-opening keeping every pinned ball at one.

    Solves min sum w_i y_i subject to y(F_j) = 1 for pinned clients and
    y_i = 1 for facilities the vertex already opened integrally. The vertex
    is expected integral (bipartite structure); a fractional answer falls
    back to enumerating integral settings of the fractional support.
    """
    state = sub.state
    alive = sorted(state.facilities)
    idx = {i: t for t, i in enumerate(alive)}
    lp = LinearProgram(len(alive))
    stars = state.clients(STAR)
    for j in stars:
        lp.add_row({idx[i]: R(1) for i in state.fball[j]}, EQ, 1, ("CStar", j))
    pinned = [i for i in alive if vertex.value(i) == 1]
    for i in pinned:
        lp.set_bounds(idx[i], 1, 1)
    lp.set_objective({idx[i]: _copy_weight(sub, i) for i in alive})
    ep = solve_to_vertex(lp)

    fractional = [i for i in alive if 0 < ep.y[idx[i]] < 1]
    if not fractional:
        opens = [i for i in alive if ep.y[idx[i]] == 1]
        return opens, ep.objective_value
    if len(fractional) > _FALLBACK_LIMIT:
        raise InvariantViolation(
            f"reopening LP left {len(fractional)} fractional facilities"
        )
    base = [i for i in alive if ep.y[idx[i]] == 1 and i not in fractional]
    best = None
    for mask in range(1 << len(fractional)):
        opens = set(base) | {
            fractional[t] for t in range(len(fractional)) if mask >> t & 1
        }
        if any(len(opens & state.fball[j]) != 1 for j in stars):
            continue
        weight = sum((_copy_weight(sub, i) for i in opens), _ZERO)
        key = (weight, tuple(sorted(opens)))
        if best is None or key < best:
            best = key
    if best is None:
        raise InvariantViolation("no integral re-opening satisfies the pinned balls")
    return sorted(best[1]), best[0]


def postprocess_knapsack(sub: SubInstance, vertex) -> Solution:
    """Integral parent solution from a rounded sub-instance vertex.

    Requires the rounding to have decided every real client (no partial
    clients can remain when the coverage row demands everyone). The returned
    solution opens the re-opened copies' parents plus S0 and serves every
    parent client at its nearest open facility.
    """
    state = sub.state
    part = state.clients(PART)
    if part:
        raise InvariantViolation(
            f"knapsack rounding left undecided clients {part}"
        )
    opens, reopened_weight = _reopen_integral(sub, vertex)

    vertex_weight = sum(
        (_copy_weight(sub, i) * vertex.value(i) for i in sorted(state.facilities)),
        _ZERO,
    )
    if not reopened_weight <= vertex_weight <= sub.parent.budget:
        raise InvariantViolation(
            "re-opening is heavier than the fractional vertex it rounds"
        )

    parent_open = sorted(set(sub.s0) | {state.copy_of[i] for i in opens})
    weight = sum((sub.parent.w[i] for i in parent_open), _ZERO)
    if weight > sub.parent.budget:
        raise InvariantViolation("re-opened parent set exceeds the budget")
    if not set(sub.s0) <= set(parent_open):
        raise InvariantViolation("S0 member missing from the final open set")
    metric = sub.parent.metric
    return assign_served(metric, parent_open, range(metric.client_count))


# After the first U that passes the density pre-filter, also try these many
# grid steps further: caps loosen with U and a looser candidate can win.
_EXTRA_STEPS = (4, 16)


def solve_knapsack(
    instance: KnapsackInstance,
    epsilon,
    seed: int,
    *,
    tau=DEFAULT_TAU,
    mode: str = "oracle",
    trace=None,
    validate: bool = False,
    event_hook=None,
    vertex_hook=None,
) -> Solution:
    """Full pipeline: U-search, sparsify, round, re-open; cheapest wins.

    epsilon in (0, 1/2); the internal slack is eps' = epsilon/8 with
    rho = eps'^2 and delta = eps'. Ties between equally cheap solutions break
    lexicographically on the open set.
    """
    epsilon = R(epsilon)
    if not 0 < epsilon < R(1, 2):
        raise SchemaError("epsilon must be in (0, 1/2)")
    tau = R(tau)
    eps_prime = epsilon / 8
    rho, delta = eps_prime * eps_prime, eps_prime
    metric = instance.metric

    oracle = brute_force(instance) if mode == "oracle" else None
    opt_solution = oracle.solution(metric) if oracle is not None else None

    grid = u_grid(metric, eps_prime)
    chosen = []
    if mode == "oracle":
        passing = []
        for pos, U in enumerate(grid):
            s0, removed, kept, radius = _oracle_candidate(
                instance, opt_solution, rho * U
            )
            if knapsack_density_ok(metric, kept, radius, rho * U, delta):
                passing.append(pos)
                break
        if passing:
            first = passing[0]
            chosen = [grid[first]]
            for step in _EXTRA_STEPS:
                if first + step < len(grid):
                    U = grid[first + step]
                    s0, removed, kept, radius = _oracle_candidate(
                        instance, opt_solution, rho * U
                    )
                    if knapsack_density_ok(metric, kept, radius, rho * U, delta):
                        chosen.append(U)
    else:
        stride = max(1, (len(grid) - 1) // 2)
        chosen = grid[::stride]

    best = None
    for U in chosen:
        subs = preprocess_knapsack(
            instance, rho, delta, U, mode, tau=tau, seed=seed, oracle=oracle
        )
        for sub in subs:
            cfg = RoundingConfig(tau=tau, trace=trace, validate=validate,
                                 event_hook=event_hook, vertex_hook=vertex_hook)
            vertex, _events = pseudo_approximation(sub.state, cfg)
            solution = postprocess_knapsack(sub, vertex)
            sub_open = {
                i for i in sub.state.facilities
                if sub.state.copy_of[i] in set(solution.open_facilities)
            }
            try:
                cert = certify_reroute_bound(sub.state, sub_open, R(1))
            except ValueError as exc:
                raise InvariantViolation(f"rerouting bound failed: {exc}") from exc
            if not cert.ok:
                raise InvariantViolation(f"rerouting bound failed: {cert.witness}")
            key = (solution.cost, solution.open_facilities)
            if best is None or key < best[0]:
                best = (key, solution)
    if best is None:
        raise InfeasibleError((("Knapsack", "no passing candidate at any U"),))
    return best[1]
