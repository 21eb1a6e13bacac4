"""k-median with outliers end to end.

The pre-processing mirrors the knapsack pipeline (force-open expensive
facilities, restricted assignment LP, circular splitting, dummy clients) with
the outliers constants and a served-count target m' instead of serve-all.
Post-processing is recursive: each level rounds, and if fractional pinned
balls survive outside the dummies, extracts a partial solution by opening the
highest-coverage facility in each surviving ball, removes the clients those
facilities serve, shrinks (k, m), and recurses on the sliced state.

All bookkeeping is exact: facility deletions, client removals, and the
(k, m) decrements are asserted against the re-checked invariants and the
restricted vertex's feasibility for the updated LP at every level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

from ._rational import R, format_rational
from ._sparsify import (
    assemble_state,
    outliers_density_ok,
    restricted_assignment_lp,
    s0_location_reps,
    u_grid,
)
from .chains import star_fractional
from .exactlp import EQ, GE, InfeasibleError, LE
from .instance import (
    GkmInstance,
    MetricInstance,
    OutliersInstance,
    SchemaError,
    Solution,
    assign_served,
)
from .lpiter import (
    ExtraParams,
    FULL,
    InvariantViolation,
    LpIterState,
    PART,
    STAR,
    check_basic_invariants,
    check_extra_invariants,
    emit_lp,
)
from .oracle import brute_force
from .rounding import RoundingConfig, certify_reroute_bound, pseudo_approximation

__all__ = [
    "OutlierSubInstance",
    "PartialSolution",
    "preprocess_outliers",
    "compute_partial",
    "outliers_postprocess",
    "solve_outliers",
    "DEFAULT_TAU",
    "default_gap_c",
]

DEFAULT_TAU = R("12074/10000")
_ZERO = R(0)


def default_gap_c(tau, eps_prime) -> int:
    """Smallest integer c with 2/tau^c <= eps', so the level-gap term in the
    rerouting constant stays within the approximation slack."""
    tau, eps_prime = R(tau), R(eps_prime)
    if tau <= 1:
        raise SchemaError("tau must exceed 1")
    target = 2 / eps_prime
    c, power = 0, R(1)
    while power < target:
        power *= tau
        c += 1
    return max(c, 1)


@dataclass(frozen=True)
class OutlierSubInstance:
    """One sparsified candidate: kept clients, forced opens, target m'."""

    parent: OutliersInstance
    state: LpIterState
    s0: tuple
    removed: tuple
    kept: tuple
    radius: tuple
    m_prime: int
    rho: object
    delta: object
    U: object
    lp_objective: object


@dataclass(frozen=True)
class PartialSolution:
    """One extraction step: opened copies (S0 excluded by construction), the
    sub-instance clients they pay for, and the audit log."""

    S: tuple
    served: tuple
    k_used: int
    events: tuple


def _oracle_candidate(instance: OutliersInstance, opt_solution: Solution, cap):
    """S0, removed, kept, radius, m' from the brute-force optimum."""
    metric = instance.metric
    opens = opt_solution.open_facilities
    served = set(opt_solution.served)
    load = {i: _ZERO for i in opens}
    serving = {}
    for j, i in opt_solution.assignment:
        load[i] += metric.dfc(i, j)
        serving[j] = i
    s0 = tuple(sorted(i for i in opens if load[i] > cap))
    s0_set = set(s0)
    removed = tuple(
        j for j in sorted(served) if serving[j] in s0_set
    )
    removed_set = set(removed)
    kept = tuple(j for j in range(metric.client_count) if j not in removed_set)
    radius = tuple(
        min(metric.dfc(i, j) for i in opens) if j in served else _ZERO
        for j in kept
    )
    m_prime = instance.m - len(removed)
    return s0, removed, kept, radius, m_prime


def _build_sub(
    instance, s0, removed, kept, radius, m_prime, rho, delta, U, tau, seed
):
    """Restricted LP, split, assembly, checker gate. None if the candidate
    is infeasible or fails a clause."""
    metric = instance.metric
    cap = rho * (1 + delta) * U / 2
    ones = tuple(R(1) for _ in range(metric.facility_count))
    try:
        assignment = restricted_assignment_lp(
            metric,
            kept,
            s0,
            radius,
            cap,
            (ones,),
            (R(instance.k),),
            R(m_prime),
        )
    except InfeasibleError:
        return None
    assembled = assemble_state(
        metric,
        kept,
        s0,
        assignment,
        radius,
        kind="outliers",
        rho=rho,
        delta=delta,
        U=U,
        tau=tau,
        seed=seed,
        knap_row_of=lambda orig: R(1),
        knap_rhs=R(instance.k),
        cov_target=m_prime,
    )
    if not (assembled.basic.ok and assembled.extra.ok):
        return None
    return OutlierSubInstance(
        parent=instance,
        state=assembled.state,
        s0=tuple(s0),
        removed=tuple(removed),
        kept=tuple(kept),
        radius=tuple(radius),
        m_prime=m_prime,
        rho=rho,
        delta=delta,
        U=U,
        lp_objective=assignment.objective,
    )


def _enumerative_radii(metric, kept, rho, delta, U):
    """Greedily maximal grid radii passing the density clause.

    A violation at (p, t) counts clients with R_j >= t near p; it is repaired
    by pulling the largest offending radius below t (ties lowest id)."""
    nf = metric.facility_count
    grid = sorted(
        {metric.dist[nf + j][q] for j in kept for q in range(metric.n)}
        | {max(max(row) for row in metric.dist)}
    )
    radius = [grid[-1] for _ in kept]
    factor = rho * (1 + 3 * delta / 4) / (1 - delta / 4) * U
    stretch = (4 + 3 * delta) / delta
    points = list(range(nf)) + [nf + j for j in kept]
    changed = True
    while changed:
        changed = False
        for p in points:
            candidates = set()
            for jj, j in enumerate(kept):
                candidates.add(metric.dist[p][nf + j] * stretch)
                candidates.add(radius[jj])
            for t in sorted(candidates):
                if t <= 0:
                    continue
                counted = [
                    jj
                    for jj, j in enumerate(kept)
                    if radius[jj] >= t and metric.dist[p][nf + j] * stretch <= t
                ]
                if len(counted) * t > factor:
                    worst = max(counted, key=lambda jj: (radius[jj], -jj))
                    below = [g for g in grid if g < t]
                    radius[worst] = below[-1] if below else _ZERO
                    changed = True
                    break
            if changed:
                break
    return tuple(radius)


def preprocess_outliers(
    instance: OutliersInstance,
    rho,
    delta,
    U,
    mode: str = "oracle",
    *,
    tau=DEFAULT_TAU,
    seed: int = 0,
    oracle=None,
):
    """Sparsify at cost guess U. oracle mode derives (S0, removals, radii, m')
    from the brute-force optimum; enumerative mode enumerates S0 sets,
    removal thresholds, and m' over the plausible range."""
    rho, delta, U = R(rho), R(delta), R(U)
    if not (0 < rho < R(1, 2) and 0 < delta < R(1, 2)):
        raise SchemaError("need 0 < rho, delta < 1/2")
    metric = instance.metric
    if mode == "oracle":
        opt = oracle if oracle is not None else brute_force(instance)
        sol = opt.solution(metric) if hasattr(opt, "solution") else opt
        cap = rho * (1 + delta) * U / 2
        s0, removed, kept, radius, m_prime = _oracle_candidate(instance, sol, cap)
        if len(s0_location_reps(metric, s0)) != len(s0):
            raise InvariantViolation(
                "oracle optimum force-opens two collocated facilities"
            )
        sub = _build_sub(
            instance, s0, removed, kept, radius, m_prime, rho, delta, U, tau, seed
        )
        return [sub] if sub is not None else []
    if mode != "enumerative":
        raise SchemaError(f"unknown mode {mode!r}")

    out = []
    nf, nc = metric.facility_count, metric.client_count
    max_s0 = min(math.ceil(1 / rho), 3)
    for size in range(0, max_s0 + 1):
        for s0 in combinations(range(nf), size):
            if len(s0_location_reps(metric, s0)) != len(s0):
                continue
            if s0:
                near = [min(metric.dfc(i, j) for i in s0) for j in range(nc)]
                thetas = sorted({R(-1)} | set(near))
            else:
                thetas = [R(-1)]
            for theta in thetas:
                removed = tuple(
                    j
                    for j in range(nc)
                    if s0 and min(metric.dfc(i, j) for i in s0) <= theta
                )
                kept = tuple(j for j in range(nc) if j not in set(removed))
                radius = _enumerative_radii(metric, kept, rho, delta, U)
                for m_prime in range(max(0, instance.m - len(removed)), instance.m + 1):
                    sub = _build_sub(
                        instance,
                        s0,
                        removed,
                        kept,
                        radius,
                        m_prime,
                        rho,
                        delta,
                        U,
                        tau,
                        seed,
                    )
                    if sub is not None:
                        out.append(sub)
    return out


def _point_feasible(lp, value_of) -> str:
    """Witness string if the facility assignment violates the LP, else ""."""
    values = [value_of(i) for i in lp.var_to_facility]
    for v, x in enumerate(values):
        if not lp.lower[v] <= x <= lp.upper[v]:
            return f"variable {lp.var_to_facility[v]} out of bounds"
    for coeffs, rel, rhs, label in lp.rows:
        total = sum((c * x for c, x in zip(coeffs, values) if c), _ZERO)
        if rel == LE and total > rhs:
            return f"row {label} above rhs"
        if rel == GE and total < rhs:
            return f"row {label} below rhs"
        if rel == EQ and total != rhs:
            return f"row {label} misses rhs"
    return ""


def _slice_state(state: LpIterState, dead_facilities, removed_clients, k_used):
    """New state with the dead facilities and removed clients cut out.

    Every surviving real client returns to partial; dummies stay pinned.
    Levels are kept (balls only shrink, so the radius invariants survive);
    inner balls are refiltered. k drops by k_used and the coverage target by
    the number of removed clients.
    """
    metric = state.instance.metric
    nf = metric.facility_count
    keep_f = [i for i in sorted(state.facilities) if i not in dead_facilities]
    keep_c = [j for j in range(state.client_count) if j not in removed_clients]
    fmap = {i: t for t, i in enumerate(keep_f)}
    points = keep_f + [nf + j for j in keep_c]
    dist = tuple(tuple(metric.dist[p][q] for q in points) for p in points)
    new_metric = MetricInstance(
        facility_count=len(keep_f),
        client_count=len(keep_c),
        dist=dist,
        scale=metric.scale,
        facility_ids=tuple(metric.facility_ids[i] for i in keep_f),
        client_ids=tuple(metric.client_ids[j] for j in keep_c),
        points=None,
    )
    dprime = tuple(tuple(state.dprime[p][q] for q in points) for p in points)
    inst = state.instance
    W = (tuple(inst.W[0][i] for i in keep_f),)
    b = (inst.b[0] - k_used,)
    a = tuple((R(1),) for _ in keep_c)
    c = (max(inst.c[0] - len(removed_clients), _ZERO),)
    new_inst = GkmInstance(new_metric, W, b, a, c)
    fball = [{fmap[i] for i in state.fball[j] if i in fmap} for j in keep_c]
    inner = [{fmap[i] for i in state.inner[j] if i in fmap} for j in keep_c]
    level = [state.level[j] for j in keep_c]
    tag = [STAR if j in state.C0 else PART for j in keep_c]
    c0 = frozenset(t for t, j in enumerate(keep_c) if j in state.C0)
    extra = ExtraParams(
        state.extra.rho,
        state.extra.delta,
        state.extra.U,
        tuple(state.extra.radius[j] for j in keep_c),
    )
    return (
        LpIterState(
            instance=new_inst,
            disc=state.disc,
            dprime=dprime,
            facilities=set(range(len(keep_f))),
            fball=fball,
            inner=inner,
            level=level,
            tag=tag,
            copy_of=tuple(state.copy_of[i] for i in keep_f),
            C0=c0,
            extra=extra,
        ),
        fmap,
    )


def compute_partial(state: LpIterState, vertex, cfg: RoundingConfig):
    """One greedy extraction step; returns (PartialSolution, sliced state).

    Follows the extraction algorithm exactly: walk the surviving fractional
    pinned clients in increasing level order, evicting ball-intersecting
    peers and either covering or evicting across partial-client bridges by
    the level gap c; then open the highest-coverage facility in each
    remaining ball.
    """
    stars_lt1 = star_fractional(state, vertex)
    if set(stars_lt1) <= state.C0:
        raise ValueError("no fractional pinned client outside the dummies")
    s0_facs = state.s0_facilities()
    gap = cfg.gap_c
    events = []

    cbar = {j for j in stars_lt1 if not state.fball[j] & s0_facs}
    order = sorted(cbar, key=lambda j: (state.level[j], j))
    covered = set()
    processed = []
    part = state.clients(PART)
    for jbar in order:
        if jbar not in cbar:
            continue
        processed.append(jbar)
        for j in sorted(cbar - {jbar}):
            if state.fball[j] & state.fball[jbar]:
                if j in processed:
                    raise InvariantViolation(
                        f"extraction evicted already-processed client {j}"
                    )
                cbar.remove(j)
                events.append({"kind": "evict-peer", "client": j, "by": jbar})
        while True:
            bridge = None
            for jp in part:
                if jp in covered or not state.fball[jp] & state.fball[jbar]:
                    continue
                others = [
                    j
                    for j in sorted(cbar)
                    if j != jbar and state.fball[jp] & state.fball[j]
                ]
                if others:
                    bridge = (jp, others[0])
                    break
            if bridge is None:
                break
            jp, j = bridge
            if state.level[jp] <= state.level[jbar] - gap:
                if j in processed:
                    raise InvariantViolation(
                        f"extraction evicted already-processed client {j}"
                    )
                cbar.remove(j)
                events.append(
                    {"kind": "evict-far", "client": j, "bridge": jp, "by": jbar}
                )
            else:
                covered.add(jp)
                events.append({"kind": "cover", "client": jp, "by": jbar})

    cbar_list = sorted(cbar)
    for pos, j in enumerate(cbar_list):
        for j2 in cbar_list[pos + 1 :]:
            if state.fball[j] & state.fball[j2]:
                raise InvariantViolation(
                    f"extraction balls of {j} and {j2} intersect"
                )
    uncovered_part = [j for j in part if j not in covered]
    for jp in uncovered_part:
        hits = sum(1 for j in cbar_list if state.fball[jp] & state.fball[j])
        if hits > 1:
            raise InvariantViolation(
                f"partial client {jp} meets {hits} extraction balls"
            )

    weight = {}
    for i in state.facilities:
        weight[i] = sum(1 for jp in uncovered_part if i in state.fball[jp])
    sbar = []
    for j in cbar_list:
        best = max(sorted(state.fball[j]), key=lambda i: (weight[i], -i))
        sbar.append(best)
        events.append({"kind": "open", "client": j, "facility": best, "w": weight[best]})
    sbar_set = set(sbar)
    part_of_sbar = [j for j in part if state.fball[j] & sbar_set]

    greedy_lhs = R(len(part_of_sbar))
    greedy_rhs = sum(
        (
            R(weight[i]) * vertex.value(i)
            for j in cbar_list
            for i in state.fball[j]
        ),
        _ZERO,
    )
    if greedy_lhs < greedy_rhs:
        raise InvariantViolation(
            f"greedy coverage shortfall: |C_part(S)| = {len(part_of_sbar)} "
            f"< {format_rational(greedy_rhs)}"
        )

    f_eq1 = {i for i in state.facilities if vertex.value(i) == 1}
    S = sorted((sbar_set | f_eq1) - s0_facs)
    cprime = sorted(
        set(part_of_sbar)
        | covered
        | set(state.clients(FULL))
        | (set(state.clients(STAR)) - state.C0)
    )

    beta = 3 + 2 / state.disc.tau**gap
    try:
        cert = certify_reroute_bound(state, set(S) | s0_facs, beta)
    except ValueError as exc:
        raise InvariantViolation(f"extraction rerouting bound: {exc}") from exc
    if not cert.ok:
        raise InvariantViolation(f"extraction rerouting bound: {cert.witness}")
    statement = 1 + 2 * state.disc.tau**gap
    proof = 1 + 2 * state.disc.tau ** (gap - 1)
    metric = state.instance.metric
    nf = metric.facility_count
    for jp in sorted(covered):
        d = min(metric.dist[nf + jp][i] for i in sbar_set)
        lim = statement * state.disc.L(state.level[jp])
        if d > lim:
            raise InvariantViolation(
                f"covered client {jp} at {format_rational(d)} exceeds "
                f"{format_rational(lim)}"
            )
        events.append(
            {
                "kind": "covered-bound",
                "client": jp,
                "within_statement": True,
                "within_proof": bool(d <= proof * state.disc.L(state.level[jp])),
            }
        )

    dead = set(S)
    for j in cbar_list:
        dead |= state.fball[j]
    new_state, _fmap = _slice_state(state, dead, set(cprime), len(S))
    if new_state.instance.b[0] < 0:
        raise InvariantViolation("extraction used more than the remaining k")
    check_basic_invariants(new_state).assert_ok()
    check_extra_invariants(new_state, "outliers").assert_ok()
    witness = _point_feasible(
        emit_lp(new_state),
        lambda t: vertex.value(
            [i for i in sorted(state.facilities) if i not in dead][t]
        ),
    )
    if witness:
        raise InvariantViolation(f"restricted vertex infeasible after slice: {witness}")

    partial = PartialSolution(
        S=tuple(S),
        served=tuple(cprime),
        k_used=len(S),
        events=tuple(events),
    )
    return partial, new_state


def outliers_postprocess(state: LpIterState, cfg: RoundingConfig | None = None):
    """Recursive rounding: returns the parent facility ids to open.

    Base cases: an integral vertex opens its support; fractional mass only
    inside dummy balls opens the better of the (at most two) fractional
    copies. Otherwise extract a partial solution and recurse on the slice.
    """
    cfg = cfg or RoundingConfig()
    vertex, _events = pseudo_approximation(state, cfg)
    s0_facs = state.s0_facilities()
    fracs = vertex.fractional()
    beta = 3 + 2 / state.disc.tau**cfg.gap_c

    def certify(copies):
        opened = set(copies) | s0_facs
        if not opened:
            if state.clients(FULL, STAR):
                raise InvariantViolation("no facility opened for committed clients")
            return
        try:
            cert = certify_reroute_bound(state, opened, beta)
        except ValueError as exc:
            raise InvariantViolation(f"base-case rerouting bound: {exc}") from exc
        if not cert.ok:
            raise InvariantViolation(f"base-case rerouting bound: {cert.witness}")

    if not fracs:
        opens = [i for i in sorted(state.facilities) if vertex.value(i) == 1]
        certify(opens)
        return tuple(sorted({state.copy_of[i] for i in opens}))

    stars_lt1 = star_fractional(state, vertex)
    if set(stars_lt1) <= state.C0:
        if len(fracs) > 2:
            raise InvariantViolation(
                f"{len(fracs)} fractional facilities with only dummy balls live"
            )
        part = state.clients(PART)
        pool = [i for i in fracs if i not in s0_facs] or list(fracs)
        a = max(
            sorted(pool),
            key=lambda i: (sum(1 for j in part if i in state.fball[j]), -i),
        )
        opens = [i for i in sorted(state.facilities) if vertex.value(i) == 1]
        if len(opens) + 1 > state.instance.b[0]:
            raise InvariantViolation("base case would exceed the remaining k")
        certify(opens + [a])
        return tuple(sorted({state.copy_of[i] for i in opens + [a]}))

    partial, new_state = compute_partial(state, vertex, cfg)
    opened_here = {state.copy_of[i] for i in partial.S}
    deeper = outliers_postprocess(new_state, cfg)
    return tuple(sorted(opened_here | set(deeper)))


# Same pruned U evaluation as the knapsack solver.
_EXTRA_STEPS = (4, 16)


def solve_outliers(
    instance: OutliersInstance,
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
    """Full pipeline: U-search, sparsify, round recursively, serve the m
    nearest clients. Cheapest feasible solution wins (ties lexicographic)."""
    epsilon = R(epsilon)
    if not 0 < epsilon < R(1, 2):
        raise SchemaError("epsilon must be in (0, 1/2)")
    if instance.m > instance.metric.client_count:
        raise SchemaError("cannot serve more clients than exist")
    if instance.m == 0:
        return Solution((), (), (), _ZERO)
    tau = R(tau)
    eps_prime = epsilon / 8
    rho, delta = eps_prime * eps_prime, eps_prime
    gap = default_gap_c(tau, eps_prime)
    metric = instance.metric

    oracle = brute_force(instance) if mode == "oracle" else None
    opt_solution = oracle.solution(metric) if oracle is not None else None

    grid = u_grid(metric, eps_prime)
    if mode == "oracle":
        chosen = []
        first = None
        for pos, U in enumerate(grid):
            cap = rho * (1 + delta) * U / 2
            _s0, _rm, kept, radius, _mp = _oracle_candidate(
                instance, opt_solution, cap
            )
            if outliers_density_ok(metric, kept, radius, rho, delta, U):
                first = pos
                break
        if first is not None:
            chosen = [grid[first]]
            for step in _EXTRA_STEPS:
                if first + step < len(grid):
                    U = grid[first + step]
                    cap = rho * (1 + delta) * U / 2
                    _s0, _rm, kept, radius, _mp = _oracle_candidate(
                        instance, opt_solution, cap
                    )
                    if outliers_density_ok(metric, kept, radius, rho, delta, U):
                        chosen.append(U)
    else:
        stride = max(1, (len(grid) - 1) // 2)
        chosen = grid[::stride]

    best = None
    for U in chosen:
        subs = preprocess_outliers(
            instance, rho, delta, U, mode, tau=tau, seed=seed, oracle=oracle
        )
        for sub in subs:
            cfg = RoundingConfig(tau=tau, gap_c=gap, trace=trace,
                                 validate=validate, event_hook=event_hook,
                                 vertex_hook=vertex_hook)
            fragment = outliers_postprocess(sub.state, cfg)
            opens = sorted(set(fragment) | set(sub.s0))
            if len(opens) > instance.k:
                raise InvariantViolation(
                    f"pipeline opened {len(opens)} > k = {instance.k}"
                )
            if not set(sub.s0) <= set(opens):
                raise InvariantViolation("S0 member missing from the final set")
            if opens:
                ranked = sorted(
                    range(metric.client_count),
                    key=lambda j: (min(metric.dfc(i, j) for i in opens), j),
                )
                served = ranked[: instance.m]
            elif instance.m == 0:
                served = []
            else:
                continue
            solution = assign_served(metric, opens, served)
            if len(solution.served) < instance.m:
                raise InvariantViolation("pipeline served fewer than m clients")
            key = (solution.cost, solution.open_facilities)
            if best is None or key < best[0]:
                best = (key, solution)
    if best is None:
        raise InfeasibleError((("Outliers", "no passing candidate at any U"),))
    return best[1]
