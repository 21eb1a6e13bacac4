"""Shared pre-processing machinery for the knapsack and outliers pipelines.

Both true-approximation solvers sparsify the input the same way: guess a cost
bound U, force-open a set S0 of facilities that are too expensive to leave to
the LP, drop the clients S0 already pays for, solve a restricted assignment
LP whose per-facility cost caps make every remaining facility cheap, and
split facilities into copies so that each copy's ball carries a bounded
connection cost. The kind-specific modules own the constants and the
candidate enumeration; this module owns the LP, the splitting scheme, and the
density predicates used to pre-filter U guesses.

The splitting scheme lays client intervals of length x_ij around a circle of
circumference y_i in decreasing order of d(i,j); copies are the atomic arcs
between interval endpoints. Every circle point is covered by clients whose
distances sum to at most (cap + max assigned distance) <= 2*cap: the first
wrap contributes at most the maximum distance, and each further wrap is
dominated by the average of the preceding unit of mass, which telescopes to
(sum_j d(i,j) x_ij) / y_i <= cap by the LP's cost-cap row. That is exactly
the per-copy bound the sparsity checker demands.
"""

from __future__ import annotations

from dataclasses import dataclass

from ._rational import R
from .exactlp import GE, LE, InfeasibleError, LinearProgram, solve_to_vertex
from .instance import GkmInstance, MetricInstance
from .lpiter import (
    ExtraParams,
    build_lp_iter,
    check_basic_invariants,
    check_extra_invariants,
    discretize,
    expand_metric,
)

__all__ = [
    "SparseAssignment",
    "restricted_assignment_lp",
    "circular_split",
    "knapsack_density_ok",
    "outliers_density_ok",
    "s0_location_reps",
    "assemble_state",
    "u_grid",
]

_ZERO = R(0)


def u_grid(metric: MetricInstance, eps_prime):
    """Ascending U guesses: geometric with ratio (1+eps') from the largest
    client-to-nearest-facility distance to the sum of worst distances."""
    lo = max(
        min(metric.dfc(i, j) for i in range(metric.facility_count))
        for j in range(metric.client_count)
    )
    hi = sum(
        (max(metric.dfc(i, j) for i in range(metric.facility_count))
         for j in range(metric.client_count)),
        _ZERO,
    )
    grid = []
    if lo == 0:
        grid.append(_ZERO)
    if hi > 0:
        u = max(lo, R(1))
        ratio = 1 + eps_prime
        while u < hi:
            grid.append(u)
            u *= ratio
        grid.append(u)
    return grid


@dataclass(frozen=True)
class SparseAssignment:
    """Solved restricted assignment LP over (parent facilities, kept clients).

    x[i][jj] indexes kept-client positions, not parent client ids.
    """

    x: tuple
    y: tuple
    objective: object


def restricted_assignment_lp(
    metric: MetricInstance,
    kept,
    s0,
    radius,
    cap,
    knap_rows,
    knap_rhs,
    cov_target,
) -> SparseAssignment:
    """Build and solve the restricted assignment LP.

    Rows: per-pair x <= y; per-client assignment <= 1; the kind's knapsack
    rows over y; one coverage row sum x >= cov_target. Forced structure:
    y_i = 1 on S0, y_i = 0 for non-S0 facilities collocated with S0 (the S0
    member substitutes at identical cost), x_ij = 0 beyond R_j, and for
    i outside S0 a cost cap sum_j d(i,j) x_ij <= cap * y_i plus x_ij = 0
    whenever d(i,j) > cap. `radius` maps kept positions to R_j.

    Raises InfeasibleError if the candidate admits no fractional solution.
    """
    nf = metric.facility_count
    kept = list(kept)
    nk = len(kept)
    s0 = set(s0)
    collocated_closed = {
        i
        for i in range(nf)
        if i not in s0 and any(metric.dist[i][i0] == 0 for i0 in s0)
    }

    def xvar(i, jj):
        return nf + i * nk + jj

    lp = LinearProgram(nf + nf * nk)
    obj = {}
    for i in range(nf):
        if i in s0:
            lp.set_bounds(i, 1, 1)
        elif i in collocated_closed:
            lp.set_bounds(i, 0, 0)
        for jj, j in enumerate(kept):
            d = metric.dfc(i, j)
            obj[xvar(i, jj)] = d
            if d > radius[jj] or (i not in s0 and d > cap):
                lp.set_bounds(xvar(i, jj), 0, 0)
            else:
                lp.add_row({xvar(i, jj): R(1), i: R(-1)}, LE, 0, ("Pair", i, jj))
    for jj in range(nk):
        lp.add_row({xvar(i, jj): R(1) for i in range(nf)}, LE, 1, ("Assign", jj))
    for t, (row, rhs) in enumerate(zip(knap_rows, knap_rhs)):
        lp.add_row({i: row[i] for i in range(nf)}, LE, rhs, ("Knapsack", t))
    cov = {xvar(i, jj): R(1) for i in range(nf) for jj in range(nk)}
    if cov:
        lp.add_row(cov, GE, cov_target, ("Coverage", 0))
    elif cov_target > 0:
        raise InfeasibleError((("Coverage", 0),))
    for i in range(nf):
        if i in s0 or i in collocated_closed:
            continue
        coeffs = {i: -cap}
        for jj, j in enumerate(kept):
            coeffs[xvar(i, jj)] = metric.dfc(i, j)
        lp.add_row(coeffs, LE, 0, ("CostCap", i))
    lp.set_objective(obj)

    ep = solve_to_vertex(lp)
    y = tuple(ep.y[i] for i in range(nf))
    x = tuple(
        tuple(ep.y[xvar(i, jj)] for jj in range(nk)) for i in range(nf)
    )
    return SparseAssignment(x, y, ep.objective_value)


def circular_split(metric: MetricInstance, kept, assignment: SparseAssignment, s0):
    """Split each facility with y_i > 0 into copies via circular placement.

    Returns (copy_of, y_prime, fballs) where fballs is indexed by kept
    position and holds copy indices. Copies covered by no client are dropped
    unless the facility is in S0 (its copies must keep total mass one so the
    dummy client's ball row stays satisfiable).
    """
    kept = list(kept)
    copy_of = []
    y_prime = []
    fballs = [set() for _ in kept]
    for i in range(metric.facility_count):
        yi = assignment.y[i]
        if yi <= 0:
            continue
        arcs = sorted(
            (jj for jj in range(len(kept)) if assignment.x[i][jj] > 0),
            key=lambda jj: (-metric.dfc(i, kept[jj]), jj),
        )
        # Unwrapped prefix intervals [starts[t], ends[t]) on the line; the
        # circle identifies s with s mod y_i.
        starts, ends = [], []
        pos = _ZERO
        for jj in arcs:
            starts.append(pos)
            pos += assignment.x[i][jj]
            ends.append(pos)
        cuts = {_ZERO}
        for v in starts + ends:
            cuts.add(v % yi)
        cuts = sorted(cuts)
        segments = list(zip(cuts, cuts[1:] + [yi]))
        members = [set() for _ in segments]
        for t, jj in enumerate(arcs):
            lo, hi = starts[t], ends[t]
            w = lo // yi
            while w * yi < hi:
                a = max(lo, w * yi) - w * yi
                b = min(hi, (w + 1) * yi) - w * yi
                for k, (sa, sb) in enumerate(segments):
                    if a <= sa and sb <= b:
                        members[k].add(jj)
                w += 1
        for (sa, sb), segment_clients in zip(segments, members):
            if sb <= sa:
                continue
            if not segment_clients and i not in s0:
                continue
            copy_id = len(copy_of)
            copy_of.append(i)
            y_prime.append(sb - sa)
            for jj in segment_clients:
                fballs[jj].add(copy_id)
    return tuple(copy_of), tuple(y_prime), fballs


def knapsack_density_ok(metric: MetricInstance, kept, radius, bound, delta) -> bool:
    """Sparsity clause for knapsack: |B(j, delta*r)| * r <= bound for every
    kept client j and r <= R_j, reduced to the finite candidate grid."""
    kept = list(kept)
    for jj, j in enumerate(kept):
        rj = radius[jj]
        if rj <= 0:
            continue
        candidates = {rj}
        for j2 in kept:
            r = metric.dcc(j, j2) / delta
            if 0 < r <= rj:
                candidates.add(r)
        for r in candidates:
            ball = sum(1 for j2 in kept if metric.dcc(j, j2) <= delta * r)
            if ball * r > bound:
                return False
    return True


def outliers_density_ok(metric: MetricInstance, kept, radius, rho, delta, U) -> bool:
    """Sparsity clause for outliers: for every point p and t > 0, clients
    within delta*t/(4+3delta) of p having R_j >= t number at most
    rho*(1+3delta/4)/(1-delta/4) * U/t."""
    kept = list(kept)
    nf = metric.facility_count
    factor = rho * (1 + 3 * delta / 4) / (1 - delta / 4) * U
    stretch = (4 + 3 * delta) / delta
    points = list(range(nf)) + [nf + j for j in kept]
    for p in points:
        candidates = set()
        for jj, j in enumerate(kept):
            candidates.add(metric.dist[p][nf + j] * stretch)
            candidates.add(radius[jj])
        for t in candidates:
            if t <= 0:
                continue
            count = sum(
                1
                for jj, j in enumerate(kept)
                if radius[jj] >= t and metric.dist[p][nf + j] * stretch <= t
            )
            if count * t > factor:
                return False
    return True


def s0_location_reps(metric: MetricInstance, s0):
    """Group S0 by location; return the lowest-id representative per group.

    Dummy clients are created per location: two forced facilities at the same
    point would pin two identical C*-balls and break Distinct Neighbors.
    """
    reps = []
    for i in sorted(s0):
        if not any(metric.dist[i][i2] == 0 for i2 in reps):
            reps.append(i)
    return reps


@dataclass(frozen=True)
class AssembledState:
    state: object
    copy_of: tuple
    kept: tuple
    dummy_of: tuple  # parent facility id behind each dummy client, kept order
    basic: object
    extra: object


def assemble_state(
    metric: MetricInstance,
    kept,
    s0,
    assignment: SparseAssignment,
    radius,
    *,
    kind,
    rho,
    delta,
    U,
    tau,
    seed,
    knap_row_of,
    knap_rhs,
    cov_target,
) -> AssembledState:
    """Split facilities, extend the metric with dummy clients, and build the
    fully-checked LpIterState for one sub-instance candidate.

    `knap_row_of(parent_facility)` gives the knapsack-row coefficient each
    copy inherits; the coverage row counts every client (dummies included),
    so its target is cov_target + #dummies.
    """
    kept = list(kept)
    copy_of, y_prime, fballs = circular_split(metric, kept, assignment, s0)
    reps = s0_location_reps(metric, s0)
    dummy_points = [(f"pin:{metric.facility_ids[i0]}", i0) for i0 in reps]
    ext_metric = expand_metric(metric, copy_of, dummy_points, clients=kept)
    n_dummies = len(reps)
    fballs_ext = [set(ball) for ball in fballs]
    for i0 in reps:
        ball = {
            k for k, orig in enumerate(copy_of) if metric.dist[orig][i0] == 0
        }
        fballs_ext.append(ball)
    W = (tuple(knap_row_of(orig) for orig in copy_of),)
    a = tuple((R(1),) for _ in range(len(kept) + n_dummies))
    c = (R(cov_target) + n_dummies,)
    ext_inst = GkmInstance(ext_metric, W, (knap_rhs,), a, c)
    disc, dprime = discretize(ext_inst, tau, seed)
    radius_ext = tuple(radius) + (R(0),) * n_dummies
    dummies = frozenset(range(len(kept), len(kept) + n_dummies))
    state = build_lp_iter(
        ext_inst,
        fballs_ext,
        disc,
        dprime,
        copy_of=copy_of,
        dummies=dummies,
        extra=ExtraParams(rho, delta, U, radius_ext),
    )
    basic = check_basic_invariants(state)
    extra = check_extra_invariants(state, kind)
    return AssembledState(state, copy_of, tuple(kept), tuple(reps), basic, extra)
