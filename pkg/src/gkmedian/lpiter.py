"""Working state for the iterative-rounding LP: balls, levels, partitions.

This module owns the relaxation pipeline's data: the facility-splitting step
that turns an optimal (x, y) of the assignment LP into per-client facility
balls, the random distance discretization, the working-LP state (F-balls,
inner balls, radius levels, the part/full/star client partition), the LP
emitter, and exact checkers for every structural invariant the rounding loop
promises to maintain.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction

from ._rational import R, format_rational
from .exactlp import EQ, GE, LE, LinearProgram, solve_to_vertex
from .instance import GkmInstance, MetricInstance, derive_seed

__all__ = [
    "InvariantViolation",
    "CheckReport",
    "Discretization",
    "ExtraParams",
    "LpIterState",
    "SplitResult",
    "build_lp1",
    "build_lp2",
    "build_lp_iter",
    "check_basic_invariants",
    "check_extra_invariants",
    "discretize",
    "duplicate_and_extract_fballs",
    "emit_lp",
    "FacilityVertex",
    "facility_vertex",
    "state_snapshot",
]

PART, FULL, STAR = "part", "full", "star"

_ZERO = R(0)
_ONE = R(1)


class InvariantViolation(AssertionError):
    """A structural invariant the algorithm promises to maintain was broken."""


@dataclass(frozen=True)
class CheckReport:
    """Outcome of an invariant sweep: (name, passed, witness) per check."""

    results: tuple

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.results)

    def failures(self):
        return tuple(item for item in self.results if not item[1])

    def assert_ok(self) -> None:
        if not self.ok:
            lines = [f"{name}: {witness}" for name, _, witness in self.failures()]
            raise InvariantViolation("; ".join(lines))


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------


class Discretization:
    """Randomly offset geometric distance levels.

    L(-2) = -1, L(-1) = 0, and L(l) = alpha * tau^l for l >= 0, where the
    offset alpha lies in [1, tau) with log alpha (approximately) uniform:
    alpha = tau^u for u drawn uniformly from the 2^64 grid on [0, 1), snapped
    to a rational with denominator <= 10^9.
    """

    def __init__(self, tau, seed: int, offset_alpha=None):
        self.tau = R(tau)
        if self.tau <= 1:
            raise ValueError("tau must exceed 1")
        self.seed = seed
        if offset_alpha is None:
            offset_alpha = self._sample_offset(self.tau, seed)
        self.offset_alpha = R(offset_alpha)
        if not (1 <= self.offset_alpha < self.tau):
            raise ValueError("offset alpha must lie in [1, tau)")
        self._levels = [self.offset_alpha]  # L(0), L(1), ...
        self._logtau = math.log(float(self.tau))
        self._logalpha = math.log(float(self.offset_alpha))

    @staticmethod
    def _sample_offset(tau, seed: int):
        rng = random.Random(derive_seed(seed, "discretization-offset"))
        u = rng.getrandbits(64) / 2**64
        snapped = Fraction(float(tau) ** u).limit_denominator(10**9)
        alpha = R(snapped.numerator, snapped.denominator)
        if alpha < 1:
            return _ONE
        if alpha >= tau:
            # largest grid rational strictly below tau
            return R(int(math.ceil(tau * 10**9)) - 1, 10**9)
        return alpha

    def L(self, lvl: int):
        if lvl == -2:
            return R(-1)
        if lvl == -1:
            return _ZERO
        if lvl < -2:
            raise ValueError(f"no level {lvl}")
        while len(self._levels) <= lvl:
            self._levels.append(self._levels[-1] * self.tau)
        return self._levels[lvl]

    def level_of(self, d) -> int:
        """Smallest l >= -1 with L(l) >= d."""
        d = R(d)
        if d <= 0:
            return -1
        guess = max(0, math.ceil((math.log(float(d)) - self._logalpha) / self._logtau))
        while self.L(guess) < d:
            guess += 1
        while guess > 0 and self.L(guess - 1) >= d:
            guess -= 1
        return guess

    def round_up(self, d):
        """d' = smallest level value >= d."""
        return self.L(self.level_of(d))


def discretize(instance: GkmInstance, tau, seed: int):
    """Sample the offset and round every pairwise distance up to a level.

    Returns (Discretization, dprime) with dprime indexed like metric.dist.
    Guarantees d <= d' < tau*d for d > 0 and d' = 0 iff d = 0.
    """
    disc = Discretization(tau, seed)
    dist = instance.metric.dist
    n = instance.metric.n
    cache = {}
    dprime = []
    for p in range(n):
        row = []
        for q in range(n):
            d = dist[p][q]
            val = cache.get(d)
            if val is None:
                val = disc.round_up(d)
                cache[d] = val
            row.append(val)
        dprime.append(tuple(row))
    return disc, tuple(dprime)


# ---------------------------------------------------------------------------
# LP1 / LP2 and facility splitting
# ---------------------------------------------------------------------------


def build_lp1(instance: GkmInstance) -> LinearProgram:
    """Assignment relaxation: x_ij fraction of client j on facility i.

    Variables: y_0..y_{nF-1}, then x_{ij} blocked by facility. Rows:
    sum_i x_ij <= 1 per client, x_ij <= y_i per pair, the knapsack rows, and
    one coverage row per side constraint.
    """
    metric = instance.metric
    nf, nc = metric.facility_count, metric.client_count
    lp = LinearProgram(nf + nf * nc)

    def xvar(i, j):
        return nf + i * nc + j

    obj = {xvar(i, j): metric.dfc(i, j) for i in range(nf) for j in range(nc)}
    lp.set_objective(obj)
    for j in range(nc):
        lp.add_row({xvar(i, j): _ONE for i in range(nf)}, LE, 1, ("Assign", j))
    for i in range(nf):
        for j in range(nc):
            lp.add_row({xvar(i, j): _ONE, i: -_ONE}, LE, 0, ("Cap", i, j))
    for t, row in enumerate(instance.W):
        lp.add_row({i: row[i] for i in range(nf) if row[i]}, LE, instance.b[t], ("Knapsack", t))
    for t in range(instance.r2):
        coeffs = {}
        for j in range(nc):
            aj = instance.a[j][t]
            if aj:
                for i in range(nf):
                    coeffs[xvar(i, j)] = aj
        lp.add_row(coeffs, GE, instance.c[t], ("Coverage", t))
    return lp


def build_lp2(instance: GkmInstance, fballs, dist=None) -> LinearProgram:
    """Ball relaxation over y only: clients fully supported on their F-balls.

    `dist` maps (facility, client) to the distance used in the objective;
    defaults to the instance metric.
    """
    metric = instance.metric
    nf, nc = metric.facility_count, metric.client_count
    d = dist if dist is not None else metric.dfc
    lp = LinearProgram(nf)
    obj = [_ZERO] * nf
    for j in range(nc):
        for i in fballs[j]:
            obj[i] += d(i, j)
    lp.set_objective(obj)
    for j in range(nc):
        lp.add_row({i: _ONE for i in fballs[j]}, LE, 1, ("CPart", j))
    for t, row in enumerate(instance.W):
        lp.add_row({i: row[i] for i in range(nf) if row[i]}, LE, instance.b[t], ("Knapsack", t))
    for t in range(instance.r2):
        coeffs = {}
        for j in range(nc):
            aj = instance.a[j][t]
            if aj:
                for i in fballs[j]:
                    coeffs[i] = coeffs.get(i, _ZERO) + aj
        lp.add_row(coeffs, GE, instance.c[t], ("Coverage", t))
    return lp


def expand_metric(metric: MetricInstance, copy_of, extra_client_points=(), clients=None):
    """Metric for a split instance: facility `copy_of[k]`'s copies inherit its
    location; optional extra clients sit at existing point locations (given as
    (id, source point index) pairs); `clients` restricts to a subset of the
    original clients (default all, listing order preserved). Skips
    revalidation: collocated copies of a valid metric stay valid."""
    nf = metric.facility_count
    if clients is None:
        clients = range(metric.client_count)
    clients = list(clients)
    sources = list(copy_of) + [nf + j for j in clients] + [p for _, p in extra_client_points]
    dist = tuple(tuple(metric.dist[p][q] for q in sources) for p in sources)
    fac_ids = tuple(f"{metric.facility_ids[orig]}@{k}" for k, orig in enumerate(copy_of))
    cli_ids = tuple(metric.client_ids[j] for j in clients)
    cli_ids += tuple(cid for cid, _ in extra_client_points)
    return MetricInstance(
        facility_count=len(copy_of),
        client_count=len(clients) + len(extra_client_points),
        dist=dist,
        scale=metric.scale,
        facility_ids=fac_ids,
        client_ids=cli_ids,
        points=None,
    )


@dataclass(frozen=True)
class SplitResult:
    """Facility-splitting output: the split instance, per-client balls, the
    copy -> original map, and the per-copy opening mass."""

    instance: GkmInstance
    fballs: tuple
    copy_of: tuple
    y_prime: tuple
    lp1_objective: object


def duplicate_and_extract_fballs(instance: GkmInstance) -> SplitResult:
    """Solve the assignment relaxation and split facilities into copies.

    For each facility, clients are sorted by assignment mass and the facility
    is cut into copies carrying the successive increments; a client's ball is
    every copy up to its own position with positive mass. The resulting y'
    is feasible for the ball relaxation with the same objective value, so
    Opt(ball LP) <= Opt(assignment LP); both checked exactly here.
    """
    metric = instance.metric
    nf, nc = metric.facility_count, metric.client_count
    lp1 = build_lp1(instance)
    ep = solve_to_vertex(lp1)
    y_star = ep.y[:nf]
    x_star = ep.y[nf:]

    copy_of = []
    y_prime = []
    fballs = [[] for _ in range(nc)]
    for i in range(nf):
        order = sorted(range(nc), key=lambda j: (x_star[i * nc + j], j))
        prev = _ZERO
        for pos, j in enumerate(order):
            inc = x_star[i * nc + j] - prev
            prev = x_star[i * nc + j]
            if inc == 0:
                continue
            copy = len(copy_of)
            copy_of.append(i)
            y_prime.append(inc)
            for jj in order[pos:]:
                fballs[jj].append(copy)

    split_metric = expand_metric(metric, copy_of)
    W = tuple(tuple(row[orig] for orig in copy_of) for row in instance.W)
    split = GkmInstance(split_metric, W, instance.b, instance.a, instance.c)
    fballs = tuple(tuple(ball) for ball in fballs)

    _check_split(split, fballs, y_prime, ep.objective_value)
    return SplitResult(split, fballs, tuple(copy_of), tuple(y_prime), ep.objective_value)


def _check_split(split, fballs, y_prime, lp1_value) -> None:
    metric = split.metric
    nc = metric.client_count
    for j in range(nc):
        if sum((y_prime[i] for i in fballs[j]), _ZERO) > 1:
            raise InvariantViolation(f"split mass in ball of client {j} exceeds 1")
    for t, row in enumerate(split.W):
        if sum((row[i] * y_prime[i] for i in range(len(y_prime))), _ZERO) > split.b[t]:
            raise InvariantViolation(f"split mass violates knapsack row {t}")
    for t in range(split.r2):
        total = sum(
            (split.a[j][t] * sum((y_prime[i] for i in fballs[j]), _ZERO) for j in range(nc)),
            _ZERO,
        )
        if total < split.c[t]:
            raise InvariantViolation(f"split mass violates coverage row {t}")
    value = sum(
        (metric.dfc(i, j) * y_prime[i] for j in range(nc) for i in fballs[j]), _ZERO
    )
    if value != lp1_value:
        raise InvariantViolation(
            "split objective "
            f"{format_rational(value)} != assignment LP optimum {format_rational(lp1_value)}"
        )


# ---------------------------------------------------------------------------
# Working state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtraParams:
    rho: object
    delta: object
    U: object
    radius: tuple  # R_j per client


@dataclass
class LpIterState:
    """Mutable rounding state over a split instance. Single-owner."""

    instance: GkmInstance
    disc: Discretization
    dprime: tuple
    facilities: set  # alive facility (copy) indices
    fball: list  # per client: set of alive facility indices
    inner: list
    level: list
    tag: list  # PART | FULL | STAR per client
    copy_of: tuple
    C0: frozenset = frozenset()  # dummy client indices
    extra: ExtraParams | None = None

    @property
    def client_count(self) -> int:
        return self.instance.metric.client_count

    def dp(self, i: int, j: int):
        """Discretized facility-to-client distance."""
        return self.dprime[i][self.instance.metric.facility_count + j]

    def clients(self, *tags):
        return [j for j in range(self.client_count) if self.tag[j] in tags]

    def star_balls_intersecting(self, j: int):
        """C* clients (other than j) whose F-ball meets F_j."""
        ball = self.fball[j]
        return [
            j2
            for j2 in range(self.client_count)
            if j2 != j and self.tag[j2] == STAR and ball & self.fball[j2]
        ]

    def recompute_inner(self, j: int) -> None:
        lim = self.disc.L(self.level[j] - 1)
        self.inner[j] = {i for i in self.fball[j] if self.dp(i, j) <= lim}

    def s0_facilities(self):
        """Alive facilities collocated with a pre-opened location (union of
        dummy-client balls)."""
        out = set()
        for j in self.C0:
            out |= self.fball[j]
        return out


def build_lp_iter(
    instance: GkmInstance, fballs, disc: Discretization, dprime=None, *,
    copy_of=None, dummies=frozenset(), extra=None,
) -> LpIterState:
    """Fresh state: levels from the balls, every real client partial, dummy
    clients (if any) in C*.

    A client with an empty ball gets level -1 and keeps its (vacuous) row.
    """
    metric = instance.metric
    if dprime is None:
        _, dprime = discretize(instance, disc.tau, disc.seed)
    nf, nc = metric.facility_count, metric.client_count
    level = []
    for j in range(nc):
        lv = -1
        for i in fballs[j]:
            lv = max(lv, disc.level_of(dprime[i][nf + j]))
        level.append(lv)
    state = LpIterState(
        instance=instance,
        disc=disc,
        dprime=dprime,
        facilities=set(range(nf)),
        fball=[set(ball) for ball in fballs],
        inner=[set() for _ in range(nc)],
        level=level,
        tag=[STAR if j in dummies else PART for j in range(nc)],
        copy_of=tuple(copy_of) if copy_of is not None else tuple(range(nf)),
        C0=frozenset(dummies),
        extra=extra,
    )
    for j in range(nc):
        state.recompute_inner(j)
    return state


@dataclass(frozen=True)
class FacilityVertex:
    """A solved vertex of the working LP, keyed by facility index."""

    values: dict
    objective: object
    ep: object  # underlying solver vertex, for tightness certificates

    def value(self, i: int):
        return self.values.get(i, _ZERO)

    def mass(self, facilities):
        return sum((self.values.get(i, _ZERO) for i in facilities), _ZERO)

    def fractional(self):
        """Facilities with 0 < value < 1, sorted."""
        return [i for i in sorted(self.values) if 0 < self.values[i] < 1]

    def integral_one(self):
        return [i for i in sorted(self.values) if self.values[i] == 1]


def facility_vertex(lp: LinearProgram, ep) -> FacilityVertex:
    values = {i: ep.y[v] for v, i in enumerate(lp.var_to_facility)}
    return FacilityVertex(values=values, objective=ep.objective_value, ep=ep)


def emit_lp(state: LpIterState) -> LinearProgram:
    """The working LP over alive facilities.

    Objective: partial clients pay ball mass at discretized distance; full and
    star clients pay their inner ball plus L(level) for the remaining unit.
    Variables are alive facilities in increasing index order; the returned
    LP carries `var_to_facility` for the reverse map.
    """
    alive = sorted(state.facilities)
    var = {i: v for v, i in enumerate(alive)}
    inst = state.instance
    nc = state.client_count
    lp = LinearProgram(len(alive))
    obj = [_ZERO] * len(alive)
    constant = _ZERO
    for j in range(nc):
        if state.tag[j] == PART:
            for i in state.fball[j]:
                obj[var[i]] += state.dp(i, j)
        else:
            lvl_cost = state.disc.L(state.level[j])
            constant += lvl_cost
            for i in state.inner[j]:
                obj[var[i]] += state.dp(i, j) - lvl_cost
    lp.set_objective(obj, constant)

    for j in range(nc):
        if state.tag[j] == PART:
            lp.add_row({var[i]: _ONE for i in state.fball[j]}, LE, 1, ("CPart", j))
    for j in range(nc):
        if state.tag[j] == FULL and state.inner[j]:
            lp.add_row({var[i]: _ONE for i in state.inner[j]}, LE, 1, ("CFull", j))
    for j in range(nc):
        if state.tag[j] == STAR:
            lp.add_row({var[i]: _ONE for i in state.fball[j]}, EQ, 1, ("CStar", j))
    for t, row in enumerate(inst.W):
        coeffs = {var[i]: row[i] for i in alive if row[i]}
        lp.add_row(coeffs, LE, inst.b[t], ("Knapsack", t))
    for t in range(inst.r2):
        coeffs = {}
        rhs = inst.c[t]
        for j in range(nc):
            aj = inst.a[j][t]
            if not aj:
                continue
            if state.tag[j] == PART:
                for i in state.fball[j]:
                    coeffs[var[i]] = coeffs.get(var[i], _ZERO) + aj
            else:
                rhs -= aj
        lp.add_row(coeffs, GE, rhs, ("Coverage", t))
    lp.var_to_facility = tuple(alive)
    return lp


# ---------------------------------------------------------------------------
# Checkers
# ---------------------------------------------------------------------------


def check_basic_invariants(state: LpIterState) -> CheckReport:
    """The five structural invariants, plus the derived bound that clients
    with intersecting balls are within L(l_j1) + L(l_j2) of each other."""
    results = []
    nc = state.client_count
    nf = state.instance.metric.facility_count

    bad = [j for j in range(nc) if state.tag[j] not in (PART, FULL, STAR)]
    results.append(("partition", not bad, f"untagged clients {bad}" if bad else ""))

    # Clients below the level floor are reported by that clause; skip them
    # here so the radius clauses stay total instead of indexing L(-3).
    witness = ""
    for j in range(nc):
        if state.level[j] < -1:
            continue
        lim = state.disc.L(state.level[j])
        far = [i for i in state.fball[j] if state.dp(i, j) > lim]
        if far:
            witness = f"client {j} has facility {far[0]} beyond L({state.level[j]})"
            break
    results.append(("ball-radius", not witness, witness))

    witness = ""
    for j in range(nc):
        if state.level[j] < -1:
            continue
        lim = state.disc.L(state.level[j] - 1)
        expect = {i for i in state.fball[j] if state.dp(i, j) <= lim}
        if state.inner[j] != expect:
            witness = f"inner ball of client {j} is stale"
            break
    results.append(("inner-ball", not witness, witness))

    bad = [j for j in range(nc) if state.level[j] < -1]
    results.append(("level-floor", not bad, f"clients below level -1: {bad}" if bad else ""))

    witness = ""
    stars = state.clients(STAR)
    for a_pos, j1 in enumerate(stars):
        for j2 in stars[a_pos + 1 :]:
            if state.fball[j1] & state.fball[j2] and abs(state.level[j1] - state.level[j2]) != 1:
                witness = (
                    f"star clients {j1} (level {state.level[j1]}) and {j2} "
                    f"(level {state.level[j2]}) share a facility"
                )
                break
        if witness:
            break
    results.append(("distinct-neighbors", not witness, witness))

    witness = ""
    metric = state.instance.metric
    for j1 in range(nc):
        if witness or state.level[j1] < -1:
            continue
        for j2 in range(j1 + 1, nc):
            if state.level[j2] < -1:
                continue
            if state.fball[j1] & state.fball[j2]:
                bound = state.disc.L(state.level[j1]) + state.disc.L(state.level[j2])
                if metric.dcc(j1, j2) > bound:
                    witness = f"clients {j1},{j2} violate the shared-ball distance bound"
                    break
    results.append(("derived-distance-bound", not witness, witness))

    witness = ""
    for j in range(nc):
        stray = state.fball[j] - state.facilities
        if stray:
            witness = f"client {j} ball references deleted facility {min(stray)}"
            break
    results.append(("balls-alive", not witness, witness))

    return CheckReport(tuple(results))


def _collocated_with_s0(state: LpIterState, i: int) -> bool:
    metric = state.instance.metric
    nf = metric.facility_count
    return any(metric.dist[i][nf + j0] == 0 for j0 in state.C0)


def check_extra_invariants(state: LpIterState, kind: str) -> CheckReport:
    """Sparsity invariants for the true-approximation pipelines.

    The universally quantified clauses reduce to finite grids: the checked
    counts are step functions whose value-times-radius maxima occur at ball
    entry radii or at the cap, so those points are the only candidates.
    """
    if state.extra is None:
        raise ValueError("state has no sparsity data")
    if kind not in ("knapsack", "outliers"):
        raise ValueError(f"unknown kind {kind!r}")
    extra = state.extra
    metric = state.instance.metric
    nf, nc = metric.facility_count, metric.client_count
    results = []

    witness = ""
    for j0 in state.C0:
        if state.tag[j0] != STAR:
            witness = f"dummy client {j0} is not pinned"
            break
        if state.level[j0] != -1:
            witness = f"dummy client {j0} has level {state.level[j0]}"
            break
        collocated = {
            i for i in state.facilities if metric.dist[i][nf + j0] == 0
        }
        if state.fball[j0] != collocated:
            witness = f"dummy client {j0} ball is not the collocated copies"
            break
    results.append(("pinned-dummies", not witness, witness))

    cap = 2 * extra.rho * extra.U if kind == "knapsack" else extra.rho * (1 + extra.delta) * extra.U
    witness = ""
    for i in sorted(state.facilities):
        if _collocated_with_s0(state, i):
            continue
        total = sum(
            (metric.dfc(i, j) for j in range(nc) if i in state.fball[j]), _ZERO
        )
        if total > cap:
            witness = (
                f"facility {i} carries {format_rational(total)} "
                f"> {format_rational(cap)}"
            )
            break
    results.append(("cheap-facilities", not witness, witness))

    witness = ""
    for j in range(nc):
        if state.disc.L(state.level[j]) > state.disc.tau * extra.radius[j]:
            witness = f"client {j} level exceeds its radius cap"
            break
    results.append(("radius-cap", not witness, witness))

    if kind == "knapsack":
        witness = _check_knapsack_density(state, extra)
    else:
        witness = _check_outliers_density(state, extra)
    results.append(("sparse-neighborhoods", not witness, witness))

    return CheckReport(tuple(results))


def _check_knapsack_density(state, extra) -> str:
    """For every client j and r <= R_j: |B_C(j, delta*r)| * r <= rho*U.
    Candidate radii: entry points d(j,j')/delta capped to R_j, plus R_j."""
    metric = state.instance.metric
    nc = metric.client_count
    bound = extra.rho * extra.U
    real = [j for j in range(nc) if j not in state.C0]
    for j in real:
        rj = extra.radius[j]
        if rj <= 0:
            continue
        candidates = {rj}
        for j2 in real:
            r = metric.dcc(j, j2) / extra.delta
            if 0 < r <= rj:
                candidates.add(r)
        for r in candidates:
            ball = sum(1 for j2 in real if metric.dcc(j, j2) <= extra.delta * r)
            if ball * r > bound:
                return (
                    f"client {j}: {ball} clients within {format_rational(extra.delta * r)} "
                    f"at radius {format_rational(r)}"
                )
    return ""


def _check_outliers_density(state, extra) -> str:
    """For every point p and t > 0: clients within delta*t/(4+3delta) of p
    having R_j >= t number at most rho*(1+3delta/4)/(1-delta/4) * U/t."""
    metric = state.instance.metric
    nf, nc = metric.facility_count, metric.client_count
    delta = extra.delta
    factor = extra.rho * (1 + 3 * delta / 4) / (1 - delta / 4) * extra.U
    stretch = (4 + 3 * delta) / delta
    for p in range(metric.n):
        candidates = set()
        for j in range(nc):
            candidates.add(metric.dist[p][nf + j] * stretch)
            candidates.add(extra.radius[j])
        for t in candidates:
            if t <= 0:
                continue
            count = sum(
                1
                for j in range(nc)
                if extra.radius[j] >= t and metric.dist[p][nf + j] * stretch <= t
            )
            if count * t > factor:
                return (
                    f"point {p}: {count} clients with radius >= {format_rational(t)} "
                    "packed too densely"
                )
    return ""


def state_snapshot(state: LpIterState) -> dict:
    """JSON-friendly snapshot for traces."""
    return {
        "tau": format_rational(state.disc.tau),
        "offset_alpha": format_rational(state.disc.offset_alpha),
        "seed": state.disc.seed,
        "facilities": sorted(state.facilities),
        "tags": list(state.tag),
        "levels": list(state.level),
        "fballs": [sorted(ball) for ball in state.fball],
        "inner": [sorted(ball) for ball in state.inner],
        "dummies": sorted(state.C0),
    }


def snapshot_json(state: LpIterState) -> str:
    return json.dumps(state_snapshot(state), sort_keys=True)
