"""The rounding loop and its companions.

Round a working-LP state until no listed constraint is tight, evicting pinned
clients when a safe pair shows up, and assemble the resulting vertex into a
fractional solution of the assignment relaxation with an exactly certified
cost factor. The loop never trusts itself: objectives are compared exactly
across solves, every structural move is logged, and optional hooks let tests
re-check all invariants after each event.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from ._rational import R, format_rational
from .chains import find_candidate_configuration, is_candidate_configuration
from .exactlp import solve_to_vertex
from .lpiter import (
    FULL,
    PART,
    STAR,
    FacilityVertex,
    InvariantViolation,
    LpIterState,
    check_basic_invariants,
    emit_lp,
    facility_vertex,
)

__all__ = [
    "GuardExceeded",
    "RoundingConfig",
    "RoundingEvent",
    "TraceSink",
    "AssembledSolution",
    "RerouteCertificate",
    "reroute",
    "iterative_round",
    "config_reroute",
    "pseudo_approximation",
    "assemble_fractional_solution",
    "certify_reroute_bound",
    "reroute_alpha",
    "pseudo_alpha",
]

_ZERO = R(0)
_ONE = R(1)


class GuardExceeded(RuntimeError):
    """The iteration guard tripped; indicates a non-terminating loop bug."""


def pseudo_alpha(tau):
    """The rerouting constant for the fractional assembly: with every pinned
    client holding a unit inside its own ball, alpha reduces to the cubic
    term (tau^3 + 2 tau^2 + 1) / (tau^3 - 1)."""
    tau = R(tau)
    return (tau**3 + 2 * tau**2 + 1) / (tau**3 - 1)


def reroute_alpha(tau, beta):
    """alpha = max(beta, 1 + (1+beta)/tau, (tau^3+2tau^2+1)/(tau^3-1))."""
    tau = R(tau)
    beta = R(beta)
    return max(beta, 1 + (1 + beta) / tau, pseudo_alpha(tau))


class TraceSink:
    """JSONL event stream. Accepts a path or a file-like object."""

    def __init__(self, target):
        if hasattr(target, "write"):
            self._fh = target
            self._owned = False
        else:
            self._fh = open(target, "w", encoding="utf-8")
            self._owned = True

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True))
        self._fh.write("\n")

    def close(self) -> None:
        if self._owned:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class RoundingEvent:
    kind: str  # DeleteFacility | PartToFull | ShrinkBall | AddToStar | EvictFromStar | ConfigEvict
    client: int | None = None
    facility: int | None = None
    level_before: int | None = None
    level_after: int | None = None
    partner: int | None = None
    lp_objective: object = None

    def to_dict(self) -> dict:
        out = {"type": "event", "kind": self.kind}
        for key in ("client", "facility", "level_before", "level_after", "partner"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        if self.lp_objective is not None:
            out["lp_objective"] = format_rational(self.lp_objective)
        return out


@dataclass
class RoundingConfig:
    """Knobs for a rounding run.

    tau, when given, must match the state's discretization; gap_c is the
    level-gap constant used by the outliers extraction; validate re-checks
    the basic invariants after every event (slow, used by tests); the hooks
    observe solved vertices and events without mutating anything.
    """

    tau: object = None
    gap_c: int = 1
    max_iter_guard: int | None = None
    trace: TraceSink | None = None
    validate: bool = False
    vertex_hook: object = None
    event_hook: object = None

    def __post_init__(self):
        if self.gap_c < 1:
            raise ValueError("gap_c must be at least 1")


def default_guard(state: LpIterState) -> int:
    max_level = max([lv for lv in state.level] + [-1])
    shrink_budget = state.client_count * (max_level + 2)
    return 10 * (len(state.facilities) + shrink_budget) * max(shrink_budget, 1)


def _emit(state, cfg, events, event: RoundingEvent) -> None:
    events.append(event)
    if cfg.trace is not None:
        cfg.trace.write(event.to_dict())
    if cfg.event_hook is not None:
        cfg.event_hook(state, event)
    if cfg.validate:
        check_basic_invariants(state).assert_ok()


def reroute(state: LpIterState, j: int, cfg: RoundingConfig | None = None,
            events: list | None = None, lp_objective=None) -> bool:
    """Try to pin client j; on success, unpin the much-higher neighbors.

    j must currently be full. It becomes a star exactly when its level is
    strictly below every intersecting star's level; any intersecting star
    then sitting two or more levels above j is demoted to full. Returns
    whether j moved.
    """
    if state.tag[j] != FULL:
        raise ValueError(f"client {j} is not in the full set")
    cfg = cfg or RoundingConfig()
    events = events if events is not None else []
    neighbors = state.star_balls_intersecting(j)
    if any(state.level[j2] <= state.level[j] for j2 in neighbors):
        return False
    # Apply the whole move before emitting anything: between the pin and the
    # evictions the neighbor-level invariant is transiently false.
    evicted = [j2 for j2 in neighbors if state.level[j2] >= state.level[j] + 2]
    state.tag[j] = STAR
    for j2 in evicted:
        state.tag[j2] = FULL
    _emit(state, cfg, events, RoundingEvent(
        "AddToStar", client=j, level_after=state.level[j], lp_objective=lp_objective))
    for j2 in evicted:
        _emit(state, cfg, events, RoundingEvent(
            "EvictFromStar", client=j2, level_before=state.level[j2],
            partner=j, lp_objective=lp_objective))
    return True


def delete_facility(state: LpIterState, i: int) -> None:
    state.facilities.discard(i)
    for j in range(state.client_count):
        state.fball[j].discard(i)
        state.inner[j].discard(i)


def iterative_round(state: LpIterState, cfg: RoundingConfig | None = None):
    """Round until no variable bound at zero and no ball constraint is tight.

    Per pass: solve the working LP to a vertex; delete a zero facility if one
    exists, else promote a tight partial client to full, else shrink a tight
    full client's ball one level; lowest index wins each branch, and a
    promoted or shrunk client immediately attempts to pin itself. Objectives
    are compared exactly and must never increase.

    Returns (vertex, events).
    """
    cfg = cfg or RoundingConfig()
    if cfg.tau is not None and R(cfg.tau) != state.disc.tau:
        raise ValueError("config tau disagrees with the state discretization")
    guard = cfg.max_iter_guard if cfg.max_iter_guard is not None else default_guard(state)
    events = []
    prev = None
    for _ in range(guard):
        lp = emit_lp(state)
        vertex = facility_vertex(lp, solve_to_vertex(lp))
        if prev is not None and vertex.objective > prev:
            raise InvariantViolation(
                f"working LP optimum rose from {format_rational(prev)} "
                f"to {format_rational(vertex.objective)}"
            )
        prev = vertex.objective
        if cfg.trace is not None:
            cfg.trace.write({
                "type": "solve",
                "objective": format_rational(vertex.objective),
                "fractional": len(vertex.fractional()),
            })

        zero = [i for i in sorted(state.facilities) if vertex.value(i) == 0]
        if zero:
            delete_facility(state, zero[0])
            _emit(state, cfg, events, RoundingEvent(
                "DeleteFacility", facility=zero[0], lp_objective=vertex.objective))
            continue

        tight_part = [j for j in state.clients(PART) if vertex.mass(state.fball[j]) == 1]
        if tight_part:
            j = tight_part[0]
            state.tag[j] = FULL
            _emit(state, cfg, events, RoundingEvent(
                "PartToFull", client=j, level_after=state.level[j],
                lp_objective=vertex.objective))
            reroute(state, j, cfg, events, vertex.objective)
            continue

        tight_full = [j for j in state.clients(FULL)
                      if state.inner[j] and vertex.mass(state.inner[j]) == 1]
        if tight_full:
            j = tight_full[0]
            before = state.level[j]
            state.fball[j] = set(state.inner[j])
            state.level[j] = before - 1
            state.recompute_inner(j)
            _emit(state, cfg, events, RoundingEvent(
                "ShrinkBall", client=j, level_before=before,
                level_after=state.level[j], lp_objective=vertex.objective))
            reroute(state, j, cfg, events, vertex.objective)
            continue

        if cfg.vertex_hook is not None:
            cfg.vertex_hook(state, vertex)
        return vertex, events
    raise GuardExceeded(f"rounding exceeded {guard} passes")


def config_reroute(state: LpIterState, vertex: FacilityVertex, pair) -> RoundingEvent:
    """Demote the higher-level member of a validated eviction pair."""
    j, j2 = pair
    if not is_candidate_configuration(state, vertex, j, j2):
        raise ValueError(f"({j}, {j2}) is not a candidate configuration")
    state.tag[j] = FULL
    return RoundingEvent("ConfigEvict", client=j, partner=j2,
                         level_before=state.level[j], lp_objective=vertex.objective)


def pseudo_approximation(state: LpIterState, cfg: RoundingConfig | None = None):
    """Alternate rounding and pair eviction until no pair qualifies.

    The returned vertex has at most 15r fractional facilities; that bound is
    asserted, not assumed.
    """
    cfg = cfg or RoundingConfig()
    guard = cfg.max_iter_guard if cfg.max_iter_guard is not None else default_guard(state)
    events = []
    for _ in range(guard):
        vertex, evs = iterative_round(state, cfg)
        events.extend(evs)
        pair = find_candidate_configuration(state, vertex)
        if pair is None:
            r = state.instance.r1 + state.instance.r2
            frac = len(vertex.fractional())
            if frac > 15 * r:
                raise InvariantViolation(
                    f"{frac} fractional facilities remain, above 15r = {15 * r}"
                )
            return vertex, events
        event = config_reroute(state, vertex, pair)
        _emit(state, cfg, events, event)
    raise GuardExceeded(f"eviction loop exceeded {guard} rounds")


@dataclass(frozen=True)
class AssembledSolution:
    """Fractional assignment over the split instance with a certified cost."""

    assignment: tuple  # per client: tuple of (facility, mass)
    opening: dict  # facility -> mass
    cost: object
    lp_objective: object
    alpha: object

    @property
    def bound(self):
        return (2 + self.alpha) * self.lp_objective


def assemble_fractional_solution(state: LpIterState, vertex: FacilityVertex) -> AssembledSolution:
    """Turn a rounded vertex into a feasible point of the assignment LP.

    Partial clients keep their ball mass; pinned clients take their full
    unit; full clients take their inner ball and then draw the shortfall
    nearest-first from open mass, which the rerouting bound guarantees within
    (2 + alpha) L(level). Feasibility and the cost factor are checked
    exactly before returning.
    """
    metric = state.instance.metric
    alpha = pseudo_alpha(state.disc.tau)
    assignment = []
    for j in range(state.client_count):
        if state.tag[j] in (PART, STAR):
            rows = [(i, vertex.value(i)) for i in sorted(state.fball[j])]
        else:
            limit = (2 + alpha) * state.disc.L(state.level[j])
            rows = [(i, vertex.value(i)) for i in sorted(state.inner[j])]
            need = _ONE - vertex.mass(state.inner[j])
            pool = sorted(
                (i for i in state.facilities
                 if i not in state.inner[j] and vertex.value(i) > 0),
                key=lambda i: (metric.dfc(i, j), i),
            )
            for i in pool:
                if need == 0:
                    break
                if metric.dfc(i, j) > limit:
                    break
                take = min(vertex.value(i), need)
                rows.append((i, take))
                need -= take
            if need > 0:
                raise InvariantViolation(
                    f"full client {j} is short {format_rational(need)} open mass "
                    f"within {format_rational(limit)}"
                )
        assignment.append(tuple((i, m) for i, m in rows if m > 0))

    _check_assembly(state, vertex, assignment)
    cost = sum(
        (metric.dfc(i, j) * m for j in range(state.client_count) for i, m in assignment[j]),
        _ZERO,
    )
    out = AssembledSolution(
        assignment=tuple(assignment),
        opening=dict(vertex.values),
        cost=cost,
        lp_objective=vertex.objective,
        alpha=alpha,
    )
    if cost > out.bound:
        raise InvariantViolation(
            f"assembled cost {format_rational(cost)} exceeds "
            f"(2+alpha) * {format_rational(vertex.objective)}"
        )
    return out


def _check_assembly(state, vertex, assignment) -> None:
    inst = state.instance
    served = []
    for j, rows in enumerate(assignment):
        total = _ZERO
        for i, m in rows:
            if m > vertex.value(i):
                raise InvariantViolation(
                    f"client {j} draws {format_rational(m)} from facility {i} "
                    f"above its opening"
                )
            total += m
        if total > 1:
            raise InvariantViolation(f"client {j} assigned mass above one")
        if state.tag[j] in (FULL, STAR) and total != 1:
            raise InvariantViolation(f"client {j} should be fully assigned")
        served.append(total)
    for t, row in enumerate(inst.W):
        load = sum((row[i] * v for i, v in vertex.values.items()), _ZERO)
        if load > inst.b[t]:
            raise InvariantViolation(f"assembled opening violates knapsack row {t}")
    for t in range(inst.r2):
        cover = sum((inst.a[j][t] * served[j] for j in range(len(served))), _ZERO)
        if cover < inst.c[t]:
            raise InvariantViolation(f"assembled assignment violates coverage row {t}")


@dataclass(frozen=True)
class RerouteCertificate:
    ok: bool
    beta: object
    alpha: object
    worst_ratio: object  # max d(j,S)/L(level_j) over checked clients, None if vacuous
    witness: str

    @property
    def bound(self):
        return 2 + self.alpha


def certify_reroute_bound(state: LpIterState, S, beta) -> RerouteCertificate:
    """Check the eviction-distance guarantee against an explicit facility set.

    Precondition (raises on failure, naming the client): every pinned client
    sits within beta * L(level) of S. Then every full or pinned client must
    sit within (2 + alpha) * L(level), alpha from reroute_alpha; the report
    carries the worst distance-to-level ratio seen.
    """
    metric = state.instance.metric
    nf = metric.facility_count
    S = sorted(S)
    if not S:
        raise ValueError("facility set is empty")
    beta = R(beta)

    def dist_to_s(j):
        return min(metric.dist[nf + j][i] for i in S)

    for j in state.clients(STAR):
        lim = beta * state.disc.L(state.level[j])
        if dist_to_s(j) > lim:
            raise ValueError(
                f"pinned client {j} is {format_rational(dist_to_s(j))} from S, "
                f"above beta * L = {format_rational(lim)}"
            )

    alpha = reroute_alpha(state.disc.tau, beta)
    worst = None
    ok = True
    witness = ""
    for j in state.clients(FULL, STAR):
        d = dist_to_s(j)
        lvl = state.disc.L(state.level[j])
        if lvl == 0:
            if d > 0:
                ok = False
                witness = f"client {j} at level -1 is at positive distance from S"
            continue
        ratio = d / lvl
        if worst is None or ratio > worst:
            worst = ratio
        if d > (2 + alpha) * lvl:
            ok = False
            witness = (
                f"client {j}: d(j,S) = {format_rational(d)} exceeds "
                f"(2+alpha) L = {format_rational((2 + alpha) * lvl)}"
            )
    return RerouteCertificate(ok=ok, beta=beta, alpha=alpha, worst_ratio=worst, witness=witness)
