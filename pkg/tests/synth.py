"""Hand-built metrics and rounding states shared across the structural tests.

Everything lives on an integer line so distances, levels, and ball radii can
be read off by eye and asserted as literals. The discretization offset is
always pinned (never sampled) so the level of every distance is fixed.
"""

from gkmedian._rational import R
from gkmedian.instance import GkmInstance, MetricInstance
from gkmedian.lpiter import (
    Discretization,
    LpIterState,
    STAR,
    build_lp_iter,
    check_basic_invariants,
)

ONE = R(1)


def line_metric(facility_points, client_points) -> MetricInstance:
    """L1 metric on integer line coordinates, facilities first."""
    return grid_metric([(p,) for p in facility_points], [(p,) for p in client_points])


def grid_metric(facility_points, client_points) -> MetricInstance:
    """L1 metric on integer grid coordinates of any dimension."""
    pts = [tuple(R(x) for x in p) for p in facility_points]
    pts += [tuple(R(x) for x in p) for p in client_points]
    dist = tuple(
        tuple(sum(abs(x - y) for x, y in zip(a, b)) for b in pts) for a in pts
    )
    return MetricInstance(
        facility_count=len(facility_points),
        client_count=len(client_points),
        dist=dist,
        scale=ONE,
        facility_ids=tuple(range(len(facility_points))),
        client_ids=tuple(range(len(client_points))),
    )


def pinned_disc(tau=2, alpha=1, seed=0) -> Discretization:
    return Discretization(R(tau), seed, offset_alpha=R(alpha))


def rounded_distances(disc, metric):
    """dprime matrix produced by the given (pinned) discretization."""
    return tuple(tuple(disc.round_up(v) for v in row) for row in metric.dist)


def line_state(facility_points, client_points, fballs, **kw) -> LpIterState:
    """`grid_state` specialised to the integer line."""
    return grid_state(
        [(p,) for p in facility_points], [(p,) for p in client_points], fballs, **kw
    )


def grid_state(
    facility_points,
    client_points,
    fballs,
    *,
    stars=(),
    W=None,
    b=None,
    c=None,
    tau=2,
    alpha=1,
    dummies=frozenset(),
    extra=None,
) -> LpIterState:
    """A rounding state over an L1 grid metric with pinned levels.

    `fballs` gives each client's facility ball; levels come out of the
    pinned discretization. Clients listed in `stars` are re-tagged after the
    build (the builder tags every non-dummy client as partial). The caller
    is responsible for choosing geometry that satisfies the invariants;
    tests assert that explicitly where it matters.
    """
    metric = grid_metric(facility_points, client_points)
    nf, nc = metric.facility_count, metric.client_count
    if W is None:
        W = ((ONE,) * nf,)
    if b is None:
        b = nf
    if c is None:
        c = nc - len(dummies)
    if not isinstance(b, (tuple, list)):
        b = (b,)
    if not isinstance(c, (tuple, list)):
        c = (c,)
    a = tuple((ONE,) for _ in range(nc))
    inst = GkmInstance(
        metric,
        tuple(tuple(R(x) for x in row) for row in W),
        tuple(R(x) for x in b),
        a,
        tuple(R(x) for x in c),
    )
    disc = pinned_disc(tau, alpha)
    state = build_lp_iter(
        inst,
        [set(ball) for ball in fballs],
        disc,
        rounded_distances(disc, metric),
        dummies=frozenset(dummies),
        extra=extra,
    )
    for j in stars:
        state.tag[j] = STAR
    return state


def assert_sound(state) -> None:
    check_basic_invariants(state).assert_ok()
