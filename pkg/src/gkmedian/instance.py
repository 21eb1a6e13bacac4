"""Data model for generalized k-median and its two specializations.

Everything numeric is an exact rational. Instances are immutable after
construction and validated eagerly: symmetry, zero diagonal, non-negativity,
and the triangle inequality for every triple (the offending triple is named on
failure). On construction the metric is uniformly rescaled so the smallest
nonzero distance is 1; the scale factor is kept for reporting costs in the
original units.

Index conventions used across the package: facilities are 0..nF-1 and clients
are 0..nC-1 in listing order, and all "lowest id" tie-breaks mean lowest index
in that order. The global point index of client j is nF + j.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction

from ._rational import R, format_rational, parse_rational, to_decimal_string

__all__ = [
    "SchemaError",
    "MetricInstance",
    "GkmInstance",
    "KnapsackInstance",
    "OutliersInstance",
    "Solution",
    "derive_seed",
    "euclidean_matrix",
    "generate_instance",
    "instance_from_dict",
    "instance_to_dict",
    "load_instance",
    "save_instance",
    "to_gkm",
]


class SchemaError(ValueError):
    """Bad input: schema violation, non-metric matrix, or bad parameters."""


def derive_seed(seed: int, label: str) -> int:
    """Derive a sub-seed from a master seed and a purpose label.

    All randomness in the package funnels through a single integer seed; each
    consumer asks for its own stream by label so adding a new consumer never
    perturbs existing ones. sha256 keeps this stable across platforms.
    """
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class MetricInstance:
    """Exact metric on facilities and clients.

    Attributes:
        facility_count: number of facilities nF.
        client_count: number of clients nC.
        dist: (nF+nC) x (nF+nC) tuple-of-tuples of rationals, normalized so the
            smallest nonzero entry is 1.
        scale: rational factor mapping normalized distances back to input
            units (original = normalized * scale).
        facility_ids: display ids, listing order.
        client_ids: display ids, listing order.
        points: integer grid coordinates when the instance came from the
            "l1-points" form, else None. Kept only for round-tripping.
    """

    facility_count: int
    client_count: int
    dist: tuple
    scale: object
    facility_ids: tuple
    client_ids: tuple
    points: tuple | None = None

    @property
    def n(self) -> int:
        return self.facility_count + self.client_count

    def d(self, p: int, q: int):
        """Distance between global point indices."""
        return self.dist[p][q]

    def dfc(self, i: int, j: int):
        """Distance from facility i to client j."""
        return self.dist[i][self.facility_count + j]

    def dcc(self, j1: int, j2: int):
        """Distance between clients j1 and j2."""
        nf = self.facility_count
        return self.dist[nf + j1][nf + j2]


@dataclass(frozen=True)
class GkmInstance:
    """Generalized k-median: r1 knapsack rows Wy <= b, r2 coverage rows.

    Coverage row t demands sum_j a[j][t] * (servedness of j) >= c[t].
    """

    metric: MetricInstance
    W: tuple
    b: tuple
    a: tuple
    c: tuple

    @property
    def r1(self) -> int:
        return len(self.b)

    @property
    def r2(self) -> int:
        return len(self.c)

    @property
    def r(self) -> int:
        return self.r1 + self.r2


@dataclass(frozen=True)
class KnapsackInstance:
    """Knapsack median: open facilities of total weight <= budget, serve all."""

    metric: MetricInstance
    w: tuple
    budget: object


@dataclass(frozen=True)
class OutliersInstance:
    """k-median with outliers: open <= k facilities, serve >= m clients."""

    metric: MetricInstance
    k: int
    m: int


@dataclass(frozen=True)
class Solution:
    """An integral solution: open set, served clients, and exact cost.

    `assignment` pairs each served client with the facility serving it; `cost`
    is the total connection distance in normalized units.
    """

    open_facilities: tuple
    served: tuple
    assignment: tuple
    cost: object

    def to_dict(self, metric: MetricInstance) -> dict:
        return {
            "open": [metric.facility_ids[i] for i in self.open_facilities],
            "served": [metric.client_ids[j] for j in self.served],
            "assignment": {
                metric.client_ids[j]: metric.facility_ids[i]
                for j, i in self.assignment
            },
            "cost": format_rational(self.cost * metric.scale),
            "cost_decimal": to_decimal_string(self.cost * metric.scale),
        }


def assign_served(metric: MetricInstance, open_facilities, served) -> Solution:
    """Build a Solution by assigning each served client to its nearest open
    facility (lowest index on ties)."""
    opens = tuple(sorted(open_facilities))
    if not opens and served:
        raise SchemaError("cannot serve clients with no open facilities")
    assignment = []
    total = R(0)
    for j in sorted(served):
        best = min(opens, key=lambda i: (metric.dfc(i, j), i))
        assignment.append((j, best))
        total += metric.dfc(best, j)
    return Solution(opens, tuple(sorted(served)), tuple(assignment), total)


# ---------------------------------------------------------------------------
# Validation and construction
# ---------------------------------------------------------------------------


def _validate_metric(dist, ids) -> None:
    n = len(dist)
    for row in dist:
        if len(row) != n:
            raise SchemaError("distance matrix is not square")
    for p in range(n):
        if dist[p][p] != 0:
            raise SchemaError(f"nonzero self-distance at {ids[p]!r}")
        for q in range(p + 1, n):
            if dist[p][q] != dist[q][p]:
                raise SchemaError(f"asymmetric distance between {ids[p]!r} and {ids[q]!r}")
            if dist[p][q] < 0:
                raise SchemaError(f"negative distance between {ids[p]!r} and {ids[q]!r}")
    for p in range(n):
        for q in range(p + 1, n):
            dpq = dist[p][q]
            for s in range(n):
                if dpq > dist[p][s] + dist[s][q]:
                    raise SchemaError(
                        "triangle inequality violated for "
                        f"({ids[p]!r}, {ids[s]!r}, {ids[q]!r}): "
                        f"{format_rational(dpq)} > "
                        f"{format_rational(dist[p][s])} + {format_rational(dist[s][q])}"
                    )


def make_metric(dist_rows, facility_ids, client_ids, points=None) -> MetricInstance:
    """Validate, normalize, and freeze a metric.

    `dist_rows` is any square iterable of rationals covering facilities first
    then clients.
    """
    facility_ids = tuple(facility_ids)
    client_ids = tuple(client_ids)
    ids = facility_ids + client_ids
    if len(set(ids)) != len(ids):
        raise SchemaError("facility/client ids are not unique")
    dist = [[R(x) for x in row] for row in dist_rows]
    if len(dist) != len(ids):
        raise SchemaError(
            f"distance matrix size {len(dist)} != facilities+clients {len(ids)}"
        )
    _validate_metric(dist, ids)
    nonzero = [dist[p][q] for p in range(len(dist)) for q in range(len(dist)) if dist[p][q] > 0]
    scale = min(nonzero) if nonzero else R(1)
    if scale != 1:
        dist = [[x / scale for x in row] for row in dist]
    return MetricInstance(
        facility_count=len(facility_ids),
        client_count=len(client_ids),
        dist=tuple(tuple(row) for row in dist),
        scale=scale,
        facility_ids=facility_ids,
        client_ids=client_ids,
        points=points,
    )


def _l1_matrix(points):
    n = len(points)
    dim = len(points[0]) if points else 0
    for pt in points:
        if len(pt) != dim:
            raise SchemaError("points have inconsistent dimension")
        for coord in pt:
            if not isinstance(coord, int) or isinstance(coord, bool):
                raise SchemaError(f"l1-points coordinates must be integers, got {coord!r}")
    return [
        [R(sum(abs(points[p][t] - points[q][t]) for t in range(dim))) for q in range(n)]
        for p in range(n)
    ]


def euclidean_matrix(points, denominator_limit: int = 10**6):
    """Snap Euclidean distances onto a rational grid.

    Each pairwise distance is rounded to the nearest rational with denominator
    at most `denominator_limit`. The result must be re-validated (snapping can
    break tight triangles); `make_metric` does that.
    """
    n = len(points)
    rows = [[R(0)] * n for _ in range(n)]
    for p in range(n):
        for q in range(p + 1, n):
            sq = sum((a - b) ** 2 for a, b in zip(points[p], points[q]))
            snapped = Fraction(float(sq) ** 0.5).limit_denominator(denominator_limit)
            rows[p][q] = rows[q][p] = R(snapped.numerator, snapped.denominator)
    return rows


# ---------------------------------------------------------------------------
# JSON I/O
# ---------------------------------------------------------------------------


def _metric_from_dict(data: dict, facility_ids, client_ids) -> MetricInstance:
    form = data.get("form")
    if form == "matrix":
        if "dist" not in data:
            raise SchemaError('metric form "matrix" requires "dist"')
        rows = [[parse_rational(x) for x in row] for row in data["dist"]]
        return make_metric(rows, facility_ids, client_ids)
    if form == "l1-points":
        if "points" not in data:
            raise SchemaError('metric form "l1-points" requires "points"')
        points = tuple(tuple(pt) for pt in data["points"])
        if len(points) != len(facility_ids) + len(client_ids):
            raise SchemaError("points count != facilities+clients")
        return make_metric(_l1_matrix(points), facility_ids, client_ids, points=points)
    raise SchemaError(f"unknown metric form {form!r}")


def instance_from_dict(data: dict):
    """Build an instance from the JSON schema dict. See the package README for
    the schema; unknown kinds and malformed fields raise SchemaError."""
    try:
        kind = data["kind"]
        facilities = data["facilities"]
        clients = data["clients"]
        metric_data = data["metric"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"missing required field: {exc}") from exc
    if kind not in ("gkm", "knapsack", "outliers"):
        raise SchemaError(f"unknown kind {kind!r}")
    facility_ids = [f["id"] for f in facilities]
    client_ids = [cl["id"] for cl in clients]
    metric = _metric_from_dict(metric_data, facility_ids, client_ids)
    nf, nc = metric.facility_count, metric.client_count

    if kind == "knapsack":
        if "budget" not in data:
            raise SchemaError("knapsack instance requires budget")
        weights = []
        for f in facilities:
            if "weight" not in f:
                raise SchemaError(f"facility {f['id']!r} missing weight")
            weights.append(parse_rational(f["weight"]))
        budget = parse_rational(data["budget"])
        if budget < 0 or any(w < 0 for w in weights):
            raise SchemaError("negative weight or budget")
        return KnapsackInstance(metric, tuple(weights), budget)

    if kind == "outliers":
        if "k" not in data or "m" not in data:
            raise SchemaError("outliers instance requires k and m")
        k, m = data["k"], data["m"]
        if not isinstance(k, int) or not isinstance(m, int):
            raise SchemaError("k and m must be integers")
        if k < 1 or k > nf:
            raise SchemaError(f"k={k} out of range [1, {nf}]")
        if m < 0 or m > nc:
            raise SchemaError(f"m={m} out of range [0, {nc}]")
        return OutliersInstance(metric, k, m)

    if "W" not in data or "b" not in data or "c" not in data:
        raise SchemaError("gkm instance requires W, b, c")
    W = tuple(tuple(parse_rational(x) for x in row) for row in data["W"])
    b = tuple(parse_rational(x) for x in data["b"])
    c = tuple(parse_rational(x) for x in data["c"])
    r2 = len(c)
    a_rows = []
    for cl in clients:
        cov = cl.get("coverage")
        row = tuple(parse_rational(x) for x in cov) if cov is not None else (R(1),) * r2
        if len(row) != r2:
            raise SchemaError(f"client {cl['id']!r} coverage length != len(c)")
        a_rows.append(row)
    inst = GkmInstance(metric, W, b, tuple(a_rows), tuple(c))
    _validate_gkm(inst)
    return inst


def _validate_gkm(inst: GkmInstance) -> None:
    nf, nc = inst.metric.facility_count, inst.metric.client_count
    if inst.r < 1:
        raise SchemaError("need at least one side constraint (r >= 1)")
    if len(inst.W) != inst.r1 or any(len(row) != nf for row in inst.W):
        raise SchemaError("W must be r1 x nF")
    if len(inst.a) != nc:
        raise SchemaError("coverage rows must cover every client")
    for row in inst.W:
        if any(x < 0 for x in row):
            raise SchemaError("negative entry in W")
    if any(x < 0 for x in inst.b) or any(x < 0 for x in inst.c):
        raise SchemaError("negative entry in b or c")
    for row in inst.a:
        if any(x < 0 for x in row):
            raise SchemaError("negative coverage coefficient")


def _metric_to_dict(metric: MetricInstance) -> dict:
    if metric.points is not None:
        return {"form": "l1-points", "points": [list(pt) for pt in metric.points]}
    return {
        "form": "matrix",
        "dist": [
            [format_rational(x * metric.scale) for x in row] for row in metric.dist
        ],
    }


def instance_to_dict(inst) -> dict:
    """Inverse of instance_from_dict (metric re-expressed in original units)."""
    metric = inst.metric
    data = {
        "facilities": [{"id": fid} for fid in metric.facility_ids],
        "clients": [{"id": cid} for cid in metric.client_ids],
        "metric": _metric_to_dict(metric),
    }
    if isinstance(inst, KnapsackInstance):
        data["kind"] = "knapsack"
        for f, w in zip(data["facilities"], inst.w):
            f["weight"] = format_rational(w)
        data["budget"] = format_rational(inst.budget)
    elif isinstance(inst, OutliersInstance):
        data["kind"] = "outliers"
        data["k"] = inst.k
        data["m"] = inst.m
    elif isinstance(inst, GkmInstance):
        data["kind"] = "gkm"
        data["W"] = [[format_rational(x) for x in row] for row in inst.W]
        data["b"] = [format_rational(x) for x in inst.b]
        data["c"] = [format_rational(x) for x in inst.c]
        for cl, row in zip(data["clients"], inst.a):
            cl["coverage"] = [format_rational(x) for x in row]
    else:
        raise SchemaError(f"not an instance: {inst!r}")
    return data


def load_instance(path, kind: str | None = None):
    """Load an instance file, optionally checking it has the expected kind."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read instance file {path}: {exc}") from exc
    inst = instance_from_dict(data)
    if kind is not None and data.get("kind") != kind:
        raise SchemaError(f"instance kind {data.get('kind')!r} != requested {kind!r}")
    return inst


def save_instance(inst, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Embedding into GKM
# ---------------------------------------------------------------------------


def to_gkm(inst) -> GkmInstance:
    """Embed a specialization as a GkmInstance with r1 = r2 = 1.

    Knapsack: W = [w], b = [budget], every client has unit coverage, c = |C|
    (serve everyone). Outliers: W = all-ones (y(F) <= k), b = [k], unit
    coverage, c = m.
    """
    if isinstance(inst, GkmInstance):
        return inst
    metric = inst.metric
    nf, nc = metric.facility_count, metric.client_count
    ones_cov = tuple((R(1),) for _ in range(nc))
    if isinstance(inst, KnapsackInstance):
        return GkmInstance(metric, (tuple(inst.w),), (inst.budget,), ones_cov, (R(nc),))
    if isinstance(inst, OutliersInstance):
        return GkmInstance(
            metric, ((R(1),) * nf,), (R(inst.k),), ones_cov, (R(inst.m),)
        )
    raise SchemaError(f"not an instance: {inst!r}")


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------


def generate_instance(
    seed: int, n_facilities: int, n_clients: int, kind: str = "gkm", **params
):
    """Generate a deterministic random instance on an integer L1 grid.

    Args:
        seed: master seed; identical (seed, args, params) give identical
            instances.
        n_facilities: number of facilities (>= 1).
        n_clients: number of clients (>= 1).
        kind: "gkm", "knapsack", or "outliers".
        params: kind-specific knobs. outliers: k (required), m (required).
            knapsack: weight_max (default 9), budget (default: weight of a
            random feasible subset). gkm: r1, r2 (default 1 each),
            coverage_max (default 4). All kinds: grid_span, dim.

    The instance is feasible by construction: budgets and coverage targets are
    set from an explicitly sampled witness subset of facilities.
    """
    if n_facilities < 1 or n_clients < 1:
        raise SchemaError("need at least one facility and one client")
    rng = random.Random(derive_seed(seed, f"gen:{kind}:{n_facilities}:{n_clients}"))
    span = params.get("grid_span", 4 * max(n_facilities, n_clients))
    dim = params.get("dim", 2)
    points = tuple(
        tuple(rng.randrange(span + 1) for _ in range(dim))
        for _ in range(n_facilities + n_clients)
    )
    facility_ids = [f"f{i}" for i in range(n_facilities)]
    client_ids = [f"c{j}" for j in range(n_clients)]
    metric = make_metric(_l1_matrix(points), facility_ids, client_ids, points=points)

    if kind == "outliers":
        if "k" not in params or "m" not in params:
            raise SchemaError("outliers generation requires k and m")
        k, m = params["k"], params["m"]
        if k > n_facilities:
            raise SchemaError(f"k={k} > nFacilities={n_facilities}")
        if m > n_clients:
            raise SchemaError(f"m={m} > nClients={n_clients}")
        return OutliersInstance(metric, k, m)

    if kind == "knapsack":
        wmax = params.get("weight_max", 9)
        weights = tuple(R(rng.randint(1, wmax)) for _ in range(n_facilities))
        if "budget" in params:
            budget = parse_rational(params["budget"])
        else:
            size = rng.randint(1, max(1, n_facilities // 2))
            witness = rng.sample(range(n_facilities), size)
            budget = sum((weights[i] for i in witness), R(0))
        return KnapsackInstance(metric, weights, budget)

    if kind == "gkm":
        r1 = params.get("r1", 1)
        r2 = params.get("r2", 1)
        cov_max = params.get("coverage_max", 4)
        W = tuple(
            tuple(R(rng.randint(1, 9)) for _ in range(n_facilities)) for _ in range(r1)
        )
        size = rng.randint(1, max(1, n_facilities // 2))
        witness = set(rng.sample(range(n_facilities), size))
        b = tuple(sum((row[i] for i in witness), R(0)) for row in W)
        a = tuple(
            tuple(R(rng.randint(1, cov_max)) for _ in range(r2))
            for _ in range(n_clients)
        )
        c = tuple(
            sum((a[j][t] for j in range(n_clients)), R(0)) * rng.randint(2, 4) / 4
            for t in range(r2)
        )
        inst = GkmInstance(metric, W, b, a, c)
        _validate_gkm(inst)
        return inst

    raise SchemaError(f"unknown kind {kind!r}")
