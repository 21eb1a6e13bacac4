"""Brute-force exact solvers and the Monte Carlo ratio harness.

The oracle is the ground truth for every end-to-end test, so it stays
deliberately dumb: enumerate facility subsets in ascending bitmask order and
keep the cheapest (first encountered on ties, which makes the result the
lexicographically smallest optimum). No pruning beyond feasibility, no
branch-and-bound; anything clever enough to be wrong is out of scope.

Subsets can be scanned in parallel by splitting the mask range into chunks
("prefixes"); chunk results are reduced by exact (cost, mask) minimum, so the
answer does not depend on the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from ._rational import R
from .instance import (
    GkmInstance,
    KnapsackInstance,
    OutliersInstance,
    SchemaError,
    assign_served,
)

__all__ = ["OracleError", "OracleResult", "brute_force", "monte_carlo_ratio"]


class OracleError(RuntimeError):
    """Enumeration limits exceeded, infeasible instance, or solver failure."""


@dataclass(frozen=True)
class OracleResult:
    """Certified optimum from full enumeration.

    `enumeration_count` is the number of feasible facility subsets whose cost
    was evaluated; tests use it to confirm the search really was exhaustive.
    """

    opt_cost: object
    opt_open_set: tuple
    opt_served: tuple
    enumeration_count: int

    def solution(self, metric):
        return assign_served(metric, self.opt_open_set, self.opt_served)


def _members(mask: int):
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def _serve_all(metric, opens):
    total = R(0)
    for j in range(metric.client_count):
        total += min(metric.dfc(i, j) for i in opens)
    return total


def _serve_cheapest(metric, opens, count):
    """Serve `count` clients with smallest d(j, S), ties lowest id."""
    if count <= 0:
        return R(0), ()
    ranked = sorted(
        range(metric.client_count),
        key=lambda j: (min(metric.dfc(i, j) for i in opens), j),
    )
    chosen = ranked[:count]
    total = sum((min(metric.dfc(i, j) for i in opens) for j in chosen), R(0))
    return total, tuple(sorted(chosen))


def _scan_knapsack(inst, lo, hi):
    metric = inst.metric
    best = None
    count = 0
    for mask in range(lo, hi):
        if mask == 0:
            continue
        opens = _members(mask)
        weight = sum((inst.w[i] for i in opens), R(0))
        if weight > inst.budget:
            continue
        count += 1
        cost = _serve_all(metric, opens)
        if best is None or cost < best[0]:
            served = tuple(range(metric.client_count))
            best = (cost, mask, served)
    return best, count


def _scan_outliers(inst, lo, hi):
    metric = inst.metric
    best = None
    count = 0
    for mask in range(lo, hi):
        opens = _members(mask)
        if len(opens) > inst.k:
            continue
        if not opens:
            if inst.m > 0:
                continue
            count += 1
            if best is None:
                best = (R(0), 0, ())
            continue
        count += 1
        cost, served = _serve_cheapest(metric, opens, inst.m)
        if best is None or cost < best[0]:
            best = (cost, mask, served)
    return best, count


def _gkm_feasible_opens(inst, opens):
    for t in range(inst.r1):
        used = sum((inst.W[t][i] for i in opens), R(0))
        if used > inst.b[t]:
            return False
    return True


def _gkm_uniform_serve(inst, opens):
    """Cheapest served set when the single coverage row has uniform weights."""
    metric = inst.metric
    unit = inst.a[0][0]
    target = inst.c[0]
    if target <= 0:
        return R(0), ()
    if unit <= 0 or not opens:
        return None
    need = math.ceil(R(target) / unit)
    if need > metric.client_count:
        return None
    return _serve_cheapest(metric, opens, need)


def _gkm_enumerate_serve(inst, opens):
    """Cheapest served subset meeting every coverage row, by enumeration."""
    metric = inst.metric
    nc = metric.client_count
    cheapest = [
        min(metric.dfc(i, j) for i in opens) if opens else None for j in range(nc)
    ]
    best = None
    for smask in range(1 << nc):
        served = _members(smask)
        ok = True
        for t in range(inst.r2):
            got = sum((inst.a[j][t] for j in served), R(0))
            if got < inst.c[t]:
                ok = False
                break
        if not ok:
            continue
        if served and not opens:
            continue
        cost = sum((cheapest[j] for j in served), R(0))
        if best is None or cost < best[0]:
            best = (cost, tuple(served))
    return best


def _scan_gkm(inst, lo, hi):
    metric = inst.metric
    uniform = inst.r2 == 1 and len(set(inst.a[j][0] for j in range(metric.client_count))) == 1
    best = None
    count = 0
    for mask in range(lo, hi):
        opens = _members(mask)
        if not _gkm_feasible_opens(inst, opens):
            continue
        if uniform:
            picked = _gkm_uniform_serve(inst, opens)
        else:
            picked = _gkm_enumerate_serve(inst, opens)
        if picked is None:
            continue
        count += 1
        cost, served = picked
        if best is None or cost < best[0]:
            best = (cost, mask, served)
    return best, count


_SCANNERS = {
    KnapsackInstance: _scan_knapsack,
    OutliersInstance: _scan_outliers,
    GkmInstance: _scan_gkm,
}


def _scan_chunk(args):
    inst, lo, hi = args
    return _SCANNERS[type(inst)](inst, lo, hi)


def brute_force(instance, *, facility_limit: int = 15, client_limit: int = 12, jobs: int = 1) -> OracleResult:
    """Exact optimum by full enumeration of facility subsets.

    Knapsack keeps subsets with weight <= budget and serves everyone;
    outliers keeps |S| <= k and serves the m clients with smallest d(j, S)
    (ties lowest id); plain GKM checks every knapsack row and picks the served
    set per coverage rows: greedily for one uniform row, by client-subset
    enumeration otherwise (needs |C| <= client_limit).
    """
    metric = instance.metric
    nf = metric.facility_count
    if nf > facility_limit:
        raise OracleError(
            f"{nf} facilities exceed the enumeration limit {facility_limit}"
        )
    if isinstance(instance, GkmInstance):
        uniform = instance.r2 == 1 and len(
            set(instance.a[j][0] for j in range(metric.client_count))
        ) == 1
        if not uniform and metric.client_count > client_limit:
            raise OracleError(
                f"{metric.client_count} clients exceed the general-coverage "
                f"enumeration limit {client_limit}"
            )
    elif not isinstance(instance, (KnapsackInstance, OutliersInstance)):
        raise SchemaError(f"not an instance: {instance!r}")

    total = 1 << nf
    if jobs > 1:
        step = max(1, total // (4 * jobs))
        chunks = [
            (instance, lo, min(lo + step, total)) for lo in range(0, total, step)
        ]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_scan_chunk, chunks))
    else:
        parts = [_scan_chunk((instance, 0, total))]

    best = None
    count = 0
    for part, n in parts:
        count += n
        if part is not None and (
            best is None or (part[0], part[1]) < (best[0], best[1])
        ):
            best = part
    if best is None:
        raise OracleError("no feasible facility subset")
    cost, mask, served = best
    return OracleResult(cost, tuple(_members(mask)), tuple(served), count)


def monte_carlo_ratio(solver, instance, trials: int = 0, seeds=None, *, opt=None) -> dict:
    """Run `solver(instance, seed)` over a seed list and report cost / OPT.

    `solver` may return a Solution-like object (anything with a `cost`
    attribute) or a bare rational cost. OPT comes from brute_force unless
    passed in. mean and max are exact rationals; stddev is an advisory float.
    Solver failures are re-raised with the offending seed named.
    """
    if seeds is None:
        seeds = range(trials)
    seeds = list(seeds)
    if not seeds:
        raise OracleError("no seeds to run")
    if opt is None:
        opt = brute_force(instance).opt_cost
    if opt <= 0:
        raise OracleError("oracle optimum is zero; ratios undefined")
    ratios = []
    for seed in seeds:
        try:
            result = solver(instance, seed)
        except Exception as exc:
            raise OracleError(f"solver failed on seed {seed}: {exc}") from exc
        cost = getattr(result, "cost", result)
        ratios.append(R(cost) / opt)
    mean = sum(ratios, R(0)) / len(ratios)
    var = sum(((x - mean) ** 2 for x in ratios), R(0)) / len(ratios)
    return {
        "mean": mean,
        "max": max(ratios),
        "stddev": math.sqrt(float(var)),
        "trials": len(ratios),
    }
