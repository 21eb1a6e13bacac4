"""Command-line surface: solve, oracle, gen, verify, bench.

Reports are JSON, written to stdout in one atomic write after the run
finishes; diagnostics and wall-clock timing go to stderr. Exit codes:
0 success, 2 bad input, 3 infeasible, 4 invariant breach.

Reports contain no wall-clock values, so identical flags produce identical
bytes; the `timings` field carries deterministic work counters instead.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import click

from ._rational import R, format_rational, parse_rational, to_decimal_string
from .chains import chain_decompose
from .exactlp import InfeasibleError, UnboundedError, solve_to_vertex
from .instance import (
    GkmInstance,
    MetricInstance,
    SchemaError,
    generate_instance,
    instance_from_dict,
    load_instance,
    save_instance,
)
from .knapsack import DEFAULT_TAU as KNAPSACK_TAU
from .knapsack import solve_knapsack
from .lpiter import (
    Discretization,
    ExtraParams,
    InvariantViolation,
    LpIterState,
    STAR,
    build_lp_iter,
    check_basic_invariants,
    check_extra_invariants,
    discretize,
    duplicate_and_extract_fballs,
    emit_lp,
    state_snapshot,
)
from .oracle import OracleError, brute_force, monte_carlo_ratio
from .outliers import DEFAULT_TAU as OUTLIERS_TAU
from .outliers import solve_outliers
from .rounding import (
    GuardExceeded,
    RoundingConfig,
    TraceSink,
    assemble_fractional_solution,
    pseudo_approximation,
)

_LOG = logging.getLogger("gkmedian")

_DEFAULT_TAUS = {
    "gkm": KNAPSACK_TAU,
    "knapsack": KNAPSACK_TAU,
    "outliers": OUTLIERS_TAU,
}


def _setup_logging() -> None:
    level = os.environ.get("GKM_LOG", "").strip().lower()
    if level in ("debug", "info"):
        logging.basicConfig(
            stream=sys.stderr,
            level=logging.DEBUG if level == "debug" else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )


def _emit_report(report: dict) -> None:
    sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    sys.stdout.flush()


def _guarded(body, trace_path=None):
    """Run a command body under the exit-code contract."""
    started = time.perf_counter()
    try:
        report = body()
    except click.ClickException:
        raise
    except SchemaError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except OracleError as exc:
        code = 2 if "limit" in str(exc) else 3
        click.echo(f"error: {exc}", err=True)
        sys.exit(code)
    except (InfeasibleError, UnboundedError) as exc:
        click.echo(f"error: no feasible solution ({exc})", err=True)
        sys.exit(3)
    except (InvariantViolation, GuardExceeded) as exc:
        msg = f"invariant breach: {exc}"
        if trace_path:
            msg += f" (trace: {trace_path})"
        click.echo(msg, err=True)
        sys.exit(4)
    _LOG.info("finished in %.3fs", time.perf_counter() - started)
    _emit_report(report)


class _InvariantCounter:
    """Per-check pass/fail tally over every observed rounding event."""

    def __init__(self, extra_kind=None):
        self.extra_kind = extra_kind
        self.counts = {}
        self.events = 0
        self.checks = 0

    def _absorb(self, report):
        for name, passed, _ in report.results:
            slot = self.counts.setdefault(name, {"pass": 0, "fail": 0})
            slot["pass" if passed else "fail"] += 1
            self.checks += 1

    def on_event(self, state, _event) -> None:
        self.events += 1
        self._absorb(check_basic_invariants(state))
        if self.extra_kind is not None and state.extra is not None:
            self._absorb(check_extra_invariants(state, self.extra_kind))

    def summary(self) -> dict:
        return {name: dict(slot) for name, slot in sorted(self.counts.items())}


class _ChainWatch:
    """Chain decomposition stats per returned vertex, bounds enforced."""

    def __init__(self):
        self.rows = []

    def on_vertex(self, state, vertex) -> None:
        dec = chain_decompose(state, vertex)
        row = {
            "chains": len(dec.chains),
            "violating": len(dec.violating),
            "fractional": len(dec.fractional_facilities),
            "r": dec.r,
        }
        self.rows.append(row)
        if len(dec.chains) > 3 * dec.r:
            raise InvariantViolation(
                f"{len(dec.chains)} chains exceed 3r = {3 * dec.r}"
            )
        if len(dec.violating) > 2 * dec.r:
            raise InvariantViolation(
                f"{len(dec.violating)} violating clients exceed 2r = {2 * dec.r}"
            )


def _matrix(rows):
    return [[format_rational(x) for x in row] for row in rows]


def _parse_matrix(rows):
    return tuple(tuple(parse_rational(x) for x in row) for row in rows)


class _TraceRecorder:
    """Writes self-contained context + state records.

    A context record carries the working instance verbatim (normalized
    distances, side rows, discretized matrix, sparsity data) so `verify` can
    rebuild every recorded state without renormalization drift; a state
    record then only needs the snapshot.
    """

    def __init__(self, sink: TraceSink, kind: str):
        self.sink = sink
        self.kind = kind
        self._seen = None

    def on_event(self, state, _event) -> None:
        if id(state) != self._seen:
            self._seen = id(state)
            self.sink.write(self._context(state))
        self.sink.write({"type": "state", "snapshot": state_snapshot(state)})

    def _context(self, state: LpIterState) -> dict:
        inst = state.instance
        metric = inst.metric
        extra = None
        if state.extra is not None:
            extra = {
                "rho": format_rational(state.extra.rho),
                "delta": format_rational(state.extra.delta),
                "U": format_rational(state.extra.U),
                "radius": [format_rational(x) for x in state.extra.radius],
            }
        return {
            "type": "context",
            "kind": self.kind,
            "facility_ids": list(metric.facility_ids),
            "client_ids": list(metric.client_ids),
            "dist": _matrix(metric.dist),
            "scale": format_rational(metric.scale),
            "W": _matrix(inst.W),
            "b": [format_rational(x) for x in inst.b],
            "a": _matrix(inst.a),
            "c": [format_rational(x) for x in inst.c],
            "dprime": _matrix(state.dprime),
            "copy_of": list(state.copy_of),
            "extra": extra,
        }


def _state_from_trace(ctx: dict, snap: dict) -> LpIterState:
    """Rebuild a recorded state for re-verification."""
    fac_ids = tuple(ctx["facility_ids"])
    cli_ids = tuple(ctx["client_ids"])
    metric = MetricInstance(
        facility_count=len(fac_ids),
        client_count=len(cli_ids),
        dist=_parse_matrix(ctx["dist"]),
        scale=parse_rational(ctx["scale"]),
        facility_ids=fac_ids,
        client_ids=cli_ids,
        points=None,
    )
    inst = GkmInstance(
        metric,
        _parse_matrix(ctx["W"]),
        tuple(parse_rational(x) for x in ctx["b"]),
        _parse_matrix(ctx["a"]),
        tuple(parse_rational(x) for x in ctx["c"]),
    )
    disc = Discretization(
        parse_rational(snap["tau"]),
        snap["seed"],
        offset_alpha=parse_rational(snap["offset_alpha"]),
    )
    extra = None
    if ctx.get("extra"):
        extra = ExtraParams(
            parse_rational(ctx["extra"]["rho"]),
            parse_rational(ctx["extra"]["delta"]),
            parse_rational(ctx["extra"]["U"]),
            tuple(parse_rational(x) for x in ctx["extra"]["radius"]),
        )
    return LpIterState(
        instance=inst,
        disc=disc,
        dprime=_parse_matrix(ctx["dprime"]),
        facilities=set(snap["facilities"]),
        fball=[set(ball) for ball in snap["fballs"]],
        inner=[set(ball) for ball in snap["inner"]],
        level=list(snap["levels"]),
        tag=list(snap["tags"]),
        copy_of=tuple(ctx["copy_of"]),
        C0=frozenset(snap["dummies"]),
        extra=extra,
    )


def _chain_hooks(*hooks):
    hooks = [h for h in hooks if h is not None]
    if not hooks:
        return None

    def fire(state, payload):
        for h in hooks:
            h(state, payload)

    return fire


def _cost_fields(cost, scale) -> dict:
    original = cost * scale
    return {
        "cost": format_rational(original),
        "costDecimal": to_decimal_string(original),
    }


def _run_gkm(inst, seed, tau, sink, event_hook, vertex_hook):
    """Pseudo-approximation on a generalized instance; fractional output."""
    split = duplicate_and_extract_fballs(inst)
    disc, dprime = discretize(split.instance, tau, seed)
    state = build_lp_iter(
        split.instance, split.fballs, disc, dprime, copy_of=split.copy_of
    )
    cfg = RoundingConfig(
        tau=tau, trace=sink, event_hook=event_hook, vertex_hook=vertex_hook
    )
    vertex, _events = pseudo_approximation(state, cfg)
    assembled = assemble_fractional_solution(state, vertex)
    opening = {}
    for copy, mass in sorted(vertex.values.items()):
        if mass > 0:
            parent = inst.metric.facility_ids[state.copy_of[copy]]
            opening[parent] = opening.get(parent, R(0)) + mass
    payload = {
        "opening": {fid: format_rational(m) for fid, m in sorted(opening.items())},
        "fractionalFacilities": len(vertex.fractional()),
        "lpObjective": format_rational(vertex.objective * inst.metric.scale),
    }
    return assembled.cost, payload


@click.group()
def main() -> None:
    """Iterative-rounding pipelines for generalized k-median."""
    _setup_logging()


@main.command()
@click.option("--kind", type=click.Choice(["gkm", "knapsack", "outliers"]),
              required=True)
@click.option("--instance", "instance_path", required=True,
              type=click.Path(exists=False))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--epsilon", default="1/10", show_default=True,
              help="Approximation slack as p/q (knapsack and outliers).")
@click.option("--tau", default=None, help="Discretization base as p/q.")
@click.option("--mode", type=click.Choice(["oracle", "enumerative"]),
              default="oracle", show_default=True)
@click.option("--trace", "trace_path", type=click.Path(), default=None,
              help="Write a JSONL audit trace for `verify`.")
@click.option("--verify-chains", is_flag=True,
              help="Decompose chains at every returned vertex.")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Worker processes for the oracle enumeration.")
def solve(kind, instance_path, seed, epsilon, tau, mode, trace_path,
          verify_chains, jobs):
    """Run a pipeline on an instance file and report the solution."""

    def body():
        inst = load_instance(instance_path, kind)
        try:
            tau_r = parse_rational(tau) if tau else _DEFAULT_TAUS[kind]
            eps_r = parse_rational(epsilon)
        except ValueError as exc:
            raise SchemaError(str(exc)) from exc
        metric = inst.metric

        counter = _InvariantCounter(None if kind == "gkm" else kind)
        chains = _ChainWatch() if verify_chains else None
        sink = TraceSink(trace_path) if trace_path else None
        recorder = _TraceRecorder(sink, kind) if sink else None
        event_hook = _chain_hooks(
            counter.on_event, recorder.on_event if recorder else None
        )
        vertex_hook = chains.on_vertex if chains else None
        if sink:
            sink.write({
                "type": "header",
                "kind": kind,
                "instance": os.path.basename(instance_path),
                "seed": seed,
                "epsilon": epsilon,
                "tau": format_rational(tau_r),
                "mode": mode,
            })

        try:
            if kind == "gkm":
                cost, payload = _run_gkm(
                    inst, seed, tau_r, sink, event_hook, vertex_hook
                )
            elif kind == "knapsack":
                solution = solve_knapsack(
                    inst, eps_r, seed, tau=tau_r, mode=mode, trace=sink,
                    event_hook=event_hook, vertex_hook=vertex_hook,
                )
                cost = solution.cost
                payload = solution.to_dict(metric)
                weight = sum((inst.w[i] for i in solution.open_facilities), R(0))
                payload["openWeight"] = format_rational(weight)
            else:
                solution = solve_outliers(
                    inst, eps_r, seed, tau=tau_r, mode=mode, trace=sink,
                    event_hook=event_hook, vertex_hook=vertex_hook,
                )
                cost = solution.cost
                payload = solution.to_dict(metric)
                payload["opened"] = len(solution.open_facilities)
                payload["servedCount"] = len(solution.served)
        finally:
            if sink:
                sink.close()

        report = {
            "command": "solve",
            "instance": os.path.basename(instance_path),
            "kind": kind,
            "seed": seed,
            "epsilon": epsilon,
            "tau": format_rational(tau_r),
            "mode": mode,
            "solution": payload,
            "invariantSummary": counter.summary(),
            "timings": {
                "events": counter.events,
                "invariantChecks": counter.checks,
            },
        }
        report.update(_cost_fields(cost, metric.scale))
        try:
            opt = brute_force(inst, jobs=jobs)
            report["timings"]["oracleEnumeration"] = opt.enumeration_count
            if opt.opt_cost > 0:
                report["ratioToOracle"] = format_rational(cost / opt.opt_cost)
                report["ratioToOracleDecimal"] = to_decimal_string(
                    cost / opt.opt_cost
                )
        except OracleError as exc:
            _LOG.info("oracle skipped: %s", exc)
        if chains is not None:
            report["chainStats"] = chains.rows
        if trace_path:
            report["trace"] = trace_path
        return report

    _guarded(body, trace_path)


@main.command()
@click.option("--instance", "instance_path", required=True, type=click.Path())
@click.option("--kind", type=click.Choice(["gkm", "knapsack", "outliers"]),
              default=None, help="Require the file to have this kind.")
@click.option("--jobs", type=int, default=1, show_default=True)
def oracle(instance_path, kind, jobs):
    """Brute-force optimum of an instance file."""

    def body():
        inst = load_instance(instance_path, kind)
        result = brute_force(inst, jobs=jobs)
        metric = inst.metric
        report = {
            "command": "oracle",
            "instance": os.path.basename(instance_path),
            "optOpenSet": [metric.facility_ids[i] for i in result.opt_open_set],
            "optServed": [metric.client_ids[j] for j in result.opt_served],
            "enumerationCount": result.enumeration_count,
            "optCost": format_rational(result.opt_cost * metric.scale),
            "optCostDecimal": to_decimal_string(result.opt_cost * metric.scale),
        }
        return report

    _guarded(body)


@main.command()
@click.option("--kind", type=click.Choice(["gkm", "knapsack", "outliers"]),
              required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--facilities", type=int, default=6, show_default=True)
@click.option("--clients", type=int, default=8, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--k", type=int, default=None, help="Open budget (outliers).")
@click.option("--m", type=int, default=None, help="Service target (outliers).")
@click.option("--budget", default=None, help="Weight budget p/q (knapsack).")
@click.option("--r1", type=int, default=1, show_default=True,
              help="Knapsack rows (gkm).")
@click.option("--r2", type=int, default=1, show_default=True,
              help="Coverage rows (gkm).")
def gen(kind, seed, facilities, clients, out_path, k, m, budget, r1, r2):
    """Write a deterministic random instance file."""

    def body():
        params = {}
        if kind == "outliers":
            if k is None or m is None:
                raise SchemaError("outliers generation requires --k and --m")
            params.update(k=k, m=m)
        elif kind == "knapsack":
            if budget is not None:
                params["budget"] = budget
        else:
            params.update(r1=r1, r2=r2)
        inst = generate_instance(seed, facilities, clients, kind, **params)
        save_instance(inst, out_path)
        return {
            "command": "gen",
            "kind": kind,
            "seed": seed,
            "facilities": facilities,
            "clients": clients,
            "path": out_path,
        }

    _guarded(body)


@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path())
def verify(trace_path):
    """Replay a solve trace, re-asserting every recorded invariant.

    Every state record is rebuilt from its context and swept with the basic
    (and, when present, sparsity) checkers; working-LP optima are re-solved
    and must be non-increasing within each context block.
    """

    def body():
        try:
            with open(trace_path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise SchemaError(f"cannot read trace {trace_path}: {exc}") from exc
        counter = _InvariantCounter()
        ctx = None
        ctx_kind = None
        last_objective = None
        records = {"context": 0, "state": 0, "event": 0, "solve": 0,
                   "header": 0, "other": 0}
        resolves = 0
        for lineno, line in enumerate(lines, 1):
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(
                    f"{trace_path}:{lineno}: not JSON: {exc}"
                ) from exc
            rtype = record.get("type")
            records[rtype if rtype in records else "other"] += 1
            if rtype == "context":
                ctx = record
                ctx_kind = record.get("kind")
                last_objective = None
                continue
            if rtype != "state":
                continue
            if ctx is None:
                raise SchemaError(
                    f"{trace_path}:{lineno}: state record before any context"
                )
            if "snapshot" not in record:
                raise SchemaError(
                    f"{trace_path}:{lineno}: state record without snapshot"
                )
            counter.extra_kind = ctx_kind if ctx_kind != "gkm" else None
            try:
                state = _state_from_trace(ctx, record["snapshot"])
                counter.on_event(state, None)
            except (ValueError, KeyError, IndexError) as exc:
                raise InvariantViolation(
                    f"{trace_path}:{lineno}: broken state record: {exc}"
                ) from exc
            failures = [
                name for name, slot in counter.counts.items() if slot["fail"]
            ]
            if failures:
                raise InvariantViolation(
                    f"{trace_path}:{lineno}: failed checks {failures}"
                )
            lp = emit_lp(state)
            objective = solve_to_vertex(lp).objective_value
            resolves += 1
            if last_objective is not None and objective > last_objective:
                raise InvariantViolation(
                    f"{trace_path}:{lineno}: working LP optimum rose from "
                    f"{format_rational(last_objective)} to "
                    f"{format_rational(objective)}"
                )
            last_objective = objective
        return {
            "command": "verify",
            "trace": trace_path,
            "records": records,
            "statesChecked": records["state"],
            "lpResolves": resolves,
            "invariantSummary": counter.summary(),
        }

    _guarded(body, trace_path)


def _bench_worker(args):
    data, kind, seed, epsilon, tau, mode = args
    inst = instance_from_dict(data)
    if kind == "knapsack":
        sol = solve_knapsack(inst, epsilon, seed, tau=parse_rational(tau),
                             mode=mode)
        return seed, format_rational(sol.cost)
    if kind == "outliers":
        sol = solve_outliers(inst, epsilon, seed, tau=parse_rational(tau),
                             mode=mode)
        return seed, format_rational(sol.cost)
    cost, _payload = _run_gkm(inst, seed, parse_rational(tau), None, None, None)
    return seed, format_rational(cost)


@main.command()
@click.option("--kind", type=click.Choice(["gkm", "knapsack", "outliers"]),
              required=True)
@click.option("--instance", "instance_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True,
              help="First seed of the range.")
@click.option("--trials", type=int, default=20, show_default=True)
@click.option("--epsilon", default="1/10", show_default=True)
@click.option("--tau", default=None)
@click.option("--mode", type=click.Choice(["oracle", "enumerative"]),
              default="oracle", show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
def bench(kind, instance_path, seed, trials, epsilon, tau, mode, jobs):
    """Cost/OPT statistics for a solver over a seed range."""

    def body():
        inst = load_instance(instance_path, kind)
        try:
            tau_r = parse_rational(tau) if tau else _DEFAULT_TAUS[kind]
            eps_r = parse_rational(epsilon)
        except ValueError as exc:
            raise SchemaError(str(exc)) from exc
        if trials < 1:
            raise SchemaError("need at least one trial")
        seeds = list(range(seed, seed + trials))
        opt = brute_force(inst)

        from .instance import instance_to_dict

        jobs_args = [
            (instance_to_dict(inst), kind, s, f"{eps_r}", format_rational(tau_r), mode)
            for s in seeds
        ]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(_bench_worker, jobs_args))
        else:
            rows = [_bench_worker(a) for a in jobs_args]
        costs = {s: parse_rational(c) for s, c in rows}

        stats = monte_carlo_ratio(
            lambda _inst, s: costs[s], inst, seeds=seeds, opt=opt.opt_cost
        )
        table = [
            {
                "seed": s,
                "cost": format_rational(costs[s] * inst.metric.scale),
                "ratio": format_rational(costs[s] / opt.opt_cost),
                "ratioDecimal": to_decimal_string(costs[s] / opt.opt_cost),
            }
            for s in seeds
        ]
        return {
            "command": "bench",
            "instance": os.path.basename(instance_path),
            "kind": kind,
            "mode": mode,
            "epsilon": epsilon,
            "tau": format_rational(tau_r),
            "trials": stats["trials"],
            "optCost": format_rational(opt.opt_cost * inst.metric.scale),
            "mean": format_rational(stats["mean"]),
            "meanDecimal": to_decimal_string(stats["mean"]),
            "max": format_rational(stats["max"]),
            "stddev": stats["stddev"],
            "table": table,
        }

    _guarded(body)


if __name__ == "__main__":
    main()
