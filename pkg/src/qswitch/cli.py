"""Command-line experiment runner.

Each subcommand reads a YAML config and writes CSV tables plus a
``summary.json`` into ``--out``.  Reruns of the same config produce identical
bytes.  Exit codes: 0 success, 2 config error, 3 numeric failure, 4 invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import enum
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from . import __version__
from .analysis import CHECKS, ScalingConfig, dominance_suite, scaled_deviation, scaled_run
from .config import load_config
from .fluid_model import FluidParams, classify_transient, merging_condition, solve_fluid, zero_hit_bound
from .rng import RandomStreams
from .stats import ConvergenceError, PreconditionError, TruncationError
from .two_way import (
    TwoWayParams,
    identity_tolerance,
    simulate_two_way,
    stationary_solve,
    throughput_exact,
    throughput_mc,
)
from .w_switch import (
    Mode,
    Policy,
    estimate_constants,
    extend_partials,
    region_grid,
    simulate_w,
)
from .y_switch import classify_y, simulate_y, y_capacity, y_success_rate

log = logging.getLogger("qswitch")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4


class InvariantViolation(Exception):
    pass


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.12g" % v
    if isinstance(v, enum.Enum):
        return v.value
    return v


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_summary(out: Path, command: str, cfg, results: dict) -> None:
    doc = {
        "artifact_version": __version__,
        "command": command,
        "config": cfg.model_dump(mode="json"),
        "seed": cfg.seed,
        "results": results,
    }
    text = json.dumps(_jsonable(doc), sort_keys=True, indent=2, ensure_ascii=False)
    (out / "summary.json").write_text(text + "\n", encoding="utf-8")


def _est(e):
    return {"value": e.value, "stderr": e.stderr, "method": e.method.value}


# ---------------------------------------------------------------------------
# commands


def cmd_twoway(cfg, out: Path, threads: int) -> dict:
    params = TwoWayParams(cfg.arr1.spec(), cfg.arr2.spec(), cfg.gamma1, cfg.gamma2)
    pi = stationary_solve(params, cfg.q_max)
    thr1, thr2 = throughput_exact(pi, params)
    tol = identity_tolerance(pi, params)
    mc = cfg.mc.build(cfg.seed, threads)
    est = throughput_mc(params, mc.horizon, mc.burn_slots, mc.replications, cfg.seed, threads, cfg.abandonment)
    write_csv(out / "stationary.csv", ["q", "probability"], zip(pi.support.tolist(), pi.probabilities))
    write_csv(out / "throughput.csv", ["method", "value", "stderr"], [
        ("exact_side1", thr1, 0.0), ("exact_side2", thr2, 0.0), ("monte_carlo", est.value, est.stderr)])
    res = {
        "throughput_side1": thr1, "throughput_side2": thr2,
        "identity_gap": abs(thr1 - thr2), "identity_tolerance": tol,
        "identity_holds": abs(thr1 - thr2) <= tol,
        "truncation_mass_bound": pi.truncation_mass_bound, "q_max": pi.q_max,
        "monte_carlo": _est(est),
        "monte_carlo_agrees": abs(est.value - 0.5 * (thr1 + thr2)) <= 3 * est.stderr + tol,
    }
    if not res["identity_holds"]:
        raise InvariantViolation(res)
    return res


def cmd_y(cfg, out: Path, threads: int) -> dict:
    params = cfg.params.build()
    cap = y_capacity(params)
    mc = cfg.mc.build(cfg.seed, threads)
    run = y_success_rate(params, mc)
    backlogged = y_success_rate(params, mc, backlogged=True)
    res = {
        "capacity": cap,
        "classification": classify_y(params, cap),
        "success_rate": _est(run.success_rate),
        "mean_requests": _est(run.mean_requests),
        "final_requests": run.final_requests,
        "backlogged_success_rate": _est(backlogged.success_rate),
    }
    if cfg.trajectory_slots:
        traj = simulate_y(params, cfg.trajectory_slots, RandomStreams(cfg.seed).spawn(10**6))
        _check_y_states(traj)
        write_csv(out / "trajectory.csv", ["t"] + traj.names,
                  ([k + 1] + [traj[n][k] for n in traj.names] for k in range(len(traj))))
    return res


def _check_y_states(traj) -> None:
    bad = np.flatnonzero((traj["n"] > 0) & (traj["q1"] > 0) & (traj["q2"] > 0))
    if len(bad):
        raise InvariantViolation(f"n*q1*q2 != 0 at slot {int(bad[0])}")


def cmd_w(cfg, out: Path, threads: int) -> dict:
    params = cfg.params.build()
    policy, mode = Policy.parse(cfg.policy), Mode(cfg.mode)
    traj = simulate_w(params, policy, mode, cfg.horizon, cfg.seed)
    burn = int(round(cfg.burn_in * cfg.horizon))
    res = {
        "success_rate_1": float(traj["successes1"][burn:].mean()),
        "success_rate_2": float(traj["successes2"][burn:].mean()),
        "priority_fraction_type1": float((traj["X"] == 0).mean()),
        "final_state": {n: int(traj[n][-1]) for n in ("n1", "n2", "q1", "q2", "q3")},
    }
    n1, n2, q1, q2, q3 = (traj[n] for n in ("n1", "n2", "q1", "q2", "q3"))
    if np.any((n1 > 0) & (q1 > 0) & (q2 > 0)) or np.any((n2 > 0) & (q2 > 0) & (q3 > 0)):
        raise InvariantViolation("state-space invariant broken")
    if mode is Mode.BACKLOG_BOTH:
        two = simulate_two_way(params.backlogged_two_way(), cfg.horizon, RandomStreams(cfg.seed))
        same = bool(np.array_equal(q1 + q3 - q2, two["q"]))
        res["two_way_equivalence"] = same
        if not same:
            raise InvariantViolation("backlogged W differs from its two-way reduction")
    rows = range(0, len(traj), cfg.record_every)
    write_csv(out / "trajectory.csv", ["t"] + traj.names,
              ([k + 1] + [traj[n][k] for n in traj.names] for k in rows))
    return res


def _constant_rows(constants):
    for name, e in constants.rows():
        yield name, e.value, e.stderr, e.method
    for lam, e in sorted(constants.c1_of.items()):
        yield f"c1_of({lam:.12g})", e.value, e.stderr, e.method
    for lam, e in sorted(constants.c2_of.items()):
        yield f"c2_of({lam:.12g})", e.value, e.stderr, e.method


def cmd_region(cfg, out: Path, threads: int) -> dict:
    params = cfg.params.build()
    mc = cfg.mc.build(cfg.seed, threads)
    constants = estimate_constants(params, mc)
    lam1_max = cfg.grid.lambda1_max or constants.c1_of[0.0].value
    lam2_max = cfg.grid.lambda2_max or constants.c2_of[0.0].value
    lam1 = np.linspace(0.0, lam1_max, cfg.grid.n1)
    lam2 = np.linspace(0.0, lam2_max, cfg.grid.n2)
    extend_partials(constants, params, mc, lam2, lam1, threads)
    cells = region_grid(constants, lam1, lam2, cfg.nsigma)
    write_csv(out / "constants.csv", ["name", "value", "stderr", "method"], _constant_rows(constants))
    write_csv(out / "region.csv", ["lambda1", "lambda2", "region", "stable", "case"],
              ((c.lambda1, c.lambda2, c.region, c.inequalities_hold, c.case) for c in cells))
    counts: dict = {}
    for c in cells:
        counts[c.region.value] = counts.get(c.region.value, 0) + 1
        counts[c.case] = counts.get(c.case, 0) + 1
    return {
        "constants": {name: _est(e) for name, e in constants.rows()},
        "grid": {"lambda1_max": lam1_max, "lambda2_max": lam2_max, "n1": cfg.grid.n1, "n2": cfg.grid.n2},
        "counts": counts,
    }


def cmd_fluid(cfg, out: Path, threads: int) -> dict:
    fp = FluidParams.from_bars(cfg.lambda1, cfg.lambda2, cfg.c12, cfg.c1_bar, cfg.c2_bar,
                               cfg.c1_of_lambda2, cfg.c2_of_lambda1)
    case = classify_transient(fp)
    path = solve_fluid(cfg.n0, fp, cfg.t_end)
    write_csv(out / "breakpoints.csv", ["t", "n1", "n2", "slope1", "slope2"], path.rows())
    if cfg.samples:
        ts = np.linspace(0.0, path.t_final, cfg.samples)
        vals = path.sample(ts)
        write_csv(out / "path.csv", ["t", "n1", "n2"], ((t, v[0], v[1]) for t, v in zip(ts, vals)))
    lhs, rhs = merging_condition(fp)
    res = {
        "case": case.label, "binding_index": None if case.binding_index is None else case.binding_index + 1,
        "merging_condition": {"lhs": lhs, "rhs": rhs},
        "breakpoints": path.breakpoints.tolist(),
        "zero_hit_time": path.zero_hit_time,
    }
    if fp.is_stable():
        res["zero_hit_bound"] = zero_hit_bound(cfg.n0, fp)
        if path.zero_hit_time is not None and path.zero_hit_time > res["zero_hit_bound"] * (1 + 1e-12):
            raise InvariantViolation("fluid path outlives its zero-hit bound")
    return res


def cmd_converge(cfg, out: Path, threads: int) -> dict:
    params = cfg.params.build()
    mc = cfg.mc.build(cfg.seed, threads)
    lam1, lam2 = params.lambdas
    constants = estimate_constants(params, mc, lambda2_values=[lam2], lambda1_values=[lam1])
    fp = FluidParams.from_constants(constants, lam1, lam2)
    scfg = ScalingConfig(tuple(cfg.k_values), cfg.n0, cfg.horizon, params, Policy.MAX_WEIGHT,
                         cfg.seed, cfg.replications, cfg.delta)
    records = scaled_deviation(scfg, fp, threads)
    write_csv(out / "constants.csv", ["name", "value", "stderr", "method"], _constant_rows(constants))
    write_csv(out / "deviation.csv", ["k", "deviation", "deviation_stderr", "qubit_sup"],
              ((r.k, r.deviation, r.deviation_stderr, r.qubit_sup) for r in records))
    rows = []
    for k in cfg.k_values:
        run = scaled_run(scfg, fp, k, 0)
        idx = np.unique(np.linspace(0, len(run.times) - 1, cfg.overlay_points).round().astype(int))
        rows += [(k, run.times[i], run.fluid[i, 0], run.fluid[i, 1], run.scaled_n[i, 0], run.scaled_n[i, 1],
                  run.scaled_q[i]) for i in idx]
    write_csv(out / "overlay.csv", ["k", "t", "fluid_n1", "fluid_n2", "scaled_n1", "scaled_n2", "scaled_qubits"], rows)
    return {
        "case": classify_transient(fp).label,
        "fluid_zero_hit_time": solve_fluid(cfg.n0, fp, cfg.horizon).zero_hit_time,
        "deviation": {str(r.k): r.deviation for r in records},
        "qubit_sup": {str(r.k): r.qubit_sup for r in records},
    }


def cmd_couple(cfg, out: Path, threads: int) -> dict:
    params = cfg.params.build()
    root = RandomStreams(cfg.seed)
    seeds = [int(root.spawn(r).master_seed) for r in range(cfg.runs)]
    totals = dominance_suite([params], seeds, cfg.horizon, threads)
    write_csv(out / "violations.csv", ["check", "violating_slots", "slots_checked"],
              ((c, totals[c], cfg.runs * (cfg.horizon + 1)) for c in CHECKS))
    verdicts = {c: totals[c] == 0 for c in CHECKS}
    res = {"violating_slots": totals, "verdicts": verdicts, "all_pass": all(verdicts.values())}
    if not res["all_pass"]:
        raise InvariantViolation(res)
    return res


COMMANDS = {
    "twoway": cmd_twoway,
    "y": cmd_y,
    "w": cmd_w,
    "region": cmd_region,
    "fluid": cmd_fluid,
    "converge": cmd_converge,
    "couple": cmd_couple,
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qswitch", description="Matching-queue experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.removeprefix("cmd_"))
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--out", default=None, help="output directory (default: results/<command>)")
        p.add_argument("--seed", type=_u64, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for replications")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.command, args.config, args.seed)
    except (OSError, yaml.YAMLError, ValidationError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or Path("results") / args.command)
    out.mkdir(parents=True, exist_ok=True)
    code = EXIT_OK
    try:
        results = COMMANDS[args.command](cfg, out, max(1, args.threads))
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        results = {"invariant_violation": exc.args[0] if exc.args else ""}
        code = EXIT_INVARIANT
    except (ConvergenceError, TruncationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PreconditionError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_summary(out, args.command, cfg, results)
    log.info("wrote %s", out)
    return code


if __name__ == "__main__":
    sys.exit(main())
