"""Command-line harness: ``snc80211 <command> scenario.toml [options]``.

Commands: solve, fit, bound, simulate, experiment, sweep.  ``--format``
selects what goes to stdout; with ``--out`` (or ``$SNC80211_OUT``) the JSON
report and every CSV table are also written there.  Exit codes: 0 success
(an unstable scenario is a valid answer), 1 usage or scenario-file error,
2 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfg
from .bounds import (check_stability, delay_mean_bound, delay_tail_bound, impairment_constraint,
                     optimize_backlog_tail, stability_input)
from .dcf import slot_length, solve_fixed_point, stability_threshold
from .sim import run_experiment
from .traffic import TrafficModel

ENV_OUT = "SNC80211_OUT"
CSV_COLUMNS = ("x", "analytical_bound", "empirical_tail")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _num(v):
    """JSON/CSV-safe scalar."""
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    return _num(obj)


def _cell(v) -> str:
    v = _num(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------- pipelines

def solve_section(sf: cfg.ScenarioFile) -> dict:
    t0 = time.perf_counter()
    sol = solve_fixed_point(sf.scenario)
    elapsed = time.perf_counter() - t0
    timing = slot_length(sf.scenario)
    return {
        "tau": sol.tau, "gamma": sol.gamma, "p_nt": sol.p_nt, "p_t": sol.p_t,
        "p_s": sol.p_s, "p_o": sol.p_o, "L": sol.L, "L_int": sol.L_int,
        "slot_seconds": timing.slot_us * 1e-6,
        "stability_threshold": stability_threshold(sol),
        "durations_us": {"difs": timing.difs, "data": timing.data, "sifs": timing.sifs,
                         "ack": timing.ack, "idle_slot": timing.idle_slot},
        "runtime_s": elapsed,
    }


def fit_section(sf: cfg.ScenarioFile, thetas) -> list:
    sol = solve_fixed_point(sf.scenario)
    out = []
    for theta in thetas:
        env = impairment_constraint(sol, float(theta), sf.bound.epsilon, sf.bound.t_max)
        fit = env.fit
        out.append({"theta": env.theta, "sigma": fit.sigma, "rho": fit.rho,
                    "t_star": fit.t_star, "v_m": fit.v_m, "converged": fit.converged,
                    "certified_sigma": env.sigma, "certified_rho": env.rho})
    return out


def bound_section(sf: cfg.ScenarioFile) -> dict:
    """Backlog tail, expected backlog and the Little/Markov delay bounds."""
    if sf.traffic is None:
        raise UsageError("bound needs a [traffic] table (saturated scenarios have no arrival process)")
    sol = solve_fixed_point(sf.scenario)
    stab = stability_input(sf.traffic, sol)
    stable = check_stability(stab)
    b = sf.bound
    slot_s = slot_length(sf.scenario).slot_us * 1e-6
    t0 = time.perf_counter()
    rep = optimize_backlog_tail(sf.traffic, sol, b.x_grid, theta_min=b.theta_min, theta_max=b.theta_max,
                                theta_points=b.theta_points, epsilon=b.epsilon, t_max=b.t_max,
                                tol=b.tol, max_sweeps=b.max_sweeps, i_max=b.i_max)
    elapsed = time.perf_counter() - t0
    lam = sf.traffic.lam
    eb = rep.expected_backlog
    out = {
        "stable": stable, "a_A": stab.a_A, "c_minus_a_I": stab.c - stab.a_I,
        "verdict": "stable" if stable else "unstable",
        "feasible": rep.feasible, "sweeps": rep.sweeps, "notes": list(rep.notes),
        "x": [int(v) if float(v).is_integer() else float(v) for v in rep.x],
        "tail": rep.tail, "raw": rep.raw, "theta1": rep.theta1, "theta2": rep.theta2,
        "r_A": rep.r_A, "r_I": rep.r_I,
        "expected_backlog_bound": eb,
        "mean_delay_bound_s": delay_mean_bound(eb, lam) * slot_s if lam > 0 and math.isfinite(eb) else None,
        "runtime_s": elapsed,
    }
    return out


def sim_section(sf: cfg.ScenarioFile, workers: int) -> tuple:
    t0 = time.perf_counter()
    res = run_experiment(sf.sim, workers)
    elapsed = time.perf_counter() - t0
    x = np.arange(sf.bound.x_max + 1)
    xd = np.arange(1, sf.bound.x_max + 1)
    out = {
        "replications": sf.sim.replications, "duration_s": sf.sim.duration, "snapshot_s": sf.sim.snapshot,
        "seed": sf.sim.seed, "slot_seconds": res.slot_seconds,
        "mean_backlog": res.mean_backlog, "time_avg_backlog": res.time_avg_backlog,
        "mean_delay_s": res.mean_delay, "mean_sojourn_s": res.mean_sojourn,
        "per_node_throughput": res.per_node_throughput, "drops": res.drops,
        "attempts": res.attempts, "collisions": res.collisions, "tau": res.tau, "gamma": res.gamma,
        "censored_fraction": res.censored_fraction, "flagged": res.flagged,
        "x": x, "backlog_tail": res.backlog_tail(x),
        "delay_x": xd, "delay_tail": res.delay_tail(xd),
        "runtime_s": elapsed,
    }
    return out, res


def markov_rows(eb: float, lam: float, xd):
    if lam <= 0 or not math.isfinite(eb):
        return [1.0] * len(xd)
    return [float(delay_tail_bound(eb, lam, int(v))) for v in xd]


# ---------------------------------------------------------------- commands

def cmd_solve(sf, args):
    s = solve_section(sf)
    flat = [(k, v) for k, v in s.items() if k not in ("durations_us", "runtime_s")]
    return {"solve": s}, {"solve.csv": csv_text(("quantity", "value"), flat)}


def cmd_fit(sf, args):
    rows = fit_section(sf, args.theta or [1.0])
    cols = ("theta", "sigma", "rho", "t_star", "v_m", "converged", "certified_sigma", "certified_rho")
    return {"fit": rows}, {"fit.csv": csv_text(cols, [[r[c] for c in cols] for r in rows])}


def cmd_bound(sf, args):
    b = bound_section(sf)
    lam = sf.traffic.lam
    xd = list(range(1, sf.bound.x_max + 1))
    md = markov_rows(b["expected_backlog_bound"], lam, xd)
    b["delay_x"], b["markov_delay_tail"] = xd, md
    tables = {
        "backlog.csv": csv_text(CSV_COLUMNS, [(x, t, None) for x, t in zip(b["x"], b["tail"])]),
        "delay.csv": csv_text(CSV_COLUMNS, [(x, m, None) for x, m in zip(xd, md)]),
    }
    return {"solve": solve_section(sf), "bound": b}, tables


def cmd_simulate(sf, args):
    s, _ = sim_section(sf, args.workers)
    tables = {
        "backlog.csv": csv_text(CSV_COLUMNS, [(x, None, t) for x, t in zip(s["x"], s["backlog_tail"])]),
        "delay.csv": csv_text(CSV_COLUMNS, [(x, None, t) for x, t in zip(s["delay_x"], s["delay_tail"])]),
    }
    return {"simulate": s}, tables


def verdicts(b: dict, s: dict, lam: float) -> dict:
    """Dominance verdicts recomputable from the numbers in the report."""
    backlog_ok = bool(np.all(np.asarray(b["tail"]) >= np.asarray(s["backlog_tail"])))
    eb = s["time_avg_backlog"]
    md = markov_rows(eb, lam, s["delay_x"])
    markov_ok = bool(np.all(np.asarray(md) >= np.asarray(s["delay_tail"])))
    little = eb / lam * s["slot_seconds"] if lam > 0 else 0.0
    ed = s["mean_sojourn_s"]
    rel = abs(little - ed) / ed if ed > 0 else 0.0
    return {
        "backlog_dominance": backlog_ok,
        "markov_delay_dominance": markov_ok,
        "markov_delay_tail": md,
        "little": {"EB_over_lambda_s": little, "measured_delay_s": ed, "relative_gap": rel,
                   "dominates": little >= ed, "informational": True},
    }


def cmd_experiment(sf, args):
    if sf.traffic is None:
        raise UsageError("experiment needs a [traffic] table")
    b = bound_section(sf)
    s, _ = sim_section(sf, args.workers)
    v = verdicts(b, s, sf.traffic.lam)
    tables = {
        "backlog.csv": csv_text(CSV_COLUMNS, list(zip(b["x"], b["tail"], s["backlog_tail"]))),
        "delay.csv": csv_text(CSV_COLUMNS, list(zip(s["delay_x"], v["markov_delay_tail"], s["delay_tail"]))),
    }
    return {"solve": solve_section(sf), "bound": b, "simulate": s, "verdicts": v}, tables


def cmd_sweep(sf, args):
    if not sf.sweep:
        raise UsageError("sweep needs a [sweep] table with lam = [...]")
    kind = sf.traffic.kind if sf.traffic is not None else "poisson"
    sol = solve_fixed_point(sf.scenario)
    rows, points = [], []
    for lam in sf.sweep:
        traffic = TrafficModel(kind, lam)
        scenario = dataclasses.replace(sf.scenario, traffic=traffic)
        one = dataclasses.replace(sf, scenario=scenario, sim=dataclasses.replace(sf.sim, scenario=scenario))
        stable = check_stability(stability_input(traffic, sol))
        s, _ = sim_section(one, args.workers)
        points.append({"lam": lam, "stable": stable, "mean_backlog": s["mean_backlog"],
                       "time_avg_backlog": s["time_avg_backlog"], "mean_sojourn_s": s["mean_sojourn_s"],
                       "per_node_throughput": s["per_node_throughput"]})
        rows.append([points[-1][k] for k in ("lam", "stable", "mean_backlog", "time_avg_backlog",
                                             "mean_sojourn_s", "per_node_throughput")])
    cols = ("lam", "stable", "mean_backlog", "time_avg_backlog", "mean_sojourn_s", "per_node_throughput")
    return ({"sweep": {"kind": kind, "stability_threshold": stability_threshold(sol), "points": points}},
            {"sweep.csv": csv_text(cols, rows)})


COMMANDS = {
    "solve": cmd_solve, "fit": cmd_fit, "bound": cmd_bound,
    "simulate": cmd_simulate, "experiment": cmd_experiment, "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="snc80211", description="802.11 DCF backlog and delay bounds with a validating simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("scenario", help="TOML scenario file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replications", type=int)
        sp.add_argument("--duration", type=float, help="seconds")
        sp.add_argument("--snapshot", type=float, help="seconds")
        sp.add_argument("--workers", type=int, default=1, help="parallel replications")
        sp.add_argument("--out", help=f"output directory (default ${ENV_OUT})")
        sp.add_argument("--format", choices=("csv", "json"), default="json", help="stdout format")
        if name == "fit":
            sp.add_argument("--theta", type=float, action="append", help="repeatable; default 1.0")
    return p


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        sf = cfg.load(args.scenario)
        if args.duration is not None and args.snapshot is None and sf.sim.snapshot > args.duration:
            args.snapshot = args.duration / 2
        try:
            sf = sf.with_sim(seed=args.seed, replications=args.replications,
                             duration=args.duration, snapshot=args.snapshot)
        except ValueError as exc:
            raise cfg.ConfigError(f"command line: {exc}") from None
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        report, tables = COMMANDS[args.command](sf, args)
    except (cfg.ConfigError, UsageError, OSError) as exc:
        print(f"snc80211: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is a broken invariant
        print(f"snc80211: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    doc = _jsonable({"command": args.command, "scenario": sf.to_dict(), **report})
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.format == "json":
        stdout.write(text)
    else:
        for name in sorted(tables):
            if len(tables) > 1:
                stdout.write(f"# {name}\n")
            stdout.write(tables[name])
    out = args.out or os.environ.get(ENV_OUT)
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{args.command}.json").write_text(text, encoding="utf-8")
        for name, body in tables.items():
            (d / name).write_text(body, encoding="utf-8")
    return 0


def main():
    raise SystemExit(run())


if __name__ == "__main__":
    main()
