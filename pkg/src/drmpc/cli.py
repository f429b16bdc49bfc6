"""Command-line entry point: ``drmpc simulate | solve | bounds | audit``.

Exit codes: 0 success, 1 audit found failing margins, 2 configuration or
usage error, 3 structural precondition failed, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .ambiguity import MomentBounds
from .analysis import (
    AUDIT_COLUMNS,
    Trajectory,
    asymptotic_bound,
    audit_trajectory,
    compute_constants,
    gelbrich_report,
    write_audit_csv,
)
from .config import load_config
from .cutting_plane import run_cutting_plane
from .errors import ConfigError, ContractionWarning, SolverError, StructuralError
from .simulator import Controller, read_run_csv, run_scenario, write_scenario

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_STRUCTURAL, EXIT_SOLVER = 0, 1, 2, 3, 4
ECHO_NAME = "config.json"


def _emit(payload: dict, as_json: bool, out=None):
    out = out or sys.stdout
    if as_json:
        print(json.dumps(payload, indent=2, default=float), file=out)
        return
    for key, value in payload.items():
        if isinstance(value, dict):
            print(f"{key}:", file=out)
            for k, v in value.items():
                print(f"  {k}: {v}", file=out)
        else:
            print(f"{key}: {value}", file=out)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    problem = cfg.build_problem()
    scenario = cfg.scenario_config(args.scenario, runs=args.runs, steps=args.steps, seed=args.seed)
    out = Path(args.out or cfg.output.dir)
    controller = Controller(problem, cfg.solver_config(), warm_start=cfg.solver.warm_start)
    logs, stats = run_scenario(problem, scenario, controller)
    out.mkdir(parents=True, exist_ok=True)
    # the echo records the scenario actually run, so reloading it reproduces the CSVs
    cfg.scenario.name = scenario.name
    cfg.scenario.runs, cfg.scenario.steps, cfg.scenario.seed = scenario.runs, scenario.steps, scenario.seed
    (out / ECHO_NAME).write_text(cfg.echo())
    paths, agg = write_scenario(out, logs, stats, problem)
    failed = [log.run for log in logs if log.failed]
    _emit({
        "scenario": scenario.name, "runs": scenario.runs, "steps": scenario.steps,
        "output": str(out), "aggregate": str(agg), "failed_runs": failed,
        "violation_rate": float(np.mean([s.violation_rate for s in stats])),
        "max_norm": float(max(s.max_norm for s in stats)),
    }, args.json)
    for log in logs:
        if log.failed:
            print(f"run {log.run} failed: {log.error}", file=sys.stderr)
    return EXIT_SOLVER if failed else EXIT_OK


def _parse_state(text: str, n_x: int) -> np.ndarray:
    try:
        x = np.array([float(v) for v in text.replace(",", " ").split()], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"state must be {n_x} numbers, got {text!r}") from exc
    if x.size != n_x or not np.all(np.isfinite(x)):
        raise ConfigError(f"state must be {n_x} finite numbers, got {text!r}")
    return x


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    problem = cfg.build_problem()
    x = _parse_state(args.state, problem.plant.n_x)
    samples = np.zeros((problem.ambiguity.n, problem.n_w_bar))
    res = run_cutting_plane(x, samples, problem, cfg.solver_config())
    z_N = problem.lifted.terminal_state(x, res.u_bar)
    slack = problem.l_c * float(x @ x) - float(z_N @ z_N)
    d = res.diagnostics
    _emit({
        "state": x.tolist(), "plan": res.u_bar.tolist(), "gamma": res.gamma, "J": res.J,
        "upper_value": d.upper_value, "terminal_slack": slack,
        "terminal_active": bool(slack <= 1e-6 * max(1.0, problem.l_c * float(x @ x))),
        "diagnostics": {"termination": d.termination, "outer_iterations": d.outer_iterations,
                        "master_solves": d.master_solves, "cuts": d.cuts,
                        "supports": len(res.supports), "wall_time": d.wall_time},
    }, args.json)
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg = load_config(args.config)
    problem = cfg.build_problem()
    scenario = cfg.scenario_config(args.scenario)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ContractionWarning)
        consts = compute_constants(problem)
    n_w = problem.plant.n_w
    Sigma = scenario.Sigma_bar(n_w)
    bound = asymptotic_bound(consts, problem.ambiguity.epsilon, scenario.mu_bar, float(np.trace(Sigma)))
    report = gelbrich_report(problem.ambiguity, MomentBounds(scenario.mu_bar, Sigma), problem.N)
    _emit({
        "scenario": scenario.name,
        "constants": consts.as_dict(),
        "bound": bound.as_dict(),
        "worst_case_moments": {"mean_bound": report.mean_bound, "trace_bound": report.trace_bound},
        "warnings": [str(w.message) for w in caught],
    }, args.json)
    return EXIT_OK


def cmd_audit(args) -> int:
    log_dir = Path(args.log_dir)
    runs = sorted(log_dir.glob("run_*.csv")) if log_dir.is_dir() else []
    if not runs:
        raise ConfigError(f"no run_*.csv logs in {log_dir}")
    config_path = Path(args.config) if args.config else log_dir / ECHO_NAME
    if not config_path.exists():
        raise ConfigError(f"no configuration given and {config_path} does not exist")
    problem = load_config(config_path).build_problem()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ContractionWarning)
        consts = compute_constants(problem)
    reports = {}
    for path in runs:
        try:
            traj = Trajectory.from_columns(read_run_csv(path), problem)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{path}: unreadable log ({exc})") from exc
        reports[path.stem] = audit_trajectory(problem, traj, consts)
    out = Path(args.out) if args.out else log_dir / "audit.csv"
    write_audit_csv(out, reports)
    flagged = {name: {c: rep.failures(c).tolist() for c in AUDIT_COLUMNS[1:] if rep.failures(c).size}
               for name, rep in reports.items()}
    flagged = {k: v for k, v in flagged.items() if v}
    summary = {c: min((rep.minimum(c) for rep in reports.values()), default=float("nan"))
               for c in AUDIT_COLUMNS[1:]}
    _emit({"runs": len(reports), "audit_csv": str(out), "min_margins": summary,
           "flagged": flagged}, args.json)
    return EXIT_AUDIT if flagged else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drmpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="closed-loop Monte-Carlo runs to CSV")
    sim.add_argument("--config", required=True)
    sim.add_argument("--scenario", help="nominal, a, b, c, d or custom (default from config)")
    sim.add_argument("--runs", type=int)
    sim.add_argument("--steps", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out")
    sim.add_argument("--json", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    solve = sub.add_parser("solve", help="one controller solve with zero samples")
    solve.add_argument("--config", required=True)
    solve.add_argument("--state", required=True, help='comma separated; write --state=-5,-2 when it starts with a minus')
    solve.add_argument("--json", action="store_true")
    solve.set_defaults(func=cmd_solve)

    bounds = sub.add_parser("bounds", help="stability constants and the average-cost bound")
    bounds.add_argument("--config", required=True)
    bounds.add_argument("--scenario")
    bounds.add_argument("--json", action="store_true")
    bounds.set_defaults(func=cmd_bounds)

    audit = sub.add_parser("audit", help="per-step inequality margins of logged runs")
    audit.add_argument("log_dir")
    audit.add_argument("--config", help=f"defaults to <log_dir>/{ECHO_NAME}")
    audit.add_argument("--out")
    audit.add_argument("--json", action="store_true")
    audit.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StructuralError as exc:
        print(f"structural check failed: {exc}", file=sys.stderr)
        return EXIT_STRUCTURAL
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
