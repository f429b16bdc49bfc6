"""Run the nominal case and the four disturbance scenarios of the benchmark.

Writes one directory per scenario (per-run CSVs, ``aggregate.csv``,
``audit.csv`` and the ``config.json`` echo) under ``--out`` and prints a
summary table. Usage::

    python scripts/run_scenarios.py --out results --runs 20 --steps 100
"""

import argparse
import time
import warnings
from pathlib import Path

import numpy as np

from drmpc.analysis import (
    Trajectory,
    asymptotic_bound,
    audit_trajectory,
    average_cost_vs_bound,
    compute_constants,
    write_audit_csv,
)
from drmpc.config import load_config
from drmpc.errors import ContractionWarning
from drmpc.simulator import Controller, run_scenario, write_scenario

DEFAULT_CONFIG = Path(__file__).parents[1] / "src" / "drmpc" / "configs" / "benchmark.toml"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--out", default="results")
    parser.add_argument("--runs", type=int, default=20)
    parser.add_argument("--steps", type=int, default=100)
    parser.add_argument("--scenarios", default="nominal,a,b,c,d")
    args = parser.parse_args()

    cfg = load_config(args.config)
    problem = cfg.build_problem()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ContractionWarning)
        consts = compute_constants(problem)

    header = f"{'scenario':>8} {'viol.rate':>9} {'max|x|':>7} {'max viol':>8} {'avg cost':>9} {'bound':>10} {'min audit':>10} {'s/step':>7}"
    print(header)
    for name in args.scenarios.split(","):
        scenario = cfg.scenario_config(name, runs=args.runs, steps=args.steps)
        controller = Controller(problem, cfg.solver_config(), warm_start=cfg.solver.warm_start)
        t0 = time.perf_counter()
        logs, stats = run_scenario(problem, scenario, controller)
        per_step = (time.perf_counter() - t0) / max(1, sum(len(l.records) for l in logs))

        out = Path(args.out) / name
        cfg.scenario.name, cfg.scenario.runs, cfg.scenario.steps = name, args.runs, args.steps
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.echo())
        write_scenario(out, logs, stats, problem)
        reports = {f"run_{l.run:03d}": audit_trajectory(problem, Trajectory.from_log(l), consts)
                   for l in logs}
        write_audit_csv(out / "audit.csv", reports)

        bound = asymptotic_bound(consts, problem.ambiguity.epsilon, scenario.mu_bar,
                                 float(np.trace(scenario.Sigma_bar(problem.plant.n_w))))
        burn_in = min(10, args.steps - 1)
        cost = average_cost_vs_bound(logs, bound, burn_in=burn_in)
        audit_min = min(r.minimum(c) for r in reports.values()
                        for c in ("cost_upper_bound", "cost_recursion", "penalty_bound"))
        print(f"{name:>8} {np.mean([s.violation_rate for s in stats]):9.4f} "
              f"{max(s.max_norm for s in stats):7.3f} {max(s.max_violation for s in stats):8.4f} "
              f"{cost.average_cost:9.4f} {bound.total:10.4g} {audit_min:10.3g} {per_step:7.3f}")


if __name__ == "__main__":
    main()
