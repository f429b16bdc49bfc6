"""Closed-loop Monte-Carlo simulation of the distributionally robust controller.

Each run starts from a fixed state, draws fresh true disturbance moments at
every step (or once per run), applies the first planned input through the
pre-stabilizing gain and records one :class:`StepRecord` per time step.
The controller only ever sees disturbances reconstructed from past states.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import special_ortho_group

from .ambiguity import build_empirical
from .convex import SolverOptions
from .cutting_plane import CuttingPlaneConfig, run_cutting_plane
from .errors import ConfigError, ControllerError
from .reformulation import TsdrProblem

# (mean half-width, covariance scale) per named scenario
SCENARIOS = {
    "nominal": (0.0, 0.0),
    "a": (0.0, 0.1),
    "b": (0.5, 0.1),
    "c": (0.0, 0.5),
    "d": (0.5, 0.5),
}

VIOLATION_TOL = 1e-9


@dataclass
class ScenarioConfig:
    """Disturbance statistics and run layout for one Monte-Carlo study."""

    mu0: float
    sigma0: float
    runs: int = 20
    steps: int = 100
    seed: int = 0
    x0: tuple = (-5.0, -2.0)
    window: int = 50
    per_step_moments: bool = True
    name: str = "custom"

    def __post_init__(self):
        if self.mu0 < 0 or self.sigma0 < 0:
            raise ConfigError("mu0 and sigma0 must be nonnegative")
        if self.runs < 1 or self.steps < 1 or self.window < 1:
            raise ConfigError("runs, steps and window must be positive")

    @classmethod
    def named(cls, name, **overrides) -> "ScenarioConfig":
        if name not in SCENARIOS:
            raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
        mu0, sigma0 = SCENARIOS[name]
        return cls(mu0=mu0, sigma0=sigma0, name=name, **overrides)

    @property
    def mu_bar(self) -> float:
        """Bound on the mean norm: the half-width box has diagonal ``sqrt(2) mu0``."""
        return float(np.sqrt(2.0) * self.mu0)

    def Sigma_bar(self, n_w=2) -> np.ndarray:
        return self.sigma0 * np.eye(n_w)


def sample_true_moments(mu0, sigma0, n_w, rng):
    """Mean uniform on ``[-mu0, mu0]^n_w``; covariance with eigenvalues uniform on ``[0, sigma0^2]``."""
    mu = rng.uniform(-mu0, mu0, size=n_w)
    lam = rng.uniform(0.0, sigma0 ** 2, size=n_w)
    R = special_ortho_group.rvs(n_w, random_state=rng) if n_w > 1 else np.ones((1, 1))
    Sigma = R.T @ np.diag(lam) @ R
    return mu, 0.5 * (Sigma + Sigma.T)


def sample_disturbance(mu, Sigma, rng) -> np.ndarray:
    """Gaussian draw through a symmetric square root, so singular covariances are fine."""
    lam, V = np.linalg.eigh(Sigma)
    root = V * np.sqrt(np.clip(lam, 0.0, None))
    return mu + root @ rng.standard_normal(mu.size)


class Controller:
    """Receding-horizon wrapper around the cutting-plane solver.

    With ``warm_start`` the supports that are tight at one step's solution
    seed the next one.
    Call :meth:`reset` between independent trajectories so that each run
    depends only on its own history.
    """

    def __init__(self, problem: TsdrProblem, config: CuttingPlaneConfig | None = None,
                 solver_options: SolverOptions | None = None, warm_start: bool = True):
        self.problem = problem
        self.config = config or CuttingPlaneConfig()
        self.solver_options = solver_options
        self.warm_start = warm_start
        self._supports = []

    def reset(self):
        self._supports = []

    def solve(self, x, samples):
        res = run_cutting_plane(x, samples, self.problem, self.config, self.solver_options,
                                warm_start=self._supports)
        if self.warm_start:
            self._supports = res.tight_supports
        return res


@dataclass
class StepRecord:
    k: int
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    J: float
    gamma: float
    outer_iterations: int
    cuts: int
    margins: np.ndarray
    plan: np.ndarray
    master_solves: int = 0
    monotone_violation: float = 0.0
    upper_value: float = np.nan
    terminal_slack: float = 0.0
    stage_cost: float = np.nan


@dataclass
class TrajectoryLog:
    """One run: ``steps`` control records plus the final state."""

    run: int
    records: list = field(default_factory=list)
    final_state: np.ndarray | None = None
    failed: bool = False
    error: str = ""

    @property
    def states(self) -> np.ndarray:
        xs = [r.x for r in self.records]
        if self.final_state is not None:
            xs.append(self.final_state)
        return np.array(xs)


@dataclass
class RunStats:
    run: int
    failed: bool
    steps: int
    violation_rate: float
    row_violation_rates: np.ndarray
    max_violation: float
    final_norm: float
    max_norm: float
    max_abs_u: float
    average_stage_cost: float


def constraint_margins(problem: TsdrProblem, x) -> np.ndarray:
    """Per-row ``F0 x + G0``; positive entries are violations."""
    return problem.lifted.F0 @ x + problem.lifted.G0


def step(x, controller: Controller, w, samples):
    """Solve at ``x``, apply the first planned input and propagate with disturbance ``w``."""
    problem = controller.problem
    res = controller.solve(x, samples)
    n_u = problem.system.n_u
    v = res.u_bar[:n_u]
    u = problem.system.physical_input(x, v)
    x_next = problem.plant.step(x, u, w)
    d = res.diagnostics
    rec = StepRecord(
        k=0, x=x.copy(), u=u, v=v, w=np.asarray(w, dtype=float), J=res.J, gamma=res.gamma,
        outer_iterations=d.outer_iterations, cuts=d.cuts,
        margins=constraint_margins(problem, x), plan=res.u_bar.copy(),
        master_solves=d.master_solves, monotone_violation=d.monotone_violation,
        upper_value=d.upper_value, terminal_slack=d.terminal_slack,
        stage_cost=problem.weights.stage_cost(x, u),
    )
    return x_next, rec


def simulate_run(problem: TsdrProblem, scenario: ScenarioConfig, run_index: int,
                 controller: Controller | None = None) -> TrajectoryLog:
    """One seeded closed-loop trajectory; a controller failure ends and marks the run."""
    controller = controller or Controller(problem)
    controller.reset()
    rng = np.random.default_rng(scenario.seed + run_index)
    n_w = problem.plant.n_w
    log = TrajectoryLog(run=run_index)
    x = np.asarray(scenario.x0, dtype=float)
    history: list = []
    mu, Sigma = sample_true_moments(scenario.mu0, scenario.sigma0, n_w, rng)
    for k in range(scenario.steps):
        if scenario.per_step_moments and k > 0:
            mu, Sigma = sample_true_moments(scenario.mu0, scenario.sigma0, n_w, rng)
        w = sample_disturbance(mu, Sigma, rng)
        samples = build_empirical(history[-scenario.window:], problem.ambiguity.n, problem.N,
                                  rng, n_w=n_w)
        try:
            x_next, rec = step(x, controller, w, samples)
        except ControllerError as exc:
            log.failed = True
            log.error = f"step {k}: {exc}"
            log.final_state = x
            return log
        rec.k = k
        log.records.append(rec)
        # past disturbances are measured; recovering them from the state update instead
        # would add roundoff that makes zero-disturbance runs depend on the seed
        history.append(np.asarray(w, dtype=float))
        x = x_next
    log.final_state = x
    return log


def run_stats(log: TrajectoryLog, problem: TsdrProblem) -> RunStats:
    states = log.states
    margins = np.array([constraint_margins(problem, s) for s in states])
    violated = margins > VIOLATION_TOL
    norms = np.linalg.norm(states, axis=1)
    us = np.array([r.u for r in log.records]) if log.records else np.zeros((0, 1))
    costs = [r.stage_cost for r in log.records]
    return RunStats(
        run=log.run, failed=log.failed, steps=len(log.records),
        violation_rate=float(np.mean(violated.any(axis=1))),
        row_violation_rates=violated.mean(axis=0),
        max_violation=float(max(0.0, margins.max())),
        final_norm=float(norms[-1]), max_norm=float(norms.max()),
        max_abs_u=float(np.abs(us).max(initial=0.0)),
        average_stage_cost=float(np.mean(costs)) if costs else np.nan,
    )


def run_scenario(problem: TsdrProblem, scenario: ScenarioConfig,
                 controller: Controller | None = None):
    """All runs of a scenario in index order; returns ``(logs, stats)``."""
    controller = controller or Controller(problem)
    logs = [simulate_run(problem, scenario, i, controller) for i in range(scenario.runs)]
    return logs, [run_stats(log, problem) for log in logs]


def csv_columns(problem: TsdrProblem) -> list:
    n_x, n_u, n_w = problem.plant.n_x, problem.plant.n_u, problem.plant.n_w

    def names(prefix, n):
        return [prefix] if n == 1 else [f"{prefix}{i + 1}" for i in range(n)]

    cols = ["k"] + [f"x{i + 1}" for i in range(n_x)] + names("u", n_u) + names("v", n_u)
    cols += [f"w{i + 1}" for i in range(n_w)] + ["J", "gamma", "iters", "cuts"]
    cols += [f"viol_margin_{i + 1}" for i in range(problem.lifted.n_c)]
    cols += [f"plan_{i + 1}" for i in range(problem.n_u_bar)]
    cols += ["master_solves", "monotone_violation", "upper_value", "terminal_slack",
             "stage_cost"]
    return cols


def _fmt(v) -> str:
    return repr(float(v))


def write_run_csv(path, log: TrajectoryLog, problem: TsdrProblem):
    """Per-step rows, then one row holding only ``k`` and the final state."""
    cols = csv_columns(problem)
    n_x = problem.plant.n_x
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for r in log.records:
            row = [str(r.k)] + [_fmt(v) for v in r.x] + [_fmt(v) for v in r.u]
            row += [_fmt(v) for v in r.v] + [_fmt(v) for v in r.w]
            row += [_fmt(r.J), _fmt(r.gamma), str(r.outer_iterations), str(r.cuts)]
            row += [_fmt(v) for v in r.margins] + [_fmt(v) for v in r.plan]
            row += [str(r.master_solves), _fmt(r.monotone_violation), _fmt(r.upper_value),
                    _fmt(r.terminal_slack), _fmt(r.stage_cost)]
            wr.writerow(row)
        if log.final_state is not None:
            tail = [""] * len(cols)
            tail[0] = str(len(log.records))
            tail[1:1 + n_x] = [_fmt(v) for v in log.final_state]
            margins = constraint_margins(problem, log.final_state)
            start = cols.index("viol_margin_1")
            tail[start:start + margins.size] = [_fmt(v) for v in margins]
            wr.writerow(tail)


AGGREGATE_COLUMNS = ["run", "failed", "steps", "violation_rate", "max_violation", "final_norm",
                     "max_norm", "max_abs_u", "average_stage_cost"]


def write_aggregate_csv(path, stats: list, problem: TsdrProblem, errors=None):
    n_c = problem.lifted.n_c
    cols = AGGREGATE_COLUMNS + [f"viol_rate_{i + 1}" for i in range(n_c)] + ["error"]
    errors = errors or {}
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for s in stats:
            wr.writerow([s.run, int(s.failed), s.steps, _fmt(s.violation_rate),
                         _fmt(s.max_violation), _fmt(s.final_norm), _fmt(s.max_norm),
                         _fmt(s.max_abs_u), _fmt(s.average_stage_cost)]
                        + [_fmt(v) for v in s.row_violation_rates] + [errors.get(s.run, "")])
        all_rates = np.array([s.row_violation_rates for s in stats])
        steps = np.array([s.steps + 1 for s in stats], dtype=float)
        wr.writerow(["all", sum(s.failed for s in stats), int(sum(s.steps for s in stats)),
                     _fmt(np.average([s.violation_rate for s in stats], weights=steps)),
                     _fmt(max(s.max_violation for s in stats)),
                     _fmt(max(s.final_norm for s in stats)),
                     _fmt(max(s.max_norm for s in stats)),
                     _fmt(max(s.max_abs_u for s in stats)),
                     _fmt(np.nanmean([s.average_stage_cost for s in stats]))]
                    + [_fmt(v) for v in np.average(all_rates, axis=0, weights=steps)] + [""])


def write_scenario(out_dir, logs, stats, problem: TsdrProblem, prefix="run"):
    """Write ``<prefix>_<index>.csv`` per run and ``aggregate.csv``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for log in logs:
        p = out / f"{prefix}_{log.run:03d}.csv"
        write_run_csv(p, log, problem)
        paths.append(p)
    agg = out / "aggregate.csv"
    write_aggregate_csv(agg, stats, problem, {log.run: log.error for log in logs if log.failed})
    return paths, agg


def read_run_csv(path) -> dict:
    """Load a per-run CSV into float columns (blank cells become NaN)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    data = np.array([[float(c) if c != "" else np.nan for c in r] for r in body], dtype=float)
    data = data.reshape(len(body), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}
