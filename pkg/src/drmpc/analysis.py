"""Stability constants, the asymptotic cost bound and per-step inequality audits.

Everything is evaluated in the pre-stabilized coordinates the controller
optimizes in: the state matrix is ``A_K = A + B K``, the decision is the
input offset ``v`` and the stage cost is ``l(x, v) = |x|^2_Q + |v|^2_R``.

The checkers return margins ``rhs - lhs``; a negative margin beyond the
tolerance means the inequality failed on that step.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .ambiguity import (
    AmbiguityModel,
    MomentBounds,
    WorstCaseMomentBounds,
    gelbrich_mean_bound,
    gelbrich_trace_bound,
)
from .errors import ContractionWarning, DomainError
from .reformulation import TsdrProblem, nominal_cost
from .system import norm_bounds

AUDIT_TOL = 1e-6


def _lmax(M) -> float:
    return float(np.linalg.eigvalsh(np.atleast_2d(M))[-1])


def _lmin(M) -> float:
    return float(np.linalg.eigvalsh(np.atleast_2d(M))[0])


@dataclass(frozen=True)
class StabilityConstants:
    """Finite constants of the cost bounds for one controller configuration."""

    L_A: float
    L_B: float
    L_D: float
    u_u: float
    L_B1: float
    lmax_P: float
    lmin_Q: float
    lmax_Q: float
    lmax_R: float
    lmax_F0: float
    lmin_Cs: float
    lmax_Cs: float
    h_norm_sq: float
    l_c: float
    N: int
    c_l: float
    c_1: float
    c_2: float
    c_sN: float
    C_A1: float
    C_A2: float
    C_A3: float
    C_A4: float
    C_A5: float
    C_w1: float
    C_w2: float
    k0: float
    k1: float
    k31: float
    k32: float
    eps_c1: float = 1.0

    def as_dict(self) -> dict:
        return asdict(self)

    def k2(self, eps_c2) -> float:
        lp, ld2, la = self.lmax_P, self.L_D ** 2, self.L_A
        a1 = self.C_A1 ** 2
        return (12.0 * self.l_c * lp ** 2 / self.lmin_Q * ld2 * (a1 + 1.0) ** 2
                + 2.0 * self.lmax_Q * ld2 * self.C_A3 ** 2
                + lp * ld2 * (1.0 + 2.0 * self.C_A1 + self.C_A1 ** 4)
                + lp * ld2 * la ** (self.N - 1) * (1.0 + a1)
                + self.C_w1 / (4.0 * eps_c2))

    def k4(self, eps_c2) -> float:
        ld2 = self.L_D ** 2
        return (self.lmax_Q * ld2 * self.C_A3 ** 2 + self.lmax_P * ld2 * self.C_A2 ** 2
                + self.C_w1 / (4.0 * eps_c2) + self.lmax_P * ld2 * (1.0 + 2.0 * self.C_A1))

    def k5(self) -> float:
        return self.lmax_P * self.L_D ** 2 * self.C_A5 ** 2 + self.C_w1 / (4.0 * self.eps_c1)


def horizon_sums(L_A: float, N: int) -> dict:
    """The five propagation constants ``C_A1 .. C_A5`` by direct summation."""
    ratio = [sum(L_A ** j for j in range(i)) for i in range(N + 1)]  # (1 - L^i) / (1 - L)
    return {
        "C_A1": float(np.sqrt(sum(L_A ** j for j in range(N - 1)))),
        "C_A2": float(np.sqrt(sum(L_A ** (2 * i) for i in range(N - 1)))),
        "C_A3": float(np.sqrt(sum(ratio[i] ** 2 for i in range(N - 1)))),
        "C_A4": float(np.sqrt(sum(L_A ** (2 * i) for i in range(1, N + 1)))),
        "C_A5": float(np.sqrt(sum(sum(L_A ** (2 * j) for j in range(i)) for i in range(1, N + 1)))),
    }


def input_offset_constant(lmax_Q, lmax_R, lmax_P, L_A, L_B, u_u, N) -> float:
    """Constant ``c_1`` collecting the effect of bounded input deviations on the cost."""
    def drift(i):
        return sum(L_A ** (i - j) * L_B * u_u for j in range(1, i + 1))

    stages = sum(lmax_Q * drift(i) ** 2 + lmax_R * u_u ** 2 for i in range(N))
    return float(2.0 * stages + 2.0 * lmax_P * drift(N) ** 2)


def compute_constants(problem: TsdrProblem, eps_c1: float = 1.0) -> StabilityConstants:
    """Evaluate every constant of the stability analysis for ``problem``.

    The propagation sums are finite for any ``L_A``, but the analysis only
    applies to a contraction; ``L_A >= 1`` raises a :class:`ContractionWarning`
    and the numbers are returned anyway.
    """
    if eps_c1 <= 0:
        raise DomainError("eps_c1 must be positive")
    nb = norm_bounds(problem.system, problem.u_min, problem.u_max, problem.N)
    if not nb.contraction:
        warnings.warn(
            f"pre-stabilized state matrix has spectral norm {nb.L_A:.4f} >= 1; the "
            "stability constants are evaluated but the bound is not guaranteed",
            ContractionWarning, stacklevel=2,
        )
    w = problem.weights
    lifted = problem.lifted
    N = problem.N
    L_A, L_B, L_D, u_u = nb.L_A, nb.L_B, nb.L_D, nb.u_u
    lmax_P, lmin_Q, lmax_Q, lmax_R = _lmax(w.P), _lmin(w.Q), _lmax(w.Q), _lmax(w.R)
    lmax_F0 = _lmax(lifted.F0.T @ lifted.F0)
    C_s = problem.ambiguity.C_s
    lmin_Cs, lmax_Cs = _lmin(C_s), _lmax(C_s)
    L_B1 = float(np.linalg.norm(lifted.B1, 2))
    h_norm_sq = float(problem.h @ problem.h)
    l_c = problem.l_c

    s = horizon_sums(L_A, N)
    C_A1, C_A2, C_A3, C_A4, C_A5 = (s[k] for k in ("C_A1", "C_A2", "C_A3", "C_A4", "C_A5"))
    ld2 = L_D ** 2
    C_w1 = lmax_F0 * ld2 * C_A5 ** 2
    C_w2 = lmax_F0 * ld2 * sum(L_A ** (2 * i) for i in range(1, N + 1))
    c_l = 2.0 * lmax_P / lmin_Q
    c_1 = input_offset_constant(lmax_Q, lmax_R, lmax_P, L_A, L_B, u_u, N)
    c_2 = c_1 + 4.0 * h_norm_sq + 0.25 * L_B1 ** 2 * u_u ** 2
    la_n1 = L_A ** (N - 1)
    k1 = (12.0 * l_c * lmax_P ** 2 / lmin_Q * ld2 * L_A ** (2 * (N - 1))
          + lmax_P * ld2 * L_A ** (2 * (N - 1))
          + lmax_P * ld2 * la_n1 * (1.0 + C_A1 ** 2)
          + 2.0 * lmax_Q * ld2 * C_A2 ** 2)
    k31 = lmax_P * lmin_Q * L_D * C_A4 * u_u * L_B * C_A5
    k32 = (lmax_P * ld2 * C_A5 ** 2 + C_w1 / (4.0 * eps_c1)
           + 12.0 * lmax_P ** 2 / lmin_Q * ld2 * C_A4 ** 4)
    return StabilityConstants(
        L_A=L_A, L_B=L_B, L_D=L_D, u_u=u_u, L_B1=L_B1, lmax_P=lmax_P, lmin_Q=lmin_Q,
        lmax_Q=lmax_Q, lmax_R=lmax_R, lmax_F0=lmax_F0, lmin_Cs=lmin_Cs, lmax_Cs=lmax_Cs,
        h_norm_sq=h_norm_sq, l_c=l_c, N=N, c_l=c_l, c_1=c_1, c_2=c_2,
        c_sN=float(np.sqrt(lmax_Cs * N / lmin_Cs)),
        C_A1=C_A1, C_A2=C_A2, C_A3=C_A3, C_A4=C_A4, C_A5=C_A5, C_w1=C_w1, C_w2=C_w2,
        k0=0.25 * lmin_Q, k1=k1, k31=k31, k32=k32, eps_c1=float(eps_c1),
    )


@dataclass(frozen=True)
class PerformanceBound:
    """Envelope terms of the long-run average cost bound and their sum."""

    epsilon: float
    mu_bar: float
    trace_Sigma: float
    eps_young: float
    sigma1: float
    sigma2: float
    sigma3: float

    @property
    def total(self) -> float:
        return self.sigma1 + self.sigma2 + self.sigma3

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


def young_parameter(c: StabilityConstants, epsilon, mu_bar, trace_Sigma) -> float:
    """The Young-inequality weight tied to the uncertainty level, capped at ``1/(4 c_l)``.

    At zero uncertainty the level term vanishes and the cap is returned
    instead; every envelope is zero there whatever the weight.
    """
    level = max(epsilon ** (1.0 / 3.0), np.sqrt(mu_bar), np.sqrt(trace_Sigma))
    cap = 1.0 / (4.0 * c.c_l)
    return float(min(cap, level)) if level > 0 else float(cap)


def asymptotic_bound(c: StabilityConstants, epsilon, mu_bar, trace_Sigma) -> PerformanceBound:
    """Bound on the long-run average expected stage cost.

    ``epsilon`` is the ambiguity radius, ``mu_bar`` bounds the norm of the
    true disturbance mean and ``trace_Sigma`` the trace of its covariance.
    Each envelope is zero at zero and nondecreasing in its argument.
    """
    for name, v in (("epsilon", epsilon), ("mu_bar", mu_bar), ("trace_Sigma", trace_Sigma)):
        if v < 0 or not np.isfinite(v):
            raise DomainError(f"{name} must be finite and nonnegative, got {v}")
    e_y = young_parameter(c, epsilon, mu_bar, trace_Sigma)
    k2, k4, k5 = c.k2(e_y), c.k4(e_y), c.k5()
    four_cl = 4.0 * c.c_l
    lmin = c.lmin_Cs

    s1 = 2.0 * (
        32.0 * (k2 + c.k32 + k4 + k5) / lmin * max(epsilon ** (2.0 / 3.0), four_cl * epsilon)
        + 4.0 * np.sqrt(2.0) * c.k31 / np.sqrt(lmin)
        * max(epsilon ** (1.0 / 6.0), four_cl * np.sqrt(epsilon))
        + c.c_2 * np.sqrt(epsilon)
    )
    s2 = 2.0 * (
        c.C_w2 / 4.0 * mu_bar ** 2
        + 2.0 * (c.k1 + 2.0 * (k2 + c.k32) * c.c_sN ** 2)
        * max(mu_bar ** 1.5, four_cl * mu_bar ** 2)
        + 2.0 * c.k31 * c.c_sN * max(np.sqrt(mu_bar), four_cl * mu_bar)
        + c.c_2 * np.sqrt(mu_bar)
    )
    t = trace_Sigma
    s3 = 2.0 * (
        (2.0 * c.k1 + 4.0 * (k4 + k5) * c.c_sN ** 2) * max(np.sqrt(t), four_cl * t)
        + c.C_w2 / 4.0 * t
        + c.c_2 * t ** (1.0 / 3.0)
    )
    return PerformanceBound(
        epsilon=float(epsilon), mu_bar=float(mu_bar), trace_Sigma=float(trace_Sigma),
        eps_young=e_y, sigma1=float(s1), sigma2=float(s2), sigma3=float(s3),
    )


def gelbrich_report(ambiguity: AmbiguityModel, moments: MomentBounds, N: int) -> WorstCaseMomentBounds:
    """Worst-case mean norm and covariance trace over the ball for the given moment bounds."""
    return WorstCaseMomentBounds(
        mean_bound=gelbrich_mean_bound(ambiguity.epsilon, ambiguity.C_s, N, moments.mu_bar),
        trace_bound=gelbrich_trace_bound(ambiguity.epsilon, ambiguity.C_s, N, moments.Sigma_bar),
    )


# --- per-step checks ---------------------------------------------------------

def stage_cost(problem: TsdrProblem, x, v) -> float:
    """Stage cost in the optimization coordinates, ``|x|^2_Q + |v|^2_R``."""
    return problem.weights.stage_cost(x, v)


def penalty_cost(problem: TsdrProblem, u_bar, w_bar, x) -> float:
    """Exact penalty ``h^T max(0, constraint rows)`` along the disturbed prediction."""
    s = problem.lifted.B1 @ u_bar + problem.lifted.constraint_output(x, w_bar)
    return float(problem.h @ np.maximum(0.0, s))


def disturbance_cost_term(problem: TsdrProblem, u_bar, w_bar, x) -> float:
    """``g1``: the exact change of the quadratic cost caused by ``w_bar``."""
    lifted, Qb = problem.lifted, problem.weights.Q_bar
    Dw = lifted.D_bar @ w_bar
    return float(Dw @ Qb @ Dw + 2.0 * (lifted.A_bar @ x + lifted.B_bar @ u_bar) @ Qb @ Dw)


def check_cost_upper_bound(problem: TsdrProblem, c: StabilityConstants, x, u_bar, w_bar) -> float:
    """Margin of the quadratic-cost upper bound in terms of the current stage cost.

    ``V_q(u, w) <= c_l l(x, v_0) + g1(w) + c_1``.
    """
    n_u = problem.system.n_u
    lhs = nominal_cost(u_bar, w_bar, x, problem)
    rhs = c.c_l * stage_cost(problem, x, u_bar[:n_u]) + disturbance_cost_term(problem, u_bar, w_bar, x) + c.c_1
    return float(rhs - lhs)


def shifted_candidate(problem: TsdrProblem, u_bar) -> np.ndarray:
    """Drop the first input and append the terminal law, which is ``v = 0`` here."""
    n_u = problem.system.n_u
    return np.concatenate([u_bar[n_u:], np.zeros(n_u)])


def check_cost_recursion(problem: TsdrProblem, x, u_bar, x_next, w_bar_next, eps=0.5) -> float:
    """Margin of the one-step recursion between the optimal and the shifted plan.

    ``x`` and ``u_bar`` are the state and optimal plan at one step, ``x_next``
    the state reached after applying the first input and ``w_bar_next`` the
    disturbances over the next horizon. With ``c`` the shifted plan and
    ``x^c_i`` its disturbed prediction from ``x_next``::

        V_q(c, w_next) / (1 + eps) <= V_q(u, 0) - l(x, v_0)
            + (1/eps) sum_{i<N-1} |delta_i|^2_Q + (g2(delta_{N-1}) + delta_f) / (1 + eps)

    with ``delta_i = x^c_i - z_{i+1}`` the deviation from the nominal
    prediction ``z``, ``g2(d) = |d|^2_P + 2 z_N^T P d`` and ``delta_f`` the
    terminal-step terms ``|D w_{N-1}|^2_P + 2 (A_K x^c_{N-1})^T P D w_{N-1}``.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    sysm, lifted, wts = problem.system, problem.lifted, problem.weights
    n_x, n_u, n_w, N = sysm.n_x, sysm.n_u, sysm.n_w, problem.N
    cand = shifted_candidate(problem, u_bar)
    z = np.concatenate([x, lifted.predict(x, u_bar)]).reshape(N + 1, n_x)
    xc = np.concatenate([x_next, lifted.predict(x_next, cand, w_bar_next)]).reshape(N + 1, n_x)
    delta = xc[:N] - z[1:]
    lhs = nominal_cost(cand, w_bar_next, x_next, problem) / (1.0 + eps)
    P, Q = wts.P, wts.Q
    g2 = delta[-1] @ P @ delta[-1] + 2.0 * z[N] @ P @ delta[-1]
    Dw = sysm.D @ w_bar_next[(N - 1) * n_w:]
    delta_f = Dw @ P @ Dw + 2.0 * (sysm.A @ xc[N - 1]) @ P @ Dw
    rhs = (nominal_cost(u_bar, np.zeros(N * n_w), x, problem) - stage_cost(problem, x, u_bar[:n_u])
           + sum(d @ Q @ d for d in delta[:N - 1]) / eps + (g2 + delta_f) / (1.0 + eps))
    return float(rhs - lhs)


def check_penalty_bound(problem: TsdrProblem, c: StabilityConstants, x, u_bar, w_bar, w_prev,
                        eps_c1=1.0) -> float:
    """Margin of the penalty bound in terms of the current and previous disturbances.

    ``V_c(u, w) <= 3 e |h|^2 + (L_B1^2 u_u^2 + |F D w|^2 + |F A D w_prev|^2) / (4 e)``.
    """
    if eps_c1 <= 0:
        raise DomainError("eps_c1 must be positive")
    lifted = problem.lifted
    lhs = penalty_cost(problem, u_bar, w_bar, x)
    FDw = lifted.FD @ w_bar
    FADw = lifted.FA @ (problem.system.D @ w_prev)
    rhs = (3.0 * eps_c1 * c.h_norm_sq
           + (c.L_B1 ** 2 * c.u_u ** 2 + FDw @ FDw + FADw @ FADw) / (4.0 * eps_c1))
    return float(rhs - lhs)


def check_minimax_nominal(problem: TsdrProblem, x, u_bar, J) -> float:
    """Margin of ``V_q(u, 0) + V_c(u, 0) <= J``.

    This is the zero-disturbance side of the saddle inequality. It is exact
    when the point mass at zero lies in the ambiguity ball; otherwise it may
    fail by up to the transport cost of reaching that point mass.
    """
    w0 = np.zeros(problem.n_w_bar)
    lhs = nominal_cost(u_bar, w0, x, problem) + penalty_cost(problem, u_bar, w0, x)
    return float(J - lhs)


# --- trajectory audit ----------------------------------------------------------

@dataclass
class Trajectory:
    """The parts of a closed-loop run the audits need, as plain arrays."""

    k: np.ndarray
    x: np.ndarray        # (K + 1, n_x), last row is the final state
    plan: np.ndarray     # (K, N n_u)
    w: np.ndarray        # (K, n_w)
    J: np.ndarray        # (K,)

    @classmethod
    def from_log(cls, log) -> "Trajectory":
        recs = log.records
        return cls(
            k=np.array([r.k for r in recs], dtype=int),
            x=log.states,
            plan=np.array([r.plan for r in recs]),
            w=np.array([r.w for r in recs]),
            J=np.array([r.J for r in recs]),
        )

    @classmethod
    def from_columns(cls, cols: dict, problem: TsdrProblem) -> "Trajectory":
        """Build from :func:`drmpc.simulator.read_run_csv` output."""
        n_x, n_w = problem.plant.n_x, problem.plant.n_w
        k = cols["k"]
        x = np.column_stack([cols[f"x{i + 1}"] for i in range(n_x)])
        steps = ~np.isnan(cols["J"])
        plan = np.column_stack([cols[f"plan_{i + 1}"] for i in range(problem.n_u_bar)])[steps]
        w = np.column_stack([cols[f"w{i + 1}"] for i in range(n_w)])[steps]
        return cls(k=k[steps].astype(int), x=x, plan=plan, w=w, J=cols["J"][steps])

    @property
    def steps(self) -> int:
        return len(self.J)


AUDIT_COLUMNS = ["k", "cost_upper_bound", "cost_recursion", "penalty_bound", "minimax_nominal"]


@dataclass
class AuditReport:
    rows: np.ndarray          # (K, 5) with NaN where a check needs data outside the log
    tol: float = AUDIT_TOL

    def minimum(self, column) -> float:
        vals = self.rows[:, AUDIT_COLUMNS.index(column)]
        vals = vals[~np.isnan(vals)]
        return float(vals.min()) if vals.size else np.nan

    def failures(self, column) -> np.ndarray:
        """Step indices whose margin is below ``-tol``."""
        vals = self.rows[:, AUDIT_COLUMNS.index(column)]
        return self.rows[np.nan_to_num(vals, nan=np.inf) < -self.tol, 0].astype(int)

    @property
    def passed(self) -> bool:
        return all(self.failures(c).size == 0 for c in AUDIT_COLUMNS[1:])

    def summary(self) -> dict:
        return {c: {"min_margin": self.minimum(c), "failures": int(self.failures(c).size),
                    "audited": int(np.sum(~np.isnan(self.rows[:, i + 1])))}
                for i, c in enumerate(AUDIT_COLUMNS[1:])}


def audit_trajectory(problem: TsdrProblem, traj: Trajectory, c: StabilityConstants | None = None,
                     eps_young=0.5, eps_c1=1.0, tol=AUDIT_TOL) -> AuditReport:
    """Run all four per-step checks over a logged trajectory.

    The cost bound needs the next ``N`` realized disturbances and the
    recursion one more, so they skip the last ``N`` and ``N + 1`` steps. The
    penalty bound needs the previous disturbance and skips the first step.
    """
    c = c or compute_constants(problem, eps_c1)
    N, K = problem.N, traj.steps
    rows = np.full((K, len(AUDIT_COLUMNS)), np.nan)
    for i in range(K):
        x, u = traj.x[i], traj.plan[i]
        rows[i, 0] = traj.k[i]
        if i + N <= K:
            w_bar = traj.w[i:i + N].ravel()
            rows[i, 1] = check_cost_upper_bound(problem, c, x, u, w_bar)
            if i >= 1:
                rows[i, 3] = check_penalty_bound(problem, c, x, u, w_bar, traj.w[i - 1], eps_c1)
        if i + N + 1 <= K:
            rows[i, 2] = check_cost_recursion(problem, x, u, traj.x[i + 1],
                                              traj.w[i + 1:i + 1 + N].ravel(), eps_young)
        rows[i, 4] = check_minimax_nominal(problem, x, u, traj.J[i])
    return AuditReport(rows=rows, tol=tol)


def write_audit_csv(path, reports: dict):
    """One row per audited step of every run, then a summary row per check.

    ``reports`` maps a run label to its :class:`AuditReport`.
    """
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["run"] + AUDIT_COLUMNS)
        for label, rep in reports.items():
            for row in rep.rows:
                wr.writerow([label, int(row[0])] + ["" if np.isnan(v) else repr(float(v)) for v in row[1:]])
        mins = []
        for col in AUDIT_COLUMNS[1:]:
            vals = [rep.minimum(col) for rep in reports.values()]
            vals = [v for v in vals if not np.isnan(v)]
            mins.append(repr(min(vals)) if vals else "")
        wr.writerow(["min", ""] + mins)
        fails = [str(sum(rep.failures(col).size for rep in reports.values())) for col in AUDIT_COLUMNS[1:]]
        wr.writerow(["failures", ""] + fails)
    return Path(path)


@dataclass(frozen=True)
class CostReport:
    average_cost: float
    bound: float
    burn_in: int
    samples: int

    @property
    def within(self) -> bool:
        return self.average_cost <= self.bound


def average_cost_vs_bound(logs, bound: PerformanceBound, burn_in: int = 10) -> CostReport:
    """Mean stage cost over all runs after ``burn_in`` steps, against the bound total."""
    costs = [r.stage_cost for log in logs for r in log.records if r.k >= burn_in]
    if not costs:
        raise DomainError(f"no steps after a burn-in of {burn_in}")
    return CostReport(average_cost=float(np.mean(costs)), bound=bound.total,
                      burn_in=int(burn_in), samples=len(costs))
