"""Dual reformulation of the worst-case expected cost.

For a fixed first-stage plan ``u`` and transport multiplier ``gamma`` the
per-sample value function is

    V(u, gamma, w_s) = max_w  ||D w||^2_Q + 2 (A x + B u)^T Q D w
                              + V_c(u, w) - gamma c(w, w_s),

with ``V_c`` the exact penalty. Writing the penalty through its dual box
``0 <= pi <= h`` and maximizing the concave quadratic in ``w`` in closed form
leaves a convex quadratic in ``pi`` to be maximized over the box:

    g(pi) = 1/2 pi^T M pi + pi^T b + const,
    M = F D C1^{-1} (F D)^T,   b = B1 u + F A x + G + F D C1^{-1} C0.

Its gradient ``M pi + b`` is the constraint slack at the maximizing ``w``,
which makes the alternation between ``pi`` and ``w`` a vertex ascent on ``g``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .ambiguity import AmbiguityModel
from .errors import ConfigError, DomainError, SolverError, StructuralError
from .penalty import dual_vertex, validate_weights
from .system import (
    CostWeights,
    LiftedProblem,
    LtiSystem,
    RiccatiResult,
    build_lifted,
    check_lc,
    disturbance_observability,
    lc_threshold,
    prestabilize,
    solve_riccati,
)

GAMMA_MARGIN = 1e-6


def gamma_lower_bound(lifted: LiftedProblem, Q_bar, C_s) -> float:
    """Smallest ``gamma`` for which the inner maximization over ``w`` is bounded."""
    DQD = lifted.D_bar.T @ Q_bar @ lifted.D_bar
    ev, V = np.linalg.eigh(C_s)
    if ev[0] <= 0:
        raise DomainError("C_s must be positive definite")
    C_inv_half = V @ np.diag(ev ** -0.5) @ V.T
    S = C_inv_half @ (2.0 * DQD) @ C_inv_half
    return max(0.0, float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1]))


@dataclass(frozen=True)
class TsdrProblem:
    """Everything the controller needs that does not depend on the state."""

    plant: LtiSystem
    system: LtiSystem
    riccati: RiccatiResult
    lifted: LiftedProblem
    weights: CostWeights
    ambiguity: AmbiguityModel
    h: np.ndarray
    l_c: float
    u_min: np.ndarray
    u_max: np.ndarray
    gamma_lower: float
    DQD: np.ndarray
    QD: np.ndarray
    H_uu: np.ndarray

    @classmethod
    def build(
        cls, A, B, D, F0, G0, Q, R, N, epsilon, n, h, l_c, u_min, u_max,
        C=None, prestabilized=True,
    ) -> "TsdrProblem":
        plant = LtiSystem(A, B, D)
        Q = np.array(Q, dtype=float, ndmin=2)
        R = np.array(R, dtype=float, ndmin=2)
        riccati = solve_riccati(plant.A, plant.B, Q, R)
        system = prestabilize(plant, riccati.K) if prestabilized else plant
        lifted = build_lifted(system, F0, G0, N)

        _, rank = disturbance_observability(lifted.F0, system.A, system.D, N)
        if rank < system.n_w:
            raise StructuralError(
                f"disturbance observability matrix has rank {rank} < n_w = {system.n_w}; "
                "the constraint outputs cannot see every disturbance direction"
            )
        if prestabilized and not check_lc(plant.A, plant.B, riccati.K, N, l_c):
            raise StructuralError(
                f"terminal parameter l_c = {l_c} is below the LQR threshold "
                f"{lc_threshold(plant.A, plant.B, riccati.K, N):.6g}"
            )

        m = lifted.F.shape[0]
        h = np.broadcast_to(np.asarray(h, dtype=float), (m,)).copy() if np.ndim(h) == 0 else h
        h = validate_weights(h)
        if h.size != m:
            raise ConfigError(f"penalty weights need {m} entries, got {h.size}")
        C = np.eye(m) if C is None else C
        ambiguity = AmbiguityModel.build(epsilon, C, n, lifted)
        weights = CostWeights(Q=Q, R=R, P=riccati.P, N=N)

        n_u = plant.n_u
        u_min = np.broadcast_to(np.asarray(u_min, dtype=float), (n_u,)).copy()
        u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (n_u,)).copy()
        if np.any(u_min > u_max):
            raise ConfigError("input box has u_min > u_max")
        if l_c < 0:
            raise ConfigError("terminal parameter l_c must be nonnegative")

        QD = weights.Q_bar @ lifted.D_bar
        DQD = lifted.D_bar.T @ QD
        H_uu = lifted.B_bar.T @ weights.Q_bar @ lifted.B_bar + weights.R_bar
        for arr in (h, u_min, u_max, QD, DQD, H_uu):
            arr.setflags(write=False)
        return cls(
            plant=plant, system=system, riccati=riccati, lifted=lifted, weights=weights,
            ambiguity=ambiguity, h=h, l_c=float(l_c), u_min=u_min, u_max=u_max,
            gamma_lower=gamma_lower_bound(lifted, weights.Q_bar, ambiguity.C_s),
            DQD=DQD, QD=QD, H_uu=H_uu,
        )

    @property
    def gamma_min(self) -> float:
        """Smallest multiplier the master may pick (strictly above the lower bound)."""
        if self.gamma_lower > 0:
            return self.gamma_lower * (1.0 + GAMMA_MARGIN)
        return GAMMA_MARGIN

    @property
    def N(self) -> int:
        return self.lifted.N

    @property
    def n_w_bar(self) -> int:
        return self.lifted.D_bar.shape[1]

    @property
    def n_u_bar(self) -> int:
        return self.lifted.B_bar.shape[1]


def cost_constant(x, problem: TsdrProblem) -> float:
    """State-only part of the nominal cost: ``||x||^2_Q + ||A_bar x||^2_Qbar``."""
    Ax = problem.lifted.A_bar @ x
    return float(x @ problem.weights.Q @ x + Ax @ problem.weights.Q_bar @ Ax)


def first_stage_cost(u_bar, gamma, x, problem: TsdrProblem) -> float:
    """Plan-dependent part of the nominal cost plus the radius term ``epsilon * gamma``."""
    lifted = problem.lifted
    Ax = lifted.A_bar @ x
    return float(
        u_bar @ problem.H_uu @ u_bar
        + 2.0 * Ax @ problem.weights.Q_bar @ lifted.B_bar @ u_bar
        + problem.ambiguity.epsilon * gamma
    )


def nominal_cost(u_bar, w_bar, x, problem: TsdrProblem) -> float:
    """Quadratic horizon cost along the predicted trajectory driven by ``w_bar``."""
    x_pred = problem.lifted.predict(x, u_bar, w_bar)
    return float(
        x @ problem.weights.Q @ x
        + x_pred @ problem.weights.Q_bar @ x_pred
        + u_bar @ problem.weights.R_bar @ u_bar
    )


@dataclass(frozen=True)
class InnerEvaluation:
    C0: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    w_star: np.ndarray


def _factor_C1(gamma, problem):
    if gamma <= problem.gamma_lower * (1.0 + 0.5 * GAMMA_MARGIN) and problem.gamma_lower > 0:
        raise DomainError(
            f"gamma = {gamma:.6g} is not above the lower bound {problem.gamma_lower:.6g}; "
            "the inner maximization is unbounded"
        )
    if gamma <= 0 and problem.gamma_lower == 0:
        raise DomainError("gamma must be positive")
    C1 = gamma * problem.ambiguity.C_s - 2.0 * problem.DQD
    C1 = 0.5 * (C1 + C1.T)
    try:
        return C1, cho_factor(C1, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DomainError("C1 is not positive definite at this gamma") from exc


def _c0(u_bar, gamma, x, w_sigma, problem):
    lifted = problem.lifted
    return 2.0 * problem.QD.T @ (lifted.A_bar @ x + lifted.B_bar @ u_bar) + gamma * (
        problem.ambiguity.C_s @ w_sigma
    )


def inner_matrices(u_bar, gamma, x, w_sigma, pi, problem: TsdrProblem) -> InnerEvaluation:
    """Closed-form maximizer over ``w`` for a fixed dual vertex ``pi``."""
    C1, fac = _factor_C1(gamma, problem)
    C0 = _c0(u_bar, gamma, x, w_sigma, problem)
    C2 = C0 + problem.lifted.FD.T @ pi
    return InnerEvaluation(C0=C0, C1=C1, C2=C2, w_star=cho_solve(fac, C2))


def inner_objective(w, pi, u_bar, gamma, x, w_sigma, problem: TsdrProblem) -> float:
    """The function maximized over ``(w, pi)``; used by oracles and cut checks."""
    lifted = problem.lifted
    d = w - w_sigma
    s = lifted.B1 @ u_bar + lifted.constraint_output(x, w)
    return float(
        w @ problem.DQD @ w
        + 2.0 * (lifted.A_bar @ x + lifted.B_bar @ u_bar) @ problem.QD @ w
        + pi @ s
        - 0.5 * gamma * d @ problem.ambiguity.C_s @ d
    )


@dataclass(frozen=True)
class InnerResult:
    value: float
    pi: np.ndarray
    w_star: np.ndarray
    xi: np.ndarray
    iterations: int


class InnerProblem:
    """Per-sample value function at a fixed ``(u, gamma, x)``.

    The factorization of ``C1`` and the matrix ``M`` are shared between all
    samples evaluated at the same first-stage point.
    """

    def __init__(self, u_bar, gamma, x, problem: TsdrProblem, max_iter=100, multistart=True):
        self.problem = problem
        self.u_bar = np.asarray(u_bar, dtype=float)
        self.gamma = float(gamma)
        self.x = np.asarray(x, dtype=float)
        self.max_iter = max_iter
        self.multistart = multistart
        lifted = problem.lifted
        self.C1, self._fac = _factor_C1(self.gamma, problem)
        self._C1_inv_FDt = cho_solve(self._fac, lifted.FD.T)
        M = lifted.FD @ self._C1_inv_FDt
        self.M = 0.5 * (M + M.T)
        self._b_fixed = lifted.B1 @ self.u_bar + lifted.FA @ self.x + lifted.G

    def _g(self, Pi, B):
        return 0.5 * np.sum((Pi @ self.M) * Pi, axis=1) + np.sum(Pi * B, axis=1)

    def ascend(self, Pi, B, trace=None):
        """Vertex ascent on ``g`` from every row of ``Pi`` at once.

        Row ``r`` maximizes ``1/2 pi^T M pi + pi^T B[r]``. Each sweep moves a
        row to the box vertex that maximizes the linearization of ``g``; a
        row stuck at such a fixed point is polished by the best
        single-coordinate flip. ``g`` never decreases, and the sweep stops
        when no row improves. Returns ``(Pi, values, sweeps)``; when
        ``trace`` is a list the row values after every sweep are appended.
        """
        h = self.problem.h
        Pi = np.array(Pi, dtype=float, ndmin=2)
        B = np.broadcast_to(B, Pi.shape)
        vals = self._g(Pi, B)
        diagM = np.diag(self.M)
        rows = np.arange(Pi.shape[0])
        for sweep in range(1, self.max_iter + 1):
            if trace is not None:
                trace.append(vals.copy())
            grad = Pi @ self.M + B
            tol = 1e-12 * np.maximum(1.0, np.abs(vals))
            cand = np.where(grad > 0.0, h, 0.0)
            cand_vals = self._g(cand, B)
            jump = cand_vals > vals + tol
            Pi[jump] = cand[jump]
            vals[jump] = cand_vals[jump]

            step = h - 2.0 * Pi
            gain = step * grad + 0.5 * step ** 2 * diagM
            best = np.argmax(gain, axis=1)
            flip = ~jump & (gain[rows, best] > tol)
            if flip.any():
                r, i = rows[flip], best[flip]
                Pi[r, i] = h[i] - Pi[r, i]
                vals[flip] = self._g(Pi[flip], B[flip])
            if not (jump.any() or flip.any()):
                return Pi, vals, sweep
        raise SolverError(f"inner vertex ascent hit the iteration cap ({self.max_iter})")

    def starts(self, w_sigma) -> np.ndarray:
        """Starting vertices: the sample's own dual vertex, then zero and unit vertices."""
        h = self.problem.h
        s_sample = self._b_fixed + self.problem.lifted.FD @ w_sigma
        first = dual_vertex(h, s_sample)[None, :]
        if not self.multistart:
            return first
        return np.vstack([first, np.zeros_like(h), np.diag(h)])

    def evaluate_many(self, W_sigma) -> list:
        """Evaluate the value function for every row of ``W_sigma``."""
        problem = self.problem
        lifted = problem.lifted
        W_sigma = np.atleast_2d(np.asarray(W_sigma, dtype=float))
        C_s = problem.ambiguity.C_s
        C0 = (2.0 * problem.QD.T @ (lifted.A_bar @ self.x + lifted.B_bar @ self.u_bar))[None, :] + (
            self.gamma * W_sigma @ C_s
        )
        C1_inv_C0 = cho_solve(self._fac, C0.T).T
        b = self._b_fixed + C1_inv_C0 @ lifted.FD.T
        const = 0.5 * np.einsum("ij,ij->i", C0, C1_inv_C0) - 0.5 * self.gamma * np.einsum(
            "ij,jk,ik->i", W_sigma, C_s, W_sigma
        )
        h = problem.h
        own = np.where(self._b_fixed + W_sigma @ lifted.FD.T > 0.0, h, 0.0)[:, None, :]
        if self.multistart:
            shared = np.vstack([np.zeros_like(h), np.diag(h)])
            own = np.concatenate([own, np.broadcast_to(shared, (own.shape[0],) + shared.shape)],
                                 axis=1)
        n_start = own.shape[1]
        Pi, vals, sweeps = self.ascend(own.reshape(-1, h.size), np.repeat(b, n_start, axis=0))
        out = []
        for j in range(W_sigma.shape[0]):
            v = vals[j * n_start:(j + 1) * n_start]
            # first maximal row, so ties keep the sample's own start
            k = int(np.flatnonzero(v >= v.max() - 1e-12 * max(1.0, abs(v.max())))[0])
            pi = Pi[j * n_start + k]
            w_star = C1_inv_C0[j] + self._C1_inv_FDt @ pi
            xi = lifted.FD @ w_star + lifted.FA @ self.x + lifted.G
            out.append(InnerResult(value=float(v[k] + const[j]), pi=pi, w_star=w_star, xi=xi,
                                   iterations=sweeps))
        return out

    def evaluate(self, w_sigma) -> InnerResult:
        return self.evaluate_many(np.asarray(w_sigma, dtype=float)[None, :])[0]


def eval_V(u_bar, gamma, w_sigma, x, problem: TsdrProblem, multistart=True):
    """Per-sample value, maximizing dual vertex and worst-case constraint output."""
    res = InnerProblem(u_bar, gamma, x, problem, multistart=multistart).evaluate(w_sigma)
    return res.value, res.pi, res.xi
