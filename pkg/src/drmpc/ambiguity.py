"""Wasserstein ball around the empirical disturbance distribution.

Transport costs are quadratic, ``c(w, w') = 1/2 (w - w')^T C_s (w - w')``,
where ``C_s = (F D_bar)^T C (F D_bar)`` pulls a constraint-output weight ``C``
back to disturbance space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigError, DomainError, SolverError, StructuralError


def transport_cost(w, w_prime, C_s) -> float:
    d = np.asarray(w, dtype=float) - np.asarray(w_prime, dtype=float)
    return 0.5 * float(d @ C_s @ d)


def output_transport_cost(xi, xi_prime, C) -> float:
    return transport_cost(xi, xi_prime, C)


def induced_weight(lifted, C) -> np.ndarray:
    """``C_s = (F D_bar)^T C F D_bar``; raises if it is not positive definite."""
    C = np.asarray(C, dtype=float)
    C_s = lifted.FD.T @ C @ lifted.FD
    C_s = 0.5 * (C_s + C_s.T)
    try:
        np.linalg.cholesky(C_s)
    except np.linalg.LinAlgError as exc:
        raise StructuralError(
            "induced transport weight is singular: the constraint outputs do not "
            "observe every disturbance direction over the horizon"
        ) from exc
    return C_s


@dataclass(frozen=True)
class AmbiguityModel:
    """Radius ``epsilon`` in transport-cost units, output weight ``C``, ``n`` samples."""

    epsilon: float
    C: np.ndarray
    n: int
    C_s: np.ndarray

    @classmethod
    def build(cls, epsilon, C, n, lifted) -> "AmbiguityModel":
        if epsilon < 0 or not np.isfinite(epsilon):
            raise ConfigError(f"ambiguity radius must be finite and >= 0, got {epsilon}")
        if n < 1:
            raise ConfigError(f"sample count must be >= 1, got {n}")
        C = np.array(C, dtype=float, ndmin=2)
        if C.shape != (lifted.F.shape[0],) * 2:
            raise ConfigError(f"C must be {lifted.F.shape[0]} square, got {C.shape}")
        if not np.allclose(C, C.T):
            raise ConfigError("C must be symmetric")
        if np.linalg.eigvalsh(C)[0] <= 0:
            raise ConfigError("C must be positive definite")
        C_s = induced_weight(lifted, C)
        C.setflags(write=False)
        C_s.setflags(write=False)
        return cls(epsilon=float(epsilon), C=C, n=int(n), C_s=C_s)


@dataclass(frozen=True)
class MomentBounds:
    mu_bar: float
    Sigma_bar: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.Sigma_bar))


@dataclass(frozen=True)
class WorstCaseMomentBounds:
    mean_bound: float
    trace_bound: float


def _eig_extremes(C_s):
    ev = np.linalg.eigvalsh(np.asarray(C_s, dtype=float))
    if ev[0] <= 0:
        raise DomainError("C_s must be positive definite")
    return ev[0], ev[-1]


def gelbrich_mean_bound(epsilon, C_s, N, mu_bar) -> float:
    """Upper bound on the norm of the worst-case mean over the ball."""
    lo, hi = _eig_extremes(C_s)
    return (np.sqrt(hi * N) * mu_bar + 2.0 * np.sqrt(2.0 * epsilon)) / np.sqrt(lo)


def gelbrich_trace_bound(epsilon, C_s, N, Sigma_bar) -> float:
    """Upper bound on the trace of the worst-case covariance over the ball."""
    lo, hi = _eig_extremes(C_s)
    tr = float(np.trace(np.atleast_2d(Sigma_bar)))
    return (np.sqrt(hi * N * tr) + 2.0 * np.sqrt(2.0 * epsilon)) ** 2 / lo


def discrete_wasserstein(p_support, p_weights, q_support, q_weights, cost_fn) -> float:
    """Exact optimal-transport value between two finite distributions (LP)."""
    p_weights = np.asarray(p_weights, dtype=float)
    q_weights = np.asarray(q_weights, dtype=float)
    if abs(p_weights.sum() - 1) > 1e-9 or abs(q_weights.sum() - 1) > 1e-9:
        raise ValueError("distribution weights must sum to 1")
    if np.any(p_weights < 0) or np.any(q_weights < 0):
        raise ValueError("distribution weights must be nonnegative")
    m, k = len(p_support), len(q_support)
    cost = np.array([[cost_fn(a, b) for b in q_support] for a in p_support])
    A_eq = np.vstack([np.kron(np.eye(m), np.ones(k)), np.kron(np.ones(m), np.eye(k))])
    b_eq = np.concatenate([p_weights, q_weights])
    res = linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverError(f"transport LP failed: {res.message}")
    return float(res.fun)


def build_empirical(history, n, N, rng, n_w=None) -> np.ndarray:
    """Stack ``N`` draws with replacement from the history, ``n`` times.

    Returns an ``(n, N * n_w)`` array. An empty history yields zeros.
    """
    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    history = [np.atleast_1d(np.asarray(w, dtype=float)) for w in history]
    if not history:
        if n_w is None:
            raise ValueError("n_w is required when the history is empty")
        return np.zeros((n, N * n_w))
    H = np.vstack(history)
    idx = rng.integers(0, H.shape[0], size=(n, N))
    return H[idx].reshape(n, -1)


def zero_distribution_distance(samples, C_s) -> float:
    """Transport distance from the point mass at zero to the empirical samples."""
    return float(np.mean([transport_cost(s, np.zeros_like(s), C_s) for s in samples]))
