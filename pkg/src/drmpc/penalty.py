"""Exact L1 penalty on constraint violation and its dual vertices.

The recourse problem prices a slack vector ``s`` through

    min  h^T q+   s.t.  q+ - q- = s,  q+, q- >= 0,

whose value is ``h^T max(0, s)``. Its dual feasible set is the box
``0 <= pi <= h`` and the maximizing vertex is read off the sign of ``s``.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigError, SolverError


def validate_weights(h) -> np.ndarray:
    h = np.asarray(h, dtype=float).ravel()
    if h.size == 0 or not np.all(np.isfinite(h)) or np.any(h <= 0):
        raise ConfigError("penalty weights must be finite and strictly positive")
    return h


def penalty_closed_form(h, s) -> float:
    """``sum_i h_i max(0, s_i)``."""
    return float(np.dot(h, np.maximum(0.0, s)))


def dual_vertex(h, s) -> np.ndarray:
    """Maximizer of ``pi^T s`` over ``0 <= pi <= h``; ties at ``s_i = 0`` pick 0."""
    h = np.asarray(h, dtype=float)
    return np.where(np.asarray(s) > 0.0, h, 0.0)


def second_stage_lp(h, s):
    """Solve the recourse LP with a generic LP solver.

    Returns ``(value, q_plus, q_minus)``. This path exists to cross-check
    :func:`penalty_closed_form`; the controller never calls it.
    """
    h = np.asarray(h, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    m = s.size
    c = np.concatenate([h, np.zeros(m)])
    A_eq = np.hstack([np.eye(m), -np.eye(m)])
    res = linprog(c, A_eq=A_eq, b_eq=s, bounds=[(0, None)] * (2 * m), method="highs")
    if res.status != 0:
        raise SolverError(f"recourse LP failed: {res.message}")
    y = res.x
    return float(res.fun), y[:m], y[m:]


def dual_value_representation(h, u_bar, x, w_bar, lifted) -> float:
    """Penalty value written as ``max_pi pi^T (B1 u + F D w + F A x + G)``."""
    s = lifted.B1 @ u_bar + lifted.constraint_output(x, w_bar)
    pi = dual_vertex(h, s)
    return float(pi @ s)
