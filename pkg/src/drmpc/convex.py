"""Small convex programs: quadratic objective, linear rows, box bounds and
at most one Euclidean-norm constraint.

The master problem of the controller is expressed as a :class:`ConvexProgram`
and handed to the Clarabel interior-point solver. Everything around the call
(row scaling, status mapping, residual checks, text dump) lives here so the
rest of the package never touches the solver API directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"
NUMERICAL_ERROR = "numerical-error"


@dataclass
class NormConstraint:
    """``||M z + m0||_2 <= radius``."""

    M: np.ndarray
    m0: np.ndarray
    radius: float


@dataclass
class ConvexProgram:
    """``min 1/2 z^T P z + q^T z + const`` subject to linear rows, bounds and a norm ball.

    ``labels`` names blocks of the decision vector as ``(name, start, stop)``
    triples; it is used only for the text dump.
    """

    P: np.ndarray
    q: np.ndarray
    const: float = 0.0
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    norm: NormConstraint | None = None
    labels: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.q.size

    def validate(self):
        n = self.n
        if self.P.shape != (n, n):
            raise ValueError(f"P must be {n}x{n}, got {self.P.shape}")
        for A, b, name in ((self.A_ub, self.b_ub, "A_ub"), (self.A_eq, self.b_eq, "A_eq")):
            if A is not None and (A.shape[1] != n or A.shape[0] != b.size):
                raise ValueError(f"{name} has shape {A.shape}, rhs has {b.size} rows")
        if self.norm is not None and self.norm.radius < 0:
            raise ValueError("norm-constraint radius must be nonnegative")

    def objective(self, z) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z + self.const)

    def max_violation(self, z, relative=False) -> float:
        """Largest constraint violation at ``z``.

        With ``relative`` each linear row is measured against
        ``max(1, |row|_inf, |rhs|)`` so rows of very different magnitude
        are judged on the same footing.
        """

        def rows(A, b, absolute):
            r = A @ z - b
            r = np.abs(r) if absolute else r
            if relative:
                r = r / np.maximum(1.0, np.maximum(np.max(np.abs(A), axis=1), np.abs(b)))
            return float(np.max(r, initial=0.0))

        v = 0.0
        if self.A_ub is not None and self.A_ub.size:
            v = max(v, rows(self.A_ub, self.b_ub, False))
        if self.A_eq is not None and self.A_eq.size:
            v = max(v, rows(self.A_eq, self.b_eq, True))
        if self.lb is not None:
            v = max(v, float(np.max(self.lb - z, initial=0.0)))
        if self.ub is not None:
            v = max(v, float(np.max(z - self.ub, initial=0.0)))
        if self.norm is not None:
            nc = self.norm
            v = max(v, float(np.linalg.norm(nc.M @ z + nc.m0) - nc.radius))
        return v


@dataclass
class Solution:
    z: np.ndarray | None
    objective: float
    status: str
    primal_residual: float = np.inf
    kkt_residual: float = np.inf
    iterations: int = 0
    solve_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class SolverOptions:
    tol_gap_abs: float = 1e-10
    tol_gap_rel: float = 1e-10
    tol_feas: float = 1e-10
    # cut rows can span many orders of magnitude; loose infeasibility
    # tolerances then produce false infeasibility certificates
    tol_infeas_abs: float = 1e-12
    tol_infeas_rel: float = 1e-12
    max_iter: int = 200
    primal_tol: float = 1e-7
    kkt_tol: float = 1e-6


_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": NUMERICAL_ERROR,
    "AlmostDualInfeasible": NUMERICAL_ERROR,
    "MaxIterations": ITERATION_LIMIT,
    "MaxTime": ITERATION_LIMIT,
}


def _csc(M) -> sp.csc_matrix:
    """Dense to CSC without the generic (and comparatively slow) scipy conversion."""
    mask = (M != 0).T
    indptr = np.concatenate([[0], np.cumsum(mask.sum(axis=1))])
    cols, rows = np.nonzero(mask)
    return sp.csc_matrix((M[rows, cols], rows, indptr), shape=M.shape)


def _scaled_rows(A, b):
    scale = np.max(np.abs(A), axis=1)
    scale[scale == 0] = 1.0
    return A / scale[:, None], b / scale


def _assemble(prog: ConvexProgram):
    """Stack the program into Clarabel's ``A z + s = b, s in K`` form."""
    n = prog.n
    blocks, rhs, cones = [], [], []
    if prog.A_eq is not None and prog.A_eq.shape[0]:
        A, b = _scaled_rows(prog.A_eq, prog.b_eq)
        blocks.append(A)
        rhs.append(b)
        cones.append(clarabel.ZeroConeT(A.shape[0]))

    ineq_A, ineq_b = [], []
    if prog.A_ub is not None and prog.A_ub.shape[0]:
        A, b = _scaled_rows(prog.A_ub, prog.b_ub)
        ineq_A.append(A)
        ineq_b.append(b)
    eye = np.eye(n)
    for bound, sign in ((prog.ub, 1.0), (prog.lb, -1.0)):
        if bound is None:
            continue
        idx = np.flatnonzero(np.isfinite(bound))
        if idx.size:
            ineq_A.append(sign * eye[idx])
            ineq_b.append(sign * bound[idx])
    if ineq_A:
        A = np.vstack(ineq_A)
        blocks.append(A)
        rhs.append(np.concatenate(ineq_b))
        cones.append(clarabel.NonnegativeConeT(A.shape[0]))

    if prog.norm is not None:
        nc = prog.norm
        if nc.radius < 1e-10:
            blocks.append(nc.M)
            rhs.append(-nc.m0)
            cones.append(clarabel.ZeroConeT(nc.M.shape[0]))
        else:
            # s = (radius, M z + m0) must lie in the second-order cone
            blocks.append(np.vstack([np.zeros((1, n)), -nc.M]))
            rhs.append(np.concatenate([[nc.radius], nc.m0]))
            cones.append(clarabel.SecondOrderConeT(nc.M.shape[0] + 1))

    A = np.vstack(blocks) if blocks else np.zeros((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    return A, b, cones


def solve(prog: ConvexProgram, options: SolverOptions | None = None) -> Solution:
    """Solve ``prog``; the returned status is never ``optimal`` unless residuals pass."""
    options = options or SolverOptions()
    prog.validate()
    A, b, cones = _assemble(prog)
    P = 0.5 * (prog.P + prog.P.T)

    P_csc = _csc(np.triu(P))
    A_csc = _csc(A)
    for equilibrate in (True, False):
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = options.tol_gap_abs
        settings.tol_gap_rel = options.tol_gap_rel
        settings.tol_feas = options.tol_feas
        settings.tol_infeas_abs = options.tol_infeas_abs
        settings.tol_infeas_rel = options.tol_infeas_rel
        settings.max_iter = options.max_iter
        settings.equilibrate_enable = equilibrate
        out = clarabel.DefaultSolver(P_csc, prog.q, A_csc, b, cones, settings).solve()
        status = _STATUS.get(str(out.status).split(".")[-1], NUMERICAL_ERROR)
        if status == OPTIMAL:
            break
    if status != OPTIMAL:
        return Solution(z=None, objective=np.nan, status=status,
                        iterations=out.iterations, solve_time=out.solve_time)

    z = np.asarray(out.x)
    y = np.asarray(out.z)
    grad = P @ z + prog.q
    dual_term = A.T @ y
    stationarity = np.max(np.abs(grad + dual_term), initial=0.0)
    scale = max(1.0, np.max(np.abs(grad), initial=0.0), np.max(np.abs(dual_term), initial=0.0))
    kkt = stationarity / scale
    primal = prog.max_violation(z, relative=True)
    if not (np.all(np.isfinite(z)) and primal <= options.primal_tol and kkt <= options.kkt_tol):
        status = NUMERICAL_ERROR
    return Solution(
        z=z, objective=prog.objective(z), status=status, primal_residual=primal,
        kkt_residual=kkt, iterations=out.iterations, solve_time=out.solve_time,
    )


def dump_program(prog: ConvexProgram) -> str:
    """Plain-text rendering of a program for debugging.

    Layout, one section per header line::

        VARIABLES n
        BLOCK name start stop          (one line per label)
        OBJECTIVE const
        P  (n rows of n numbers)
        q  (one row of n numbers)
        INEQUALITIES m                 (m rows: n coefficients then rhs)
        EQUALITIES m                   (same layout)
        BOUNDS                         (two rows: lower, upper; inf allowed)
        NORM rows radius               (rows of n coefficients then offset)
    """
    fmt = lambda row: " ".join(f"{v:.17g}" for v in row)  # noqa: E731
    n = prog.n
    lines = [f"VARIABLES {n}"]
    lines += [f"BLOCK {name} {a} {b}" for name, a, b in prog.labels]
    lines.append(f"OBJECTIVE {prog.const:.17g}")
    lines.append("P")
    lines += [fmt(r) for r in prog.P]
    lines.append("q")
    lines.append(fmt(prog.q))
    for title, A, b in (("INEQUALITIES", prog.A_ub, prog.b_ub), ("EQUALITIES", prog.A_eq, prog.b_eq)):
        m = 0 if A is None else A.shape[0]
        lines.append(f"{title} {m}")
        for i in range(m):
            lines.append(fmt(np.append(A[i], b[i])))
    lines.append("BOUNDS")
    lines.append(fmt(prog.lb if prog.lb is not None else np.full(n, -np.inf)))
    lines.append(fmt(prog.ub if prog.ub is not None else np.full(n, np.inf)))
    if prog.norm is None:
        lines.append("NORM 0 0")
    else:
        nc = prog.norm
        lines.append(f"NORM {nc.M.shape[0]} {nc.radius:.17g}")
        for i in range(nc.M.shape[0]):
            lines.append(fmt(np.append(nc.M[i], nc.m0[i])))
    return "\n".join(lines) + "\n"
