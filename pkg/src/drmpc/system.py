"""Plant model, horizon lifting and terminal ingredients.

All matrices are stored as read-only float arrays so that a plant or a lifted
problem can be shared between concurrent simulation runs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractionWarning, SolverError, StructuralError


def _frozen(a, ndim=2) -> np.ndarray:
    arr = np.array(a, dtype=float, ndmin=ndim, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time plant ``x+ = A x + B u + D w``.

    When ``K`` is set the system is a pre-stabilized copy: ``A`` already holds
    ``A + B K`` and the physical input is ``u = K x + v`` where ``v`` is the
    input seen by this model.
    """

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    K: np.ndarray | None = None

    def __post_init__(self):
        for name in ("A", "B", "D"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.K is not None:
            object.__setattr__(self, "K", _frozen(self.K))
        n_x = self.A.shape[0]
        if self.A.shape != (n_x, n_x):
            raise ConfigError(f"A must be square, got shape {self.A.shape}")
        if self.B.shape[0] != n_x or self.D.shape[0] != n_x:
            raise ConfigError(
                f"B and D need {n_x} rows, got {self.B.shape} and {self.D.shape}"
            )
        if self.K is not None and self.K.shape != (self.n_u, n_x):
            raise ConfigError(f"K must be {self.n_u}x{n_x}, got {self.K.shape}")
        for name in ("A", "B", "D"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigError(f"{name} has non-finite entries")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.D.shape[1]

    def step(self, x, u, w) -> np.ndarray:
        return self.A @ x + self.B @ np.atleast_1d(u) + self.D @ np.atleast_1d(w)

    def physical_input(self, x, v) -> np.ndarray:
        """Map the model input ``v`` back to the plant input."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if self.K is None:
            return v
        return self.K @ x + v


@dataclass(frozen=True)
class NormBounds:
    L_A: float
    L_B: float
    L_D: float
    u_u: float

    @property
    def contraction(self) -> bool:
        return self.L_A < 1.0

    def require_contraction(self):
        if not self.contraction:
            raise StructuralError(
                f"state matrix is not a contraction: ||A||_2 = {self.L_A:.6g} >= 1"
            )


@dataclass(frozen=True)
class LiftedProblem:
    """Horizon-N stacked prediction matrices.

    ``x_bar = A_bar x + B_bar u_bar + D_bar w_bar`` with ``x_bar`` holding the
    predicted states 1..N, and the stacked constraint ``F x_bar + G <= 0``.
    """

    A_bar: np.ndarray
    B_bar: np.ndarray
    D_bar: np.ndarray
    F: np.ndarray
    G: np.ndarray
    C_AB: np.ndarray
    A_pow_N: np.ndarray
    N: int
    F0: np.ndarray
    G0: np.ndarray
    B1: np.ndarray = field(init=False)
    FD: np.ndarray = field(init=False)
    FA: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "B1", _frozen(self.F @ self.B_bar))
        object.__setattr__(self, "FD", _frozen(self.F @ self.D_bar))
        object.__setattr__(self, "FA", _frozen(self.F @ self.A_bar))

    @property
    def n_c(self) -> int:
        return self.F0.shape[0]

    def predict(self, x, u_bar, w_bar=None) -> np.ndarray:
        out = self.A_bar @ x + self.B_bar @ u_bar
        if w_bar is not None:
            out = out + self.D_bar @ w_bar
        return out

    def constraint_output(self, x, w_bar) -> np.ndarray:
        """The uncertain part of the stacked constraint, ``F D_bar w + F A_bar x + G``."""
        return self.FD @ w_bar + self.FA @ x + self.G

    def terminal_state(self, x, u_bar) -> np.ndarray:
        return self.A_pow_N @ x + self.C_AB @ u_bar


def _block_toeplitz(A, M, N):
    n_x, m = M.shape
    out = np.zeros((N * n_x, N * m))
    blocks = [M]
    for _ in range(N - 1):
        blocks.append(A @ blocks[-1])
    for i in range(N):
        for j in range(i + 1):
            out[i * n_x:(i + 1) * n_x, j * m:(j + 1) * m] = blocks[i - j]
    return out


def build_lifted(sys: LtiSystem, F0, G0, N: int) -> LiftedProblem:
    if N < 1:
        raise ConfigError(f"horizon N must be >= 1, got {N}")
    F0 = np.array(F0, dtype=float, ndmin=2)
    G0 = np.array(G0, dtype=float).ravel()
    if F0.shape[1] != sys.n_x:
        raise ConfigError(f"F0 needs {sys.n_x} columns, got {F0.shape[1]}")
    if G0.shape[0] != F0.shape[0]:
        raise ConfigError(f"G0 needs {F0.shape[0]} entries, got {G0.shape[0]}")

    A = sys.A
    powers = [np.eye(sys.n_x)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    A_bar = np.vstack(powers[1:])
    B_bar = _block_toeplitz(A, sys.B, N)
    D_bar = _block_toeplitz(A, sys.D, N)
    C_AB = np.hstack([powers[N - 1 - j] @ sys.B for j in range(N)])
    F = np.kron(np.eye(N), F0)
    G = np.tile(G0, N)
    return LiftedProblem(
        A_bar=_frozen(A_bar), B_bar=_frozen(B_bar), D_bar=_frozen(D_bar),
        F=_frozen(F), G=_frozen(G, 1), C_AB=_frozen(C_AB),
        A_pow_N=_frozen(powers[N]), N=N, F0=_frozen(F0), G0=_frozen(G0, 1),
    )


@dataclass(frozen=True)
class RiccatiResult:
    P: np.ndarray
    K: np.ndarray
    residual: float
    iterations: int


def riccati_residual(A, B, Q, R, P) -> np.ndarray:
    BtPA = B.T @ P @ A
    return A.T @ P @ A - P + Q - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)


def solve_riccati(A, B, Q, R, tol=1e-12, max_iter=100) -> RiccatiResult:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Uses the structure-preserving doubling iteration followed by a couple of
    Riccati-recursion sweeps to polish the residual.
    """
    A = np.array(A, dtype=float, ndmin=2)
    B = np.array(B, dtype=float, ndmin=2)
    Q = np.array(Q, dtype=float, ndmin=2)
    R = np.array(R, dtype=float, ndmin=2)
    n = A.shape[0]
    I = np.eye(n)

    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    # an unstabilizable pair makes the iterates blow up; that is caught below
    # as a non-finite or unconverged result rather than reported as overflow
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            W = np.linalg.solve(I + Gk @ Hk, np.hstack([Ak, Gk]))
            WA, WG = W[:, :n], W[:, n:]
            A_next = Ak @ WA
            G_next = Gk + Ak @ WG @ Ak.T
            H_next = Hk + Ak.T @ Hk @ WA
            H_next = 0.5 * (H_next + H_next.T)
            G_next = 0.5 * (G_next + G_next.T)
            change = np.max(np.abs(H_next - Hk))
            Ak, Gk, Hk = A_next, G_next, H_next
            if not np.all(np.isfinite(Hk)):
                raise SolverError("doubling iteration diverged; is (A, B) stabilizable?")
            if change <= tol * max(1.0, np.max(np.abs(Hk))):
                break
        else:
            res = np.max(np.abs(riccati_residual(A, B, Q, R, Hk)))
            raise SolverError(f"doubling iteration did not converge, residual {res:.3e}")

    P = Hk
    for _ in range(3):
        BtPA = B.T @ P @ A
        P = Q + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)
        P = 0.5 * (P + P.T)
    residual = float(np.max(np.abs(riccati_residual(A, B, Q, R, P))))
    if not np.isfinite(residual) or residual > 1e-9 * max(1.0, np.max(np.abs(P))):
        raise SolverError(f"Riccati residual too large: {residual:.3e}")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return RiccatiResult(P=_frozen(P), K=_frozen(K), residual=residual, iterations=it)


@dataclass(frozen=True)
class CostWeights:
    """Stage weights ``Q``, ``R`` and terminal weight ``P`` plus their stacks."""

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    N: int
    Q_bar: np.ndarray = field(init=False)
    R_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        for name in ("Q", "R", "P"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n_x = self.Q.shape[0]
        Q_bar = np.zeros((self.N * n_x, self.N * n_x))
        for i in range(self.N - 1):
            Q_bar[i * n_x:(i + 1) * n_x, i * n_x:(i + 1) * n_x] = self.Q
        Q_bar[-n_x:, -n_x:] = self.P
        object.__setattr__(self, "Q_bar", _frozen(Q_bar))
        object.__setattr__(self, "R_bar", _frozen(np.kron(np.eye(self.N), self.R)))

    def stage_cost(self, x, u) -> float:
        x = np.atleast_1d(x)
        u = np.atleast_1d(u)
        return float(x @ self.Q @ x + u @ self.R @ u)

    def terminal_cost(self, x) -> float:
        return float(x @ self.P @ x)


def prestabilize(sys: LtiSystem, K) -> LtiSystem:
    """Close the loop with ``u = K x + v``; the returned model takes ``v``.

    Warns with :class:`ContractionWarning` when ``||A + B K||_2 >= 1``.
    """
    K = np.array(K, dtype=float, ndmin=2)
    A_K = sys.A + sys.B @ K
    K_total = K if sys.K is None else sys.K + K
    if np.linalg.norm(A_K, 2) >= 1.0:
        warnings.warn(
            f"||A + B K||_2 = {np.linalg.norm(A_K, 2):.4f} >= 1; the contraction "
            "assumption of the stability analysis does not hold",
            ContractionWarning,
            stacklevel=2,
        )
    return LtiSystem(A=A_K, B=sys.B, D=sys.D, K=K_total)


def disturbance_observability(F0, A, D, N: int):
    """Stack ``F0 A^i D`` for i < N and return it with its numerical rank."""
    F0 = np.array(F0, dtype=float, ndmin=2)
    A = np.array(A, dtype=float, ndmin=2)
    D = np.array(D, dtype=float, ndmin=2)
    blocks = []
    Ai_D = D
    for _ in range(N):
        blocks.append(F0 @ Ai_D)
        Ai_D = A @ Ai_D
    O_D = np.vstack(blocks)
    sv = np.linalg.svd(O_D, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return O_D, 0
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    return O_D, rank


def lc_threshold(A, B, K, N: int) -> float:
    """Smallest ``l_c`` for which the LQR sequence meets the terminal constraint."""
    A_K = np.array(A, dtype=float, ndmin=2) + np.array(B, dtype=float, ndmin=2) @ np.array(
        K, dtype=float, ndmin=2
    )
    M = np.linalg.matrix_power(A_K, N)
    return float(np.linalg.eigvalsh(M.T @ M)[-1])


def check_lc(A, B, K, N: int, l_c: float) -> bool:
    return lc_threshold(A, B, K, N) <= l_c + 1e-10


def norm_bounds(sys: LtiSystem, u_min, u_max, N: int) -> NormBounds:
    width = np.asarray(u_max, dtype=float) - np.asarray(u_min, dtype=float)
    return NormBounds(
        L_A=float(np.linalg.norm(sys.A, 2)),
        L_B=float(np.linalg.norm(sys.B, 2)),
        L_D=float(np.linalg.norm(sys.D, 2)),
        u_u=float(np.sqrt(N) * np.linalg.norm(width)),
    )


def input_constraint_rows(sys: LtiSystem, lifted: LiftedProblem, x, u_min, u_max):
    """Linear rows ``M u_bar <= b`` enforcing the physical input box.

    For a pre-stabilized model the box applies to ``K z_i + v_i`` along the
    nominal prediction ``z``, which is affine in the decision ``v_bar``.
    """
    N, n_u = lifted.N, sys.n_u
    u_min = np.broadcast_to(np.asarray(u_min, dtype=float), (n_u,))
    u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (n_u,))
    lo = np.tile(u_min, N)
    hi = np.tile(u_max, N)
    if sys.K is None:
        gain = np.eye(N * n_u)
        offset = np.zeros(N * n_u)
    else:
        n_x = sys.n_x
        # nominal states z_0..z_{N-1}: z_0 = x, the rest from the lifted rows
        Z_x = np.vstack([np.eye(n_x), lifted.A_bar[:-n_x]]) if N > 1 else np.eye(n_x)
        Z_u = np.zeros((N * n_x, N * n_u))
        if N > 1:
            Z_u[n_x:] = lifted.B_bar[:-n_x]
        K_bar = np.kron(np.eye(N), sys.K)
        gain = K_bar @ Z_u + np.eye(N * n_u)
        offset = K_bar @ Z_x @ x
    M = np.vstack([gain, -gain])
    b = np.concatenate([hi - offset, offset - lo])
    return M, b
