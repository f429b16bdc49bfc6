"""Cutting-plane solver for the distributionally robust MPC problem.

The master problem is a convex QP with one norm constraint over
``z = [u_bar | gamma | nu (one per distinct sample)]``. It is refined by two
kinds of cuts:

* dual cuts ``theta_w >= pi^T (B1 u + xi_w)`` for dual vertices ``pi`` of the
  penalty, appended while the current plan violates them;
* support points ``(w_w, xi_w)`` produced by maximizing the per-sample value
  function, which add rows

      nu_s >= theta_w + q_w(u) - gamma c(w_w, w_s)

  for every sample ``s``, where ``q_w(u)`` collects the quadratic-cost terms
  that the worst-case disturbance ``w_w`` contributes.

The support values ``theta_w`` are the largest dual cut at each support (or
zero) and are substituted into the rows instead of being kept as variables:
as variables they reach magnitudes near 1e6 that cancel against ``gamma c``
and spoil the interior-point accuracy.

Every cut is a lower bound on the true objective, so master values increase
monotonically, and the final master value equals the reformulated cost once
no violated cut remains.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import convex
from .errors import ControllerError, DomainError, SolverError
from .penalty import dual_vertex
from .reformulation import InnerProblem, TsdrProblem, cost_constant, inner_objective
from .system import input_constraint_rows

CUT_FORMS = ("gamma_scaled", "unscaled", "gamma_norm")


@dataclass
class CuttingPlaneConfig:
    tol_cut: float = 1e-7
    tol_sep: float = 1e-6
    max_outer: int = 200
    max_master: int = 500
    cut_form: str = "gamma_scaled"
    multistart: bool = True
    relax_terminal: bool = False
    probe_bisections: int = 4

    def __post_init__(self):
        if self.cut_form not in CUT_FORMS:
            raise ValueError(f"cut_form must be one of {CUT_FORMS}, got {self.cut_form!r}")


@dataclass
class SupportPoint:
    w: np.ndarray
    xi: np.ndarray
    vertices: list = field(default_factory=list)

    def has_vertex(self, pi) -> bool:
        return any(np.array_equal(pi, v) for v in self.vertices)


@dataclass
class MasterState:
    u_bar: np.ndarray
    gamma: float
    nu: np.ndarray
    theta: np.ndarray
    objective: float


@dataclass
class SolveDiagnostics:
    outer_iterations: int = 0
    master_solves: int = 0
    dual_cuts: int = 0
    supports_added: int = 0
    wall_time: float = 0.0
    termination: str = ""
    master_objectives: list = field(default_factory=list)
    terminal_slack: float = 0.0
    upper_value: float = np.nan

    @property
    def cuts(self) -> int:
        return self.dual_cuts + self.supports_added

    @property
    def monotone_violation(self) -> float:
        """Largest relative decrease between consecutive master values (<= 0 if monotone)."""
        obj = np.asarray(self.master_objectives)
        if obj.size < 2:
            return 0.0
        drop = obj[:-1] - obj[1:]
        return float(np.max(drop / np.maximum(1.0, np.abs(obj[:-1]))))


@dataclass
class CuttingPlaneResult:
    u_bar: np.ndarray
    gamma: float
    J: float
    diagnostics: SolveDiagnostics
    supports: list
    samples: np.ndarray
    tight_supports: list = field(default_factory=list)


def unique_samples(samples):
    """Distinct sample vectors and their multiplicities, in first-seen order."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    uniq, idx, counts = np.unique(samples, axis=0, return_index=True, return_counts=True)
    order = np.argsort(idx)
    return uniq[order], counts[order].astype(float)


class CutPool:
    """Support points and every master row they induce at a fixed state.

    Rows are stored densely over ``z = [u_bar | gamma | nu]`` together with a
    flag telling whether the row is currently passed to the solver.
    """

    def __init__(self, x, samples, problem: TsdrProblem, cut_form="gamma_scaled"):
        self.x = np.asarray(x, dtype=float)
        self.problem = problem
        self.cut_form = cut_form
        self.uniq, self.counts = samples
        lifted = problem.lifted
        self.n_ub = problem.n_u_bar
        self.n_s = len(self.uniq)
        self.n_z = self.n_ub + 1 + self.n_s
        Ax = lifted.A_bar @ self.x
        self._BQD = lifted.B_bar.T @ problem.QD
        self._AQD = Ax @ problem.QD
        self.sample_outputs = self.uniq @ lifted.FD.T + lifted.FA @ self.x + lifted.G
        self.supports: list[SupportPoint] = []
        self._XI = np.zeros((0, lifted.F.shape[0]))
        self.G = np.zeros((0, self.n_z))
        self.rhs = np.zeros(0)
        self.active = np.zeros(0, dtype=bool)
        self.row_sample = np.zeros(0, dtype=int)
        self.row_support = np.zeros(0, dtype=int)
        self.last_z = None

    @property
    def n_rows(self) -> int:
        return self.rhs.size

    def _rows(self, sp: SupportPoint, V):
        """Rows ``nu_s >= pi^T (B1 u + xi) + q(u) - gamma c_s`` for vertices ``V``, all samples."""
        prob = self.problem
        lifted = prob.lifted
        g_u = V @ lifted.B1 + 2.0 * self._BQD @ sp.w
        k0 = V @ sp.xi + sp.w @ prob.DQD @ sp.w + 2.0 * self._AQD @ sp.w
        if self.cut_form == "gamma_norm":
            c = np.linalg.norm(self.sample_outputs - sp.xi, axis=1)
        else:
            D = self.uniq - sp.w
            c = 0.5 * np.sum((D @ prob.ambiguity.C_s) * D, axis=1)
        n_v = V.shape[0]
        R = np.zeros((self.n_s, n_v, self.n_z))
        R[:, :, :self.n_ub] = g_u[None]
        R[np.arange(self.n_s), :, self.n_ub + 1 + np.arange(self.n_s)] = -1.0
        b = np.repeat(-k0[None, :], self.n_s, axis=0)
        if self.cut_form == "unscaled":
            b = b + c[:, None]
        else:
            R[:, :, self.n_ub] = -c[:, None]
        return R.reshape(-1, self.n_z), b.ravel()

    def _append(self, R, b, active_sample=None):
        n_v = b.size // self.n_s
        sample = np.repeat(np.arange(self.n_s), n_v)
        self.G = np.vstack([self.G, R])
        self.rhs = np.concatenate([self.rhs, b])
        self.active = np.concatenate([self.active, sample == active_sample])
        self.row_sample = np.concatenate([self.row_sample, sample])
        self.row_support = np.concatenate([self.row_support, np.full(b.size, len(self.supports) - 1)])

    def add_support(self, w, xi, pi=None, active_sample=None) -> int:
        """Store a support and its rows; only rows of ``active_sample`` (if any) start active.

        ``pi`` is one penalty vertex or a stack of them, one per row.
        """
        sp = SupportPoint(w=np.asarray(w, dtype=float), xi=np.asarray(xi, dtype=float))
        self.supports.append(sp)
        self._XI = np.vstack([self._XI, sp.xi])
        V = np.zeros((1, self.problem.h.size))
        if pi is not None:
            for p in np.atleast_2d(np.asarray(pi, dtype=float)):
                if np.any(p) and not sp.has_vertex(p):
                    sp.vertices.append(p)
                    V = np.vstack([V, p])
        R, b = self._rows(sp, V)
        self._append(R, b, active_sample)
        return len(self.supports) - 1

    def add_vertex(self, k, pi) -> bool:
        sp = self.supports[k]
        if sp.has_vertex(pi) or not np.any(pi):
            return False
        sp.vertices.append(np.asarray(pi, dtype=float))
        R, b = self._rows(sp, np.asarray(pi, dtype=float)[None, :])
        self._append(R, b)
        return True

    def find(self, xi, tol_sep) -> int | None:
        """Index of a support within ``tol_sep (1 + |xi|)`` in the C-norm, if any."""
        if not self.supports:
            return None
        D = self._XI - xi
        dist = np.sqrt(np.sum((D @ self.problem.ambiguity.C) * D, axis=1))
        k = int(np.argmin(dist))
        return k if dist[k] <= tol_sep * (1.0 + np.linalg.norm(xi)) else None

    def offer(self, res, tol_sep) -> int:
        """Add an inner-maximization result as a support or a new vertex; 1 if anything changed."""
        k = self.find(res.xi, tol_sep)
        if k is None:
            self.add_support(res.w_star, res.xi, res.pi)
            return 1
        return int(self.add_vertex(k, res.pi))

    def violations(self, z) -> np.ndarray:
        """Row violations ``G z - rhs``.

        These are absolute on purpose: every row bounds one ``nu`` entry, so
        a violation is an objective error of the same size, however large
        the cancelling terms inside the row are.
        """
        return self.G @ z - self.rhs

    def tight_supports(self, z, rtol=1e-6) -> list:
        """Supports with at least one row holding with equality at ``z`` (up to ``rtol``)."""
        tight = self.violations(z) >= -rtol * (1.0 + np.abs(self.rhs))
        return [self.supports[k] for k in np.unique(self.row_support[tight])]

    def most_violated(self, z, tol) -> np.ndarray:
        """Mask of the most violated inactive row per sample (violation above ``tol``)."""
        v = np.where(self.active, -np.inf, self.violations(z))
        pick = np.zeros(v.size, dtype=bool)
        for s in range(self.n_s):
            idx = np.flatnonzero(self.row_sample == s)
            if idx.size:
                j = idx[np.argmax(v[idx])]
                pick[j] = v[j] > tol
        return pick

    def support_values(self, u_bar) -> np.ndarray:
        """``theta_w = max(0, max_j pi_j^T (B1 u + xi_w))`` for every support."""
        out = np.zeros(len(self.supports))
        B1u = self.problem.lifted.B1 @ u_bar
        for k, sp in enumerate(self.supports):
            if sp.vertices:
                out[k] = max(0.0, float(np.max(np.vstack(sp.vertices) @ (B1u + sp.xi))))
        return out


def base_program(x, pool: CutPool, problem: TsdrProblem, terminal_radius=None):
    """Objective, input rows, multiplier bound and terminal ball of the master."""
    lifted = problem.lifted
    n_ub, n_z = pool.n_ub, pool.n_z
    P = np.zeros((n_z, n_z))
    P[:n_ub, :n_ub] = 2.0 * problem.H_uu
    q = np.zeros(n_z)
    q[:n_ub] = 2.0 * lifted.B_bar.T @ problem.weights.Q_bar @ (lifted.A_bar @ x)
    q[n_ub] = problem.ambiguity.epsilon
    q[n_ub + 1:] = pool.counts / pool.counts.sum()
    M_in, b_in = input_constraint_rows(problem.system, lifted, x, problem.u_min, problem.u_max)
    lb = np.full(n_z, -np.inf)
    lb[n_ub] = problem.gamma_min
    if terminal_radius is None:
        terminal_radius = np.sqrt(problem.l_c) * np.linalg.norm(x)
    norm = convex.NormConstraint(
        M=np.hstack([lifted.C_AB, np.zeros((lifted.C_AB.shape[0], n_z - n_ub))]),
        m0=lifted.A_pow_N @ x,
        radius=float(terminal_radius),
    )
    return convex.ConvexProgram(
        P=P, q=q, const=cost_constant(x, problem),
        A_ub=np.hstack([M_in, np.zeros((M_in.shape[0], n_z - n_ub))]), b_ub=b_in,
        lb=lb, norm=norm,
        labels=[("u_bar", 0, n_ub), ("gamma", n_ub, n_ub + 1), ("nu", n_ub + 1, n_z)],
    )


def assemble_master(x, samples, supports, problem: TsdrProblem, cut_form="gamma_scaled",
                    terminal_radius=None):
    """Full master program over the given supports, every cut row included.

    ``samples`` is the ``(distinct samples, multiplicities)`` pair returned by
    :func:`unique_samples`.
    """
    if not supports:
        raise ValueError("the master needs at least one support point")
    pool = CutPool(x, samples, problem, cut_form)
    for sp in supports:
        k = pool.add_support(sp.w, sp.xi)
        for pi in sp.vertices:
            pool.add_vertex(k, pi)
    prog = base_program(x, pool, problem, terminal_radius)
    prog.A_ub = np.vstack([pool.G, prog.A_ub])
    prog.b_ub = np.concatenate([pool.rhs, prog.b_ub])
    return prog


def solve_master(pool: CutPool, base: convex.ConvexProgram, options=None, tol=1e-10):
    """Solve the master over the whole pool, passing only rows that have bitten.

    After each solve the most violated inactive row of every sample joins the
    working set, and rows never leave it, so the returned value is the exact
    optimum over all pool rows. Returns ``(solution, solver_calls)``.
    """
    calls = 0
    if pool.last_z is not None:
        # rows cut off by the previous master point are almost surely binding
        pool.active = pool.active | pool.most_violated(pool.last_z, tol)
    while True:
        act = pool.active
        prog = convex.ConvexProgram(
            P=base.P, q=base.q, const=base.const,
            A_ub=np.vstack([pool.G[act], base.A_ub]),
            b_ub=np.concatenate([pool.rhs[act], base.b_ub]),
            lb=base.lb, norm=base.norm, labels=base.labels,
        )
        sol = convex.solve(prog, options)
        calls += 1
        if not sol.ok:
            return sol, calls
        new = pool.most_violated(sol.z, tol)
        if not new.any():
            pool.last_z = sol.z
            return sol, calls
        pool.active = act | new


def terminal_reach(x, problem: TsdrProblem) -> float:
    """Smallest terminal-state norm reachable under the input box."""
    lifted = problem.lifted
    M_in, b_in = input_constraint_rows(problem.system, lifted, x, problem.u_min, problem.u_max)
    m0 = lifted.A_pow_N @ x
    prog = convex.ConvexProgram(
        P=2.0 * lifted.C_AB.T @ lifted.C_AB, q=2.0 * lifted.C_AB.T @ m0, const=float(m0 @ m0),
        A_ub=M_in, b_ub=b_in,
    )
    sol = convex.solve(prog)
    if not sol.ok:
        raise ControllerError(f"input box alone is {sol.status}", diagnostics=None)
    return float(np.linalg.norm(m0 + lifted.C_AB @ sol.z))


def dual_step(u_bar, theta, pool: CutPool, tol_cut=1e-7) -> int:
    """Append violated dual vertices; returns how many were appended."""
    added = 0
    B1u = pool.problem.lifted.B1 @ u_bar
    for k, sp in enumerate(pool.supports):
        s = B1u + sp.xi
        pi = dual_vertex(pool.problem.h, s)
        value = float(pi @ s)
        if value - theta[k] > tol_cut * max(1.0, abs(value)):
            added += pool.add_vertex(k, pi)
    return added


def separation_step(u_bar, gamma, nu, pool: CutPool, tol_cut=1e-7, tol_sep=1e-6,
                    multistart=True):
    """Maximize each per-sample value function and add the violated supports.

    Returns ``(changes, values)`` where ``values`` holds the per-sample value
    function at the current point.
    """
    inner = InnerProblem(u_bar, gamma, pool.x, pool.problem, multistart=multistart)
    results = inner.evaluate_many(pool.uniq)
    values = np.array([r.value for r in results])
    changes = 0
    for j, res in enumerate(results):
        if res.value - nu[j] > tol_cut * max(1.0, abs(res.value)):
            changes += pool.offer(res, tol_sep)
    return changes, values


def low_gamma_probe(u_bar, gamma, nu, pool: CutPool, tol_cut=1e-7, tol_sep=1e-6,
                    multistart=True, bisections=4) -> int:
    """Generate well-scaled cuts when the master multiplier sits on its lower bound.

    Near the lower bound the worst-case disturbance blows up, so cuts taken
    there have coefficients many orders of magnitude apart and degrade every
    later master solve. Cuts are valid at any multiplier, so instead the probe
    locates the multiplier minimizing ``epsilon * gamma + mean V`` for the
    current plan (its derivative is ``epsilon`` minus the mean transport cost
    of the worst-case disturbances) by bisection on a log scale, and adds the
    cuts found around it that the current master point violates.
    """
    problem = pool.problem
    weights = pool.counts / pool.counts.sum()
    eps = problem.ambiguity.epsilon
    g_lo = problem.gamma_lower
    C_s = problem.ambiguity.C_s

    evaluated = {}

    def at(offset):
        inner = InnerProblem(u_bar, g_lo + offset, pool.x, problem, multistart=multistart)
        results = inner.evaluate_many(pool.uniq)
        evaluated[offset] = results
        D = np.array([r.w_star for r in results]) - pool.uniq
        return float(weights @ (0.5 * np.sum((D @ C_s) * D, axis=1)))

    lo, hi = np.log(problem.gamma_min - g_lo), np.log(max(g_lo, 1.0))
    c_hi = at(np.exp(hi))
    for _ in range(60):
        if c_hi <= eps:
            break
        lo, hi = hi, hi + np.log(4.0)
        c_hi = at(np.exp(hi))
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        if at(np.exp(mid)) > eps:
            lo = mid
        else:
            hi = mid

    def offer_all(offsets):
        count = 0
        for offset in offsets:
            for j, (res, w_s) in enumerate(zip(evaluated[offset], pool.uniq)):
                cut = inner_objective(res.w_star, res.pi, u_bar, gamma, pool.x, w_s, problem)
                if cut - nu[j] > tol_cut * max(1.0, abs(cut)):
                    count += pool.offer(res, tol_sep)
        return count

    # a single tangent of slope ~epsilon leaves the master indifferent in
    # gamma; the bisection points on both sides of the minimizer expose the
    # curvature, and the fixed spread below is only a fallback
    center = np.exp(hi)
    changes = offer_all([o for o in evaluated if center / 8.0 <= o <= center * 8.0])
    if not changes:
        spread = [center * f for f in (0.25, 0.5, 1.0, 2.0) if g_lo + center * f > problem.gamma_min]
        for offset in spread:
            if offset not in evaluated:
                at(offset)
        changes = offer_all(spread)
    return changes


def run_cutting_plane(x, samples, problem: TsdrProblem, config: CuttingPlaneConfig | None = None,
                      solver_options: convex.SolverOptions | None = None,
                      warm_start=()) -> CuttingPlaneResult:
    """Solve one receding-horizon problem from state ``x`` with empirical ``samples``.

    ``warm_start`` takes supports from an earlier solve, typically the
    previous control step. Every disturbance and penalty vertex gives a valid
    lower cut at any state, so they only seed the pool; their constraint
    outputs are recomputed at ``x`` and their rows start inactive.
    """
    config = config or CuttingPlaneConfig()
    t0 = time.perf_counter()
    x = np.asarray(x, dtype=float)
    pool = CutPool(x, unique_samples(samples), problem, config.cut_form)
    for j, (w, xi) in enumerate(zip(pool.uniq, pool.sample_outputs)):
        pool.add_support(w, xi, active_sample=j)
    for sp in warm_start:
        xi = problem.lifted.constraint_output(x, sp.w)
        if pool.find(xi, config.tol_sep) is None:
            pool.add_support(sp.w, xi, sp.vertices or None)
    diag = SolveDiagnostics()

    def fail(msg, exc=None):
        diag.wall_time = time.perf_counter() - t0
        raise ControllerError(msg, diagnostics=diag) from exc

    radius = np.sqrt(problem.l_c) * np.linalg.norm(x)
    reach = terminal_reach(x, problem)
    if reach > radius * (1.0 + 1e-9) + 1e-12:
        if not config.relax_terminal:
            raise ControllerError(
                f"terminal constraint infeasible under the input box: smallest reachable "
                f"norm {reach:.6g} exceeds radius {radius:.6g}",
                diagnostics={"terminal_reach": reach, "terminal_radius": radius},
            )
        diag.terminal_slack = reach * (1.0 + 1e-6) - radius
        radius = radius + diag.terminal_slack
    base = base_program(x, pool, problem, radius)
    n_ub = problem.n_u_bar

    while True:
        diag.outer_iterations += 1
        while True:
            if diag.master_solves >= config.max_master:
                diag.termination = "iteration-cap"
                fail("master-solve cap reached")
            sol, _ = solve_master(pool, base, solver_options)
            diag.master_solves += 1
            if not sol.ok:
                fail(f"master problem {sol.status}")
            u = sol.z[:n_ub]
            gamma = max(float(sol.z[n_ub]), problem.gamma_min)
            nu = sol.z[n_ub + 1:]
            theta = pool.support_values(u)
            state = MasterState(u_bar=u, gamma=gamma, nu=nu, theta=theta, objective=sol.objective)
            diag.master_objectives.append(sol.objective)
            added = dual_step(u, theta, pool, config.tol_cut)
            diag.dual_cuts += added
            if not added:
                break
        try:
            probed = 0
            at_bound = state.gamma <= problem.gamma_min * (1.0 + 1e-4)
            if at_bound and config.cut_form == "gamma_scaled":
                probed = low_gamma_probe(
                    state.u_bar, state.gamma, state.nu, pool, config.tol_cut, config.tol_sep,
                    config.multistart, config.probe_bisections,
                )
            if probed:
                changes = probed
            else:
                changes, values = separation_step(
                    state.u_bar, state.gamma, state.nu, pool, config.tol_cut, config.tol_sep,
                    config.multistart,
                )
        except (DomainError, SolverError) as exc:
            fail(f"separation failed: {exc}", exc)
        diag.supports_added += changes
        if not changes:
            diag.termination = "converged"
            first_stage = base.objective(np.concatenate([state.u_bar, [state.gamma], np.zeros(pool.n_s)]))
            diag.upper_value = float(first_stage + pool.counts @ values / pool.counts.sum())
            break
        if diag.outer_iterations >= config.max_outer:
            diag.termination = "iteration-cap"
            fail("outer iteration cap reached")

    diag.wall_time = time.perf_counter() - t0
    return CuttingPlaneResult(
        u_bar=state.u_bar, gamma=state.gamma, J=state.objective, diagnostics=diag,
        supports=pool.supports, samples=pool.uniq, tight_supports=pool.tight_supports(pool.last_z),
    )
