"""Independent reference computations used by the tests.

Nothing here imports the package internals: each oracle rebuilds what it
needs from the raw problem data with plain loops, grids or scipy.
"""

import numpy as np
from scipy.linalg import solve_discrete_are

BENCHMARK_PLANT = dict(
    A=[[1.0, 1.0], [0.0, 1.0]],
    B=[[0.5], [1.0]],
    D=np.eye(2),
    F0=[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
    G0=[-2.0, -10.0, -2.0, -2.0],
    Q=np.eye(2),
    R=[[0.1]],
    N=3,
    epsilon=0.01,
    n=10,
    h=1000.0,
    l_c=2.0,
    u_min=-1.0,
    u_max=1.0,
)


def lqr(A, B, Q, R):
    """Terminal weight and gain ``u = K x`` from scipy's Riccati solver."""
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    P = solve_discrete_are(A, B, Q, R)
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return P, K


def rollout(A, B, D, x, us, ws):
    """States ``x_1 .. x_N`` by stepping the dynamics one at a time."""
    A, B, D = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, D))
    xs = []
    for u, w in zip(us, ws):
        x = A @ x + B @ np.atleast_1d(u) + D @ np.atleast_1d(w)
        xs.append(x)
    return np.array(xs)


class ScalarToy:
    """One state, input, disturbance and constraint row with a one-step horizon.

    The worst-case expected cost of an input offset ``v`` is

        min_{gamma > gamma_lo} eps gamma + mean_s max_w [ q x^2 + r v^2 + p (c + w)^2
            + h max(0, f (c + w) + g) - gamma / 2 cs (w - w_s)^2 ],   c = a_K x + b v,

    and the inner maximum is exact: for each penalty vertex ``pi in {0, h}``
    the remaining concave quadratic in ``w`` is maximized in closed form.
    """

    def __init__(self, a, b, q, r, f, g, eps, h, l_c, u_min, u_max, x, samples):
        self.a, self.b, self.q, self.r = a, b, q, r
        self.f, self.g, self.eps, self.h = f, g, eps, h
        self.l_c, self.u_min, self.u_max = l_c, u_min, u_max
        self.x = x
        self.samples = np.asarray(samples, dtype=float)
        P, K = lqr([[a]], [[b]], [[q]], [[r]])
        self.p, self.k = float(P[0, 0]), float(K[0, 0])
        self.a_K = a + b * self.k
        self.cs = f * f  # transport weight pulled back from the output, C = 1
        self.gamma_lo = 2.0 * self.p / self.cs

    def build_args(self):
        return ([[self.a]], [[self.b]], [[1.0]], [[self.f]], [self.g], [[self.q]], [[self.r]],
                1, self.eps, len(self.samples), self.h, self.l_c, self.u_min, self.u_max)

    def v_range(self):
        """Input offsets meeting the input box and the terminal constraint."""
        lo, hi = self.u_min - self.k * self.x, self.u_max - self.k * self.x
        rad = np.sqrt(self.l_c) * abs(self.x)
        c0 = self.a_K * self.x
        # |c0 + b v| <= rad
        t_lo, t_hi = sorted(((-rad - c0) / self.b, (rad - c0) / self.b))
        return max(lo, t_lo), min(hi, t_hi)

    def inner(self, v, gamma, w_s):
        c = self.a_K * self.x + self.b * v
        best = -np.inf
        for pi in (0.0, self.h):
            w = (2 * self.p * c + pi * self.f + gamma * self.cs * w_s) / (gamma * self.cs - 2 * self.p)
            val = (self.p * (c + w) ** 2 + pi * (self.f * (c + w) + self.g)
                   - 0.5 * gamma * self.cs * (w - w_s) ** 2)
            best = max(best, val)
        return best + self.q * self.x ** 2 + self.r * v ** 2

    def inner_grid(self, v, gamma, w_s, width=50.0, points=200001):
        """The same inner maximum by exhaustive search over a ``w`` grid."""
        c = self.a_K * self.x + self.b * v
        w = np.linspace(w_s - width, w_s + width, points)
        vals = (self.p * (c + w) ** 2 + self.h * np.maximum(0.0, self.f * (c + w) + self.g)
                - 0.5 * gamma * self.cs * (w - w_s) ** 2)
        return float(vals.max()) + self.q * self.x ** 2 + self.r * v ** 2

    def objective(self, v, gamma):
        return self.eps * gamma + np.mean([self.inner(v, gamma, s) for s in self.samples])

    def gamma_minimum(self, v, points=41, rounds=14):
        """Grid minimum over ``log(gamma - gamma_lo)`` for a fixed ``v``, zooming in.

        The objective is convex in ``gamma`` (a sum of maxima of affine
        functions), so the grid neighbours of the best point bracket the true
        minimizer and each round can shrink to them.
        """
        t_lo, t_hi = np.log(1e-8), np.log(1e8)
        best = (np.inf, None)
        for _ in range(rounds):
            ts = np.linspace(t_lo, t_hi, points)
            vals = [self.objective(v, self.gamma_lo + np.exp(t)) for t in ts]
            j = int(np.argmin(vals))
            if vals[j] < best[0]:
                best = (vals[j], ts[j])
            t_lo, t_hi = ts[max(j - 1, 0)], ts[min(j + 1, points - 1)]
        return best[0], self.gamma_lo + np.exp(best[1])

    def grid_minimum(self, points=41, rounds=12):
        """Nested zooming grid search; ``v -> min_gamma objective`` is convex as well."""
        lo, hi = self.v_range()
        best = (np.inf, None, None)
        for _ in range(rounds):
            vs = np.linspace(lo, hi, points)
            vals = [self.gamma_minimum(v) for v in vs]
            j = int(np.argmin([val for val, _ in vals]))
            if vals[j][0] < best[0]:
                best = (vals[j][0], vs[j], vals[j][1])
            lo, hi = vs[max(j - 1, 0)], vs[min(j + 1, points - 1)]
        return best


def default_toy():
    return ScalarToy(a=1.2, b=1.0, q=1.0, r=0.5, f=1.0, g=-1.0, eps=0.05, h=20.0, l_c=2.0,
                     u_min=-1.0, u_max=1.0, x=0.8, samples=[0.3, -0.2])
