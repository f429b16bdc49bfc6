import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize

from drmpc.convex import INFEASIBLE, ConvexProgram, NormConstraint, dump_program, solve


@settings(max_examples=30, deadline=None)
@given(c=arrays(float, 3, elements=st.floats(-5, 5)), d=arrays(float, 3, elements=st.floats(0.1, 4)))
def test_box_qp_is_clipped_minimizer(c, d):
    # [DERIVED] a diagonal QP over a box separates: each coordinate is the clipped unconstrained minimizer
    prog = ConvexProgram(P=np.diag(d), q=-d * c, lb=-np.ones(3), ub=np.ones(3))
    sol = solve(prog)
    assert sol.ok
    z_ref = np.clip(c, -1, 1)

    def f(z):
        return 0.5 * z @ np.diag(d) @ z - d * c @ z

    # the objective is accurate to the gap tolerance; the point itself only to its square
    # root when the unconstrained minimizer sits exactly on a bound (no strict complementarity)
    assert f(sol.z) - f(z_ref) <= 1e-9
    np.testing.assert_allclose(sol.z, z_ref, atol=1e-4)


def test_equality_and_inequality_rows_match_scipy(rng):
    # [DERIVED] SLSQP on the same problem as an independent reference
    P = rng.normal(size=(4, 4))
    P = P @ P.T + np.eye(4)
    q = rng.normal(size=4)
    A_ub, b_ub = rng.normal(size=(3, 4)), rng.uniform(0.1, 1, 3)
    A_eq, b_eq = np.ones((1, 4)), np.array([0.5])
    sol = solve(ConvexProgram(P=P, q=q, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq))
    ref = minimize(lambda z: 0.5 * z @ P @ z + q @ z, np.zeros(4), method="SLSQP",
                   constraints=[{"type": "ineq", "fun": lambda z: b_ub - A_ub @ z},
                                {"type": "eq", "fun": lambda z: A_eq @ z - b_eq}],
                   options={"ftol": 1e-12})
    assert sol.ok
    assert sol.objective == pytest.approx(ref.fun, abs=1e-6)


def test_norm_constraint_projects_onto_ball():
    # [DERIVED] min |z - c|^2 over the unit ball is c / |c| for |c| > 1
    c = np.array([3.0, 4.0])
    prog = ConvexProgram(P=2 * np.eye(2), q=-2 * c, const=c @ c,
                         norm=NormConstraint(M=np.eye(2), m0=np.zeros(2), radius=1.0))
    sol = solve(prog)
    assert sol.ok
    np.testing.assert_allclose(sol.z, c / 5, atol=1e-6)
    assert sol.objective == pytest.approx(16.0, abs=1e-5)


def test_infeasible_is_reported():
    prog = ConvexProgram(P=np.eye(1), q=np.zeros(1), A_ub=np.array([[1.0], [-1.0]]),
                         b_ub=np.array([-1.0, -1.0]))
    sol = solve(prog)
    assert sol.status == INFEASIBLE
    assert not sol.ok and sol.z is None


def test_validate_and_dump():
    prog = ConvexProgram(P=np.eye(2), q=np.zeros(3))
    with pytest.raises(ValueError):
        prog.validate()
    ok = ConvexProgram(P=np.eye(2), q=np.zeros(2), labels=[("u", 0, 2)])
    assert "u" in dump_program(ok)
