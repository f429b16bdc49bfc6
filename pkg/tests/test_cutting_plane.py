import numpy as np
import pytest
from oracles import ScalarToy, default_toy

from drmpc.cutting_plane import CuttingPlaneConfig, run_cutting_plane, terminal_reach, unique_samples
from drmpc.errors import ControllerError
from drmpc.reformulation import TsdrProblem

STATES = [(-5.0, -2.0), (0.0, 0.0), (1.9, 0.3), (-1.0, 1.5), (0.5, -0.2)]


def solve_toy(toy):
    problem = TsdrProblem.build(*toy.build_args())
    return run_cutting_plane([toy.x], toy.samples[:, None], problem)


@pytest.mark.parametrize("toy", [
    default_toy(),
    # constraint far away: interior optimum, penalty inactive
    ScalarToy(a=0.9, b=1.0, q=1.0, r=1.0, f=1.0, g=-5.0, eps=0.02, h=10.0, l_c=2.0,
              u_min=-2.0, u_max=2.0, x=0.5, samples=[0.1, 0.4]),
    # tight constraint, large radius
    ScalarToy(a=1.1, b=0.5, q=2.0, r=0.2, f=-1.0, g=-0.3, eps=0.3, h=5.0, l_c=1.5,
              u_min=-1.0, u_max=1.0, x=-0.6, samples=[-0.5, 0.2]),
], ids=["boundary", "interior", "tight"])
def test_scalar_objective_matches_grid(toy):
    # [DERIVED] nested zooming grid over (v, gamma) with an exact inner maximum
    res = solve_toy(toy)
    val, v, gamma = toy.grid_minimum(points=31, rounds=10)
    assert res.J == pytest.approx(val, abs=1e-3)
    assert toy.objective(float(res.u_bar[0]), res.gamma) == pytest.approx(res.J, abs=1e-6)


@pytest.mark.parametrize("x", STATES)
@pytest.mark.parametrize("spread", [0.0, 0.3])
def test_certified_and_monotone(benchmark_problem, x, spread):
    # [DERIVED] the lower bound J meets the upper bound evaluated at the returned plan
    rng = np.random.default_rng(7)
    samples = rng.normal(size=(10, 6)) * spread
    res = run_cutting_plane(np.array(x), samples, benchmark_problem)
    d = res.diagnostics
    assert d.termination == "converged"
    assert d.master_solves < CuttingPlaneConfig().max_master
    assert d.upper_value - res.J <= 1e-6 * max(1.0, abs(res.J))
    assert d.upper_value - res.J >= -1e-6 * max(1.0, abs(res.J))
    assert d.monotone_violation <= 1e-8


def test_origin_value(benchmark_problem):
    # [DERIVED] at the origin with zero samples the plan is zero and J is eps * gamma plus
    # the worst-case quadratic value of the disturbances the multiplier admits
    res = run_cutting_plane(np.zeros(2), np.zeros((10, 6)), benchmark_problem)
    np.testing.assert_allclose(res.u_bar, 0.0, atol=1e-6)
    assert res.J >= benchmark_problem.ambiguity.epsilon * benchmark_problem.gamma_lower
    assert res.J == pytest.approx(res.diagnostics.upper_value, rel=1e-6)


def test_warm_start_changes_work_not_answer(benchmark_problem):
    rng = np.random.default_rng(3)
    samples = rng.normal(size=(10, 6)) * 0.2
    first = run_cutting_plane(np.array([-3.0, -1.0]), samples, benchmark_problem)
    cold = run_cutting_plane(np.array([-2.5, -0.5]), samples, benchmark_problem)
    warm = run_cutting_plane(np.array([-2.5, -0.5]), samples, benchmark_problem,
                             warm_start=first.tight_supports)
    assert warm.J == pytest.approx(cold.J, rel=1e-6)
    assert warm.diagnostics.master_solves <= cold.diagnostics.master_solves


def test_duplicate_samples_are_merged():
    uniq, counts = unique_samples([[1.0, 2.0], [0.0, 0.0], [1.0, 2.0]])
    assert uniq.shape == (2, 2)
    assert sorted(counts.tolist()) == [1, 2]


def test_terminal_infeasible_state_raises(benchmark_problem):
    # far from the origin the input box cannot reach the terminal ball
    x = np.array([40.0, 30.0])
    assert terminal_reach(x, benchmark_problem) > np.sqrt(benchmark_problem.l_c) * np.linalg.norm(x)
    with pytest.raises(ControllerError, match="terminal"):
        run_cutting_plane(x, np.zeros((10, 6)), benchmark_problem)
    relaxed = run_cutting_plane(x, np.zeros((10, 6)), benchmark_problem,
                                CuttingPlaneConfig(relax_terminal=True))
    assert relaxed.diagnostics.terminal_slack > 0
