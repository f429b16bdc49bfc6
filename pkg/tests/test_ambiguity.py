import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drmpc.ambiguity import (
    AmbiguityModel,
    build_empirical,
    discrete_wasserstein,
    gelbrich_mean_bound,
    gelbrich_trace_bound,
    induced_weight,
    transport_cost,
    zero_distribution_distance,
)
from drmpc.errors import ConfigError, StructuralError

nonneg = st.floats(0, 10, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(mu=nonneg, s=st.floats(0, 5), N=st.integers(1, 6))
def test_gelbrich_zero_radius_identity_weight(mu, s, N):
    # [PAPER] with no ambiguity and unit weight the bounds are the nominal moments stacked N times
    I = np.eye(2)
    assert gelbrich_mean_bound(0.0, I, N, mu) == pytest.approx(np.sqrt(N) * mu, rel=1e-12, abs=0)
    Sigma = s * I
    assert gelbrich_trace_bound(0.0, I, N, Sigma) == pytest.approx(N * np.trace(Sigma), rel=1e-12, abs=1e-300)


@settings(max_examples=40, deadline=None)
@given(e1=nonneg, e2=nonneg, m1=nonneg, m2=nonneg)
def test_gelbrich_monotone(e1, e2, m1, m2):
    # [DERIVED] nondecreasing in the radius and in the nominal moments
    C = np.diag([0.5, 2.0])
    lo_e, hi_e = sorted((e1, e2))
    lo_m, hi_m = sorted((m1, m2))
    assert gelbrich_mean_bound(lo_e, C, 3, lo_m) <= gelbrich_mean_bound(hi_e, C, 3, hi_m) + 1e-12
    assert (gelbrich_trace_bound(lo_e, C, 3, lo_m * np.eye(2))
            <= gelbrich_trace_bound(hi_e, C, 3, hi_m * np.eye(2)) + 1e-9)


def test_transport_cost_is_half_weighted_square():
    C = np.diag([1.0, 4.0])
    assert transport_cost([1, 1], [0, 0], C) == pytest.approx(2.5)


def test_discrete_wasserstein_hand_example():
    # [DERIVED] moving half the mass from 0 to 2 and keeping the rest: cost 1/2 * 1/2 * 4 = 1
    cost = lambda a, b: transport_cost(a, b, np.eye(1))
    val = discrete_wasserstein([[0.0]], [1.0], [[0.0], [2.0]], [0.5, 0.5], cost)
    assert val == pytest.approx(1.0)


def test_discrete_wasserstein_identical_is_zero(rng):
    pts = rng.normal(size=(5, 2))
    cost = lambda a, b: transport_cost(a, b, np.eye(2))
    assert discrete_wasserstein(pts, np.full(5, 0.2), pts, np.full(5, 0.2), cost) == pytest.approx(0, abs=1e-10)


def test_build_empirical_shapes_and_bootstrap(rng):
    assert np.all(build_empirical([], 4, 3, rng, n_w=2) == 0)
    hist = [np.array([1.0, 2.0]), np.array([3.0, 4.0])]
    S = build_empirical(hist, 7, 3, rng)
    assert S.shape == (7, 6)
    rows = {tuple(r) for r in S.reshape(-1, 2)}
    assert rows <= {(1.0, 2.0), (3.0, 4.0)}
    with pytest.raises(ConfigError):
        build_empirical(hist, 0, 3, rng)


def test_induced_weight_and_model(benchmark_problem):
    lifted = benchmark_problem.lifted
    C_s = induced_weight(lifted, np.eye(12))
    np.testing.assert_allclose(C_s, lifted.FD.T @ lifted.FD)
    with pytest.raises(ConfigError):
        AmbiguityModel.build(-1.0, np.eye(12), 10, lifted)
    with pytest.raises(ConfigError):
        AmbiguityModel.build(0.1, np.eye(3), 10, lifted)


def test_induced_weight_singular_raises(benchmark_problem):
    lifted = benchmark_problem.lifted
    C = np.zeros((12, 12))
    C[0, 0] = 1.0
    with pytest.raises(StructuralError):
        induced_weight(lifted, C)


def test_zero_distribution_distance(benchmark_problem):
    C_s = benchmark_problem.ambiguity.C_s
    S = np.zeros((3, 6))
    assert zero_distribution_distance(S, C_s) == 0.0
    S[0, 0] = 1.0
    assert zero_distribution_distance(S, C_s) == pytest.approx(C_s[0, 0] / 6)
