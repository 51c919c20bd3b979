import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from mwm.errors import ConfigError, DegenerateError
from mwm.machine import MachineConfig, combination_distribution, enumerate_combinations
from mwm.order_stats import (
    lb_min_expectation,
    max_moments,
    min_moments,
    sample_extreme_moments,
    truncated_moment,
)
from conftest import random_cov


def _quad_moment(r, b, R):
    # integrate y^r phi(y) P(Y2 <= b2, Y3 <= b3 | Y1 = y) over y
    c = R[1:, 0]
    S = R[1:, 1:] - np.outer(c, c)
    cond = multivariate_normal(mean=[0.0, 0.0], cov=S)

    def f(y):
        return y**r * norm.pdf(y) * cond.cdf(b[1:] - c * y)

    return integrate.quad(f, -9, 9, epsabs=1e-10, limit=200)[0]


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("r", [0, 1, 2])
def test_truncated_moment_quadrature(seed, r):
    rng = np.random.default_rng(seed)
    S = random_cov(rng, 3)
    d = np.sqrt(np.diag(S))
    R = S / np.outer(d, d)
    b = np.array([np.inf, *rng.normal(0.3, 0.8, size=2)])
    got = truncated_moment(r, b, R, tol=1e-6)
    assert abs(got - _quad_moment(r, b, R)) < 1e-4


def test_truncated_moment_input():
    with pytest.raises(ConfigError):
        truncated_moment(3, [np.inf, 0.0], np.eye(2))
    with pytest.raises(ConfigError):
        truncated_moment(1, [0.0, 0.0], np.eye(2))


@pytest.mark.parametrize("K,factor", [(2, 1 / math.sqrt(math.pi)), (3, 3 / (2 * math.sqrt(math.pi)))])
def test_iid_mean(K, factor):
    mu, s = 500.0, 20.0
    res = min_moments(np.full(K, mu), s * s * np.eye(K))
    assert res.e_min == pytest.approx(mu - factor * s, rel=1e-6)
    hi = max_moments(np.full(K, mu), s * s * np.eye(K))
    assert hi.e_max == pytest.approx(mu + factor * s, rel=1e-6)


def test_iid_pair_variance():
    s = 3.0
    res = min_moments([1.0, 1.0], s * s * np.eye(2))
    assert res.var_min == pytest.approx(s * s * (1 - 1 / math.pi), rel=1e-6)


def test_pair_sum_identity():
    # min + max = X1 + X2 for two variables
    rng = np.random.default_rng(5)
    for _ in range(5):
        theta = rng.normal(500, 30, size=2)
        S = random_cov(rng, 2) * 100
        lo = min_moments(theta, S, tol=1e-6)
        hi = max_moments(theta, S, tol=1e-6)
        assert lo.e_min + hi.e_max == pytest.approx(theta.sum(), abs=1e-6)


def test_negation_consistency():
    rng = np.random.default_rng(8)
    theta = rng.normal(0, 2, size=5)
    S = random_cov(rng, 5)
    lo = min_moments(-theta, S, tol=1e-5)
    hi = max_moments(theta, S, tol=1e-5)
    assert hi.e_max == pytest.approx(-lo.e_min, abs=1e-9)
    assert hi.var_max == pytest.approx(lo.var_min, abs=1e-9)


@pytest.mark.parametrize("K", [3, 4, 5])
def test_against_monte_carlo(K):
    rng = np.random.default_rng(100 + K)
    theta = rng.normal(500, 15, size=K)
    S = random_cov(rng, K) * 50
    ex = min_moments(theta, S, tol=1e-5)
    mc = sample_extreme_moments(theta, S, n=400_000, seed=K)
    se = math.sqrt(mc.var_min / 400_000)
    assert abs(ex.e_min - mc.e_min) < 4 * se + ex.e_min_err
    assert abs(ex.var_min - mc.var_min) < 0.02 * mc.var_min


def test_machine_covariance_rank_deficient():
    config = MachineConfig(4, max_shut=2)
    theta, sigma = combination_distribution(enumerate_combinations(config), np.array([294.9, 276.7, 183.7, 66.6]), 0.123)
    ex = min_moments(theta, sigma)
    mc = sample_extreme_moments(theta, sigma, n=400_000, seed=3)
    assert abs(ex.e_min - mc.e_min) < 4 * math.sqrt(mc.var_min / 400_000) + ex.e_min_err


def test_nested_sets_monotone():
    rng = np.random.default_rng(9)
    theta = rng.normal(100, 5, size=5)
    S = random_cov(rng, 5) * 4
    means = [min_moments(theta[:k], S[:k, :k], tol=1e-5).e_min for k in range(2, 6)]
    assert all(a >= b - 1e-4 for a, b in zip(means, means[1:]))


def test_identical_variables():
    with pytest.raises(DegenerateError) as info:
        min_moments([1.0, 1.0], np.ones((2, 2)))
    assert info.value.indices == (0, 1)


def test_constant_offset():
    # X2 = X1 + 3 almost surely: min is X1
    res = min_moments([0.0, 3.0], np.ones((2, 2)) * 4.0)
    assert res.e_min == pytest.approx(0.0, abs=1e-12)
    assert res.var_min == pytest.approx(4.0, rel=1e-9)


def test_single_variable():
    res = min_moments([7.0], [[2.0]])
    assert (res.e_min, res.var_min) == (7.0, 2.0)


def test_bad_covariance():
    with pytest.raises(ConfigError):
        min_moments([0.0, 1.0], np.eye(3))
    with pytest.raises(ConfigError):
        min_moments([0.0, 1.0], np.diag([1.0, 0.0]))


def test_lb_requires_two():
    with pytest.raises(ConfigError):
        lb_min_expectation([1.0], [1.0])


def test_approx_max():
    res = max_moments([1.0, 5.0, 3.0], np.eye(3), approx=True)
    assert res.e_max == 5.0 and res.method == "lower_bound"


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_lb_dominance(K, seed):
    rng = np.random.default_rng(seed)
    theta = rng.normal(500, 40, size=K)
    S = random_cov(rng, K) * rng.uniform(1, 100)
    exact = min_moments(theta, S, tol=1e-5, need_var=False)
    assert lb_min_expectation(theta, np.diag(S)) <= exact.e_min + exact.e_min_err
