import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from mwm.errors import ConfigError, NumericalError
from mwm.mvn import bvn_cdf, mvn_rectangle_prob, pivoted_factor, validate_correlation
from conftest import random_cov


def _corr(S):
    d = np.sqrt(np.diag(S))
    return S / np.outer(d, d)


@pytest.mark.parametrize("h,k,rho", [(0.3, -0.2, 0.5), (1.0, 2.0, -0.9), (-1.5, 0.0, 0.99), (0.0, 0.0, 0.0)])
def test_bvn_against_scipy(h, k, rho):
    ref = multivariate_normal(mean=[0, 0], cov=[[1, rho], [rho, 1]]).cdf([h, k])
    assert abs(bvn_cdf(h, k, rho) - ref) < 1e-7


def test_bvn_limits():
    assert bvn_cdf(0.4, np.inf, 0.3) == pytest.approx(norm.cdf(0.4))
    assert bvn_cdf(0.4, 0.7, 1.0) == pytest.approx(norm.cdf(0.4))
    assert bvn_cdf(0.4, -0.2, -1.0) == pytest.approx(max(0.0, norm.cdf(0.4) - norm.cdf(0.2)))


def test_bvn_monte_carlo():
    rng = np.random.default_rng(3)
    rho = 0.6
    z = rng.multivariate_normal([0, 0], [[1, rho], [rho, 1]], size=400_000)
    mc = np.mean((z[:, 0] <= 0.5) & (z[:, 1] <= -0.3))
    assert abs(bvn_cdf(0.5, -0.3, rho) - mc) < 4 * np.sqrt(mc * (1 - mc) / z.shape[0])


def test_trivariate_monte_carlo():
    rng = np.random.default_rng(11)
    R = _corr(random_cov(rng, 3))
    b = np.array([0.2, -0.4, 0.9])
    p, err = mvn_rectangle_prob(b, R, tol=1e-5, return_error=True)
    n = 10_000_000
    hits = 0
    L = np.linalg.cholesky(R)
    for _ in range(10):
        z = rng.standard_normal((n // 10, 3)) @ L.T
        hits += np.count_nonzero((z <= b).all(axis=1))
    mc = hits / n
    assert abs(p - mc) < 4 * np.sqrt(mc * (1 - mc) / n) + err


@pytest.mark.parametrize("K", [4, 6, 9])
def test_against_scipy(K):
    rng = np.random.default_rng(K)
    R = _corr(random_cov(rng, K))
    b = rng.normal(0.5, 1.0, size=K)
    p, err = mvn_rectangle_prob(b, R, tol=1e-5, return_error=True)
    ref = multivariate_normal.cdf(b, cov=R, abseps=1e-6, releps=0, maxpts=2_000_000)
    assert abs(p - ref) < 3e-5 + err


@pytest.mark.parametrize("K", [1, 2, 3, 7])
def test_product_rule(K):
    b = np.linspace(-1.0, 1.5, K)
    assert abs(mvn_rectangle_prob(b, np.eye(K)) - np.prod(norm.cdf(b))) < 1e-10


def test_infinite_bounds_dropped():
    R = _corr(random_cov(np.random.default_rng(0), 3))
    b = np.array([0.3, np.inf, -0.1])
    assert abs(mvn_rectangle_prob(b, R) - bvn_cdf(0.3, -0.1, R[0, 2])) < 1e-10
    assert mvn_rectangle_prob(np.array([0.1, -np.inf, 0.0]), R) == 0.0


def test_rank_deficient():
    # two identical coordinates behave like one
    A = np.array([[1.0, 0.0], [1.0, 0.0], [0.6, 0.8]])
    R = A @ A.T
    b = np.array([0.5, 0.2, 0.1])
    p = mvn_rectangle_prob(b, R, tol=1e-6)
    assert abs(p - bvn_cdf(0.2, 0.1, 0.6)) < 1e-5


def test_not_psd():
    R = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    with pytest.raises(NumericalError):
        pivoted_factor(np.zeros(3), R)


def test_bad_input():
    with pytest.raises(ConfigError):
        validate_correlation(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ConfigError):
        validate_correlation(np.array([[1.0, 0.2], [0.3, 1.0]]))
    with pytest.raises(NumericalError):
        validate_correlation(np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]]))
    with pytest.raises(ConfigError):
        mvn_rectangle_prob(np.zeros(3), np.eye(2))


def test_deterministic_seed():
    R = _corr(random_cov(np.random.default_rng(2), 5))
    b = np.full(5, 0.3)
    assert mvn_rectangle_prob(b, R, seed=4) == mvn_rectangle_prob(b, R, seed=4)
