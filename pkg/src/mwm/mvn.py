"""Rectangle probabilities ``P(Z <= b)`` of a standard multivariate normal.

Dimensions one and two are evaluated in closed form (the bivariate case via
Owen's T function).  Higher dimensions use Genz's separation-of-variables
transform, integrated by randomized quasi-Monte Carlo over a Richtmyer
lattice with a pivoted Cholesky factor of the correlation matrix.  The
pivoting puts the most constraining variable first, and it also keeps
nearly singular matrices usable: residual variances below ``rank_tol`` are
clamped to zero and the corresponding variable becomes a deterministic
linear function of the earlier ones.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr, owens_t

from mwm import kernels
from mwm.errors import ConfigError, NumericalError

__all__ = ["mvn_rectangle_prob", "bvn_cdf", "pivoted_factor", "validate_correlation"]

# P(Z > 8.5) < 1e-17: such a bound is as good as +inf
DROP_BOUND = 8.5
# P(Z < -38.5) underflows
ZERO_BOUND = -38.5
N_SHIFTS = 12
Z99 = 2.5758293035489004


def _primes(n):
    out, cand = [], 2
    while len(out) < n:
        if all(cand % p for p in out if p * p <= cand):
            out.append(cand)
        cand += 1
    return np.array(out, dtype=float)


_RICHTMYER = np.sqrt(_primes(128)) % 1.0


def validate_correlation(R, psd_tol=1e-8):
    """Check shape, symmetry, unit diagonal and (approximate) semidefiniteness."""
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ConfigError(f"correlation matrix must be square, got shape {R.shape}")
    if not np.allclose(R, R.T, atol=1e-10):
        raise ConfigError("correlation matrix is not symmetric")
    if not np.allclose(np.diag(R), 1.0, atol=1e-10):
        raise ConfigError("correlation matrix must have a unit diagonal")
    if np.any(np.abs(R) > 1 + 1e-10):
        raise ConfigError("correlations must lie in [-1, 1]")
    if R.shape[0] > 1:
        low = np.linalg.eigvalsh(R)[0]
        if low < -psd_tol * R.shape[0]:
            raise NumericalError(f"correlation matrix is not positive semidefinite (eigenvalue {low:.3g})")
    return 0.5 * (R + R.T)


def bvn_cdf(h: float, k: float, rho: float) -> float:
    """``P(Z1 <= h, Z2 <= k)`` for standard normals with correlation ``rho``."""
    if h == -math.inf or k == -math.inf:
        return 0.0
    if h == math.inf:
        return float(ndtr(k))
    if k == math.inf:
        return float(ndtr(h))
    s2 = 1.0 - rho * rho
    if s2 < 1e-15:
        if rho > 0:
            return float(ndtr(min(h, k)))
        return max(0.0, float(ndtr(h) + ndtr(k)) - 1.0)
    if h == 0.0 and k == 0.0:
        return 0.25 + math.asin(rho) / (2.0 * math.pi)
    s = math.sqrt(s2)
    out = 0.5 * float(ndtr(h) + ndtr(k))
    out -= _owens_term(h, k - rho * h, s)
    out -= _owens_term(k, h - rho * k, s)
    if h * k < 0 or (h * k == 0 and h + k < 0):
        out -= 0.5
    return min(1.0, max(0.0, out))


def _owens_term(h, num, s):
    if h == 0.0:
        # T(0, a) = atan(a) / (2 pi) and a = +-inf here
        return 0.0 if num == 0 else math.copysign(0.25, num)
    return float(owens_t(h, num / (h * s)))


def pivoted_factor(b, R, rank_tol=1e-12, psd_tol=1e-8):
    """Lower factor of ``R`` with Genz-Bretz variable priority.

    Returns ``(L, b_perm)`` such that ``L @ L.T`` reproduces ``R`` with rows
    and columns permuted to the chosen order.  Variables are taken in order
    of smallest conditional probability, conditioning on the truncated means
    of the variables already placed.
    """
    b = np.array(b, dtype=float)
    R = np.array(R, dtype=float)
    m = b.shape[0]
    L = np.zeros((m, m))
    y = np.zeros(m)
    for k in range(m):
        best, best_p, best_ub, best_s = k, math.inf, 0.0, 0.0
        for i in range(k, m):
            var = R[i, i] - L[i, :k] @ L[i, :k]
            if var < -psd_tol:
                raise NumericalError(f"correlation matrix is not positive semidefinite (pivot {var:.3g})")
            s = math.sqrt(var) if var > rank_tol else 0.0
            t = b[i] - L[i, :k] @ y[:k]
            if s > 0.0:
                ub = t / s
                p = float(ndtr(ub))
            else:
                ub = math.inf if t >= 0 else -math.inf
                p = 1.0 if t >= 0 else 0.0
            if p < best_p:
                best, best_p, best_ub, best_s = i, p, ub, s
        if best != k:
            R[[k, best]] = R[[best, k]]
            R[:, [k, best]] = R[:, [best, k]]
            L[[k, best]] = L[[best, k]]
            b[[k, best]] = b[[best, k]]
        L[k, k] = best_s
        if best_s > 0.0:
            for i in range(k + 1, m):
                L[i, k] = (R[i, k] - L[i, :k] @ L[k, :k]) / best_s
            y[k] = _truncated_mean(best_ub)
        else:
            y[k] = 0.0
    return L, b


def _truncated_mean(ub):
    """E[Z | Z <= ub] for a standard normal."""
    if ub == math.inf:
        return 0.0
    if ub < -30.0:
        return ub
    p = float(ndtr(ub))
    return -math.exp(-0.5 * ub * ub) / math.sqrt(2 * math.pi) / p


def _lattice_estimate(L, b, tol, seed, max_points):
    m = b.shape[0]
    rng = np.random.default_rng(seed)
    gen = _RICHTMYER[: max(m - 1, 1)].copy()
    if m - 1 > gen.shape[0]:
        raise NumericalError(f"dimension {m} exceeds the lattice table")
    n_points = max(64, 50 * m)
    prob, err = 0.0, math.inf
    used = 0
    while True:
        shifts = rng.random((N_SHIFTS, max(m - 1, 1)))
        means = kernels.lattice_means(L, b, gen, shifts, n_points)
        used += 2 * n_points * N_SHIFTS
        est = float(means.mean())
        se = float(means.std(ddof=1) / math.sqrt(N_SHIFTS))
        if math.isinf(err):
            prob, err = est, se
        else:
            # inverse-variance merge of independent batches
            if se == 0.0 or err == 0.0:
                w = 1.0 if se == 0.0 else 0.0
            else:
                w = err**2 / (err**2 + se**2)
            prob = prob + w * (est - prob)
            err = math.sqrt(w) * se if se > 0 else 0.0
        if Z99 * err <= tol or used >= max_points:
            break
        n_points *= 2
    return prob, Z99 * err


def mvn_rectangle_prob(b, R, tol=1e-4, seed=0, max_points=4_000_000, return_error=False):
    """Probability that a standard normal vector with correlation ``R`` lies below ``b``.

    Parameters
    ----------
    b : array_like, shape (K,)
        Upper bounds; ``+inf`` entries are unconstrained.
    R : array_like, shape (K, K)
        Correlation matrix, possibly near singular.
    tol : float
        Target absolute error at 99% confidence for the lattice estimator.
    seed : int
        Seed of the random lattice shifts; equal seeds give equal results.
    max_points : int
        Integrand evaluation budget before giving up on ``tol``.
    return_error : bool
        Also return the 99% error estimate (0 for closed-form cases).

    Raises
    ------
    NumericalError
        ``R`` is not positive semidefinite, or the estimate stays far from
        ``tol`` after the budget is spent.
    """
    b = np.asarray(b, dtype=float)
    R = np.asarray(R, dtype=float)
    if b.ndim != 1 or R.shape != (b.shape[0], b.shape[0]):
        raise ConfigError(f"bounds of shape {b.shape} do not match matrix of shape {R.shape}")
    if np.isnan(b).any():
        raise ConfigError("bounds contain NaN")
    prob, err = _rectangle(b, R, tol, seed, max_points)
    if err > 10 * tol:
        raise NumericalError(f"rectangle probability did not converge (error {err:.2g} > tol {tol:.2g})")
    return (prob, err) if return_error else prob


def _rectangle(b, R, tol, seed, max_points):
    if (b <= ZERO_BOUND).any():
        return 0.0, 0.0
    keep = np.flatnonzero(b < DROP_BOUND)
    b = b[keep]
    R = R[np.ix_(keep, keep)]
    m = b.shape[0]
    if m == 0:
        return 1.0, 0.0
    if m == 1:
        return float(ndtr(b[0])), 0.0
    if m == 2:
        return bvn_cdf(b[0], b[1], float(R[0, 1])), 0.0
    off = R - np.diag(np.diag(R))
    if not off.any():
        return float(np.prod(ndtr(b))), 0.0
    L, bp = pivoted_factor(b, R)
    if L[0, 0] == 0.0:
        # unreachable for a unit diagonal; guards the first division
        raise NumericalError("degenerate leading variable")
    return _lattice_estimate(np.ascontiguousarray(L), np.ascontiguousarray(bp), tol, seed, max_points)
