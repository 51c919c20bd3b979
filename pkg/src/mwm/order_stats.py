"""Moments of the smallest and largest of K correlated normal variables.

For ``X ~ N(theta, sigma)`` the minimum equals ``X_i`` on the region where
``X_i - X_j < 0`` for all ``j != i``.  Standardising ``X_i`` and the
differences ``X_i - X_j`` turns each region into an upper orthant of a
standard normal vector ``Y`` whose first coordinate (``X_i`` itself) is
unbounded, so

    E[min X]   = sum_i  theta_i m0_i + s_i m1_i
    E[min X^2] = sum_i  theta_i^2 m0_i + 2 theta_i s_i m1_i + s_i^2 m2_i

with ``m_r = E[Y_1^r 1{Y_2 <= b_2, ..., Y_K <= b_K}]`` (not divided by the
orthant mass).  ``m1`` and ``m2`` follow from Stein's identity as a sum over
the bounded coordinates of terms that condition on ``Y_j = b_j``; the
conditioned problem is again a standardised orthant one dimension smaller
(bounds ``(b_l - rho_lj b_j) / sqrt(1 - rho_lj^2)``, partial correlations).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from mwm.errors import ConfigError, DegenerateError
from mwm.mvn import DROP_BOUND, mvn_rectangle_prob, validate_correlation

__all__ = [
    "ExtremeMoments",
    "truncated_moment",
    "min_moments",
    "max_moments",
    "lb_min_expectation",
    "sample_extreme_moments",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)
# squared correlation this close to 1 is treated as a perfect dependence
_DEGENERATE = 1e-10


def _pdf(x):
    return math.exp(-0.5 * x * x) / _SQRT_2PI if abs(x) < 40.0 else 0.0


@dataclass(frozen=True)
class ExtremeMoments:
    """Mean and variance of the extreme order statistics (grams, grams^2).

    Fields not computed by the producing call are ``None``.  ``*_err`` are
    99% error bounds propagated from the integration tolerances.
    """

    e_min: float | None = None
    var_min: float | None = None
    e_max: float | None = None
    var_max: float | None = None
    method: str = "exact"
    e_min_err: float = 0.0
    var_min_err: float = 0.0
    e_max_err: float = 0.0
    var_max_err: float = 0.0

    def merge(self, other: "ExtremeMoments") -> "ExtremeMoments":
        """Combine a min-only and a max-only result."""
        method = self.method if self.method == other.method else f"{self.method}+{other.method}"
        return ExtremeMoments(
            e_min=self.e_min if self.e_min is not None else other.e_min,
            var_min=self.var_min if self.var_min is not None else other.var_min,
            e_max=self.e_max if self.e_max is not None else other.e_max,
            var_max=self.var_max if self.var_max is not None else other.var_max,
            method=method,
            e_min_err=self.e_min_err or other.e_min_err,
            var_min_err=self.var_min_err or other.var_min_err,
            e_max_err=self.e_max_err or other.e_max_err,
            var_max_err=self.var_max_err or other.var_max_err,
        )

    @property
    def extreme_avg(self):
        return 0.5 * (self.e_min + self.e_max)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class _Orthant:
    """Memoised truncated moments of ``Y_1`` over ``{Y_l <= b_l, l >= 2}``.

    A node is identified by the set of labels conditioned on so far; the same
    set reached along different orders describes the same conditional law.
    """

    def __init__(self, b, V, labels, tol, seed):
        self.tol = tol
        self.seed = seed
        self.root = (b, V, labels)
        self.nodes = {(): (b, V, labels)}
        self.m0_memo = {}
        self.m1_memo = {}

    def node(self, key):
        return self.nodes[key]

    def child(self, key, j):
        """Condition node ``key`` on its coordinate ``j`` sitting at its bound.

        The covariance of the combinations has rank at most H, so some
        coordinates become exact multiples of ``Y_j``.  Such a coordinate is
        fixed at ``rho * b_j``: its constraint either always holds (the
        coordinate is dropped) or never holds (the node has zero mass, stored
        as ``None``).  If ``Y_1`` itself is fixed its standardised residual is
        arbitrary; it enters the recursion only through a factor
        ``sqrt(1 - rho^2) = 0``, so it is made independent.
        """
        node = self.nodes[key]
        b, V, labels = node
        ckey = tuple(sorted(key + (labels[j],)))
        if ckey in self.nodes:
            return ckey
        keep = [l for l in range(len(b)) if l != j]
        rho = V[keep, j]
        s2 = 1.0 - rho * rho
        fixed = s2 <= _DEGENERATE
        live = [0]
        for n in range(1, len(keep)):
            if not fixed[n]:
                live.append(n)
            elif rho[n] * b[j] > b[keep[n]] + 1e-9 * max(1.0, abs(b[keep[n]])):
                self.nodes[ckey] = None
                return ckey
        rows = [keep[n] for n in live]
        rho = rho[live]
        s = np.sqrt(np.maximum(s2[live], 0.0))
        free_first = bool(fixed[0])
        if free_first:
            rho = rho.copy()
            rho[0] = 0.0
            s[0] = 1.0
        with np.errstate(invalid="ignore"):
            cb = (b[rows] - rho * b[j]) / s
        cb[0] = math.inf
        cV = (V[np.ix_(rows, rows)] - np.outer(rho, rho)) / np.outer(s, s)
        if free_first:
            cV[0, :] = cV[:, 0] = 0.0
        np.fill_diagonal(cV, 1.0)
        cV = np.clip(cV, -1.0, 1.0)
        self.nodes[ckey] = _prune(cb, cV, [labels[l] for l in rows])
        return ckey

    def m0(self, key):
        hit = self.m0_memo.get(key)
        if hit is None:
            node = self.nodes[key]
            if node is None:
                hit = (0.0, 0.0)
            elif len(node[0]) == 1:
                hit = (1.0, 0.0)
            else:
                b, V, labels = node
                seed = [self.seed, *labels[:1], *key, len(b)]
                hit = mvn_rectangle_prob(b[1:], V[1:, 1:], tol=self.tol, seed=seed, return_error=True)
            self.m0_memo[key] = hit
        return hit

    def m1(self, key):
        hit = self.m1_memo.get(key)
        if hit is None and self.nodes[key] is None:
            hit = (0.0, 0.0)
        if hit is None:
            b, V, _ = self.nodes[key]
            val, err2 = 0.0, 0.0
            for j in range(1, len(b)):
                c = V[0, j] * _pdf(b[j])
                if c == 0.0:
                    continue
                p, e = self.m0(self.child(key, j))
                val -= c * p
                err2 += (c * e) ** 2
            hit = (val, math.sqrt(err2))
            self.m1_memo[key] = hit
        return hit

    def m2(self, key):
        b, V, _ = self.nodes[key]
        val, e0 = self.m0(key)
        err2 = e0 * e0
        for j in range(1, len(b)):
            rho = V[0, j]
            c = rho * _pdf(b[j])
            if c == 0.0:
                continue
            ck = self.child(key, j)
            p, ep = self.m0(ck)
            q, eq = self.m1(ck)
            s = math.sqrt(max(0.0, 1.0 - rho * rho))
            val -= c * (rho * b[j] * p + s * q)
            err2 += (c * rho * b[j] * ep) ** 2 + (c * s * eq) ** 2
        return val, math.sqrt(err2)

    def moment(self, r, key=()):
        if r == 0:
            return self.m0(key)
        if r == 1:
            return self.m1(key)
        return self.m2(key)


def _prune(b, V, labels):
    """Drop bounded coordinates whose bound is effectively +inf."""
    keep = [0] + [l for l in range(1, len(b)) if b[l] < DROP_BOUND]
    if len(keep) == len(b):
        return b, V, labels
    return b[keep], V[np.ix_(keep, keep)], [labels[l] for l in keep]


def truncated_moment(r, b, R, tol=1e-4, seed=0, return_error=False):
    """Unnormalised moment ``E[Y_1^r 1{Y_l <= b_l for l >= 2}]``, ``r`` in {0, 1, 2}.

    ``Y`` is standard normal with correlation ``R``; the first coordinate is
    integrated over the whole line, so ``b[0]`` must be ``+inf``.  The value
    is not divided by the rectangle probability.
    """
    if r not in (0, 1, 2):
        raise ConfigError(f"only moments of order 0, 1 and 2 are supported, got {r!r}")
    b = np.asarray(b, dtype=float)
    R = validate_correlation(R)
    if b.ndim != 1 or R.shape[0] != b.shape[0]:
        raise ConfigError("bounds and correlation matrix disagree in size")
    if b[0] != math.inf:
        raise ConfigError("the first coordinate is integrated over all reals; b[0] must be +inf")
    node = _prune(b.copy(), R.copy(), list(range(len(b))))
    val, err = _Orthant(*node, tol=tol, seed=seed).moment(r)
    return (val, err) if return_error else val


def _standardise(theta, sigma):
    theta = np.asarray(theta, dtype=float).ravel()
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    K = theta.shape[0]
    if sigma.shape != (K, K):
        raise ConfigError(f"covariance shape {sigma.shape} does not match {K} means")
    if K < 1:
        raise ConfigError("need at least one variable")
    if not (np.diag(sigma) > 0).all():
        raise ConfigError("all variances must be positive")
    return theta, 0.5 * (sigma + sigma.T), K


def min_moments(theta, sigma, tol=1e-4, seed=0, need_var=True, prune=1e-14):
    """Exact mean and variance of ``min(X)`` for ``X ~ N(theta, sigma)``.

    Parameters
    ----------
    theta : array_like, shape (K,)
    sigma : array_like, shape (K, K)
    tol : float
        Absolute tolerance of every rectangle probability.
    seed : int
        Base seed of the lattice shifts (results are deterministic).
    need_var : bool
        Skip the second moment (and its extra integrals) when False.
    prune : float
        Variables whose chance of being the minimum is provably below
        ``prune`` are skipped; the neglected mass bounds the error.

    Raises
    ------
    DegenerateError
        Two variables are identical (zero-variance difference, equal means).
    """
    theta, sigma, K = _standardise(theta, sigma)
    if K == 1:
        return ExtremeMoments(e_min=float(theta[0]), var_min=float(sigma[0, 0]) if need_var else None)
    sd = np.sqrt(np.diag(sigma))
    scale = float(np.max(np.diag(sigma)))
    terms = []
    for i in range(K):
        others = [j for j in range(K) if j != i]
        dvar = sigma[i, i] + sigma[others, others] - 2.0 * sigma[i, others]
        gap = theta[others] - theta[i]
        b = np.empty(K - 1)
        for n, j in enumerate(others):
            if dvar[n] <= _DEGENERATE * scale:
                if abs(gap[n]) <= 1e-12 * max(1.0, abs(theta[i])):
                    raise DegenerateError(
                        f"combinations {i} and {j} are identical (equal means, zero-variance difference)",
                        indices=(i, j),
                    )
                # X_i - X_j is a constant: always or never below zero
                b[n] = math.inf if gap[n] > 0 else -math.inf
            else:
                b[n] = gap[n] / math.sqrt(dvar[n])
        if float(ndtr(b.min())) < prune:
            continue
        finite = np.isfinite(b)
        idx = [others[n] for n in range(K - 1) if finite[n]]
        bf = b[finite]
        # covariance of (X_i, X_i - X_j, ...) for the finite coordinates
        d = np.sqrt(sigma[i, i] + sigma[idx, idx] - 2.0 * sigma[i, idx])
        C = np.empty((len(idx) + 1, len(idx) + 1))
        C[0, 0] = sigma[i, i]
        C[0, 1:] = C[1:, 0] = sigma[i, i] - sigma[i, idx]
        C[1:, 1:] = (
            sigma[i, i]
            - sigma[i, idx][None, :]
            - sigma[i, idx][:, None]
            + sigma[np.ix_(idx, idx)]
        )
        scal = np.concatenate(([sd[i]], d))
        V = np.clip(C / np.outer(scal, scal), -1.0, 1.0)
        np.fill_diagonal(V, 1.0)
        node = _prune(np.concatenate(([math.inf], bf)), V, [i] + idx)
        orth = _Orthant(*node, tol=tol, seed=seed)
        m0 = orth.m0(())
        m1 = orth.m1(())
        m2 = orth.m2(()) if need_var else (0.0, 0.0)
        terms.append((i, m0, m1, m2))

    w = np.array([t[1][0] for t in terms])
    th = np.array([theta[t[0]] for t in terms])
    s = np.array([sd[t[0]] for t in terms])
    # centre at the weighted location so the large theta_i never multiply
    # integration error directly
    centre = float(th @ w / w.sum()) if w.sum() > 0 else float(theta.min())
    dt = th - centre
    m1v = np.array([t[2][0] for t in terms])
    e0 = np.array([t[1][1] for t in terms])
    e1 = np.array([t[2][1] for t in terms])
    mean_c = float(dt @ w + s @ m1v)
    e_min = centre + mean_c
    e_err = float(np.sqrt(np.sum((dt * e0) ** 2 + (s * e1) ** 2)))
    if not need_var:
        return ExtremeMoments(e_min=e_min, method="exact", e_min_err=e_err)
    m2v = np.array([t[3][0] for t in terms])
    e2 = np.array([t[3][1] for t in terms])
    second = float(np.sum(dt * dt * w + 2.0 * dt * s * m1v + s * s * m2v))
    var = max(second - mean_c * mean_c, 0.0)
    v_err = float(
        np.sqrt(np.sum((dt * dt * e0) ** 2 + (2 * dt * s * e1) ** 2 + (s * s * e2) ** 2))
        + 2 * abs(mean_c) * e_err
    )
    return ExtremeMoments(e_min=e_min, var_min=var, method="exact", e_min_err=e_err, var_min_err=v_err)


def max_moments(theta, sigma, tol=1e-4, seed=0, need_var=True, approx=False, prune=1e-14):
    """Mean and variance of ``max(X)``.

    Exact mode uses ``max(X) = -min(-X)``.  With ``approx=True`` the largest
    mean stands in for ``E[max X]`` (a lower bound by Jensen's inequality) and
    the variance of that variable for the variance.
    """
    theta, sigma, K = _standardise(theta, sigma)
    if approx:
        k = int(np.argmax(theta))
        return ExtremeMoments(e_max=float(theta[k]), var_max=float(sigma[k, k]), method="lower_bound")
    res = min_moments(-theta, sigma, tol=tol, seed=seed, need_var=need_var, prune=prune)
    return ExtremeMoments(
        e_max=-res.e_min,
        var_max=res.var_min,
        method=res.method,
        e_max_err=res.e_min_err,
        var_max_err=res.var_min_err,
    )


def lb_min_expectation(theta, sigma_diag):
    """Closed-form lower bound on ``E[min X]`` from means and variances only.

    Any ``lam`` gives ``E[max(-X)] <= lam + sum_i E[(-X_i - lam)^+]``, and each
    ``E[(Y - lam)^+]`` is bounded by the mean-variance (Scarf) bound.  ``lam``
    is the largest of ``-theta_i + (K-2) / (2 sqrt(K-1)) * sd_i``.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    var = np.asarray(sigma_diag, dtype=float).ravel()
    K = theta.shape[0]
    if K < 2:
        raise ConfigError("the lower bound needs at least two variables")
    if var.shape[0] != K:
        raise ConfigError("means and variances differ in length")
    if (var < 0).any():
        raise ConfigError("variances must be non-negative")
    sd = np.sqrt(var)
    lam = float(np.max(-theta + (K - 2) / (2.0 * math.sqrt(K - 1)) * sd))
    inner = -theta + np.sqrt((-theta - lam) ** 2 + var)
    return float(-0.5 * inner.sum() - (2 - K) / 2.0 * lam)


def sample_extreme_moments(theta, sigma, n=1_000_000, seed=0, chunk=200_000):
    """Monte Carlo estimate of all four extreme moments."""
    theta, sigma, K = _standardise(theta, sigma)
    rng = np.random.default_rng(seed)
    w, U = np.linalg.eigh(sigma)
    A = U * np.sqrt(np.clip(w, 0.0, None))
    sums = np.zeros(4)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        X = theta + rng.standard_normal((m, K)) @ A.T
        lo, hi = X.min(axis=1), X.max(axis=1)
        sums += [lo.sum(), (lo * lo).sum(), hi.sum(), (hi * hi).sum()]
        done += m
    e1, s1, e2, s2 = sums / n
    v1, v2 = (s1 - e1 * e1) * n / (n - 1), (s2 - e2 * e2) * n / (n - 1)
    return ExtremeMoments(
        e_min=e1, var_min=v1, e_max=e2, var_max=v2, method="monte_carlo",
        e_min_err=2.576 * math.sqrt(v1 / n), e_max_err=2.576 * math.sqrt(v2 / n),
    )
