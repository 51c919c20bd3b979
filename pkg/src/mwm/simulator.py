"""Monte Carlo emulation of machine cycles.

Each cycle the machine sees the hopper weights, forms every admissible
combination and discharges the lightest one that exceeds the target
(lowest row index on ties).  Opened hoppers are refilled with fresh
``N(mu_j, (alpha mu_j)^2)`` draws.

Two refill models are offered.  ``fresh`` (default) redraws every hopper each
cycle, which is the independent-combination model behind the analysis.
``persistent`` keeps the content of shut hoppers; because a hopper stays shut
exactly when its weight did not fit, the retained contents are a biased
sample and conditional MSE comes out higher.  If no combination exceeds the
target the heaviest combination is discharged, the cycle is counted as
underweight and excluded from the conditional statistics.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from mwm import kernels
from mwm.errors import ConfigError
from mwm.machine import combination_distribution, enumerate_combinations
from mwm.order_stats import max_moments, min_moments

__all__ = [
    "RunningStats",
    "SimulationResult",
    "knapsack_select",
    "draw_weights",
    "simulate_buffer",
    "run_simulation",
    "replicate",
    "density_table",
]

REFILL_MODES = ("fresh", "persistent")


class RunningStats:
    """Single-pass mean and variance (Welford), mergeable (Chan et al.)."""

    def __init__(self, count=0, mean=0.0, m2=0.0):
        self.count = int(count)
        self.mean = float(mean)
        self.m2 = float(m2)

    def push(self, x):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def merge(self, other):
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / n
        self.m2 += other.m2 + delta * delta * self.count * other.count / n
        self.count = n
        return self

    @property
    def variance(self):
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0


@dataclass(frozen=True)
class SimulationResult:
    n_cycles: int
    n_packages: int
    mean_w: float
    var_w: float
    mse: float
    underweight_rate: float
    giveaway_mean: float
    seed: int
    refill: str = "fresh"
    resampled: int = 0
    target: float = 0.0

    def to_dict(self):
        return asdict(self)


def knapsack_select(x, T):
    """Index of the lightest entry strictly above ``T``; ``None`` if there is none."""
    x = np.asarray(x, dtype=float)
    masked = np.where(x > T, x, np.inf)
    i = int(np.argmin(masked))
    return i if np.isfinite(masked[i]) else None


def draw_weights(mu, alpha, n, streams):
    """``(H, n)`` positive hopper weights, hopper ``j`` drawing from ``streams[j]``.

    Non-positive draws are replaced by later draws of the same stream, never
    clamped.  Returns ``(weights, resampled_count)``.
    """
    mu = np.asarray(mu, dtype=float)
    out = np.empty((mu.shape[0], n))
    resampled = 0
    for j, rng in enumerate(streams):
        w = mu[j] * (1.0 + alpha * rng.standard_normal(n))
        bad = np.flatnonzero(w <= 0)
        while bad.size:
            resampled += bad.size
            w[bad] = mu[j] * (1.0 + alpha * rng.standard_normal(bad.size))
            bad = bad[w[bad] <= 0]
        out[j] = w
    return out, resampled


def simulate_buffer(P, wbuf, T, refill="fresh", backend=None):
    """Run the cycle loop on pre-drawn weights; see :mod:`mwm.kernels`."""
    if refill not in REFILL_MODES:
        raise ConfigError(f"refill must be one of {REFILL_MODES}")
    P = np.ascontiguousarray(P, dtype=np.uint8)
    wbuf = np.ascontiguousarray(wbuf, dtype=float)
    mod = backend or kernels.backend
    return mod.simulate_cycles(P, wbuf, float(T), refill == "fresh")


def _hopper_streams(seed, H):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(H)]


def run_simulation(mu, config, P=None, n_cycles=50_000, seed=0, refill="fresh",
                   return_packages=False, backend=None):
    """Simulate ``n_cycles`` packages and summarise the delivered ones.

    Returns a :class:`SimulationResult`, plus ``(packages, chosen)`` arrays
    when ``return_packages`` is true.
    """
    if n_cycles < 1:
        raise ConfigError("n_cycles must be at least 1")
    mu = np.asarray(getattr(mu, "mu", mu), dtype=float)
    if mu.shape[0] != config.hopper_count or not (mu > 0).all():
        raise ConfigError(f"need {config.hopper_count} positive setpoints")
    P = enumerate_combinations(config) if P is None else P
    T = config.target
    wbuf, resampled = draw_weights(mu, config.alpha, n_cycles + 1, _hopper_streams(seed, mu.shape[0]))
    packages, chosen, _, count, mean, m2 = simulate_buffer(P, wbuf, T, refill, backend)
    delivered = packages[chosen >= 0]
    assert (delivered > T).all(), "delivered package not above target"
    stats = RunningStats(count, mean, m2)
    if count:
        var = stats.variance
        res = SimulationResult(
            n_cycles=n_cycles, n_packages=count, mean_w=mean, var_w=var,
            mse=var + (mean - T) ** 2, underweight_rate=(n_cycles - count) / n_cycles,
            giveaway_mean=mean - T, seed=seed, refill=refill, resampled=resampled, target=T,
        )
    else:
        res = SimulationResult(
            n_cycles=n_cycles, n_packages=0, mean_w=math.nan, var_w=math.nan, mse=math.nan,
            underweight_rate=1.0, giveaway_mean=math.nan, seed=seed, refill=refill,
            resampled=resampled, target=T,
        )
    if return_packages:
        return res, packages, chosen
    return res


def replicate(mu, config, P=None, n_cycles=10_000, reps=10, seed=0, refill="fresh", threads=1):
    """Independent replications; returns the list of results and (mean, sd) of MSE."""
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(reps)]
    args = [(mu, config, P, n_cycles, s, refill) for s in seeds]
    if threads > 1 and reps > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate_one, args))
    else:
        results = [_replicate_one(a) for a in args]
    mses = np.array([r.mse for r in results])
    sd = float(mses.std(ddof=1)) if reps > 1 else 0.0
    return results, float(mses.mean()), sd


def _replicate_one(args):
    mu, config, P, n, s, refill = args
    return run_simulation(mu, config, P, n_cycles=n, seed=s, refill=refill)


def density_table(theta, sigma, grid=None, n_points=801, moments=None, tol=1e-4, seed=0):
    """Marginal normal densities of every combination on a common grid.

    Columns: ``x``, ``pdf_1 .. pdf_K``, then normal approximations of the
    smallest and largest order statistic (``pdf_min``, ``pdf_max``).  The
    default grid spans four standard deviations beyond the extreme means.

    Returns ``(header, table)`` with ``table`` of shape ``(n, K + 3)``.
    """
    theta = np.asarray(theta, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    sd = np.sqrt(np.diag(sigma))
    if grid is None:
        lo = float(np.min(theta - 4 * sd))
        hi = float(np.max(theta + 4 * sd))
        grid = np.linspace(lo, hi, n_points)
    grid = np.asarray(grid, dtype=float)
    if moments is None:
        lo_m = min_moments(theta, sigma, tol=tol, seed=seed)
        hi_m = max_moments(theta, sigma, tol=tol, seed=seed)
        moments = lo_m.merge(hi_m)
    cols = [grid]
    cols.extend(norm.pdf(grid, loc=t, scale=s) for t, s in zip(theta, sd))
    cols.append(norm.pdf(grid, loc=moments.e_min, scale=math.sqrt(max(moments.var_min, 1e-300))))
    cols.append(norm.pdf(grid, loc=moments.e_max, scale=math.sqrt(max(moments.var_max, 1e-300))))
    header = ["x"] + [f"pdf_{i + 1}" for i in range(theta.shape[0])] + ["pdf_min", "pdf_max"]
    return header, np.column_stack(cols)
