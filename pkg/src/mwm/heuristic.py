"""Heuristic setpoint search.

Good setups spread many distinct combination means around the target
while keeping the combinations weakly correlated.  The search maximises

    log det(M) + p(theta, T) + c(theta, T),    M = Sigma + (theta - T)(theta - T)'

subject to

    (E[X_min] + E[X_max]) / 2 >= 1.1 T            (extremes straddle the target)
    mu_1 >= mu_2 >= ... >= mu_H                   (one labelling per setup)
    0 < mu_i < f T
    ||mu||_1 + alpha ||mu||_2 Phi^-1(eps) >= T    (all-open row short w.p. <= eps)

``Sigma`` has rank at most ``H`` while it is ``K x K``, so both determinants
are taken of the matrix plus ``ridge * I`` (default ``1e-5`` grams^2).
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr, ndtri

from mwm.errors import ConfigError, InfeasibleError, MWMError
from mwm.machine import MachineConfig, Setpoints, combination_distribution, enumerate_combinations
from mwm.order_stats import lb_min_expectation, max_moments, min_moments

__all__ = [
    "Diagnostics",
    "SolverOptions",
    "SolutionReport",
    "unique_locations",
    "c_count",
    "p_value",
    "log_det_ridge",
    "objective",
    "constraints",
    "diagnose",
    "initial_points",
    "optimize",
    "format_table",
]

BOUND_MODES = ("exact", "lower_bound")
# replaces -inf so the simplex search can still rank points
_WORST = 1e30


@dataclass(frozen=True)
class Diagnostics:
    """Characteristics of a setup (rows of the published comparison tables)."""

    extreme_avg: float | None
    theta_bar: float
    neg_log_det_sigma: float
    p_value: float
    c_count: int
    neg_log_det_m: float
    e_min: float | None = None
    e_max: float | None = None
    moments_mode: str | None = None

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SolverOptions:
    n_starts: int = 100
    bound_mode: str = "lower_bound"
    max_inner_evals: int = 300
    outer_iters: int = 5
    penalty_init: float = 1.0
    penalty_growth: float = 10.0
    constraint_tol: float = 0.5
    rng_seed: int = 0
    integration_tol: float = 1e-4
    ridge: float = 1e-5
    weights: tuple = (1.0, 1.0, 1.0)
    threads: int = 1

    def __post_init__(self):
        if int(self.n_starts) != self.n_starts or self.n_starts < 1:
            raise ConfigError(f"n_starts must be a positive integer, got {self.n_starts!r}")
        if self.bound_mode not in BOUND_MODES:
            raise ConfigError(f"bound_mode must be one of {BOUND_MODES}, got {self.bound_mode!r}")
        if not self.constraint_tol > 0:
            raise ConfigError("constraint_tol must be positive")
        if not self.penalty_growth > 1:
            raise ConfigError("penalty_growth must exceed 1")
        if self.max_inner_evals < 1 or self.outer_iters < 1:
            raise ConfigError("max_inner_evals and outer_iters must be positive")
        if self.ridge < 0:
            raise ConfigError("ridge must be non-negative")
        if len(self.weights) != 3:
            raise ConfigError("weights needs three entries (log det, p, c)")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def to_dict(self):
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d


@dataclass
class SolutionReport:
    mu_star: Setpoints
    objective_value: float
    diagnostics: Diagnostics
    constraint_residuals: tuple
    starts_summary: list = field(default_factory=list)
    wall_time: float = 0.0
    config: MachineConfig | None = None
    options: SolverOptions | None = None

    def to_dict(self):
        return {
            "mu_star": list(self.mu_star.mu),
            "objective_value": self.objective_value,
            "diagnostics": self.diagnostics.to_dict(),
            "constraint_residuals": list(self.constraint_residuals),
            "starts_summary": self.starts_summary,
            "wall_time": self.wall_time,
            "config": self.config.to_json_dict() if self.config else None,
            "options": self.options.to_dict() if self.options else None,
        }

    @classmethod
    def from_dict(cls, d):
        opts = d.get("options")
        if opts is not None:
            opts = SolverOptions(**{**opts, "weights": tuple(opts["weights"])})
        cfg = d.get("config")
        return cls(
            mu_star=Setpoints(tuple(d["mu_star"])),
            objective_value=d["objective_value"],
            diagnostics=Diagnostics(**d["diagnostics"]),
            constraint_residuals=tuple(d["constraint_residuals"]),
            starts_summary=d.get("starts_summary", []),
            wall_time=d.get("wall_time", 0.0),
            config=MachineConfig.from_json_dict(cfg) if cfg else None,
            options=opts,
        )


def unique_locations(theta, T):
    """Combination means floored to multiples of ``0.04 T``, deduplicated, ascending."""
    if not T > 0:
        raise ConfigError("target must be positive")
    theta = np.asarray(theta, dtype=float)
    return np.unique(theta - np.mod(theta, 0.04 * T))


def c_count(theta, T):
    """Number of distinct location bins strictly inside ``(0.8 T, 1.2 T)``."""
    u = unique_locations(theta, T)
    return int(np.count_nonzero((u > 0.8 * T) & (u < 1.2 * T)))


def p_value(theta, sigma_diag, T):
    """Expected number of combinations landing in ``(T, 1.2 T)``, marginals only."""
    theta = np.asarray(theta, dtype=float)
    sd = np.sqrt(np.asarray(sigma_diag, dtype=float))
    return float(np.sum(ndtr((1.2 * T - theta) / sd) - ndtr((T - theta) / sd)))


def log_det_ridge(U, ridge):
    """``log det(U U' + ridge I)`` for a ``K x r`` factor ``U``.

    For ``ridge > 0`` the determinant lemma reduces the work to an ``r x r``
    Cholesky factor; ``ridge = 0`` factors the ``K x K`` product directly.
    Returns ``-inf`` when the matrix is not numerically positive definite.
    """
    K, r = U.shape
    if ridge > 0 and r < K:
        G = U.T @ U
        G[np.diag_indices_from(G)] += ridge
        base = (K - r) * math.log(ridge)
    else:
        G = U @ U.T
        G[np.diag_indices_from(G)] += ridge
        base = 0.0
    try:
        Lc = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        return -math.inf
    d = np.diag(Lc)
    if not (d > 0).all():
        return -math.inf
    return base + 2.0 * float(np.log(d).sum())


def _terms(mu, config, P, ridge):
    """log det(Sigma + rI), log det(M + rI), theta, marginal variances."""
    T = config.target
    U = P * (config.alpha * mu)
    theta = P @ mu
    var = np.einsum("ij,ij->i", U, U)
    dev = (theta - T)[:, None]
    ld_sigma = log_det_ridge(U, ridge)
    ld_m = log_det_ridge(np.hstack([U, dev]), ridge)
    return ld_sigma, ld_m, theta, var


def _value(mu, config, P, ridge, weights):
    # objective only: skips the Sigma determinant that _terms also computes
    T = config.target
    U = P * (config.alpha * mu)
    theta = P @ mu
    var = np.einsum("ij,ij->i", U, U)
    ld_m = log_det_ridge(np.hstack([U, (theta - T)[:, None]]), ridge)
    if ld_m == -math.inf:
        return -math.inf
    return (
        weights[0] * ld_m
        + weights[1] * p_value(theta, var, T)
        + weights[2] * c_count(theta, T)
    )


def _as_mu(mu, config):
    mu = np.asarray(getattr(mu, "mu", mu), dtype=float).ravel()
    if mu.shape[0] != config.hopper_count:
        raise ConfigError(f"expected {config.hopper_count} setpoints, got {mu.shape[0]}")
    return mu


def objective(mu, config, P=None, ridge=1e-5, weights=(1.0, 1.0, 1.0)):
    """Heuristic objective and the cheap part of the diagnostics.

    Returns ``(value, Diagnostics)``; ``value`` is ``-inf`` when the ridged
    ``M`` is not positive definite.  ``extreme_avg`` is left ``None`` (see
    :func:`diagnose`).
    """
    mu = _as_mu(mu, config)
    P = enumerate_combinations(config) if P is None else np.asarray(P, dtype=float)
    P = np.asarray(P, dtype=float)
    ld_s, ld_m, theta, var = _terms(mu, config, P, ridge)
    T = config.target
    p = p_value(theta, var, T)
    c = c_count(theta, T)
    value = -math.inf if ld_m == -math.inf else weights[0] * ld_m + weights[1] * p + weights[2] * c
    diag = Diagnostics(
        extreme_avg=None,
        theta_bar=float(theta.mean()),
        neg_log_det_sigma=-ld_s,
        p_value=p,
        c_count=c,
        neg_log_det_m=-ld_m,
    )
    return value, diag


def _extremes(mu, config, P, bound_mode, tol, seed):
    theta, sigma = combination_distribution(P, mu, config.alpha)
    if bound_mode == "exact":
        e_min = min_moments(theta, sigma, tol=tol, seed=seed, need_var=False).e_min
        e_max = max_moments(theta, sigma, tol=tol, seed=seed, need_var=False).e_max
    else:
        e_min = lb_min_expectation(theta, np.diag(sigma))
        e_max = float(theta.max())
    return e_min, e_max


def _residuals(mu, config, P, bound_mode, tol, seed):
    T = config.target
    if (mu > 0).all():
        e_min, e_max = _extremes(mu, config, P, bound_mode, tol, seed)
        first = 0.5 * (e_min + e_max) - 1.1 * T
    else:
        first = -T
    order = float(np.min(mu[:-1] - mu[1:])) if mu.shape[0] > 1 else 0.0
    box = min(float(mu.min()), config.f * T - float(mu.max()))
    feas = float(np.abs(mu).sum() + config.alpha * np.linalg.norm(mu) * ndtri(config.epsilon) - T)
    return np.array([first, order, box, feas])


def constraints(mu, config, P=None, bound_mode="exact", tol=1e-4, seed=0):
    """Constraint residuals, each ``>= 0`` when satisfied.

    Order: extreme-average margin over ``1.1 T``, smallest gap between
    consecutive setpoints, distance to the box ``(0, f T)``, and the
    all-open chance-constraint margin.  In ``lower_bound`` mode the first
    entry uses the closed-form lower bound for ``E[X_min]`` and ``max(theta)``
    for ``E[X_max]``.
    """
    if bound_mode not in BOUND_MODES:
        raise ConfigError(f"bound_mode must be one of {BOUND_MODES}")
    mu = _as_mu(mu, config)
    P = enumerate_combinations(config) if P is None else np.asarray(P, dtype=float)
    return _residuals(mu, config, np.asarray(P, dtype=float), bound_mode, tol, seed)


def diagnose(mu, config, P=None, bound_mode="exact", ridge=1e-5, tol=1e-4, seed=0):
    """Full diagnostics, including the extreme-order-statistic average."""
    mu = _as_mu(mu, config)
    P = enumerate_combinations(config) if P is None else np.asarray(P, dtype=float)
    P = np.asarray(P, dtype=float)
    _, diag = objective(mu, config, P, ridge=ridge)
    e_min, e_max = _extremes(mu, config, P, bound_mode, tol, seed)
    return replace(diag, extreme_avg=0.5 * (e_min + e_max), e_min=e_min, e_max=e_max, moments_mode=bound_mode)


def initial_points(config, n_starts, rng):
    """Sorted uniform draws in ``(0.05 f T, f T)`` that meet the chance constraint."""
    H, T = config.hopper_count, config.target
    lo, hi = 0.05 * config.f * T, config.f * T
    z = ndtri(config.epsilon)
    out = []
    attempts = 0
    limit = 100 * n_starts
    while len(out) < n_starts and attempts < limit:
        batch = min(limit - attempts, max(64, 4 * (n_starts - len(out))))
        draws = -np.sort(-rng.uniform(lo, hi, size=(batch, H)), axis=1)
        ok = draws.sum(axis=1) + config.alpha * np.linalg.norm(draws, axis=1) * z >= T
        attempts += batch
        for row in draws[ok]:
            if len(out) < n_starts:
                out.append(row)
    if not out:
        raise InfeasibleError(
            f"no start meets the chance constraint after {limit} draws; "
            "increase f or relax epsilon"
        )
    if len(out) < n_starts:
        warnings.warn(f"only {len(out)} of {n_starts} feasible starts found", RuntimeWarning, stacklevel=2)
    return np.array(out)


class _Problem:
    """Objective/constraint evaluation with a small cache and best-feasible tracking."""

    def __init__(self, config, P, options):
        self.config = config
        self.P = P
        self.options = options
        self.cache = {}
        self.best = None
        self.evals = 0

    def evaluate(self, mu):
        key = mu.tobytes()
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        o = self.options
        self.evals += 1
        g = _residuals(mu, self.config, self.P, o.bound_mode, o.integration_tol, o.rng_seed)
        f = _value(mu, self.config, self.P, o.ridge, o.weights) if (mu > 0).all() else -math.inf
        if len(self.cache) > 50_000:
            self.cache.clear()
        self.cache[key] = (f, g)
        if g.min() >= -o.constraint_tol and f > -math.inf:
            if self.best is None or f > self.best[0]:
                self.best = (f, mu.copy(), g)
        return f, g


def _run_start(args):
    config, P, options, index, x0 = args
    prob = _Problem(config, P, options)
    lam = np.zeros(4)
    rho = options.penalty_init
    x = np.array(x0, dtype=float)

    def lagrangian(z):
        f, g = prob.evaluate(z)
        if f == -math.inf:
            f = -_WORST
        pen = np.maximum(0.0, lam - rho * g) ** 2 - lam * lam
        return -f + pen.sum() / (2.0 * rho)

    prob.evaluate(x)
    for _ in range(options.outer_iters):
        res = minimize(
            lagrangian,
            x,
            method="Nelder-Mead",
            options={"maxfev": options.max_inner_evals, "xatol": 1e-3, "fatol": 1e-8, "adaptive": True},
        )
        x = res.x
        _, g = prob.evaluate(x)
        lam = np.maximum(0.0, lam - rho * g)
        rho *= options.penalty_growth
    if prob.best is not None:
        f, mu, g = prob.best
        feasible = True
    else:
        f, g = prob.evaluate(x)
        mu, feasible = x, False
    return {
        "index": index,
        "start": [float(v) for v in x0],
        "mu": [float(v) for v in mu],
        "objective": float(f),
        "max_violation": float(max(0.0, -g.min())),
        "feasible": feasible,
        "evals": prob.evals,
    }


def optimize(config, P=None, options=None):
    """Multi-start augmented-Lagrangian search for good setpoints.

    Every start satisfies the ordering, box and chance constraints; the
    extreme-average constraint may initially be violated.  Each start runs
    ``outer_iters`` rounds of a Nelder-Mead minimisation of the augmented
    Lagrangian followed by a multiplier update and penalty growth.  The
    best feasible point seen during a start is its result; the report holds
    the best over all starts, in descending order.

    Raises
    ------
    InfeasibleError
        No start could be generated, or no start reached feasibility.
    """
    options = options or SolverOptions()
    P = enumerate_combinations(config) if P is None else P
    P = np.asarray(P, dtype=float)
    t0 = time.perf_counter()
    rng = np.random.default_rng(options.rng_seed)
    starts = initial_points(config, options.n_starts, rng)
    jobs = [(config, P, options, k, x0) for k, x0 in enumerate(starts)]
    if options.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=options.threads) as pool:
            summary = list(pool.map(_run_start, jobs))
    else:
        summary = [_run_start(job) for job in jobs]
    feasible = [s for s in summary if s["feasible"]]
    if not feasible:
        raise InfeasibleError(
            "no start reached a feasible setup; increase f, relax epsilon or add starts"
        )
    # ties resolved by start index so parallel and serial runs agree
    best = max(feasible, key=lambda s: (s["objective"], -s["index"]))
    mu_star = Setpoints(tuple(best["mu"])).canonical()
    mu = np.array(mu_star.mu)
    diag = diagnose(mu, config, P, bound_mode=options.bound_mode, ridge=options.ridge,
                    tol=options.integration_tol, seed=options.rng_seed)
    value = _value(mu, config, P, options.ridge, options.weights)
    resid = _residuals(mu, config, P, options.bound_mode, options.integration_tol, options.rng_seed)
    return SolutionReport(
        mu_star=mu_star,
        objective_value=float(value),
        diagnostics=diag,
        constraint_residuals=tuple(float(r) for r in resid),
        starts_summary=summary,
        wall_time=time.perf_counter() - t0,
        config=config,
        options=options,
    )


_ROWS = [
    ("mu*", None),
    ("(E[X_[1]]+E[X_[K]])/2", "extreme_avg"),
    ("mean(Theta)", "theta_bar"),
    ("-log(det(Sigma))", "neg_log_det_sigma"),
    ("p(Theta,T)", "p_value"),
    ("c(Theta,T)", "c_count"),
    ("-log(det(M))", "neg_log_det_m"),
]


def format_table(columns):
    """Text table in the row layout of the published comparison tables.

    ``columns`` maps a heading to ``(mu, Diagnostics, SimulationResult or None)``.
    """
    heads = list(columns)
    lines = []
    rows = []
    for label, attr in _ROWS:
        cells = []
        for h in heads:
            mu, diag, _ = columns[h]
            if attr is None:
                cells.append("(" + ", ".join(f"{m:.1f}" for m in mu) + ")")
            else:
                v = getattr(diag, attr)
                cells.append("-" if v is None else (f"{v}" if attr == "c_count" else f"{v:.2f}"))
        rows.append((label, cells))
    sim_rows = [("E(Wp|Wp>T)", "mean_w"), ("Var(Wp|Wp>T)", "var_w"), ("MSE(Wp|Wp>T)", "mse")]
    tail = []
    for label, attr in sim_rows:
        cells = []
        for h in heads:
            sim = columns[h][2]
            cells.append("-" if sim is None else f"{getattr(sim, attr):.1f}")
        tail.append((label, cells))
    width0 = max(len(r[0]) for r in rows + tail)
    widths = [max(len(h), *(len(r[1][k]) for r in rows + tail)) for k, h in enumerate(heads)]
    fmt = lambda label, cells: " | ".join([label.ljust(width0)] + [c.rjust(w) for c, w in zip(cells, widths)])
    lines.append(fmt("Property", heads))
    lines.append("-" * len(lines[0]))
    lines.extend(fmt(*r) for r in rows)
    lines.append("-" * len(lines[0]))
    lines.extend(fmt(*r) for r in tail)
    return "\n".join(lines)
