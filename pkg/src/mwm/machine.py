"""Machine description and the distribution of candidate package weights.

A machine with ``H`` hoppers fills each package from one *combination* of
opened hoppers.  The combinations the built-in knapsack may choose from are
the rows of a binary matrix ``P`` (K x H).  Given setpoints ``mu`` and the
proportional noise ratio ``alpha`` the combination weights are jointly normal,
``X ~ N(P mu, P diag(alpha^2 mu^2) P')``.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from mwm.errors import ConfigError

__all__ = [
    "MachineConfig",
    "Setpoints",
    "CombinationSet",
    "enumerate_combinations",
    "combination_distribution",
    "combination_count",
    "integral_count",
    "write_combinations_csv",
]

# JSON keys use the short names of the published configuration schema.
_JSON_KEYS = {
    "H": "hopper_count",
    "T": "target",
    "alpha": "alpha",
    "max_shut": "max_shut",
    "exclude_all_open": "exclude_all_open",
    "epsilon": "epsilon",
    "f": "f",
}


@dataclass(frozen=True)
class MachineConfig:
    """Immutable problem statement for one machine.

    Parameters
    ----------
    hopper_count : int
        Number of hoppers ``H`` (at least 2).
    target : float
        Minimum package weight ``T`` in grams.
    alpha : float
        Ratio between a hopper's standard deviation and its setpoint.
    max_shut : int
        Largest number of hoppers allowed to stay shut in a cycle.
    exclude_all_open : bool
        Drop the combination that opens every hopper.
    epsilon : float
        Allowed probability that the all-open combination falls short of
        ``target``.
    f : float
        Each setpoint must stay below ``f * target``.
    """

    hopper_count: int
    target: float = 500.0
    alpha: float = 0.123
    max_shut: int = 2
    exclude_all_open: bool = False
    epsilon: float = 1e-5
    f: float = 1.0

    def __post_init__(self):
        H = self.hopper_count
        if isinstance(H, bool) or int(H) != H or H < 2:
            raise ConfigError(f"hopper_count must be an integer >= 2, got {H!r}")
        object.__setattr__(self, "hopper_count", int(H))
        if int(self.max_shut) != self.max_shut or not 0 <= self.max_shut < H:
            raise ConfigError(
                f"max_shut must be an integer in [0, {H - 1}], got {self.max_shut!r}"
            )
        object.__setattr__(self, "max_shut", int(self.max_shut))
        if not self.target > 0 or not math.isfinite(self.target):
            raise ConfigError(f"target must be positive, got {self.target!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not 0 < self.epsilon < 1:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        if not 0 < self.f <= 1:
            raise ConfigError(f"f must lie in (0, 1], got {self.f!r}")
        if self.exclude_all_open and self.max_shut == 0:
            raise ConfigError("excluding the all-open row with max_shut=0 leaves no combination")
        if H > 10 and self.max_shut >= 3 and not self.exclude_all_open:
            warnings.warn(
                "H > 10 with up to 3 shut hoppers gives a badly conditioned covariance; "
                "consider exclude_all_open=True",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def H(self) -> int:
        return self.hopper_count

    @property
    def T(self) -> float:
        return self.target

    def to_json_dict(self) -> dict:
        d = asdict(self)
        return {short: d[long] for short, long in _JSON_KEYS.items()}

    @classmethod
    def from_json_dict(cls, data: dict, **overrides) -> "MachineConfig":
        """Build from the short-key JSON schema; ``None`` overrides are ignored."""
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = _JSON_KEYS.get(key, key)
            if name not in known:
                raise ConfigError(f"unknown configuration key {key!r}")
            kwargs[name] = value
        for key, value in overrides.items():
            if value is not None:
                kwargs[_JSON_KEYS.get(key, key)] = value
        if "hopper_count" not in kwargs:
            raise ConfigError("configuration needs the hopper count 'H'")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json_file(cls, path, **overrides) -> "MachineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from None
        return cls.from_json_dict(data, **overrides)


@dataclass(frozen=True)
class Setpoints:
    """Hopper setpoint weights (grams), all strictly positive."""

    mu: tuple

    def __post_init__(self):
        mu = tuple(float(m) for m in np.ravel(self.mu))
        if not mu:
            raise ConfigError("setpoints must not be empty")
        if not all(m > 0 and math.isfinite(m) for m in mu):
            raise ConfigError(f"setpoints must be positive and finite, got {mu}")
        object.__setattr__(self, "mu", mu)

    def __len__(self):
        return len(self.mu)

    def as_array(self) -> np.ndarray:
        return np.array(self.mu)

    def canonical(self) -> "Setpoints":
        """Sorted descending; every hopper labelling maps to this form."""
        return Setpoints(tuple(sorted(self.mu, reverse=True)))


@dataclass(frozen=True, eq=False)
class CombinationSet:
    """Combination matrix together with the induced normal distribution."""

    P: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray
    sigma_w: np.ndarray

    @property
    def K(self) -> int:
        return self.P.shape[0]

    @classmethod
    def build(cls, P, mu, alpha) -> "CombinationSet":
        theta, sigma = combination_distribution(P, mu, alpha)
        mu = np.asarray(getattr(mu, "mu", mu), dtype=float)
        for arr in (theta, sigma):
            arr.setflags(write=False)
        P = np.array(P, dtype=np.uint8)
        P.setflags(write=False)
        sigma_w = (alpha * mu) ** 2
        sigma_w.setflags(write=False)
        return cls(P, theta, sigma, sigma_w)


def combination_count(H: int, max_shut: int, exclude_all_open: bool = False) -> int:
    return sum(math.comb(H, s) for s in range(max_shut + 1)) - int(exclude_all_open)


def enumerate_combinations(config: MachineConfig) -> np.ndarray:
    """All admissible open/shut patterns as a ``(K, H)`` uint8 matrix.

    Rows are ordered by the number of shut hoppers and, within that, by the
    lexicographic order of the shut index set, so the all-open row (if kept)
    comes first.
    """
    H = config.hopper_count
    rows = []
    for n_shut in range(config.max_shut + 1):
        if n_shut == 0 and config.exclude_all_open:
            continue
        for shut in itertools.combinations(range(H), n_shut):
            row = np.ones(H, dtype=np.uint8)
            row[list(shut)] = 0
            rows.append(row)
    return np.array(rows, dtype=np.uint8).reshape(len(rows), H)


def combination_distribution(P, mu, alpha: float):
    """Mean vector and covariance matrix of the combination weights.

    Returns
    -------
    theta : ndarray, shape (K,)
        ``P @ mu``.
    sigma : ndarray, shape (K, K)
        ``P diag(alpha^2 mu^2) P'``, symmetrised exactly.
    """
    mu = np.asarray(getattr(mu, "mu", mu), dtype=float)
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != mu.shape[0]:
        raise ConfigError(
            f"combination matrix of shape {P.shape} does not match {mu.shape[0]} setpoints"
        )
    theta = P @ mu
    scaled = P * (alpha * mu)
    sigma = scaled @ scaled.T
    sigma = 0.5 * (sigma + sigma.T)
    return theta, sigma


def integral_count(H: int):
    """Number and dimension of the integrals an exact constrained moment needs.

    With all ``K = 2**H - 1`` combinations admitted, one moment of the
    constrained package weight expands into ``2**(K-1) * K`` integrals of
    dimension ``K``.  Exact integers are returned (Python ints do not
    overflow); convert with ``float()`` for display.
    """
    if int(H) != H or H < 1:
        raise ConfigError(f"H must be a positive integer, got {H!r}")
    K = 2 ** int(H) - 1
    return 2 ** (K - 1) * K, K


def write_combinations_csv(P, path_or_file) -> None:
    P = np.asarray(P, dtype=int)
    header = ",".join(f"h{j + 1}" for j in range(P.shape[1]))
    np.savetxt(path_or_file, P, fmt="%d", delimiter=",", header=header, comments="")
