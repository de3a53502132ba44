"""Per-client data sources and their sample streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special


class StreamExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class Normal:
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("Normal sigma must be positive")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mu + self.sigma * rng.standard_normal(n)

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi))

    def to_dict(self):
        return {"family": "normal", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Uniform:
    a: float = -1.0
    b: float = 1.0

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("Uniform needs a < b")

    def draw(self, rng, n):
        return self.a + (self.b - self.a) * rng.random(n)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def to_dict(self):
        return {"family": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Cauchy:
    x0: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("Cauchy gamma must be positive")

    def draw(self, rng, n):
        return self.x0 + self.gamma * rng.standard_cauchy(n)

    def cdf(self, x):
        return 0.5 + np.arctan((np.asarray(x, dtype=float) - self.x0) / self.gamma) / math.pi

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.x0) / self.gamma
        return 1.0 / (math.pi * self.gamma * (1.0 + z * z))

    def to_dict(self):
        return {"family": "cauchy", "x0": self.x0, "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class Empirical:
    """A finite sample streamed either i.i.d. with replacement or in one shuffled pass."""

    values: np.ndarray = field(repr=False)
    mode: str = "iid"
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("Empirical source needs a non-empty 1-d sample")
        if not np.isfinite(v).all():
            raise ValueError("Empirical sample contains non-finite values")
        if self.mode not in ("iid", "single_pass"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def draw(self, rng, n):
        return self.values[rng.integers(0, self.values.size, size=n)]

    def cdf(self, x):
        s = np.sort(self.values)
        return np.searchsorted(s, np.asarray(x, dtype=float), side="right") / s.size

    def pdf(self, x):
        raise NotImplementedError("no density for an empirical source")

    def to_dict(self):
        return {"family": "empirical", "values": self.values.tolist(), "mode": self.mode, "label": self.label}


DistributionSpec = Normal | Uniform | Cauchy | Empirical

_FAMILIES = {"normal": Normal, "uniform": Uniform, "cauchy": Cauchy, "empirical": Empirical}


def source_from_dict(d: dict) -> DistributionSpec:
    d = dict(d)
    family = str(d.pop("family", "")).lower()
    if family not in _FAMILIES:
        raise ValueError(f"unknown source family {family!r}")
    try:
        return _FAMILIES[family](**d)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {family} source: {exc}") from None


def has_density(source) -> bool:
    return not isinstance(source, Empirical)


class SampleStream:
    """One sample per local step, never reused."""

    def __init__(self, source: DistributionSpec, rng: np.random.Generator):
        self.source = source
        self.rng = rng
        self.consumed = 0
        self._order = None
        if isinstance(source, Empirical) and source.mode == "single_pass":
            self._order = rng.permutation(source.values.size)

    def take(self, n: int) -> np.ndarray:
        n = int(n)
        if self._order is None:
            out = self.source.draw(self.rng, n)
        else:
            if self.consumed + n > self._order.size:
                raise StreamExhausted(
                    f"{self.source.label or 'empirical'} source has {self._order.size - self.consumed} "
                    f"samples left, {n} requested"
                )
            out = self.source.values[self._order[self.consumed : self.consumed + n]]
        self.consumed += n
        return out
