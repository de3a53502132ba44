"""Heterogeneity presets, ground-truth oracles, and CSV ingestion."""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .config import ClientSpec, ConfigError
from .distributions import Cauchy, Empirical, Normal, Uniform, has_density

PRESETS = ("homogeneous", "tau_low", "tau_high", "hetero_rates", "HeteL", "HeteD", "custom")
TAU_LOW = (0.3, 0.5)
TAU_HIGH = (0.5, 0.8)
HETERO_RATES = (0.25, 0.9)


@dataclass(frozen=True)
class ScenarioSpec:
    """A named client population.

    ``tau`` and ``rate`` are either a scalar shared by every client or a
    ``(lo, hi)`` range spread over the clients (equally spaced unless
    ``random_grid``). Presets fill in the ranges the experiments use.
    """

    preset: str = "homogeneous"
    K: int = 10
    tau: float | tuple[float, float] | None = None
    rate: float | tuple[float, float] | None = None
    random_grid: bool = False
    location_sd: float = 1.0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown scenario preset {self.preset!r}")
        if self.K < 1:
            raise ConfigError("K must be >= 1")

    def resolved_tau(self):
        if self.tau is not None:
            return self.tau
        return {"tau_low": TAU_LOW, "tau_high": TAU_HIGH}.get(self.preset, 0.5)

    def resolved_rate(self):
        if self.rate is not None:
            return self.rate
        return HETERO_RATES if self.preset == "hetero_rates" else 0.9

    @property
    def tau_label(self) -> str:
        t = self.resolved_tau()
        if isinstance(t, tuple):
            return {TAU_LOW: "tau_low", TAU_HIGH: "tau_high"}.get(t, f"{t[0]:g}-{t[1]:g}")
        return f"{t:g}"

    @property
    def rate_label(self) -> str:
        r = self.resolved_rate()
        return "hetero" if isinstance(r, tuple) else f"{r:g}"

    @property
    def name(self) -> str:
        return {"HeteL": "HeteL", "HeteD": "HeteD"}.get(self.preset, "normal")

    def to_dict(self) -> dict:
        d = {"preset": self.preset, "K": self.K}
        for key in ("tau", "rate"):
            v = getattr(self, key)
            if v is not None:
                d[key] = list(v) if isinstance(v, tuple) else v
        if self.random_grid:
            d["random_grid"] = True
        return d


def scenario_from_dict(d: dict) -> ScenarioSpec:
    allowed = {"preset", "K", "tau", "rate", "random_grid", "location_sd"}
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in scenario: {sorted(extra)}")

    def rng_or_scalar(v, named):
        if v is None:
            return None
        if isinstance(v, str):
            if v not in named:
                raise ConfigError(f"unknown range name {v!r}")
            return named[v]
        if isinstance(v, (list, tuple)):
            if len(v) != 2:
                raise ConfigError("ranges must be [lo, hi]")
            return (float(v[0]), float(v[1]))
        return float(v)

    return ScenarioSpec(
        preset=d.get("preset", "homogeneous"),
        K=int(d.get("K", 10)),
        tau=rng_or_scalar(d.get("tau"), {"tau_low": TAU_LOW, "tau_high": TAU_HIGH}),
        rate=rng_or_scalar(d.get("rate"), {"hetero": HETERO_RATES}),
        random_grid=bool(d.get("random_grid", False)),
        location_sd=float(d.get("location_sd", 1.0)),
    )


def _spread(v, K, rng, random_grid):
    if not isinstance(v, tuple):
        return np.full(K, float(v))
    lo, hi = v
    if random_grid:
        return rng.uniform(lo, hi, size=K)
    return np.linspace(lo, hi, K) if K > 1 else np.array([(lo + hi) / 2.0])


def make_scenario(spec: ScenarioSpec, seed: int = 0) -> list[ClientSpec]:
    """Materialize ``spec`` into client specs; deterministic given ``seed``."""
    K = spec.K
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(2**31,)))
    taus = _spread(spec.resolved_tau(), K, rng, spec.random_grid)
    rates = _spread(spec.resolved_rate(), K, rng, spec.random_grid)

    if spec.preset == "HeteL":
        mus = rng.normal(0.0, spec.location_sd, size=K)
        sources = [Normal(float(mu), 1.0) for mu in mus]
    elif spec.preset == "HeteD":
        n_norm = round(0.3 * K)
        n_unif = round(0.3 * K)
        if n_norm + n_unif > K:
            n_unif = K - n_norm
        sources = [Normal()] * n_norm + [Uniform(-1.0, 1.0)] * n_unif + [Cauchy()] * (K - n_norm - n_unif)
    else:
        sources = [Normal()] * K

    w = 1.0 / K
    return [ClientSpec(k, w, float(taus[k]), float(rates[k]), sources[k]) for k in range(K)]


def mixture_cdf(clients, Q) -> float:
    return float(math.fsum(c.weight * float(c.source.cdf(Q)) for c in clients))


def mixture_pdf(clients, Q) -> float:
    return float(math.fsum(c.weight * float(c.source.pdf(Q)) for c in clients))


@dataclass
class OracleSolution:
    Qstar: float
    Q_k: np.ndarray
    density_sum: float
    sigma2: float
    nu: float
    bracket: tuple[float, float] = field(default=(-1.0, 1.0))


def oracle_quantile(clients, tau: float | None = None, tol: float = 1e-10, nu: float = 1.0) -> OracleSolution:
    """Solve ``sum_k p_k F_k(Q) = tau`` and evaluate the limiting variance there.

    ``tau`` defaults to the clients' weighted level.
    """
    clients = list(clients)
    if tau is None:
        tau = math.fsum(c.weight * c.quantile_level for c in clients)
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if any(not has_density(c.source) for c in clients):
        raise ValueError("oracle needs analytic sources; empirical clients have no density")

    def resid(Q):
        return mixture_cdf(clients, Q) - tau

    lo, hi = -1.0, 1.0
    for _ in range(120):
        if resid(lo) < 0 < resid(hi):
            break
        lo, hi = 2 * lo, 2 * hi
    else:
        raise ArithmeticError("could not bracket the global quantile after 120 doublings")

    Q = optimize.brentq(resid, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(resid(Q)) > tol:
        raise ArithmeticError(f"mixture CDF residual {resid(Q):.3g} exceeds tolerance {tol:g}")

    Q_k = np.array([float(c.source.cdf(Q)) for c in clients])
    dens = mixture_pdf(clients, Q)
    if dens <= 0:
        raise ArithmeticError("zero mixture density at the global quantile")
    sol = OracleSolution(Q, Q_k, dens, math.nan, nu, (lo, hi))
    sol.sigma2 = theoretical_variance(
        sol, [c.truthful_rate for c in clients], [c.weight for c in clients], nu
    )
    return sol


def theoretical_variance(oracle: OracleSolution, rates, weights, nu: float = 1.0) -> float:
    """Limiting variance of ``sqrt(t_T) (Qhat_T - Q*)``."""
    r = np.asarray(rates, dtype=float)
    p = np.asarray(weights, dtype=float)
    if (r <= 0).any():
        raise ValueError("rates must be positive")
    if not oracle.density_sum > 0:
        raise ValueError("zero density sum")
    num = float(np.sum(p**2 * (r**-2 - (2.0 * oracle.Q_k - 1.0) ** 2)))
    return nu * num / (4.0 * oracle.density_sum**2)


# --------------------------------------------------------------------- ingestion


@dataclass
class IngestResult:
    clients: list[ClientSpec]
    group_sizes: "OrderedDict[str, int]"  # after merging, before oversampling
    balanced_size: int
    raw_values: np.ndarray = field(repr=False)


def ingest_csv(
    path,
    group_column: str,
    value_column: str,
    merge_smallest: int = 0,
    transform: str = "none",
    seed: int = 0,
    delimiter: str = ",",
    tau: float = 0.5,
    rate: float = 0.9,
    mode: str = "iid",
) -> IngestResult:
    """Read a grouped CSV and turn every group into one client.

    The ``merge_smallest`` smallest groups are pooled into ``Others``; every
    group is then oversampled with replacement up to the largest group size.
    ``rate`` may be a scalar or a ``(lo, hi)`` range spread over the groups.
    """
    if transform not in ("none", "log"):
        raise ValueError(f"unknown transform {transform!r}")
    groups: dict[str, list[float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        missing = {group_column, value_column} - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            raw = row[value_column]
            try:
                val = float(raw)
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{lineno}: non-numeric value {raw!r}") from None
            if transform == "log" and not val > 0:
                raise ValueError(f"{path}:{lineno}: non-positive value {val} under log transform")
            groups.setdefault(row[group_column], []).append(val)
    if not groups:
        raise ValueError(f"{path}: no data rows")

    if 1 <= merge_smallest <= len(groups):
        smallest = sorted(groups, key=lambda g: (len(groups[g]), g))[:merge_smallest]
        pooled = [v for g in sorted(smallest) for v in groups.pop(g)]
        groups["Others"] = groups.get("Others", []) + pooled
    merged = OrderedDict((g, groups[g]) for g in sorted(groups) if g != "Others")
    if "Others" in groups:
        merged["Others"] = groups["Others"]

    rng = np.random.default_rng(seed)
    target = max(len(v) for v in merged.values())
    K = len(merged)
    rates = _spread(rate, K, rng, False)
    clients = []
    for k, (name, vals) in enumerate(merged.items()):
        v = np.asarray(vals, dtype=float)
        if v.size < target:
            v = np.concatenate((v, rng.choice(v, size=target - v.size, replace=True)))
        if transform == "log":
            v = np.log(v)
        clients.append(ClientSpec(k, 1.0 / K, tau, float(rates[k]), Empirical(v, mode=mode, label=name)))
    raw = np.concatenate([np.asarray(v, dtype=float) for v in merged.values()])
    return IngestResult(clients, OrderedDict((g, len(v)) for g, v in merged.items()), target, raw)
