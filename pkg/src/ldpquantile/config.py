"""Federation configuration and its JSON document form."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distributions import DistributionSpec, Normal, source_from_dict
from .schedule import CommSchedule, StepSizePolicy, build_schedule

WEIGHT_TOL = 1e-12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClientSpec:
    id: int
    weight: float
    quantile_level: float
    truthful_rate: float
    source: DistributionSpec = field(default_factory=Normal)

    def __post_init__(self):
        if not 0.0 < self.weight <= 1.0:
            raise ConfigError(f"client {self.id}: weight must lie in (0, 1], got {self.weight}")
        if not 0.0 < self.quantile_level < 1.0:
            raise ConfigError(f"client {self.id}: tau must lie in (0, 1), got {self.quantile_level}")
        if not 0.0 < self.truthful_rate <= 1.0:
            raise ConfigError(f"client {self.id}: rate must lie in (0, 1], got {self.truthful_rate}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "weight": self.weight,
            "tau": self.quantile_level,
            "rate": self.truthful_rate,
            "source": self.source.to_dict(),
        }


@dataclass(frozen=True)
class FederationConfig:
    clients: tuple[ClientSpec, ...]
    schedule: CommSchedule
    policy: StepSizePolicy = field(default_factory=StepSizePolicy)
    alpha: float = 0.05
    master_seed: int = 0
    clamp_bounds: tuple[float, float] | None = None
    # reproduces the r_k-weighted aggregate appearing in the FCLT statement; off by default
    rate_weighted_aggregation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "clients", tuple(self.clients))
        if not self.clients:
            raise ConfigError("federation needs at least one client")
        ids = [c.id for c in self.clients]
        if len(set(ids)) != len(ids):
            raise ConfigError("client ids must be unique")
        total = math.fsum(c.weight for c in self.clients)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ConfigError(f"client weights sum to {total!r}, not 1")
        if not 0.0 < self.global_tau < 1.0:
            raise ConfigError("global tau must lie in (0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.clamp_bounds is not None:
            lo, hi = self.clamp_bounds
            if not lo < hi:
                raise ConfigError("clamp_bounds needs lo < hi")
            object.__setattr__(self, "clamp_bounds", (float(lo), float(hi)))

    @property
    def global_tau(self) -> float:
        return math.fsum(c.weight * c.quantile_level for c in self.clients)

    @property
    def rbar(self) -> float:
        return float(np.mean([c.truthful_rate for c in self.clients]))

    @property
    def K(self) -> int:
        return len(self.clients)

    def ordered_clients(self) -> tuple[ClientSpec, ...]:
        """Clients sorted by id; every aggregation runs in this order."""
        return tuple(sorted(self.clients, key=lambda c: c.id))

    def with_(self, **changes) -> FederationConfig:
        from dataclasses import replace

        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "clients": [c.to_dict() for c in self.clients],
            "schedule": self.schedule.to_dict(),
            "policy": {
                "scale": "auto" if self.policy.scale is None else self.policy.scale,
                "exponent": self.policy.exponent,
                "offset": self.policy.offset,
            },
            "alpha": self.alpha,
            "master_seed": self.master_seed,
            "clamp_bounds": None if self.clamp_bounds is None else list(self.clamp_bounds),
        }
        if self.rate_weighted_aggregation:
            d["rate_weighted_aggregation"] = True
        return d

    def to_json(self, path=None, indent=2) -> str:
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


_TOP_KEYS = {"clients", "scenario", "schedule", "policy", "alpha", "master_seed", "clamp_bounds", "rate_weighted_aggregation"}
_CLIENT_KEYS = {"id", "weight", "tau", "rate", "source"}
_SCHEDULE_KEYS = {"strategy", "rounds", "total_samples", "warmup_frac", "block_lengths"}
_POLICY_KEYS = {"scale", "exponent", "offset"}


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def schedule_from_dict(d: dict) -> CommSchedule:
    _reject_unknown(d, _SCHEDULE_KEYS, "schedule")
    try:
        return build_schedule(
            d.get("strategy", "C1"),
            rounds=d.get("rounds"),
            total_samples=d.get("total_samples"),
            warmup_frac=float(d.get("warmup_frac", 0.0)),
            block_lengths=d.get("block_lengths"),
        )
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from None


def policy_from_dict(d: dict) -> StepSizePolicy:
    _reject_unknown(d, _POLICY_KEYS, "policy")
    scale = d.get("scale", "auto")
    try:
        return StepSizePolicy(
            scale=None if scale in (None, "auto") else float(scale),
            exponent=float(d.get("exponent", 0.51)),
            offset=float(d.get("offset", 100.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"policy: {exc}") from None


def client_from_dict(d: dict) -> ClientSpec:
    _reject_unknown(d, _CLIENT_KEYS, "client")
    try:
        source = source_from_dict(d.get("source", {"family": "normal"}))
        return ClientSpec(int(d["id"]), float(d["weight"]), float(d["tau"]), float(d["rate"]), source)
    except KeyError as exc:
        raise ConfigError(f"client is missing {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def config_from_dict(d: dict) -> FederationConfig:
    """Parse a config document; ``clients`` may be replaced by a named ``scenario`` preset."""
    _reject_unknown(d, _TOP_KEYS, "config")
    if ("clients" in d) == ("scenario" in d):
        raise ConfigError("config needs exactly one of 'clients' or 'scenario'")
    seed = int(d.get("master_seed", 0))
    if "clients" in d:
        clients = [client_from_dict(c) for c in d["clients"]]
    else:
        from .scenarios import scenario_from_dict, make_scenario

        clients = make_scenario(scenario_from_dict(d["scenario"]), seed)
    if "schedule" not in d:
        raise ConfigError("config is missing 'schedule'")
    clamp = d.get("clamp_bounds")
    return FederationConfig(
        clients=tuple(clients),
        schedule=schedule_from_dict(d["schedule"]),
        policy=policy_from_dict(d.get("policy", {})),
        alpha=float(d.get("alpha", 0.05)),
        master_seed=seed,
        clamp_bounds=None if clamp is None else tuple(clamp),
        rate_weighted_aggregation=bool(d.get("rate_weighted_aggregation", False)),
    )


def load_config(path) -> FederationConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)
