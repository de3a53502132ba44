"""Communication schedules and step-size policies."""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

STRATEGIES = ("C1", "C5", "Log", "Custom")


@dataclass(frozen=True)
class StepSizePolicy:
    """Effective step ``gamma_m = scale / (m**exponent + offset)``.

    ``scale=None`` means "auto", i.e. ``20 * rbar`` resolved at run time.
    """

    scale: float | None = None
    exponent: float = 0.51
    offset: float = 100.0

    def __post_init__(self):
        if self.scale is not None and not self.scale > 0:
            raise ValueError(f"step scale must be positive, got {self.scale}")
        if self.offset < 0:
            raise ValueError(f"step offset must be >= 0, got {self.offset}")
        if not self.exponent > 0:
            raise ValueError(f"step exponent must be positive, got {self.exponent}")
        if not 0.5 < self.exponent <= 1.0:
            warnings.warn(
                f"step exponent {self.exponent} outside (0.5, 1]; square-summable/non-summable "
                "effective steps are not guaranteed",
                stacklevel=2,
            )

    def resolved_scale(self, rbar: float) -> float:
        return 20.0 * rbar if self.scale is None else self.scale

    def gamma(self, m, rbar: float):
        m = np.asarray(m, dtype=float)
        return self.resolved_scale(rbar) / (m**self.exponent + self.offset)


@dataclass(frozen=True, eq=False)
class CommSchedule:
    """Block lengths ``E_1..E_T`` between synchronizations plus derived grids."""

    strategy: str
    block_lengths: np.ndarray
    warmup_rounds: int = 0
    warmup_frac: float = 0.0
    total_samples: int | None = None  # set when the horizon was given in samples
    cumulative: np.ndarray = field(init=False, repr=False)
    grid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        E = np.asarray(self.block_lengths, dtype=np.int64)
        if E.ndim != 1 or E.size == 0:
            raise ValueError("schedule needs at least one round")
        if (E < 1).any():
            raise ValueError("block lengths must be integers >= 1")
        E = E.copy()
        E.flags.writeable = False
        object.__setattr__(self, "block_lengths", E)
        cum = np.cumsum(E)
        cum.flags.writeable = False
        object.__setattr__(self, "cumulative", cum)
        inv = np.cumsum(1.0 / E)
        grid = np.concatenate(([0.0], inv / inv[-1]))
        grid[-1] = 1.0
        grid.flags.writeable = False
        object.__setattr__(self, "grid", grid)

    @property
    def rounds(self) -> int:
        return int(self.block_lengths.size)

    @property
    def samples(self) -> int:
        """t_T, samples consumed per client over the whole run."""
        return int(self.cumulative[-1])

    @property
    def nu(self) -> float:
        E = self.block_lengths.astype(float)
        T = E.size
        return float(E.sum() * (1.0 / E).sum() / T**2)

    def signature(self) -> str:
        """Stable hash of the block-length sequence."""
        return hashlib.sha256(self.block_lengths.astype("<i8").tobytes()).hexdigest()[:32]

    def __eq__(self, other):
        if not isinstance(other, CommSchedule):
            return NotImplemented
        return (
            self.strategy == other.strategy
            and self.warmup_rounds == other.warmup_rounds
            and np.array_equal(self.block_lengths, other.block_lengths)
        )

    __hash__ = None

    def to_dict(self) -> dict:
        d: dict = {"strategy": self.strategy, "warmup_frac": self.warmup_frac}
        if self.strategy == "Custom":
            d["block_lengths"] = self.block_lengths.tolist()
        elif self.total_samples is not None:
            d["total_samples"] = self.total_samples
        else:
            d["rounds"] = self.rounds
        return d


def strategy_blocks(strategy: str, n: int) -> np.ndarray:
    """Post-warm-up block lengths ``E'_1..E'_n``."""
    if strategy == "C1":
        return np.ones(n, dtype=np.int64)
    if strategy == "C5":
        return np.full(n, 5, dtype=np.int64)
    if strategy == "Log":
        # ceil(log2(m + 1)) is the bit length of m; frexp gives it exactly
        return np.frexp(np.arange(1, n + 1, dtype=np.float64))[1].astype(np.int64)
    raise ValueError(f"unknown strategy {strategy!r}")


def _warmup_count(warmup_frac: float, rounds: int) -> int:
    return min(rounds, math.ceil(warmup_frac * rounds - 1e-9))


def _blocks_for_rounds(strategy: str, rounds: int, warmup_frac: float) -> tuple[np.ndarray, int]:
    w = _warmup_count(warmup_frac, rounds)
    E = np.concatenate((np.ones(w, dtype=np.int64), strategy_blocks(strategy, rounds - w)))
    return E, w


def build_schedule(
    strategy: str,
    rounds: int | None = None,
    total_samples: int | None = None,
    warmup_frac: float = 0.0,
    block_lengths=None,
) -> CommSchedule:
    """Build a schedule from a strategy and a horizon.

    Exactly one of ``rounds`` (T) or ``total_samples`` (t_T) must be given,
    except for ``Custom`` which takes explicit ``block_lengths``. The first
    ``ceil(warmup_frac * T)`` rounds always have ``E_m = 1``. With a sample
    horizon, rounds are added until ``sum(E) >= t_T`` and the last block is
    truncated so the total is exactly ``t_T``.
    """
    if not 0.0 <= warmup_frac < 1.0:
        raise ValueError(f"warmup_frac must lie in [0, 1), got {warmup_frac}")
    if strategy == "Custom":
        if block_lengths is None:
            raise ValueError("Custom schedules need explicit block_lengths")
        return CommSchedule("Custom", np.asarray(block_lengths), 0, warmup_frac)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if (rounds is None) == (total_samples is None):
        raise ValueError("give exactly one of rounds or total_samples")

    if rounds is not None:
        if rounds <= 0:
            raise ValueError("rounds must be positive")
        E, w = _blocks_for_rounds(strategy, int(rounds), warmup_frac)
        return CommSchedule(strategy, E, w, warmup_frac)

    n = int(total_samples)
    if n <= 0:
        raise ValueError("total_samples must be positive")

    def total(T):
        return int(_blocks_for_rounds(strategy, T, warmup_frac)[0].sum())

    # total(T) is strictly increasing in T, so bisect for the smallest T reaching n
    lo, hi = 1, n
    while lo < hi:
        mid = (lo + hi) // 2
        if total(mid) >= n:
            hi = mid
        else:
            lo = mid + 1
    E, w = _blocks_for_rounds(strategy, lo, warmup_frac)
    E[-1] -= int(E.sum()) - n
    return CommSchedule(strategy, E, w, warmup_frac, total_samples=n)


def step_sizes(policy: StepSizePolicy, schedule: CommSchedule, rbar: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(gamma, eta)`` per round; round m uses ``gamma_m`` and ``eta_m = gamma_m / E_m``."""
    if not 0.0 < rbar <= 1.0:
        raise ValueError(f"rbar must lie in (0, 1], got {rbar}")
    m = np.arange(1, schedule.rounds + 1)
    gamma = policy.gamma(m, rbar)
    eta = gamma / schedule.block_lengths
    return gamma, eta


@dataclass
class DiagnosticsReport:
    nu: float
    nu_delta: float
    delta: float
    bounded_or_nondecreasing: bool
    sum_proxy: np.ndarray = field(repr=False)
    step_proxy: np.ndarray = field(repr=False)
    g_max_gap: float = 0.0
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "nu": self.nu,
            "nu_delta": self.nu_delta,
            "delta": self.delta,
            "bounded_or_nondecreasing": self.bounded_or_nondecreasing,
            "sum_proxy_final": float(self.sum_proxy[-1]),
            "step_proxy_final": float(self.step_proxy[-1]),
            "g_max_gap": self.g_max_gap,
            "warnings": list(self.warnings),
        }


def schedule_diagnostics(
    schedule: CommSchedule, policy: StepSizePolicy, rbar: float = 1.0, delta: float = 0.1
) -> DiagnosticsReport:
    """Finite-horizon proxies for the step-size and block-length conditions.

    Never raises on a violated condition; problems are collected as warnings.
    """
    E = schedule.block_lengths.astype(float)
    T = E.size
    gamma, _ = step_sizes(policy, schedule, rbar)
    msgs = []

    nu_delta = float((E ** (1 + delta)).sum() * (E ** (-1 - delta)).sum() / T**2)
    d = np.diff(schedule.block_lengths)
    bounded = schedule.strategy in ("C1", "C5") or bool((d >= 0).all())
    if not bounded:
        msgs.append("block lengths are neither from a bounded strategy nor non-decreasing")

    m = np.arange(1, T + 1)
    root_t = np.sqrt(schedule.cumulative.astype(float))
    sum_proxy = root_t / m * np.cumsum(gamma)
    step_proxy = root_t / m / np.sqrt(gamma)
    tail = slice(int(math.floor(0.8 * T)), T)
    if T >= 5:
        if (np.diff(sum_proxy[tail]) > 0).any():
            msgs.append("sqrt(t_m)/m * sum(gamma) is not decreasing over the last 20% of rounds")
        if (np.diff(step_proxy[tail]) > 0).any():
            msgs.append("sqrt(t_m)/m / sqrt(gamma_m) is not decreasing over the last 20% of rounds")
    if not (np.diff(gamma) <= 0).all():
        msgs.append("effective steps are not non-increasing")
    if not 0.5 < policy.exponent <= 1.0:
        msgs.append(f"step exponent {policy.exponent} outside (0.5, 1]")

    g_gap = float(np.max(np.abs(schedule.grid[1:] - m / T)))
    return DiagnosticsReport(schedule.nu, nu_delta, delta, bounded, sum_proxy, step_proxy, g_gap, msgs)
