"""Self-normalized inference for the averaged federated estimator."""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import rng as streams
from .schedule import CommSchedule

PIVOT_DIR_ENV = "LDPQUANTILE_PIVOT_DIR"
PIVOT_TABLE_VERSION = 1
DEFAULT_PATHS = 200_000
DEFAULT_PIVOT_SEED = 20250101
MIN_PIVOT_STEPS = 50


@dataclass(frozen=True)
class SelfNormAccumulators:
    Va: float = 0.0
    Vb: float = 0.0
    Vs: float = 0.0
    Vp: float = 0.0
    rounds_seen: int = 0


def update_accumulators(acc: SelfNormAccumulators, m: int, Qhat_m: float, E_m: int) -> SelfNormAccumulators:
    """Fold round ``m``'s running average into the four online sums."""
    if m != acc.rounds_seen + 1:
        raise ValueError(f"expected round {acc.rounds_seen + 1}, got {m}")
    mm = m * m
    return SelfNormAccumulators(
        acc.Va + mm * (Qhat_m * Qhat_m) / E_m,
        acc.Vb + mm * Qhat_m / E_m,
        acc.Vs + 1.0 / E_m,
        acc.Vp + mm / E_m,
        m,
    )


def normalizer_value(acc: SelfNormAccumulators, T: int, Qhat_T: float) -> float:
    """The self-normalizer on the estimator's own scale (already divided by t_T)."""
    if T < 1:
        raise ValueError("no rounds accumulated")
    if T != acc.rounds_seen:
        raise ValueError(f"accumulators hold {acc.rounds_seen} rounds, not {T}")
    v = (acc.Va - 2.0 * acc.Vb * Qhat_T + acc.Vp * Qhat_T * Qhat_T) / (T * T * acc.Vs)
    if v < 0.0:
        if v < -1e-9 * max(abs(acc.Va) / (T * T * acc.Vs), 1e-300):
            warnings.warn(f"self-normalizer {v:.3g} clipped to 0", RuntimeWarning, stacklevel=2)
        v = 0.0
    return v


def online_normalizer(trajectory) -> tuple[float, SelfNormAccumulators]:
    acc = SelfNormAccumulators()
    E = trajectory.schedule.block_lengths
    for m, Q in enumerate(trajectory.running_averages, start=1):
        acc = update_accumulators(acc, m, float(Q), int(E[m - 1]))
    return normalizer_value(acc, acc.rounds_seen, trajectory.final), acc


# ------------------------------------------------------------------ FCLT process


def fclt_path(trajectory, Qstar: float) -> tuple[np.ndarray, np.ndarray]:
    """Partial-sum process at the grid points: ``(r_m, sqrt(t_T)/T * sum_{i<=m}(qbar_i - Q*))``."""
    sched = trajectory.schedule
    T = sched.rounds
    vals = math.sqrt(sched.samples) / T * np.cumsum(np.asarray(trajectory.round_aggregates) - Qstar)
    return sched.grid[1:].copy(), vals


def h_index(s: float, block_lengths) -> int:
    """Number of rounds included in the process at time ``s``."""
    if not 0.0 < s <= 1.0:
        raise ValueError("s must lie in (0, 1]")
    inv = 1.0 / np.asarray(block_lengths, dtype=float)
    csum = np.cumsum(inv)
    return int(np.searchsorted(csum, s * csum[-1] * (1 + 1e-12), side="right"))


def _centered(trajectory) -> np.ndarray:
    _, path = fclt_path(trajectory, 0.0)
    T = path.size
    return path - np.arange(1, T + 1) / T * path[-1]


def offline_normalizer(trajectory) -> float:
    """Direct weighted sum of squared centered partial sums (not divided by t_T)."""
    z = _centered(trajectory)
    w = np.diff(trajectory.schedule.grid)
    return float(np.sum(w * z * z))


def alt_normalizers(trajectory) -> tuple[float, float]:
    """Sup-norm and L1-norm companions of the self-normalizer (diagnostics only)."""
    z = np.abs(_centered(trajectory))
    w = np.diff(trajectory.schedule.grid)
    return float(z.max()), float(np.sum(w * z))


# ------------------------------------------------------------ pivot distribution


@dataclass(frozen=True, eq=False)
class PivotSpec:
    grid: np.ndarray
    g_values: np.ndarray
    alpha: float = 0.05

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.size < 2:
            raise ValueError("pivot grid needs at least two points")
        if not (np.diff(g) > 0).all() or g[0] != 0.0 or g[-1] != 1.0:
            raise ValueError("pivot grid must increase strictly from 0 to 1")
        gv = np.asarray(self.g_values, dtype=float)
        if gv.size != g.size - 1 or (np.diff(gv) < 0).any():
            raise ValueError("g_values must be non-decreasing, one per grid cell")

    @classmethod
    def from_schedule(cls, schedule: CommSchedule, alpha: float = 0.05) -> PivotSpec:
        T = schedule.rounds
        return cls(schedule.grid, np.arange(1, T + 1) / T, alpha)

    @classmethod
    def uniform(cls, T: int, alpha: float = 0.05) -> PivotSpec:
        return cls(np.linspace(0.0, 1.0, T + 1), np.arange(1, T + 1) / T, alpha)


def simulate_pivot(spec: PivotSpec, paths: int, seed: int, chunk_elems: int = 1 << 22) -> np.ndarray:
    """Draws of ``B(1) / sqrt(sum_m dr_m (B(r_m) - g_m B(1))^2)`` on the spec grid.

    Paths are simulated in chunks whose size depends only on the grid, each
    chunk with its own keyed stream, so the draws do not depend on how the
    work is split.
    """
    if paths < 1:
        raise ValueError("paths must be positive")
    dr = np.diff(spec.grid)
    T = dr.size
    sub = math.ceil(MIN_PIVOT_STEPS / T) if T < MIN_PIVOT_STEPS else 1
    sd = np.sqrt(np.repeat(dr / sub, sub))
    g = spec.g_values
    per_chunk = max(1, chunk_elems // (T * sub))
    out = np.empty(paths)
    for c, start in enumerate(range(0, paths, per_chunk)):
        n = min(per_chunk, paths - start)
        gen = streams.stream(seed, c, streams.PIVOT)
        Z = gen.standard_normal((n, T * sub))
        Z *= sd
        np.cumsum(Z, axis=1, out=Z)
        B = Z[:, sub - 1 :: sub] if sub > 1 else Z
        B1 = B[:, -1].copy()
        B -= B1[:, None] * g
        np.square(B, out=B)
        out[start : start + n] = B1 / np.sqrt(B @ dr)
    return out


def pivot_quantile(spec: PivotSpec, paths: int = DEFAULT_PATHS, seed: int = DEFAULT_PIVOT_SEED) -> float:
    """Upper ``alpha/2`` critical value of the self-normalized pivot."""
    if paths < 10_000:
        raise ValueError("pivot quantiles need at least 1e4 paths")
    U = simulate_pivot(spec, paths, seed)
    return float(np.quantile(U, 1.0 - spec.alpha / 2.0))


@dataclass(frozen=True)
class PivotEntry:
    schedule_signature: str
    alpha: float
    paths: int
    seed: int
    v: float


@dataclass
class PivotTable:
    """Persisted critical values keyed by ``(schedule signature, alpha, paths, seed)``."""

    entries: dict = field(default_factory=dict)
    path: Path | None = None
    version: int = PIVOT_TABLE_VERSION

    def get(self, signature: str, alpha: float, paths: int | None = None, seed: int | None = None):
        """Exact match, or the most-paths entry when ``paths``/``seed`` are left open."""
        hits = [e for key, e in self.entries.items()
                if key[:2] == (signature, float(alpha))
                and (paths is None or e.paths == paths) and (seed is None or e.seed == seed)]
        return max(hits, key=lambda e: (e.paths, -e.seed)) if hits else None

    def put(self, entry: PivotEntry) -> None:
        if not entry.v > 0:
            raise ValueError("critical values must be positive")
        self.entries[(entry.schedule_signature, float(entry.alpha), entry.paths, entry.seed)] = entry

    def to_dict(self) -> dict:
        rows = sorted(self.entries.values(), key=lambda e: (e.schedule_signature, e.alpha, e.paths, e.seed))
        return {
            "version": self.version,
            "entries": [
                {"schedule_signature": e.schedule_signature, "alpha": e.alpha, "paths": e.paths,
                 "seed": e.seed, "v": e.v}
                for e in rows
            ],
        }

    def save(self, path=None) -> Path:
        path = Path(path or self.path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with FileLock(str(path) + ".lock"):
            merged = PivotTable.load(path) if path.exists() else PivotTable()
            merged.entries.update(self.entries)
            tmp = path.with_suffix(path.suffix + ".tmp")
            tmp.write_text(json.dumps(merged.to_dict(), indent=1) + "\n")
            os.replace(tmp, path)
        self.path = path
        return path

    @classmethod
    def load(cls, path) -> PivotTable:
        path = Path(path)
        doc = json.loads(path.read_text())
        if doc.get("version") != PIVOT_TABLE_VERSION:
            raise ValueError(f"{path}: unsupported pivot table version {doc.get('version')!r}")
        t = cls(path=path)
        for row in doc["entries"]:
            t.put(PivotEntry(row["schedule_signature"], float(row["alpha"]), int(row["paths"]),
                             int(row["seed"]), float(row["v"])))
        return t

    @classmethod
    def open(cls, path=None) -> PivotTable:
        path = Path(path) if path is not None else default_table_path()
        return cls.load(path) if path.exists() else cls(path=path)


def default_table_path() -> Path:
    root = os.environ.get(PIVOT_DIR_ENV) or Path.home() / ".cache" / "ldpquantile"
    return Path(root) / "pivots.json"


class PivotMiss(LookupError):
    pass


def critical_values(
    schedule: CommSchedule,
    alphas,
    table: PivotTable | None = None,
    paths: int = DEFAULT_PATHS,
    seed: int = DEFAULT_PIVOT_SEED,
    build: bool = True,
) -> dict[float, float]:
    """Critical values for ``schedule``, from ``table`` or simulated and stored there."""
    alphas = [float(a) for a in alphas]
    sig = schedule.signature()
    found = {}
    if table is not None:
        for a in alphas:
            e = table.get(sig, a, paths, seed)
            if e is not None:
                found[a] = e.v
    todo = [a for a in alphas if a not in found]
    if todo:
        if not build:
            raise PivotMiss(f"no pivot entry for schedule {sig} at alpha {todo}")
        U = simulate_pivot(PivotSpec.from_schedule(schedule), paths, seed)
        for a in todo:
            found[a] = float(np.quantile(U, 1.0 - a / 2.0))
            if table is not None:
                table.put(PivotEntry(sig, a, paths, seed, found[a]))
        if table is not None and table.path is not None:
            table.save()
    return {a: found[a] for a in alphas}


@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    level: float = 0.95

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError("interval needs lo <= hi")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def map(self, fn) -> ConfidenceInterval:
        """Image under a monotone increasing map (e.g. ``np.exp`` for log-scale estimates)."""
        return replace(self, lo=float(fn(self.lo)), hi=float(fn(self.hi)))


def confidence_interval(Qhat_T: float, Vhat_T: float, v: float, level: float = 0.95) -> ConfidenceInterval:
    if Vhat_T < 0:
        raise ValueError("negative self-normalizer")
    if not v > 0:
        raise ValueError("critical value must be positive")
    half = v * math.sqrt(Vhat_T)
    return ConfidenceInterval(Qhat_T - half, Qhat_T + half, level)
