"""Replication engine, metrics and report emission."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .baselines import dc_interval
from .config import ConfigError, FederationConfig
from .distributions import has_density
from .engine import simulate_batch
from .inference import DEFAULT_PATHS, DEFAULT_PIVOT_SEED, PivotTable, confidence_interval, critical_values
from .scenarios import ScenarioSpec, ingest_csv, make_scenario, oracle_quantile
from .schedule import build_schedule

log = logging.getLogger(__name__)

METHODS = ("LDPFed", "DPSGD", "DC")
REPORT_COLUMNS = ("scenario", "method", "strategy", "tau", "rate", "t_T", "T", "R", "ECP", "MAE", "mean_ci_len", "seed")


@dataclass
class ExperimentPlan:
    config: FederationConfig
    method: str = "LDPFed"
    replications: int = 1000
    output: Path | None = None
    pivot_table: Path | None = None
    labels: dict = field(default_factory=dict)
    pivot_paths: int = DEFAULT_PATHS
    pivot_seed: int = DEFAULT_PIVOT_SEED
    build_pivots: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")


@dataclass
class ReplicationRecord:
    replication: int
    estimate: float
    lo: float
    hi: float
    covered: bool | None
    abs_error: float
    normalizer: float = math.nan  # on the estimator's scale; NaN for DC


@dataclass
class MetricsReport:
    MAE: float
    ECP: float
    mean_ci_len: float
    R: int
    scenario: str = ""
    method: str = ""
    strategy: str = ""
    tau: str = ""
    rate: str = ""
    t_T: int = 0
    T: int = 0
    seed: int = 0
    wall_clock: float = 0.0

    def row(self) -> dict:
        return {c: getattr(self, c) for c in REPORT_COLUMNS}


def true_quantile(config: FederationConfig) -> float | None:
    if all(has_density(c.source) for c in config.clients):
        return oracle_quantile(config.clients).Qstar
    return None


def default_labels(config: FederationConfig, method: str) -> dict:
    taus = {c.quantile_level for c in config.clients}
    rates = {c.truthful_rate for c in config.clients}
    return {
        "scenario": "custom",
        "tau": f"{config.global_tau:g}" if len(taus) == 1 else "hetero",
        "rate": f"{rates.pop():g}" if len(rates) == 1 else "hetero",
        "strategy": "none" if method == "DC" else config.schedule.strategy,
    }


def _batches(R: int, size: int):
    return [np.arange(s, min(R, s + size)) for s in range(0, R, size)]


def run_replications(plan: ExperimentPlan, n_jobs: int = 1, batch_size: int = 128,
                     table: PivotTable | None = None, Qstar: float | None = None) -> list[ReplicationRecord]:
    """Run ``plan.replications`` independent replications.

    Records depend only on the plan and master seed, never on ``n_jobs`` or
    ``batch_size``. ``Qstar`` defaults to the analytic oracle; coverage is
    left undefined when neither is available.
    """
    cfg = plan.config
    if Qstar is None:
        Qstar = true_quantile(cfg)
    v = None
    if plan.method != "DC":
        if table is None and plan.pivot_table is not None:
            table = PivotTable.open(plan.pivot_table)
        v = critical_values(cfg.schedule, [cfg.alpha], table, plan.pivot_paths, plan.pivot_seed,
                            build=plan.build_pivots)[cfg.alpha]

    batches = _batches(plan.replications, batch_size)
    if n_jobs == 1:
        results = [simulate_batch(cfg, b, plan.method) for b in batches]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(simulate_batch)(cfg, b, plan.method) for b in batches)

    weights = [c.weight for c in cfg.ordered_clients()]
    records = []
    for res in results:
        for i, r in enumerate(res.replications):
            est = float(res.estimate[i])
            if plan.method == "DC":
                ci = dc_interval(res.client_averages[i], weights, cfg.alpha)
                lo, hi = (math.nan, math.nan) if ci is None else (ci.lo, ci.hi)
                vhat = math.nan
            else:
                vhat = float(res.normalizer[i])
                ci = confidence_interval(est, vhat, v, 1.0 - cfg.alpha)
                lo, hi = ci.lo, ci.hi
            known = Qstar is not None and not math.isnan(Qstar)
            covered = bool(lo <= Qstar <= hi) if known and not math.isnan(lo) else None
            err = abs(est - Qstar) if known else math.nan
            records.append(ReplicationRecord(int(r), est, lo, hi, covered, err, vhat))
    return records


def reevaluate(records, v: float, Qstar: float) -> list[ReplicationRecord]:
    """Rebuild self-normalized intervals with another critical value."""
    out = []
    for rec in records:
        ci = confidence_interval(rec.estimate, rec.normalizer, v)
        out.append(replace(rec, lo=ci.lo, hi=ci.hi, covered=bool(ci.lo <= Qstar <= ci.hi)))
    return out


def summarize(records, Qstar: float | None = None, **labels) -> MetricsReport:
    if not records:
        raise ValueError("no records to summarize")
    if Qstar is not None:
        errs = [abs(r.estimate - Qstar) for r in records]
        cov = [r.lo <= Qstar <= r.hi for r in records if not math.isnan(r.lo)]
    else:
        errs = [r.abs_error for r in records]
        cov = [r.covered for r in records if r.covered is not None]
    lens = [r.hi - r.lo for r in records if not math.isnan(r.lo)]
    return MetricsReport(
        MAE=float(np.mean(errs)),
        ECP=float(np.mean(cov)) if cov else math.nan,
        mean_ci_len=float(np.mean(lens)) if lens else math.nan,
        R=len(records),
        **labels,
    )


def run_plan(plan: ExperimentPlan, n_jobs: int = 1, table: PivotTable | None = None) -> MetricsReport:
    t0 = time.perf_counter()
    records = run_replications(plan, n_jobs=n_jobs, table=table)
    cfg = plan.config
    labels = {**default_labels(cfg, plan.method), **plan.labels}
    rep = summarize(records, method=plan.method, t_T=cfg.schedule.samples, T=cfg.schedule.rounds,
                    seed=cfg.master_seed, **labels)
    rep.wall_clock = time.perf_counter() - t0
    log.info("%s/%s/%s tau=%s rate=%s: ECP=%.3f MAE=%.4f (%.1fs)", rep.scenario, rep.method, rep.strategy,
             rep.tau, rep.rate, rep.ECP, rep.MAE, rep.wall_clock)
    return rep


# ------------------------------------------------------------------- emission


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        row = r.row()
        w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def emit(reports, path, fmt: str = "csv") -> Path:
    """Write reports with the fixed column order; wall-clock time is not part of the schema."""
    if isinstance(reports, MetricsReport):
        reports = [reports]
    path = Path(path)
    if fmt == "csv":
        text = reports_to_csv(reports)
    elif fmt == "json":
        text = json.dumps([r.row() for r in reports], indent=1) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


_INT_COLS = {"t_T", "T", "R", "seed"}
_FLOAT_COLS = {"ECP", "MAE", "mean_ci_len"}


def _coerce(row: dict) -> MetricsReport:
    kw = {}
    for c in REPORT_COLUMNS:
        v = row[c]
        kw[c] = int(v) if c in _INT_COLS else float(v) if c in _FLOAT_COLS else str(v)
    return MetricsReport(**kw)


def read_reports(path, fmt: str | None = None) -> list[MetricsReport]:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    if fmt == "json":
        return [_coerce(r) for r in json.loads(path.read_text())]
    with open(path, newline="") as fh:
        return [_coerce(r) for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------- sweeps


def plan_for_cell(scenario: ScenarioSpec, column: str, horizon: tuple[str, int], *, warmup_frac=0.05,
                  replications=1000, alpha=0.05, master_seed=0, **plan_kw) -> ExperimentPlan:
    """One table cell; ``column`` is ``METHOD:STRATEGY`` or just ``DC``."""
    method, _, strategy = column.partition(":")
    if method not in METHODS:
        raise ConfigError(f"unknown method in column {column!r}")
    strategy = strategy or "C1"
    kind, n = horizon
    if method == "DC" and kind != "total_samples":
        raise ConfigError("divide-and-conquer cells need a total_samples horizon")
    sched = build_schedule(strategy, warmup_frac=warmup_frac, **{kind: n})
    clients = make_scenario(scenario, master_seed)
    cfg = FederationConfig(tuple(clients), sched, alpha=alpha, master_seed=master_seed)
    labels = {
        "scenario": scenario.name,
        "tau": scenario.tau_label,
        "rate": scenario.rate_label,
        "strategy": "none" if method == "DC" else strategy,
    }
    return ExperimentPlan(cfg, method, replications, labels=labels, **plan_kw)


def expand_sweep(doc: dict) -> list[ExperimentPlan]:
    """Cartesian product of scenarios x horizons x columns, in declaration order."""
    from .scenarios import scenario_from_dict

    allowed = {"scenarios", "columns", "horizons", "warmup_frac", "replications", "alpha", "master_seed",
               "pivot_paths", "pivot_seed"}
    extra = set(doc) - allowed
    if extra:
        raise ConfigError(f"unknown keys in sweep: {sorted(extra)}")
    scenarios = [scenario_from_dict(s) for s in doc["scenarios"]]
    horizons = []
    for h in doc["horizons"]:
        (kind, n), = h.items()
        if kind not in ("rounds", "total_samples"):
            raise ConfigError(f"unknown horizon kind {kind!r}")
        horizons.append((kind, int(n)))
    kw = {k: doc[k] for k in ("warmup_frac", "replications", "alpha", "master_seed", "pivot_paths", "pivot_seed")
          if k in doc}
    return [plan_for_cell(s, col, h, **kw) for h, s, col in itertools.product(horizons, scenarios, doc["columns"])]


def run_sweep(doc: dict, n_jobs: int = 1, table: PivotTable | None = None) -> list[MetricsReport]:
    return [run_plan(p, n_jobs=n_jobs, table=table) for p in expand_sweep(doc)]


# ------------------------------------------------------------------- real data


@dataclass
class RealDataResult:
    estimate: float
    lo: float
    hi: float
    empirical: float
    tau: float
    t_T: int
    K: int
    group_sizes: dict

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def as_dict(self) -> dict:
        return {"estimate": self.estimate, "lo": self.lo, "hi": self.hi, "length": self.length,
                "empirical": self.empirical, "tau": self.tau, "t_T": self.t_T, "K": self.K,
                "group_sizes": dict(self.group_sizes)}


def run_real_data(path, group_column: str, value_column: str, tau: float = 0.5, rate=0.9,
                  strategy: str = "C1", merge_smallest: int = 3, transform: str = "log", seed: int = 0,
                  warmup_frac: float = 0.05, alpha: float = 0.05, delimiter: str = ",",
                  table: PivotTable | None = None, pivot_paths: int = DEFAULT_PATHS,
                  pivot_seed: int = DEFAULT_PIVOT_SEED) -> RealDataResult:
    """Ingest, run one privatized federated replication, and back-transform the interval."""
    ing = ingest_csv(path, group_column, value_column, merge_smallest, transform, seed, delimiter,
                     tau=tau, rate=rate, mode="single_pass")
    sched = build_schedule(strategy, total_samples=ing.balanced_size, warmup_frac=warmup_frac)
    cfg = FederationConfig(tuple(ing.clients), sched, alpha=alpha, master_seed=seed)
    plan = ExperimentPlan(cfg, "LDPFed", 1, pivot_paths=pivot_paths, pivot_seed=pivot_seed)
    rec = run_replications(plan, table=table, Qstar=math.nan)[0]
    back = np.exp if transform == "log" else (lambda x: x)
    return RealDataResult(float(back(rec.estimate)), float(back(rec.lo)), float(back(rec.hi)),
                          float(np.quantile(ing.raw_values, tau)), tau, ing.balanced_size, len(ing.clients),
                          dict(ing.group_sizes))
