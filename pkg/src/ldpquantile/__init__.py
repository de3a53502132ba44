"""Federated quantile estimation and self-normalized inference under local differential privacy."""

from .baselines import BaselineResult, dc_run, dpsgd_run, dpsgd_step
from .client import ClientState, expected_increment, local_step, run_block, step_coefficients
from .config import ClientSpec, ConfigError, FederationConfig, config_from_dict, load_config
from .coordinator import InProcessTransport, RoundMessage, Trajectory, aggregate, run_federated
from .distributions import Cauchy, Empirical, Normal, SampleStream, Uniform
from .engine import simulate_batch
from .harness import ExperimentPlan, MetricsReport, ReplicationRecord, emit, run_replications, summarize
from .inference import (
    ConfidenceInterval,
    PivotSpec,
    PivotTable,
    SelfNormAccumulators,
    alt_normalizers,
    confidence_interval,
    critical_values,
    fclt_path,
    normalizer_value,
    pivot_quantile,
    update_accumulators,
)
from .mechanism import epsilon_of, privatize, rate_of, response_prob, shifted_level
from .scenarios import ScenarioSpec, ingest_csv, make_scenario, mixture_cdf, oracle_quantile, theoretical_variance
from .schedule import CommSchedule, StepSizePolicy, build_schedule, schedule_diagnostics, step_sizes

__version__ = "0.1.0"
