"""Comparison methods: Laplace-noise DP-SGD and one-shot divide-and-conquer."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from . import rng as streams
from .client import ClientState, local_step, step_coefficients
from .config import ConfigError, FederationConfig
from .coordinator import NumericalError, Trajectory, aggregate, default_sources
from .inference import ConfidenceInterval, PivotTable, confidence_interval, critical_values, online_normalizer
from .mechanism import epsilon_of, privatize


@dataclass
class BaselineResult:
    estimate: float
    method: str
    interval: ConfidenceInterval | None = None
    client_averages: np.ndarray | None = None
    client_final: np.ndarray | None = None


def laplace_scale(rate: float) -> float:
    """Noise scale matched to the randomized-response budget of ``rate``."""
    eps = epsilon_of(rate)
    return 0.0 if math.isinf(eps) else 1.0 / eps


def dpsgd_step(q: float, x: float, eta: float, tau_k: float, eps_k: float, rng: np.random.Generator) -> float:
    """One noisy subgradient step on the client's own check loss.

    Draws exactly one Laplace variate even when ``eps_k`` is infinite.
    """
    if not eps_k > 0:
        raise ValueError("eps_k must be positive")
    scale = 0.0 if math.isinf(eps_k) else 1.0 / eps_k
    z = rng.laplace(0.0, scale)
    gt = 1.0 if x > q else 0.0
    lt = 1.0 if x < q else 0.0
    return q + eta * (tau_k * gt - (1.0 - tau_k) * lt + z)


def _require_c1(config: FederationConfig) -> None:
    if not (config.schedule.block_lengths == 1).all():
        raise ConfigError("DP-SGD is only defined here for the C1 schedule (E_m = 1)")


def dpsgd_trajectory(config: FederationConfig, replication: int = 0) -> Trajectory:
    _require_c1(config)
    from .schedule import step_sizes

    clients = config.ordered_clients()
    sources = default_sources(config, replication)
    noise = {c.id: streams.stream(config.master_seed, replication, streams.MECHANISM, c.id) for c in clients}
    eps = {c.id: epsilon_of(c.truthful_rate) for c in clients}
    weights = [c.weight for c in clients]
    _, eta = step_sizes(config.policy, config.schedule, config.rbar)
    q = streams.initial_iterate(config.master_seed, replication)
    T = config.schedule.rounds
    qbar = np.empty(T)
    Qhat = np.empty(T)
    Q = 0.0
    for m in range(1, T + 1):
        vals = []
        for c in clients:
            x = float(sources[c.id].take(1)[0])
            qk = dpsgd_step(q, x, float(eta[m - 1]), c.quantile_level, eps[c.id], noise[c.id])
            if config.clamp_bounds is not None:
                qk = min(max(qk, config.clamp_bounds[0]), config.clamp_bounds[1])
            vals.append(qk)
        if config.rate_weighted_aggregation:
            vals = [c.truthful_rate * v for c, v in zip(clients, vals)]
        q = aggregate(vals, weights)
        if not math.isfinite(q):
            raise NumericalError(f"non-finite aggregate in round {m}")
        Q = ((m - 1) * Q + q) / m
        qbar[m - 1] = q
        Qhat[m - 1] = Q
    return Trajectory(qbar, Qhat, config.schedule)


def dpsgd_run(config: FederationConfig, replication: int = 0, table: PivotTable | None = None,
              paths: int | None = None, seed: int | None = None):
    """DP-SGD with the same aggregation, averaging and self-normalized interval as the main method."""
    traj = dpsgd_trajectory(config, replication)
    kw = {k: v for k, v in (("paths", paths), ("seed", seed)) if v is not None}
    v = critical_values(config.schedule, [config.alpha], table, **kw)[config.alpha]
    vhat, _ = online_normalizer(traj)
    return traj, confidence_interval(traj.final, vhat, v, 1.0 - config.alpha)


def dc_eta(n: int, rbar: float) -> np.ndarray:
    t = np.arange(1, n + 1, dtype=float)
    return 2.0 * rbar / (t**0.51 + 100.0)


def dc_interval(client_averages, weights, alpha: float) -> ConfidenceInterval | None:
    """Cross-client normal interval; undefined for a single client."""
    a = np.asarray(client_averages, dtype=float)
    p = np.asarray(weights, dtype=float)
    if a.size < 2:
        return None
    est = aggregate(list(a), list(p))
    sp2 = float(np.sum(p**2))
    var = float(np.sum(p * (a - est) ** 2)) / (1.0 - sp2)
    half = float(norm.ppf(1.0 - alpha / 2.0)) * math.sqrt(var * sp2)
    return ConfidenceInterval(est - half, est + half, 1.0 - alpha)


def dc_run(config: FederationConfig, replication: int = 0, eta=None) -> BaselineResult:
    """Every client runs all ``t_T`` privatized steps alone; the server averages once.

    Each client reports the running mean of its own iterates; ``eta``
    overrides the per-step sizes.
    """
    n = config.schedule.samples
    if n <= 0:
        raise ConfigError("divide-and-conquer needs a positive sample count")
    clients = config.ordered_clients()
    tau = config.global_tau
    eta = dc_eta(n, config.rbar) if eta is None else np.asarray(eta, dtype=float)
    sources = default_sources(config, replication)
    q0 = streams.initial_iterate(config.master_seed, replication)
    avgs, finals = [], []
    for c in clients:
        st = ClientState(c.id, q0, streams.stream(config.master_seed, replication, streams.MECHANISM, c.id),
                         clamp=config.clamp_bounds)
        coeffs = step_coefficients(c.truthful_rate, tau)
        xs = sources[c.id].take(n)
        avg = 0.0
        for t in range(1, n + 1):
            resp = privatize(float(xs[t - 1]), st.q, c.truthful_rate, st.rng, 1, t)
            st = local_step(st, resp.s, float(eta[t - 1]), coeffs)
            avg = ((t - 1) * avg + st.q) / t
        avgs.append(avg)
        finals.append(st.q)
    weights = [c.weight for c in clients]
    est = aggregate(avgs, weights)
    if not math.isfinite(est):
        raise NumericalError("non-finite divide-and-conquer estimate")
    return BaselineResult(est, "DC", dc_interval(avgs, weights, config.alpha), np.array(avgs), np.array(finals))
