"""Batched replication engine.

Runs many independent replications of the federated protocol at once. Each
``(replication, client)`` pair keeps its own keyed data and mechanism
streams, drawn in fixed-size chunks, and the per-step arithmetic mirrors
:mod:`ldpquantile.client` and :mod:`ldpquantile.coordinator` operation for
operation, so a replication's result does not depend on how replications
are batched or distributed over workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from . import rng as streams
from .client import step_coefficients
from .coordinator import NumericalError
from .config import FederationConfig
from .distributions import SampleStream
from .mechanism import epsilon_of
from .schedule import step_sizes

LDP = 0
DPSGD = 1

CHUNK = 512


@nb.njit(cache=True)
def _advance(q, X, U, V, mode, rate, ca, cb, tau_k, weights, agg_scale,
             eta, is_end, m_end, E_end, t_step, lo, hi, clamp, track,
             Qhat, Va, Vb, Vs, Vp, cavg, bad):
    B, K, L = X.shape
    for b in range(B):
        for j in range(L):
            h = eta[j]
            for k in range(K):
                qk = q[b, k]
                x = X[b, k, j]
                if mode == 0:
                    if U[b, k, j] < rate[k]:
                        s = x > qk
                    else:
                        s = V[b, k, j] < 0.5
                    if s:
                        qk = qk + ca[k] * h
                    else:
                        qk = qk - cb[k] * h
                else:
                    gt = 1.0 if x > qk else 0.0
                    lt = 1.0 if x < qk else 0.0
                    qk = qk + h * (tau_k[k] * gt - (1.0 - tau_k[k]) * lt + U[b, k, j])
                if clamp:
                    qk = min(max(qk, lo), hi)
                q[b, k] = qk
                if track:
                    t = t_step[j]
                    cavg[b, k] = ((t - 1) * cavg[b, k] + qk) / t
            if is_end[j]:
                acc = 0.0
                for k in range(K):
                    acc += weights[k] * (agg_scale[k] * q[b, k])
                if not np.isfinite(acc) and bad[b] == 0:
                    bad[b] = m_end[j]
                for k in range(K):
                    q[b, k] = acc
                m = m_end[j]
                Qh = ((m - 1) * Qhat[b] + acc) / m
                Qhat[b] = Qh
                E = E_end[j]
                mm = m * m
                Va[b] += mm * (Qh * Qh) / E
                Vb[b] += mm * Qh / E
                Vs[b] += 1.0 / E
                Vp[b] += mm / E


@dataclass
class BatchResult:
    replications: np.ndarray
    estimate: np.ndarray
    normalizer: np.ndarray  # NaN where the method has no self-normalizer
    client_averages: np.ndarray | None = None
    client_final: np.ndarray | None = None


def _step_plan(config: FederationConfig, method: str):
    """Per-local-step step size, round-end flags and round bookkeeping."""
    sched = config.schedule
    n = sched.samples
    t = np.arange(1, n + 1, dtype=np.int64)
    if method == "DC":
        eta = 2.0 * config.rbar / (t.astype(float) ** 0.51 + 100.0)
        is_end = np.zeros(n, dtype=np.bool_)
        m_end = np.zeros(n, dtype=np.int64)
        E_end = np.ones(n, dtype=np.int64)
        return eta, is_end, m_end, E_end, t
    _, eta_round = step_sizes(config.policy, sched, config.rbar)
    E = sched.block_lengths
    eta = np.repeat(eta_round, E)
    is_end = np.zeros(n, dtype=np.bool_)
    is_end[sched.cumulative - 1] = True
    m_end = np.zeros(n, dtype=np.int64)
    m_end[sched.cumulative - 1] = np.arange(1, sched.rounds + 1)
    E_end = np.ones(n, dtype=np.int64)
    E_end[sched.cumulative - 1] = E
    return eta, is_end, m_end, E_end, t


def simulate_batch(config: FederationConfig, replications, method: str = "LDPFed", eta_override=None) -> BatchResult:
    """Run the given replication indices of ``method`` (``LDPFed``, ``DPSGD`` or ``DC``).

    ``eta_override`` (per local step) replaces the method's step sizes; it
    exists for structural comparisons between methods.
    """
    reps = np.asarray(replications, dtype=np.int64)
    clients = config.ordered_clients()
    K = len(clients)
    B = reps.size
    seed = config.master_seed
    tau = config.global_tau
    mode = DPSGD if method == "DPSGD" else LDP

    rate = np.array([c.truthful_rate for c in clients])
    coeffs = np.array([step_coefficients(c.truthful_rate, tau) for c in clients])
    tau_k = np.array([c.quantile_level for c in clients])
    weights = np.array([c.weight for c in clients])
    if config.rate_weighted_aggregation and method != "DC":
        agg_scale = rate.copy()
    else:
        agg_scale = np.ones(K)
    lap_scale = [0.0 if c.truthful_rate == 1.0 else 1.0 / epsilon_of(c.truthful_rate) for c in clients]
    lo, hi = config.clamp_bounds if config.clamp_bounds is not None else (-np.inf, np.inf)

    eta, is_end, m_end, E_end, t_step = _step_plan(config, method)
    if eta_override is not None:
        eta = np.asarray(eta_override, dtype=float)
    n = eta.size

    data = [[SampleStream(c.source, streams.stream(seed, int(r), streams.DATA, c.id)) for c in clients] for r in reps]
    mech = [[streams.stream(seed, int(r), streams.MECHANISM, c.id) for c in clients] for r in reps]
    q = np.repeat(np.array([[streams.initial_iterate(seed, int(r))] for r in reps]), K, axis=1)

    Qhat = np.zeros(B)
    Va = np.zeros(B)
    Vb = np.zeros(B)
    Vs = np.zeros(B)
    Vp = np.zeros(B)
    cavg = np.zeros((B, K))
    bad = np.zeros(B, dtype=np.int64)
    track = method == "DC"

    X = np.empty((B, K, CHUNK))
    U = np.empty((B, K, CHUNK))
    V = np.empty((B, K, CHUNK))
    for start in range(0, n, CHUNK):
        L = min(CHUNK, n - start)
        Xc, Uc, Vc = X[:, :, :L], U[:, :, :L], V[:, :, :L]
        for b in range(B):
            for k in range(K):
                Xc[b, k] = data[b][k].take(L)
                if mode == LDP:
                    uv = mech[b][k].random((L, 2))
                    Uc[b, k] = uv[:, 0]
                    Vc[b, k] = uv[:, 1]
                else:
                    Uc[b, k] = mech[b][k].laplace(0.0, lap_scale[k], L)
        sl = slice(start, start + L)
        _advance(q, np.ascontiguousarray(Xc), np.ascontiguousarray(Uc), np.ascontiguousarray(Vc), mode,
                 rate, coeffs[:, 0].copy(), coeffs[:, 1].copy(), tau_k, weights, agg_scale,
                 eta[sl], is_end[sl], m_end[sl], E_end[sl], t_step[sl],
                 lo, hi, config.clamp_bounds is not None, track,
                 Qhat, Va, Vb, Vs, Vp, cavg, bad)

    if bad.any():
        b = int(np.flatnonzero(bad)[0])
        raise NumericalError(f"replication {reps[b]}: non-finite aggregate in round {bad[b]}")

    if method == "DC":
        est = np.zeros(B)
        for k in range(K):
            est += weights[k] * cavg[:, k]
        if not np.isfinite(est).all():
            raise NumericalError("non-finite divide-and-conquer estimate")
        return BatchResult(reps, est, np.full(B, np.nan), cavg, q.copy())

    T = config.schedule.rounds
    vhat = (Va - 2.0 * Vb * Qhat + Vp * Qhat * Qhat) / (T * T * Vs)
    np.maximum(vhat, 0.0, out=vhat)
    return BatchResult(reps, Qhat, vhat)
