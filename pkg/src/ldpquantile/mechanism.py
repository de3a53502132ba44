"""Randomized response on the sign of the quantile gradient.

With probability ``r`` a client reports the true comparison ``1(x > q)``;
otherwise it reports a fair coin. The rate ``r`` is the stored parameter and
maps to a pure epsilon-LDP budget ``log((1 + r) / (1 - r))`` (nats).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PrivatizedResponse:
    s: int
    round: int = 0
    local_step: int = 0


def _check_rate(rate: float) -> None:
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"truthful rate must lie in (0, 1], got {rate}")


def epsilon_of(rate: float) -> float:
    _check_rate(rate)
    if rate == 1.0:
        return math.inf
    return math.log1p(rate) - math.log1p(-rate)


def rate_of(epsilon: float) -> float:
    """Inverse of :func:`epsilon_of`: ``(e^eps - 1) / (e^eps + 1)``."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if math.isinf(epsilon):
        return 1.0
    return math.tanh(epsilon / 2.0)


def shifted_level(rate: float, tau: float) -> float:
    """Quantile level seen by the equivalent non-private problem."""
    _check_rate(rate)
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return rate * tau + (1.0 - rate) / 2.0


def response_prob(p_exceed: float, rate: float) -> float:
    """Exact ``P(s = 1)`` when ``P(x > q) = p_exceed``."""
    if not 0.0 <= p_exceed <= 1.0:
        raise ValueError("p_exceed must lie in [0, 1]")
    return rate * p_exceed + (1.0 - rate) / 2.0


def privatize(x: float, q: float, rate: float, rng: np.random.Generator, round: int = 0, local_step: int = 0):
    """Release one privatized bit.

    Always consumes two uniforms, ``u`` then ``v``, so streams stay aligned
    whatever the rate. Ties ``x == q`` count as ``1(x > q) = 0``.
    """
    u = rng.random() < rate
    v = rng.random() < 0.5
    s = (x > q) if u else v
    return PrivatizedResponse(int(s), round, local_step)


def privatize_array(x, q, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`privatize` with the same draw layout (u, v per element)."""
    x = np.asarray(x, dtype=float)
    uv = rng.random((x.size, 2))
    s = np.where(uv[:, 0] < rate, x.ravel() > q, uv[:, 1] < 0.5)
    return s.astype(np.int8).reshape(x.shape)


def likelihood_ratio_bound(rate: float) -> float:
    """Largest ``P(s=b | x) / P(s=b | x')`` over inputs and outputs."""
    _check_rate(rate)
    hi = (1.0 + rate) / 2.0
    lo = (1.0 - rate) / 2.0
    return math.inf if lo == 0.0 else hi / lo
