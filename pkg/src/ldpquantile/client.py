"""Debiased local SGD for a single client."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mechanism import privatize


@dataclass(frozen=True)
class ClientState:
    client_id: int
    q: float
    rng: np.random.Generator
    steps_taken: int = 0
    clamp: tuple[float, float] | None = None


def step_coefficients(rate: float, tau: float) -> tuple[float, float]:
    """Up/down step multipliers ``(a, b)`` that make the privatized step unbiased.

    ``a + b = 1/r`` and ``a - b = 2 tau - 1``; at ``r = 1`` this is ``(tau, 1 - tau)``.
    """
    if rate == 0:
        raise ValueError("rate must be positive")
    a = (1.0 - rate + 2.0 * tau * rate) / (2.0 * rate)
    b = (1.0 + rate - 2.0 * tau * rate) / (2.0 * rate)
    return a, b


def local_step(state: ClientState, s: int, eta: float, coeffs: tuple[float, float]) -> ClientState:
    a, b = coeffs
    q = state.q + a * eta if s else state.q - b * eta
    if state.clamp is not None:
        q = min(max(q, state.clamp[0]), state.clamp[1])
    return replace(state, q=q, steps_taken=state.steps_taken + 1)


def run_block(state: ClientState, E: int, eta: float, tau: float, rate: float, data, round: int = 0) -> ClientState:
    """Run ``E`` privatize + update steps, consuming exactly ``E`` samples from ``data``."""
    if E < 1:
        raise ValueError("block length must be >= 1")
    xs = data.take(E)
    coeffs = step_coefficients(rate, tau)
    for i, x in enumerate(xs):
        resp = privatize(float(x), state.q, rate, state.rng, round, i)
        state = local_step(state, resp.s, eta, coeffs)
    return state


def expected_increment(q: float, tau: float, cdf) -> float:
    """Mean update per unit step, ``tau - F(q)``; independent of the truthful rate."""
    return tau - float(cdf(q))
