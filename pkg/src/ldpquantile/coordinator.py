"""Round orchestration: local blocks, weighted aggregation, synchronization, averaging."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import rng as streams
from .client import ClientState, run_block
from .config import FederationConfig
from .distributions import SampleStream
from .schedule import CommSchedule, step_sizes


class NumericalError(ArithmeticError):
    pass


def aggregate(values: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted mean folded left to right, so equal inputs give bit-equal outputs."""
    if len(values) != len(weights):
        raise ValueError("values and weights differ in length")
    if abs(math.fsum(weights) - 1.0) > 1e-12:
        raise ValueError("weights must sum to 1")
    acc = 0.0
    for w, v in zip(weights, values):
        acc += w * v
    return acc


@dataclass(frozen=True)
class RoundMessage:
    client_id: int
    round: int
    q_end: float


class Transport(Protocol):
    """Moves client iterates to the coordinator and the aggregate back.

    Implementations must deliver each ``(client, round)`` message exactly once
    and only release ``gather`` once every expected client has reported.
    """

    def send(self, msg: RoundMessage) -> None: ...

    def gather(self, round: int) -> list[RoundMessage]: ...

    def broadcast(self, round: int, value: float) -> None: ...

    def received(self, round: int) -> float: ...


class InProcessTransport:
    def __init__(self, client_ids: Sequence[int]):
        self.client_ids = tuple(client_ids)
        self._inbox: dict[int, dict[int, RoundMessage]] = {}
        self._broadcasts: dict[int, float] = {}

    def send(self, msg: RoundMessage) -> None:
        box = self._inbox.setdefault(msg.round, {})
        if msg.client_id in box:
            raise RuntimeError(f"duplicate message from client {msg.client_id} in round {msg.round}")
        if msg.client_id not in self.client_ids:
            raise RuntimeError(f"message from unknown client {msg.client_id}")
        box[msg.client_id] = msg

    def gather(self, round: int) -> list[RoundMessage]:
        box = self._inbox.get(round, {})
        missing = set(self.client_ids) - set(box)
        if missing:
            raise RuntimeError(f"round {round}: barrier incomplete, missing clients {sorted(missing)}")
        del self._inbox[round]
        return [box[c] for c in self.client_ids]

    def broadcast(self, round: int, value: float) -> None:
        if round in self._inbox:
            raise RuntimeError(f"round {round}: broadcast before the barrier was gathered")
        self._broadcasts[round] = value

    def received(self, round: int) -> float:
        return self._broadcasts[round]


@dataclass(eq=False)
class Trajectory:
    round_aggregates: np.ndarray
    running_averages: np.ndarray
    schedule: CommSchedule = field(repr=False)

    @property
    def final(self) -> float:
        return float(self.running_averages[-1])

    @property
    def rounds(self) -> int:
        return int(self.round_aggregates.size)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["m", "t_m", "E_m", "round_aggregate", "running_average"])
        sched = self.schedule
        for i in range(self.rounds):
            w.writerow([i + 1, int(sched.cumulative[i]), int(sched.block_lengths[i]),
                        repr(float(self.round_aggregates[i])), repr(float(self.running_averages[i]))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, schedule: CommSchedule | None = None) -> Trajectory:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        E = [int(r["E_m"]) for r in rows]
        if schedule is None:
            schedule = CommSchedule("Custom", np.array(E))
        return cls(
            np.array([float(r["round_aggregate"]) for r in rows]),
            np.array([float(r["running_average"]) for r in rows]),
            schedule,
        )


def default_sources(config: FederationConfig, replication: int = 0) -> dict[int, SampleStream]:
    return {
        c.id: SampleStream(c.source, streams.stream(config.master_seed, replication, streams.DATA, c.id))
        for c in config.clients
    }


def run_federated(
    config: FederationConfig,
    sources: dict[int, SampleStream] | None = None,
    replication: int = 0,
    workers: int = 1,
    transport: Transport | None = None,
) -> Trajectory:
    """Run the randomized-response local-SGD protocol for one replication.

    All clients start from one shared draw ``q_0 ~ N(0, 1)``; after every
    round each client iterate is overwritten by the weighted aggregate.
    Results are bit-identical for any ``workers``.
    """
    clients = config.ordered_clients()
    if sources is None:
        sources = default_sources(config, replication)
    schedule = config.schedule
    _, eta = step_sizes(config.policy, schedule, config.rbar)
    tau = config.global_tau
    weights = [c.weight for c in clients]
    if transport is None:
        transport = InProcessTransport([c.id for c in clients])

    q0 = streams.initial_iterate(config.master_seed, replication)
    states = {
        c.id: ClientState(c.id, q0, streams.stream(config.master_seed, replication, streams.MECHANISM, c.id),
                          clamp=config.clamp_bounds)
        for c in clients
    }

    T = schedule.rounds
    qbar = np.empty(T)
    Qhat = np.empty(T)
    Q = 0.0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for m in range(1, T + 1):
            E = int(schedule.block_lengths[m - 1])
            h = float(eta[m - 1])

            def work(c, m=m, E=E, h=h):
                st = run_block(states[c.id], E, h, tau, c.truthful_rate, sources[c.id], round=m)
                transport.send(RoundMessage(c.id, m, st.q))
                return st

            done = list(pool.map(work, clients)) if pool else [work(c) for c in clients]
            msgs = transport.gather(m)
            values = [msg.q_end for msg in msgs]
            if config.rate_weighted_aggregation:
                values = [c.truthful_rate * v for c, v in zip(clients, values)]
            agg = aggregate(values, weights)
            if not math.isfinite(agg):
                raise NumericalError(f"non-finite aggregate in round {m}")
            transport.broadcast(m, agg)
            synced = transport.received(m)
            for st in done:
                states[st.client_id] = _sync(st, synced)
            Q = ((m - 1) * Q + synced) / m
            qbar[m - 1] = synced
            Qhat[m - 1] = Q
    finally:
        if pool:
            pool.shutdown()
    return Trajectory(qbar, Qhat, schedule)


def _sync(state: ClientState, value: float) -> ClientState:
    from dataclasses import replace

    return replace(state, q=value)
