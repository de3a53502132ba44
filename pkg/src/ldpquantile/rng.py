"""Counter-keyed random streams.

Every stream is derived from ``(master_seed, replication, purpose, client_id)``
through :class:`numpy.random.SeedSequence` spawn keys and drives a Philox
generator, so a stream's contents never depend on which worker drew it or in
what order the streams were created.
"""

from __future__ import annotations

import numpy as np

INIT = 0
DATA = 1
MECHANISM = 2
PIVOT = 3
SCENARIO = 4


def stream(master_seed: int, replication: int, purpose: int, client_id: int = 0) -> np.random.Generator:
    if min(replication, purpose, client_id) < 0:
        raise ValueError("stream keys must be non-negative")
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(replication), int(purpose), int(client_id)))
    return np.random.Generator(np.random.Philox(ss))


def initial_iterate(master_seed: int, replication: int) -> float:
    """Shared starting point q_0 ~ N(0, 1) for one replication."""
    return float(stream(master_seed, replication, INIT).standard_normal())
