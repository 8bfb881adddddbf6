"""Counter-style random streams.

Every random draw in a run comes from a generator keyed by
``(master_seed, purpose, agent, iteration)``, so results do not depend on the
order in which agents are processed.
"""

from __future__ import annotations

import enum

import numpy as np


class Purpose(enum.IntEnum):
    BATCH = 1
    NOISE = 2
    COMPRESS_V = 3
    COMPRESS_X = 4
    OUTPUT = 5
    INIT = 6
    PARTITION = 7
    DATA = 8
    GRAPH = 9


def stream(seed: int, purpose: Purpose, agent: int = 0, t: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(purpose), int(agent), int(t)])


def agent_streams(seed: int, purpose: Purpose, n: int, t: int = 0) -> list[np.random.Generator]:
    return [stream(seed, purpose, i, t) for i in range(n)]
