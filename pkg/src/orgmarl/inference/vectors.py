"""History vectors: normalized (observation, action) pair counts."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..decpomdp import AgentHistory

Pair = tuple[int, int]


@dataclass(frozen=True)
class HistoryVector:
    agent: str
    episode: int
    weights: dict[Pair, float]

    @property
    def empty(self) -> bool:
        return not self.weights

    @property
    def dims(self) -> list[Pair]:
        return sorted(self.weights)


def vectorize(h: AgentHistory, episode: int = 0) -> HistoryVector:
    counts = Counter((e.observation, e.action) for e in h.entries)
    total = sum(counts.values())
    return HistoryVector(h.agent, episode, {p: c / total for p, c in sorted(counts.items())})


def stack(vectors: Sequence[HistoryVector]) -> tuple[np.ndarray, list[Pair]]:
    """Dense matrix over the union of observed pairs (columns sorted)."""
    dims = sorted(set().union(*(v.weights for v in vectors))) if vectors else []
    col = {p: j for j, p in enumerate(dims)}
    x = np.zeros((len(vectors), len(dims)))
    for i, v in enumerate(vectors):
        for p, w in v.weights.items():
            x[i, col[p]] = w
    return x, dims
