"""Goals as observations that precede reward jumps, grouped into missions."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..decpomdp import JointHistory

JUMP_IQR_FACTOR = 5.0


@dataclass(frozen=True)
class GoalEvidence:
    name: str
    jump: float  # reward increase that identifies this goal
    support: int  # number of (episode, step) jump events
    tokens: tuple[tuple[int, int], ...]  # (observation token, count) over agents at those steps
    episodes: tuple[int, ...]

    def __post_init__(self):
        if self.support < 1:
            raise ValueError("goal evidence needs support >= 1")


def default_jump_threshold(joint_histories: Sequence[JointHistory]) -> float:
    rewards = [r for jh in joint_histories for r in jh.rewards()]
    if not rewards:
        return 0.0
    q1, q3 = np.percentile(rewards, [25, 75])
    return float(JUMP_IQR_FACTOR * (q3 - q1))


def infer_goals(joint_histories: Sequence[JointHistory], jump_threshold: float | None = None) -> list[GoalEvidence]:
    """Steps where the reward rises by at least `jump_threshold` (and strictly).

    The first step has no previous reward and is never a jump.  Events are grouped
    by jump size (to 1e-9), each group being one goal; goals are named
    goal_0, goal_1, ... by decreasing support, then decreasing jump.
    """
    thr = default_jump_threshold(joint_histories) if jump_threshold is None else jump_threshold
    groups: dict[float, list[tuple[int, int, JointHistory]]] = defaultdict(list)
    for jh in joint_histories:
        rewards = jh.rewards()
        for k in range(1, len(rewards)):
            jump = rewards[k] - rewards[k - 1]
            if jump > 0 and jump >= thr:
                groups[round(jump, 9)].append((jh.episode, k, jh))
    ranked = sorted(groups.items(), key=lambda kv: (-len(kv[1]), -kv[0]))
    out = []
    for idx, (jump, events) in enumerate(ranked):
        tokens: Counter = Counter()
        for _, k, jh in events:
            for h in jh.histories.values():
                if k < len(h.entries):
                    tokens[h.entries[k].observation] += 1
        out.append(
            GoalEvidence(
                name=f"goal_{idx}",
                jump=jump,
                support=len(events),
                tokens=tuple(sorted(tokens.items())),
                episodes=tuple(sorted({e for e, _, _ in events})),
            )
        )
    return out


def group_missions(goals: Sequence[GoalEvidence]) -> dict[str, frozenset[str]]:
    """One mission per connected set of goals achieved together in some episode."""
    parent = {g.name: g.name for g in goals}

    def find(u):
        while parent[u] != u:
            u = parent[u]
        return u

    by_episode: dict[int, list[str]] = defaultdict(list)
    for g in goals:
        for e in g.episodes:
            by_episode[e].append(g.name)
    for names in by_episode.values():
        for other in names[1:]:
            ra, rb = find(names[0]), find(other)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    components: dict[str, set[str]] = defaultdict(set)
    for g in goals:
        components[find(g.name)].add(g.name)
    ordered = sorted(components.values(), key=lambda c: min(c, key=_goal_index))
    return {f"mission_{i}": frozenset(c) for i, c in enumerate(ordered)}


def _goal_index(name: str) -> int:
    return int(name.rsplit("_", 1)[1])
