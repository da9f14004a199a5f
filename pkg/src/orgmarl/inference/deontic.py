"""Cardinalities, compatibilities and deontic relations from role assignments."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from ..orgmodel import Cardinality, DeonticKind, DeonticRelation

Assignments = Mapping[tuple[int, str], str]  # (episode, agent) -> role


def infer_cardinalities_and_compatibilities(
    assignments: Assignments,
) -> tuple[dict[str, Cardinality], set[tuple[str, str]]]:
    """Per-role [min, max] agent counts over episodes, and roles some agent switched between.

    Episodes in which a role does not appear count as zero for that role.
    """
    if not assignments:
        raise ValueError("no role assignments")
    episodes = sorted({e for e, _ in assignments})
    roles = sorted(set(assignments.values()))
    counts = {e: Counter() for e in episodes}
    for (e, _), r in assignments.items():
        counts[e][r] += 1
    cards = {
        r: Cardinality(min(counts[e][r] for e in episodes), max(counts[e][r] for e in episodes)) for r in roles
    }
    played: dict[str, set[str]] = defaultdict(set)
    for (_, agent), r in assignments.items():
        played[agent].add(r)
    compat = set()
    for rs in played.values():
        rs = sorted(rs)
        for i, a in enumerate(rs):
            for b in rs[i + 1 :]:
                compat.add((a, b))
    return cards, compat


@dataclass(frozen=True)
class CommitmentFrequency:
    role: str
    mission: str
    committed: int
    total: int

    @property
    def frequency(self) -> Fraction:
        return Fraction(self.committed, self.total)


def commitment_frequencies(
    assignments: Assignments, commitments: Mapping[tuple[int, str], set[str]], missions: set[str]
) -> list[CommitmentFrequency]:
    """Share of (episode, agent) pairs playing each role that committed to each mission."""
    totals: Counter = Counter(assignments.values())
    hits: Counter = Counter()
    for key, role in assignments.items():
        for m in commitments.get(key, ()):
            if m in missions:
                hits[(role, m)] += 1
    return [
        CommitmentFrequency(role, m, hits[(role, m)], totals[role])
        for role in sorted(totals)
        for m in sorted(missions)
    ]


def infer_deontic(
    assignments: Assignments, commitments: Mapping[tuple[int, str], set[str]], missions: set[str]
) -> set[DeonticRelation]:
    """Obligation when every pair committed, permission when some did, nothing otherwise."""
    out = set()
    for f in commitment_frequencies(assignments, commitments, missions):
        if f.committed == 0:
            continue
        kind = DeonticKind.OBLIGATION if f.committed == f.total else DeonticKind.PERMISSION
        out.add(DeonticRelation(f.role, f.mission, kind))
    return out
