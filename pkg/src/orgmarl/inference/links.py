"""Inter-role links from message exchanges and co-presence."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

from ..decpomdp import JointHistory
from ..orgmodel import Link, LinkKind
from ..relations import RelationRegistry

DEFAULT_MIN_SUPPORT = 3
DEFAULT_COMPLIANCE = 0.5


class MissingMessageDeclaration(ValueError):
    pass


@dataclass(frozen=True)
class LinkEvidence:
    link: Link
    support: int  # send -> receive occurrences (or co-presence steps for acquaintance)
    compliant: int  # receives followed by an order-compliant action


Assignments = Mapping[tuple[int, str], str]  # (episode, agent) -> role


def _check_messages(registry: RelationRegistry, require: bool) -> None:
    if require and not registry.messages:
        raise MissingMessageDeclaration("the registry declares no message channels")
    for m in registry.messages:
        if not m.send or not m.receive:
            raise MissingMessageDeclaration(f"message {m.name!r} needs both send actions and receive observations")


def infer_links(
    joint_histories: Sequence[JointHistory],
    registry: RelationRegistry,
    assignments: Assignments,
    min_support: int = DEFAULT_MIN_SUPPORT,
    min_compliance: float = DEFAULT_COMPLIANCE,
    require_messages: bool = False,
) -> list[LinkEvidence]:
    """Communication, authority and acquaintance links between roles.

    A send action at step k by an agent of role A followed by a matching
    receive observation at step k+1 for an agent of role B counts once
    toward (A, B).  The pair becomes a communication link with enough
    support, and an authority link when enough of those receives are
    followed by a compliant action and the compliant share reaches
    `min_compliance`.  Roles that observe co-presence tokens together but
    never message each other become acquainted.
    """
    _check_messages(registry, require_messages)
    support: dict[tuple[str, str], int] = defaultdict(int)
    ordered: dict[tuple[str, str], int] = defaultdict(int)
    compliant: dict[tuple[str, str], int] = defaultdict(int)
    copresent: dict[tuple[str, str], int] = defaultdict(int)

    for jh in joint_histories:
        agents = [a for a in jh.agents if (jh.episode, a) in assignments]
        role = {a: assignments[(jh.episode, a)] for a in agents}
        hs = jh.histories
        for m in registry.messages:
            for s in agents:
                entries = hs[s].entries
                for k, e in enumerate(entries):
                    if e.action not in m.send:
                        continue
                    for r in agents:
                        if r == s or k + 1 >= len(hs[r].entries):
                            continue
                        nxt = hs[r].entries[k + 1]
                        if nxt.observation not in m.receive:
                            continue
                        pair = (role[s], role[r])
                        support[pair] += 1
                        if m.comply:
                            ordered[pair] += 1
                            compliant[pair] += nxt.action in m.comply
        if registry.copresence:
            horizon = max((len(hs[a].entries) for a in agents), default=0)
            for k in range(horizon):
                seeing = [a for a in agents if k < len(hs[a].entries) and hs[a].entries[k].observation in registry.copresence]
                for a in seeing:
                    for b in agents:
                        if b != a and role[a] != role[b]:
                            copresent[(role[a], role[b])] += 1

    out: list[LinkEvidence] = []
    for pair in sorted(support):
        n = support[pair]
        if n < min_support:
            continue
        c = compliant[pair]
        kind = LinkKind.COMMUNICATION
        if ordered[pair] and c >= min_support and c / ordered[pair] >= min_compliance:
            kind = LinkKind.AUTHORITY
        out.append(LinkEvidence(Link(pair[0], pair[1], kind), n, c))
    messaging = {p for p in support if support[p] >= min_support}
    for pair in sorted(copresent):
        if copresent[pair] >= min_support and pair not in messaging and pair[::-1] not in messaging:
            out.append(LinkEvidence(Link(pair[0], pair[1], LinkKind.ACQUAINTANCE), copresent[pair], 0))
    return out
