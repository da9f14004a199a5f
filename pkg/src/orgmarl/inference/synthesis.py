"""End-to-end inference of an organizational specification from joint-histories."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..decpomdp import JointHistory
from ..orgmodel import (
    OrganizationalSpecification,
    SocialScheme,
    StructuralSpec,
    ensure_valid,
    to_dict,
)
from ..relations import RelationRegistry, TargetKind, label_history, relation_fires
from .clustering import RoleClustering, cluster_roles, nearest_neighbor_agreement
from .deontic import CommitmentFrequency, commitment_frequencies, infer_cardinalities_and_compatibilities, infer_deontic
from .goals import GoalEvidence, group_missions, infer_goals
from .links import LinkEvidence, infer_links
from .pca import PcaProjection, pca
from .vectors import HistoryVector, stack, vectorize

MIN_EPISODES = 5
OVERRIDE_SHARE = 0.5
NOT_INFERRED = ("plans", "preference_orders", "subgroups")


class InsufficientEpisodes(ValueError):
    def __init__(self, got: int, need: int = MIN_EPISODES):
        self.got, self.need = got, need
        super().__init__(f"inference needs at least {need} episodes, got {got}")


@dataclass(frozen=True)
class RoleCluster:
    role: str
    members: tuple[tuple[int, str], ...]  # (episode, agent)
    registry_share: float  # share of members firing the registry role it was named after (0 if synthesized)


@dataclass(frozen=True)
class InferenceReport:
    env: str
    episodes: int
    spec: OrganizationalSpecification
    vectors: tuple[HistoryVector, ...]
    clustering: RoleClustering
    clusters: tuple[RoleCluster, ...]
    projection: PcaProjection
    knn_agreement: float
    links: tuple[LinkEvidence, ...]
    goals: tuple[GoalEvidence, ...]
    frequencies: tuple[CommitmentFrequency, ...]

    @property
    def assignments(self) -> dict[tuple[int, str], str]:
        return {m: c.role for c in self.clusters for m in c.members}

    def role_share(self, role: str) -> float:
        agents = {a for _, a in self.assignments}
        covered = {a for (_, a), r in self.assignments.items() if r == role}
        return len(covered) / len(agents) if agents else 0.0

    def to_dict(self) -> dict:
        p = self.projection
        return {
            "env": self.env,
            "episodes": self.episodes,
            "organizational_specifications": to_dict(self.spec),
            "roles": {
                "cut_distance": self.clustering.cut_distance,
                "knn_agreement": self.knn_agreement,
                "clusters": [
                    {
                        "role": c.role,
                        "size": len(c.members),
                        "registry_share": c.registry_share,
                        "members": [[e, a] for e, a in c.members],
                    }
                    for c in self.clusters
                ],
            },
            "pca": {
                "eigenvalues": [float(v) for v in p.eigenvalues],
                "explained_variance_ratio": [float(v) for v in p.explained_variance_ratio],
                "degenerate": p.degenerate,
            },
            "links": [
                {
                    "source": ev.link.source,
                    "dest": ev.link.dest,
                    "kind": ev.link.kind.value,
                    "support": ev.support,
                    "compliant": ev.compliant,
                }
                for ev in self.links
            ],
            "goals": [
                {
                    "name": g.name,
                    "jump": g.jump,
                    "support": g.support,
                    "tokens": [list(t) for t in g.tokens],
                    "episodes": list(g.episodes),
                }
                for g in self.goals
            ],
            "commitment_frequencies": [
                {"role": f.role, "mission": f.mission, "committed": f.committed, "total": f.total}
                for f in self.frequencies
            ],
            "not_inferred": list(NOT_INFERRED),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def pca_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["agent", "episode", "x", "y", "role"])
        roles = self.assignments
        coords = self.projection.coordinates
        for v, row in zip(self.vectors, coords):
            x = float(row[0])
            y = float(row[1]) if len(row) > 1 else 0.0
            w.writerow([v.agent, v.episode, repr(x), repr(y), roles[(v.episode, v.agent)]])
        return buf.getvalue()

    def dendrogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["merge", "a", "b", "distance", "size"])
        for i, m in enumerate(self.clustering.merges):
            w.writerow([i, m.a, m.b, repr(float(m.distance)), m.size])
        return buf.getvalue()


def _fired_roles(registry: RelationRegistry, h) -> frozenset[str]:
    return frozenset(
        name
        for name in registry.roles()
        if any(relation_fires(rel, h) is not None for rel in registry.for_target(TargetKind.ROLE, name))
    )


def _refine(members: list[tuple[int, str]], fired: dict) -> list[list[tuple[int, str]]]:
    """Split a cluster whose members each fire exactly one registry role, not all the same.

    Such members provably play different designer-known roles, which
    geometric similarity alone cannot overrule.
    """
    if any(len(fired[m]) != 1 for m in members):
        return [members]
    groups: dict[str, list[tuple[int, str]]] = defaultdict(list)
    for m in members:
        groups[next(iter(fired[m]))].append(m)
    if len(groups) < 2:
        return [members]
    return list(groups.values())


def _name_clusters(
    clustering: RoleClustering,
    keys: Sequence[tuple[int, str]],
    histories: dict[tuple[int, str], object],
    registry: RelationRegistry,
) -> list[RoleCluster]:
    """Reconcile geometric clusters with the registry's role relations.

    Clusters are first split when their members fire mutually exclusive
    registry roles.  Then, largest first, a cluster takes the registry role
    name fired by the largest share (at least half) of its members, each
    name going to one cluster at most; other clusters keep synthesized
    names.
    """
    by_label: dict[int, list[tuple[int, str]]] = defaultdict(list)
    for key, label in zip(keys, clustering.labels):
        by_label[label].append(key)
    fired = {key: _fired_roles(registry, histories[key]) for key in keys}
    groups = [g for label in sorted(by_label) for g in _refine(by_label[label], fired)]
    groups.sort(key=lambda g: (-len(g), min(g)))
    taken: set[str] = set()
    out = []
    for idx, mem in enumerate(groups):
        best = None
        for name in sorted(registry.roles()):
            if name in taken:
                continue
            share = sum(name in fired[m] for m in mem) / len(mem)
            if share >= OVERRIDE_SHARE and (best is None or share > best[1]):
                best = (name, share)
        if best is None:
            out.append(RoleCluster(f"role_{idx}", tuple(mem), 0.0))
        else:
            taken.add(best[0])
            out.append(RoleCluster(best[0], tuple(mem), best[1]))
    return out


def synthesize(
    env_label: str,
    joint_histories: Sequence[JointHistory],
    registry: RelationRegistry,
    k: int | None = None,
    jump_threshold: float | None = None,
    min_support: int = 3,
    min_episodes: int = MIN_EPISODES,
) -> InferenceReport:
    """Roles, links, goals, missions, cardinalities and deontic relations in one pass."""
    if len(joint_histories) < min_episodes:
        raise InsufficientEpisodes(len(joint_histories), min_episodes)
    keys: list[tuple[int, str]] = []
    vectors: list[HistoryVector] = []
    histories = {}
    for jh in joint_histories:
        for agent in sorted(jh.histories):
            h = jh.histories[agent]
            keys.append((jh.episode, agent))
            vectors.append(vectorize(h, jh.episode))
            histories[(jh.episode, agent)] = h
    if len(set(keys)) != len(keys):
        raise ValueError("episode numbers must be distinct across the joint-histories")
    x, _ = stack(vectors)
    if x.shape[1] == 0:
        x = np.zeros((len(vectors), 1))
    projection = pca(x, 2, allow_degenerate=True)
    n_agents = max(len(jh.histories) for jh in joint_histories)
    clustering = cluster_roles(x, k=k, max_k=n_agents)
    clusters = _name_clusters(clustering, keys, histories, registry)
    assignments = {m: c.role for c in clusters for m in c.members}
    knn = nearest_neighbor_agreement(projection.coordinates, [assignments[key] for key in keys])

    links = infer_links(joint_histories, registry, assignments, min_support=min_support)
    goals = infer_goals(joint_histories, jump_threshold)
    missions = group_missions(goals)

    commitments: dict[tuple[int, str], set[str]] = {}
    for key, h in histories.items():
        commitments[key] = {ref.name for ref in label_history(registry, h) if ref.kind is TargetKind.MISSION}
    fired = sorted(set().union(*commitments.values())) if commitments else []
    goal_episodes = {g.name: set(g.episodes) for g in goals}
    for m in fired:
        eps = {e for (e, _), ms in commitments.items() if m in ms}
        missions[m] = frozenset(g for g, ge in goal_episodes.items() if ge & eps)

    cards, compat = infer_cardinalities_and_compatibilities(assignments)
    deontic = infer_deontic(assignments, commitments, set(fired))
    frequencies = commitment_frequencies(assignments, commitments, set(fired))

    spec = OrganizationalSpecification(
        StructuralSpec(
            roles=frozenset(assignments.values()),
            links=frozenset(ev.link for ev in links),
            compatibilities=frozenset(compat),
            role_cardinalities=cards,
        ),
        SocialScheme(goals=frozenset(g.name for g in goals), missions=missions),
        frozenset(deontic),
    )
    ensure_valid(spec)
    return InferenceReport(
        env=env_label,
        episodes=len(joint_histories),
        spec=spec,
        vectors=tuple(vectors),
        clustering=clustering,
        clusters=tuple(clusters),
        projection=projection,
        knn_agreement=knn,
        links=tuple(links),
        goals=tuple(goals),
        frequencies=tuple(frequencies),
    )
