from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.hierarchy import fcluster, linkage
from sklearn.metrics import adjusted_rand_score

from planted import planted_histories, random_histories
from orgmarl.decpomdp import AgentHistory, HistoryEntry, JointHistory, run_episode
from orgmarl.envs import get_preset
from orgmarl.inference import (
    DegenerateInput,
    InsufficientEpisodes,
    MissingMessageDeclaration,
    adjusted_rand_index,
    average_linkage,
    choose_k,
    cluster_roles,
    commitment_frequencies,
    convex_hull,
    group_missions,
    hull_coverage,
    in_hull,
    infer_cardinalities_and_compatibilities,
    infer_deontic,
    infer_goals,
    infer_links,
    nearest_neighbor_agreement,
    pca,
    stack,
    synthesize,
    vectorize,
)
from orgmarl.orgmodel import Cardinality, DeonticKind, DeonticRelation, Link, LinkKind
from orgmarl.relations import RelationRegistry, registry_from_dict

PCA_FIXTURE = np.array([[2.0, 0.0], [0.0, 1.0], [-1.0, -1.0], [3.0, 2.0], [-4.0, -2.0]])


def _closed_form_2x2(x):
    c = np.cov(x.T)  # only used for the moments; the eigen-solve below is by hand
    a, b, d = c[0, 0], c[0, 1], c[1, 1]
    mid, rad = (a + d) / 2, math.sqrt(((a - d) / 2) ** 2 + b * b)
    lam = (mid + rad, mid - rad)
    v = np.array([b, lam[0] - a])
    return lam, v / np.linalg.norm(v)


def test_pca_matches_closed_form_eigendecomposition():
    proj = pca(PCA_FIXTURE, 2)
    lam, v = _closed_form_2x2(PCA_FIXTURE)
    assert abs(proj.eigenvalues[0] - lam[0]) <= 1e-9
    assert abs(proj.eigenvalues[1] - lam[1]) <= 1e-9
    assert abs(abs(proj.components[0] @ v) - 1.0) <= 1e-9
    assert np.allclose(proj.reconstruct(), PCA_FIXTURE)
    assert proj.explained_variance_ratio.sum() == pytest.approx(1.0)


def test_pca_sign_convention_and_degenerate_input():
    proj = pca(PCA_FIXTURE, 1)
    j = int(np.argmax(np.abs(proj.components[0])))
    assert proj.components[0, j] > 0
    same = np.ones((4, 3))
    with pytest.raises(DegenerateInput):
        pca(same, 2)
    assert pca(same, 2, allow_degenerate=True).degenerate
    with pytest.raises(ValueError):
        pca(np.ones((1, 3)), 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 14), st.integers(1, 4), st.integers(0, 10**6))
def test_average_linkage_matches_scipy(n, f, seed):
    x = np.random.default_rng(seed).normal(size=(n, f))
    ours = [m.distance for m in average_linkage(x)]
    ref = linkage(x, method="average")[:, 2]
    assert np.allclose(ours, ref, atol=1e-9)
    for k in range(1, n + 1):
        mine = cluster_roles(x, k=k).labels
        theirs = fcluster(linkage(x, method="average"), k, criterion="maxclust")
        assert adjusted_rand_index(mine, theirs) == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=2, max_size=30))
def test_adjusted_rand_index_matches_sklearn(pairs):
    a, b = zip(*pairs)
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)


def _matrix(hs):
    vs = [vectorize(jh.histories[a], jh.episode) for jh in hs for a in sorted(jh.histories)]
    return vs, stack(vs)[0]


@pytest.mark.parametrize("seed", range(3))
def test_planted_roles_are_recovered(seed):
    hs, truth = planted_histories(seed=seed)
    vs, x = _matrix(hs)
    labels = [truth[v.agent] for v in vs]
    assert adjusted_rand_index(labels, cluster_roles(x, k=3).labels) >= 0.9
    auto = cluster_roles(x, max_k=9)
    assert auto.n_clusters == 3
    assert adjusted_rand_index(labels, auto.labels) >= 0.9


@pytest.mark.parametrize("seed", range(3))
def test_random_policies_form_one_cluster(seed):
    _, x = _matrix(random_histories(seed=seed))
    assert cluster_roles(x, max_k=9).n_clusters == 1


def test_cut_options():
    x = np.array([[0.0], [0.1], [5.0], [5.2]])
    assert cluster_roles(x, distance=1.0).n_clusters == 2
    assert cluster_roles(x, distance=0.0).n_clusters == 4
    assert cluster_roles(x, k=1).n_clusters == 1
    assert cluster_roles(x, k=2).sizes() == [2, 2]
    assert choose_k(average_linkage(x), 4, max_k=1) == 1
    with pytest.raises(ValueError):
        cluster_roles(x, k=2, distance=1.0)
    assert cluster_roles(np.zeros((1, 2))).labels == (0,)


def test_nearest_neighbor_agreement():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]])
    assert nearest_neighbor_agreement(pts, ["a", "a", "b", "b"]) == 1.0
    assert nearest_neighbor_agreement(pts, ["a", "b", "a", "b"]) == 0.0


def test_hull_membership():
    sq = [(0, 0), (2, 0), (2, 2), (0, 2), (1, 1)]
    hull = convex_hull(sq)
    assert len(hull) == 4
    assert in_hull((1, 1), hull) and in_hull((2, 1), hull)
    assert not in_hull((3, 1), hull)
    pts = sq + [(5, 5)]
    assert hull_coverage(pts, [0, 1, 2, 3]) == pytest.approx(5 / 6)
    assert hull_coverage([], []) == 0.0


# --- deontic fixtures ---------------------------------------------------------


def test_deontic_obligation_at_one_and_permission_at_point_six():
    assignments = {(e, f"a{i}"): "worker" for e in range(5) for i in range(2)}
    assignments.update({(e, "boss"): "boss" for e in range(5)})
    keys = sorted(k for k, r in assignments.items() if r == "worker")
    commitments = {k: {"build"} for k in keys}
    for k in keys[:6]:
        commitments[k].add("report")
    missions = {"build", "report", "unused"}
    got = infer_deontic(assignments, commitments, missions)
    assert got == {
        DeonticRelation("worker", "build", DeonticKind.OBLIGATION),
        DeonticRelation("worker", "report", DeonticKind.PERMISSION),
    }
    freq = {(f.role, f.mission): f.frequency for f in commitment_frequencies(assignments, commitments, missions)}
    assert freq[("worker", "build")] == Fraction(1)
    assert freq[("worker", "report")] == Fraction(3, 5)
    assert freq[("boss", "build")] == 0


def test_cardinalities_and_compatibilities():
    assignments = {(0, "a"): "x", (0, "b"): "y", (1, "a"): "y", (1, "b"): "y"}
    cards, compat = infer_cardinalities_and_compatibilities(assignments)
    assert cards == {"x": Cardinality(0, 1), "y": Cardinality(1, 2)}
    assert compat == {("x", "y")}
    with pytest.raises(ValueError):
        infer_cardinalities_and_compatibilities({})


# --- goals and links -----------------------------------------------------------


def _jh(episode, per_agent, gamma=1.0):
    """per_agent: {agent: [(obs, act, reward), ...]}"""
    hs = {a: AgentHistory(a, [HistoryEntry(k, o, x, r) for k, (o, x, r) in enumerate(steps)]) for a, steps in per_agent.items()}
    return JointHistory(episode, episode, "fixture", gamma, hs)


def test_goals_are_reward_jumps_and_missions_group_them():
    hs = []
    for e in range(4):
        rewards = [9.0, 0.0, 0.0, 5.0, 0.0, 0.0, 2.0, 0.0]
        hs.append(_jh(e, {"a": [(50 + k, 0, r) for k, r in enumerate(rewards)], "b": [(60, 0, r) for r in rewards]}))
    goals = infer_goals(hs, jump_threshold=1.0)
    # step 0 has no previous reward, so the 9.0 there is not a jump
    assert [(g.jump, g.support) for g in goals] == [(5.0, 4), (2.0, 4)]
    assert goals[0].tokens == ((53, 4), (60, 4))
    assert group_missions(goals) == {"mission_0": frozenset({"goal_0", "goal_1"})}
    assert infer_goals(hs, jump_threshold=10.0) == []


def test_goals_in_separate_episodes_form_separate_missions():
    a = _jh(0, {"x": [(1, 0, 0.0), (2, 0, 3.0)]})
    b = _jh(1, {"x": [(1, 0, 0.0), (3, 0, 7.0)]})
    goals = infer_goals([a, b], jump_threshold=1.0)
    assert len(group_missions(goals)) == 2


MSG_REGISTRY = {
    "structural_specifications": {"roles": {"boss": {"*": 7}, "worker": {"*": [1, 2]}}},
    "messages": [{"name": "order", "send": [7], "receive": [70], "comply": [1]}],
    "copresence": [99],
}


def _order_episode(e, obey):
    boss = [(0, 7, 0.0)] * 6
    worker = [(0, 2, 0.0)] + [(70, 1 if obey else 2, 0.0)] * 5
    return _jh(e, {"boss": boss, "worker": worker})


def test_obeyed_orders_make_authority_and_ignored_ones_communication():
    reg = registry_from_dict(MSG_REGISTRY)
    assign = lambda hs: {(jh.episode, a): a for jh in hs for a in jh.histories}  # noqa: E731
    obeyed = [_order_episode(e, True) for e in range(3)]
    links = infer_links(obeyed, reg, assign(obeyed))
    assert [(ev.link, ev.support, ev.compliant) for ev in links] == [(Link("boss", "worker", LinkKind.AUTHORITY), 15, 15)]
    ignored = [_order_episode(e, False) for e in range(3)]
    links = infer_links(ignored, reg, assign(ignored))
    assert [ev.link.kind for ev in links] == [LinkKind.COMMUNICATION]
    assert infer_links(obeyed[:1], reg, assign(obeyed[:1]), min_support=6) == []


def test_copresence_gives_acquaintance():
    reg = registry_from_dict(MSG_REGISTRY)
    hs = [_jh(e, {"p": [(99, 1, 0.0)] * 3, "q": [(5, 2, 0.0)] * 3}) for e in range(2)]
    links = infer_links(hs, reg, {(jh.episode, a): a for jh in hs for a in jh.histories})
    assert [ev.link for ev in links] == [Link("p", "q", LinkKind.ACQUAINTANCE)]


def test_missing_message_declarations():
    with pytest.raises(MissingMessageDeclaration):
        infer_links([], RelationRegistry(), {}, require_messages=True)
    bad = registry_from_dict({"messages": [{"name": "m", "send": [], "receive": [1]}]})
    with pytest.raises(MissingMessageDeclaration):
        infer_links([], bad, {})


# --- end to end ----------------------------------------------------------------


def _scripted(env_id, n=5):
    preset = get_preset(env_id)
    env = preset.make(preset.experiment_env)
    pol = preset.scripted(env)
    return env, preset.registry(env), [run_episode(env, pol, seed=s, episode=s) for s in range(n)]


def test_synthesize_finds_leader_authority_on_scripted_hunts():
    env, reg, hs = _scripted("predator_prey")
    report = synthesize("predator_prey", hs, reg)
    kinds = {(ev.link.source, ev.link.dest): ev.link.kind for ev in report.links}
    assert kinds[("leader", "follower")] is LinkKind.AUTHORITY
    assert report.role_share("leader") == pytest.approx(1 / 3)
    assert report.spec.structural.role_cardinalities["leader"] == Cardinality(1, 1)


def test_synthesize_outputs_are_consistent():
    env, reg, hs = _scripted("piston_chain")
    report = synthesize("piston_chain", hs, reg)
    d = report.to_dict()
    assert d["episodes"] == 5
    assert "preference_orders" in d["not_inferred"]
    rows = report.pca_csv().splitlines()
    assert rows[0] == "agent,episode,x,y,role"
    assert len(rows) == 1 + len(env.agents) * 5
    assert len(report.dendrogram_csv().splitlines()) == len(env.agents) * 5
    assert report.to_json() == synthesize("piston_chain", hs, reg).to_json()


def test_synthesize_needs_enough_episodes_and_distinct_numbers():
    env, reg, hs = _scripted("piston_chain")
    with pytest.raises(InsufficientEpisodes):
        synthesize("piston_chain", hs[:4], reg)
    dup = hs[:4] + [hs[0]]
    with pytest.raises(ValueError, match="distinct"):
        synthesize("piston_chain", dup, reg)


def test_registry_names_majority_cluster_and_synthesizes_the_rest():
    hs, truth = planted_histories()
    reg = registry_from_dict({"structural_specifications": {"roles": {"zero_first": {"100": 1}}}})
    report = synthesize("planted", hs, reg)
    names = sorted(c.role for c in report.clusters)
    # role 0 answers observation 100 with (100 + 0) % 3 = 1, so only that cluster fires the relation
    assert "zero_first" in names
    assert len(names) == 3
    zf = next(c for c in report.clusters if c.role == "zero_first")
    assert {truth[a] for _, a in zf.members} == {0}
    assert zf.registry_share == 1.0
