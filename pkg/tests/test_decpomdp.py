from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chain_value
from orgmarl.decpomdp import (
    AgentHistory,
    FunctionPolicy,
    HistoryEntry,
    HistoryParseError,
    IllegalAction,
    JointHistory,
    RandomPolicy,
    check_history,
    discounted_return,
    evaluate_policy,
    parse_histories,
    parse_history,
    run_episode,
    serialize_history,
)
from orgmarl.envs import make_env
from orgmarl.envs.toy import ChainConfig, ChainEnv, MatrixGame


@pytest.mark.parametrize("length,horizon", [(3, 5), (4, 4), (2, 3)])
def test_chain_return_matches_enumeration_for_every_open_loop_plan(length, horizon):
    env = ChainEnv(ChainConfig(length=length, horizon=horizon, gamma=0.9))
    for plan in itertools.product((0, 1), repeat=horizon):
        pol = FunctionPolicy(lambda agent, h, o, plan=plan: plan[len(h)])
        jh = run_episode(env, pol, seed=0)
        assert abs(jh.episode_return - chain_value(length, horizon, 0.9, plan)) <= 1e-9


def test_chain_always_right_closed_form():
    env = ChainEnv(ChainConfig(length=3, horizon=5, gamma=0.95))
    jh = run_episode(env, FunctionPolicy(lambda a, h, o: 1))
    assert abs(jh.episode_return - 0.95) <= 1e-9
    assert len(jh) == 2  # terminal cell ends the episode


def _slip_value(length, horizon, gamma, slip):
    """Exact expected return of always-right under slip, by enumerating every slip pattern."""
    total = 0.0
    for flips in itertools.product((False, True), repeat=horizon):
        p = np.prod([slip if f else 1 - slip for f in flips])
        pos, ret, disc = 0, 0.0, 1.0
        for f in flips:
            pos = min(max(pos + (-1 if f else 1), 0), length - 1)
            if pos == length - 1:
                ret += disc
                break
            disc *= gamma
        total += p * ret
    return total


def test_slippery_chain_mean_agrees_with_enumeration():
    env = ChainEnv(ChainConfig(length=3, horizon=4, gamma=0.9, slip=0.3))
    exact = _slip_value(3, 4, 0.9, 0.3)
    mean, std = evaluate_policy(env, FunctionPolicy(lambda a, h, o: 1), 4000, seed=11)
    assert abs(mean - exact) < 4 * std / np.sqrt(4000)


def test_discounted_return():
    assert discounted_return([1, 1, 1], 0.5) == 1.75
    assert discounted_return([], 0.9) == 0.0


@pytest.mark.parametrize("env_id", ["piston_chain", "predator_prey", "drone_net"])
def test_same_seed_same_history(env_id):
    env = make_env(env_id)
    a = run_episode(env, RandomPolicy(), seed=42)
    b = run_episode(env, RandomPolicy(), seed=42)
    assert serialize_history(a) == serialize_history(b)
    assert check_history(env, a) == []
    c = run_episode(env, RandomPolicy(), seed=43)
    assert serialize_history(c) != serialize_history(a)


def test_illegal_action_is_rejected():
    env = MatrixGame()
    with pytest.raises(IllegalAction):
        run_episode(env, _Bad())
    with pytest.raises(IllegalAction):
        env.step("start", {"agent_0": 0, "agent_1": 7}, np.random.default_rng(0))


class _Bad:
    def act(self, agent, history, observation, allowed, rng):
        return 5


def test_policy_agent_mismatch():
    with pytest.raises(ValueError, match="do not match"):
        run_episode(MatrixGame(), {"agent_0": RandomPolicy()})


@st.composite
def joint_histories(draw):
    agents = draw(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=3, unique=True))
    n = draw(st.integers(0, 6))
    rewards = draw(st.lists(st.floats(-5, 5, allow_nan=False), min_size=n, max_size=n))
    hs = {}
    for ag in agents:
        hs[ag] = AgentHistory(
            ag,
            [HistoryEntry(k, draw(st.integers(0, 999)), draw(st.integers(0, 9)), rewards[k]) for k in range(n)],
        )
    gamma = draw(st.sampled_from([0.9, 0.95, 1.0]))
    return JointHistory(draw(st.integers(0, 50)), draw(st.integers(0, 10**6)), "toy", gamma, hs,
                        discounted_return(rewards, gamma))


@settings(max_examples=100, deadline=None)
@given(st.lists(joint_histories(), min_size=1, max_size=3))
def test_serialize_parse_round_trip(hs):
    text = "".join(serialize_history(h) for h in hs)
    back = parse_histories(text)
    assert len(back) == len(hs)
    for a, b in zip(hs, back):
        assert serialize_history(a) == serialize_history(b)
        assert abs(a.episode_return - b.episode_return) <= 1e-9


def test_parse_errors_carry_line_numbers():
    h = run_episode(make_env("piston_chain"), RandomPolicy(), seed=1)
    lines = serialize_history(h).splitlines()
    lines[16] = "{broken"
    with pytest.raises(HistoryParseError) as exc:
        parse_histories("\n".join(lines), "log.jsonl")
    assert exc.value.line == 17
    assert "log.jsonl:17" in str(exc.value)
    with pytest.raises(HistoryParseError, match="before any header"):
        parse_histories('{"step": 0, "agent": "a", "obs": 1, "act": 1, "reward": 0}')
    with pytest.raises(HistoryParseError, match="exactly one"):
        parse_history("")
