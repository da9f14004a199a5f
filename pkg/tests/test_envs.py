from __future__ import annotations

import numpy as np
import pytest

from orgmarl.decpomdp import RandomPolicy, check_history, run_episode
from orgmarl.envs import get_preset, make_env
from orgmarl.envs.drone_net import (
    ALERT,
    COMPROMISED,
    ISOLATE_BASE,
    ISOLATION_STEPS,
    MONITOR,
    NOOP,
    DroneNet,
    DroneNetConfig,
    DroneState,
    IsolateNonNeighbor,
    random_connected_graph,
)
from orgmarl.envs.piston_chain import DOWN, HOLD, UP, PistonChain, PistonChainConfig, decode_obs, encode_obs
from orgmarl.envs.predator_prey import STAY, NORTH, PPState, PredatorPrey, PredatorPreyConfig


def _still(env):
    return {a: (env.leader_action(STAY, 0) if a == "leader" else STAY) for a in env.agents}


def test_prey_flees_the_first_listed_nearest_predator_on_ties():
    env = PredatorPrey(PredatorPreyConfig(grid=7))
    # leader and follower_0 are both at distance 2; the leader wins the tie, so the prey goes north
    s = PPState(((3, 1), (1, 3), (6, 6)), (3, 3))
    nxt = env.transition(s, _still(env), np.random.default_rng(0))
    assert nxt.prey == (2, 3)
    # swap the two predators and the first listed one (now north) drives it east
    s = PPState(((1, 3), (3, 1), (6, 6)), (3, 3))
    assert env.transition(s, _still(env), np.random.default_rng(0)).prey == (3, 4)


def test_cornered_prey_stays():
    env = PredatorPrey(PredatorPreyConfig(grid=3, followers=1))
    s = PPState(((0, 1), (1, 0)), (0, 0))
    assert env.transition(s, _still(env), np.random.default_rng(0)).prey == (0, 0)


def test_capture_ends_the_episode_with_reward():
    env = PredatorPrey(PredatorPreyConfig(grid=5))
    s = PPState(((3, 2), (0, 0), (0, 4)), (2, 2))
    acts = _still(env)
    acts["leader"] = env.leader_action(NORTH, 0)
    nxt, obs, r, done = env.step(s, acts, np.random.default_rng(0))
    assert nxt.captured and done
    assert r == env.config.capture_reward


def test_follower_window_and_order_relay():
    env = PredatorPrey(PredatorPreyConfig(grid=7))
    s = PPState(((0, 0), (3, 3), (6, 6)), (2, 4))
    acts = _still(env)
    acts["leader"] = env.leader_action(STAY, 3)
    obs = env.observe(s, acts, np.random.default_rng(0))
    slot, msg = env.split_follower_obs(obs["follower_0"])
    assert msg == 3
    assert slot == (2 - 3 + 1) * 3 + (4 - 3 + 1)
    assert env.split_follower_obs(obs["follower_1"])[0] == 9  # out of the window
    assert env.split_leader_obs(obs["leader"]) == ((1, 1), (-1, 1), (-1, -1))


@pytest.mark.parametrize("grid", [5, 7])
def test_prey_spawns_away_from_predators(grid):
    env = PredatorPrey(PredatorPreyConfig(grid=grid))
    for seed in range(200):
        s = env.initial_state(np.random.default_rng(seed))
        assert len(set(s.predators)) == len(s.predators)
        assert min(abs(s.prey[0] - p[0]) + abs(s.prey[1] - p[1]) for p in s.predators) >= 3


def test_scripted_encirclement_always_captures():
    env = make_env("predator_prey")
    pol = get_preset("predator_prey").scripted(env)
    caught = 0
    for seed in range(100):
        jh = run_episode(env, pol, seed=seed)
        caught += jh.rewards()[-1] == env.config.capture_reward
    assert caught == 100


def test_piston_codec_and_ball_motion():
    for own in range(3):
        for left in range(4):
            for right in range(4):
                for ball in range(4):
                    assert decode_obs(encode_obs(own, left, right, ball)) == (own, left, right, ball)
    env = PistonChain(PistonChainConfig(n_pistons=3, initial_heights=(1, 1, 1)))
    s = env.initial_state(np.random.default_rng(0))
    assert s.ball == 2
    acts = {"piston_0": HOLD, "piston_1": DOWN, "piston_2": UP}
    nxt, _, r, done = env.step(s, acts, np.random.default_rng(0))
    assert nxt.ball == 1 and r == pytest.approx(0.99) and not done
    nxt2, _, r2, _ = env.step(nxt, {a: HOLD for a in env.agents}, np.random.default_rng(0))
    assert nxt2.ball == 1 and r2 == pytest.approx(-0.01)


def test_scripted_pistons_deliver_the_ball():
    env = make_env("piston_chain")
    pol = get_preset("piston_chain").scripted(env)
    for seed in range(20):
        jh = run_episode(env, pol, seed=seed)
        assert len(jh) < env.horizon
        assert sum(r > 0 for r in jh.rewards()) == env.config.n_pistons - 1


def _line_env(**kw):
    return DroneNet(DroneNetConfig(n_nodes=3, edges=((0, 1), (1, 2)), infection_prob=1.0, max_degree=2, **kw))


def _state(env, compromised):
    n = len(env.agents)
    return DroneState(tuple(compromised), (True,) * n, (0,) * len(env.edges), (False,) * n, (0,) * n)


def test_isolation_blocks_spread_for_a_while():
    env = _line_env()
    s = _state(env, [True, False, False])
    rng = np.random.default_rng(0)
    acts = {a: NOOP for a in env.agents}
    assert env.transition(s, acts, rng).compromised == (True, True, False)
    acts["drone_1"] = ISOLATE_BASE + 0  # drone_1's first neighbour is drone_0
    cut = env.transition(s, acts, rng)
    assert cut.compromised == (True, False, False)
    assert cut.cut[env.edge_of(0, 1)] == ISOLATION_STEPS
    quiet = {a: NOOP for a in env.agents}
    for _ in range(ISOLATION_STEPS - 1):
        cut = env.transition(cut, quiet, rng)
        assert not cut.compromised[1]
    assert env.transition(cut, quiet, rng).compromised[1]


def test_isolating_a_missing_neighbour_is_illegal():
    env = _line_env()
    s = _state(env, [False, False, False])
    acts = {a: NOOP for a in env.agents}
    acts["drone_0"] = ISOLATE_BASE + 1  # drone_0 has a single neighbour
    with pytest.raises(IsolateNonNeighbor):
        env.step(s, acts, np.random.default_rng(0))


def test_monitor_and_alert_observations():
    env = _line_env()
    s = _state(env, [True, False, False])
    rng = np.random.default_rng(0)
    acts = {"drone_0": ALERT, "drone_1": MONITOR, "drone_2": NOOP}
    s = env.transition(s, acts, rng)
    obs = env.observe(s, acts, rng)
    flag, links, alerts = env.decode_obs(obs["drone_1"])
    assert flag == COMPROMISED  # infection_prob 1 reached it this step
    assert alerts == 1  # slot 0 is drone_0
    assert links == 0b11


def test_random_graph_is_connected_and_degree_capped():
    for seed in range(30):
        edges = random_connected_graph(10, 4, 3, seed)
        env = DroneNet(DroneNetConfig(n_nodes=10, edges=edges))
        assert all(len(nb) <= 3 for nb in env.neighbors)


@pytest.mark.parametrize("env_id", ["piston_chain", "predator_prey", "drone_net"])
def test_random_histories_respect_the_kernel_invariants(env_id):
    env = make_env(env_id)
    for seed in range(5):
        assert check_history(env, run_episode(env, RandomPolicy(), seed=seed)) == []


@pytest.mark.parametrize("env_id", ["piston_chain", "predator_prey", "drone_net"])
def test_variants_build(env_id):
    preset = get_preset(env_id)
    vs = preset.variants(preset.config())
    assert len(vs) >= 2
    for v in vs:
        preset.env_cls(v)


def test_bad_configs_are_rejected():
    with pytest.raises(ValueError):
        PredatorPreyConfig(grid=2)
    with pytest.raises(ValueError):
        PredatorPreyConfig(min_prey_distance=0)
    with pytest.raises(ValueError):
        PistonChainConfig(n_pistons=1)
    with pytest.raises(ValueError):
        DroneNetConfig(n_nodes=3, edges=((0, 1),))
    with pytest.raises(ValueError):
        make_env("piston_chain", {"bogus": 1})
