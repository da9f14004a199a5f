"""Synthetic environment with planted behavioural roles, for clustering tests."""

from __future__ import annotations

from orgmarl.decpomdp import DecPomdpModel, FunctionPolicy, RandomPolicy, run_episode

OBS = (100, 101, 102, 103)
ACTIONS = (0, 1, 2)


class PlantedEnv(DecPomdpModel):
    """Every agent sees an independent uniform token each step; actions do nothing."""

    env_id = "planted"

    def __init__(self, n_agents: int = 9, horizon: int = 30):
        self.agents = tuple(f"agent_{i}" for i in range(n_agents))
        self.horizon = horizon

    def action_space(self, agent):
        return ACTIONS

    def observation_space(self, agent):
        return OBS

    def initial_state(self, rng):
        return 0

    def transition(self, state, actions, rng):
        return state + 1

    def observe(self, state, actions, rng):
        return {a: OBS[int(rng.integers(len(OBS)))] for a in self.agents}

    def reward(self, state, actions, next_state):
        return 0.0


def role_policy(role: int):
    """Role r answers observation o with action (o + r) mod 3."""
    return FunctionPolicy(lambda agent, h, o: (o + role) % 3)


def planted_histories(k: int = 3, per_role: int = 3, episodes: int = 5, seed: int = 0):
    env = PlantedEnv(k * per_role)
    truth = {a: i // per_role for i, a in enumerate(env.agents)}
    policy = {a: role_policy(truth[a]) for a in env.agents}
    hs = [run_episode(env, policy, seed=seed + e, episode=e) for e in range(episodes)]
    return hs, truth


def random_histories(n_agents: int = 9, episodes: int = 5, seed: int = 0):
    env = PlantedEnv(n_agents, horizon=200)
    return [run_episode(env, RandomPolicy(), seed=seed + e, episode=e) for e in range(episodes)]
