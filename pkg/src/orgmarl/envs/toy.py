"""Small reference environments with hand-enumerable dynamics."""

from __future__ import annotations

from dataclasses import dataclass

from ..decpomdp import DEFAULT_GAMMA, DecPomdpModel

LEFT, RIGHT = 0, 1
CHAIN_OBS_BASE = 100


@dataclass(frozen=True)
class ChainConfig:
    length: int = 3
    horizon: int = 5
    gamma: float = DEFAULT_GAMMA
    slip: float = 0.0  # probability that a move goes the other way


class ChainEnv(DecPomdpModel):
    """Single-agent corridor; reward 1 on reaching the last cell, which is terminal."""

    env_id = "chain"

    def __init__(self, config: ChainConfig | None = None):
        self.config = config or ChainConfig()
        self.agents = ("agent_0",)
        self.horizon = self.config.horizon
        self.gamma = self.config.gamma

    def action_space(self, agent):
        return (LEFT, RIGHT)

    def observation_space(self, agent):
        return range(CHAIN_OBS_BASE, CHAIN_OBS_BASE + self.config.length)

    def initial_state(self, rng):
        return 0

    def transition(self, state, actions, rng):
        move = 1 if actions["agent_0"] == RIGHT else -1
        if self.config.slip and rng.random() < self.config.slip:
            move = -move
        return min(max(state + move, 0), self.config.length - 1)

    def observe(self, state, actions, rng):
        return {"agent_0": CHAIN_OBS_BASE + state}

    def reward(self, state, actions, next_state):
        return 1.0 if next_state == self.config.length - 1 else 0.0

    def is_terminal(self, state):
        return state == self.config.length - 1

    def config_dict(self):
        return dict(self.config.__dict__)


MATRIX_OBS = 100


@dataclass(frozen=True)
class MatrixGameConfig:
    payoff: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 0.0))
    gamma: float = DEFAULT_GAMMA


class MatrixGame(DecPomdpModel):
    """One-shot two-agent cooperative matrix game: reward payoff[a0][a1]."""

    env_id = "matrix_game"
    horizon = 1

    def __init__(self, config: MatrixGameConfig | None = None):
        self.config = config or MatrixGameConfig()
        self.agents = ("agent_0", "agent_1")
        self.gamma = self.config.gamma

    def action_space(self, agent):
        return (0, 1)

    def observation_space(self, agent):
        return (MATRIX_OBS,)

    def initial_state(self, rng):
        return "start"

    def transition(self, state, actions, rng):
        return "done"

    def observe(self, state, actions, rng):
        return {a: MATRIX_OBS for a in self.agents}

    def reward(self, state, actions, next_state):
        return float(self.config.payoff[actions["agent_0"]][actions["agent_1"]])

    def is_terminal(self, state):
        return state == "done"

    def config_dict(self):
        return {"payoff": [list(r) for r in self.config.payoff], "gamma": self.gamma}
