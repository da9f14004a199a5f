"""Piston chain: a row of pistons passes a ball from right to left.

Each piston moves up, down or holds (heights clamped to 0..2).  After the
moves, the ball on column c rolls to c-1 iff piston c-1 is now lower than
piston c.  Reaching column 0 ends the episode.  Each piston sees its own
height, its neighbours' heights (or a wall sentinel) and where the ball is
relative to itself if it is within one column.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from ..constraints import OsInit
from ..decpomdp import DEFAULT_GAMMA, DecPomdpModel, FunctionPolicy
from ..orgmodel import make_spec
from ..relations import RelationRegistry, Relation, SpecRef, TargetKind, TokenRule, parse_pattern

UP, DOWN, HOLD = 0, 1, 2
ACTIONS = (UP, DOWN, HOLD)
ACTION_LABELS = {UP: "up", DOWN: "down", HOLD: "hold"}
MAX_HEIGHT = 2
SENTINEL = 3  # neighbour height slot for a wall
NO_BALL = 3  # ball offset slot when the ball is out of the window
OBS_BASE = 100


@dataclass(frozen=True)
class PistonChainConfig:
    n_pistons: int = 8
    horizon: int = 200
    step_penalty: float = 0.01
    move_reward: float = 1.0
    gamma: float = DEFAULT_GAMMA
    ball_start: int | None = None  # None: rightmost piston
    initial_heights: tuple[int, ...] | None = None  # None: uniform random

    def __post_init__(self):
        if self.n_pistons < 2:
            raise ValueError("n_pistons must be >= 2")
        start = self.n_pistons - 1 if self.ball_start is None else self.ball_start
        if not 0 <= start <= self.n_pistons:
            raise ValueError("ball column out of range")
        if self.initial_heights is not None and (
            len(self.initial_heights) != self.n_pistons
            or any(h not in (0, 1, 2) for h in self.initial_heights)
        ):
            raise ValueError("initial_heights must give one height in {0,1,2} per piston")


@dataclass(frozen=True)
class PistonState:
    heights: tuple[int, ...]
    ball: int


def encode_obs(own: int, left: int, right: int, ball: int) -> int:
    return OBS_BASE + ((own * 4 + left) * 4 + right) * 4 + ball


def decode_obs(token: int) -> tuple[int, int, int, int]:
    code = token - OBS_BASE
    code, ball = divmod(code, 4)
    code, right = divmod(code, 4)
    own, left = divmod(code, 4)
    return own, left, right, ball


def ball_slot(offset: int | None) -> int:
    return NO_BALL if offset is None else offset + 1


class PistonChain(DecPomdpModel):
    env_id = "piston_chain"

    def __init__(self, config: PistonChainConfig | None = None):
        self.config = config or PistonChainConfig()
        c = self.config
        self.agents = tuple(f"piston_{i}" for i in range(c.n_pistons))
        self.horizon = c.horizon
        self.gamma = c.gamma
        self._index = {a: i for i, a in enumerate(self.agents)}

    def action_space(self, agent):
        return ACTIONS

    def observation_space(self, agent):
        return range(OBS_BASE, OBS_BASE + 3 * 4 * 4 * 4)

    def action_labels(self, agent):
        return dict(ACTION_LABELS)

    def initial_state(self, rng):
        c = self.config
        if c.initial_heights is not None:
            heights = tuple(c.initial_heights)
        else:
            heights = tuple(int(h) for h in rng.integers(0, MAX_HEIGHT + 1, size=c.n_pistons))
        ball = c.n_pistons - 1 if c.ball_start is None else c.ball_start
        return PistonState(heights, ball)

    def transition(self, state, actions, rng):
        heights = list(state.heights)
        for i, agent in enumerate(self.agents):
            a = actions[agent]
            if a == UP:
                heights[i] = min(heights[i] + 1, MAX_HEIGHT)
            elif a == DOWN:
                heights[i] = max(heights[i] - 1, 0)
        ball = state.ball
        if 0 < ball < len(heights) and heights[ball - 1] < heights[ball]:
            ball -= 1
        return PistonState(tuple(heights), ball)

    def observe(self, state, actions, rng):
        n = len(state.heights)
        out = {}
        for i, agent in enumerate(self.agents):
            left = state.heights[i - 1] if i > 0 else SENTINEL
            right = state.heights[i + 1] if i < n - 1 else SENTINEL
            off = state.ball - i
            out[agent] = encode_obs(state.heights[i], left, right, ball_slot(off if -1 <= off <= 1 else None))
        return out

    def reward(self, state, actions, next_state):
        moved = next_state.ball < state.ball
        return (self.config.move_reward if moved else 0.0) - self.config.step_penalty

    def is_terminal(self, state):
        return state.ball == 0

    def equivalent_agent(self, agent, known):
        known = sorted(known, key=lambda a: int(a.rsplit("_", 1)[1]))
        if agent in known or not known:
            return agent if agent in known else None
        i = self._index[agent]
        if i == 0:
            return known[0]
        if i == len(self.agents) - 1:
            return known[-1]
        # interior pistons borrow the nearest interior trained piston
        interior = known[1:-1] or known
        return interior[min(i - 1, len(interior) - 1)]

    def config_dict(self):
        return asdict(self.config)


def _scripted(agent, history, observation):
    own, left, right, ball = decode_obs(observation)
    if ball == ball_slot(0):
        return UP
    if ball == ball_slot(-1):
        return UP
    return DOWN  # ball on the right neighbour or out of sight: pre-lower


def scripted_policy():
    """Descending staircase: lift under the ball, keep everything ahead of it low."""
    return FunctionPolicy(_scripted)


def relation_registry() -> RelationRegistry:
    lift, lower = [], []
    for own in range(3):
        for left in range(4):
            for right in range(4):
                lift.append(f".* {encode_obs(own, left, right, ball_slot(0))} {UP}")
                lower.append(f".* {encode_obs(own, left, right, ball_slot(+1))} {DOWN}")
    rels = [
        Relation(SpecRef(TargetKind.ROLE, "piston"), rules=(TokenRule(None, frozenset({UP, DOWN})),)),
        Relation(SpecRef(TargetKind.ROLE, "idler"), rules=(TokenRule(None, frozenset({HOLD})),)),
    ]
    rels += [Relation(SpecRef(TargetKind.MISSION, "lift_ball"), pattern=parse_pattern(p)) for p in lift]
    rels += [Relation(SpecRef(TargetKind.MISSION, "lower_ahead"), pattern=parse_pattern(p)) for p in lower]
    return RelationRegistry(rels, aliases={"up": UP, "down": DOWN, "hold": HOLD})


def partial_constraints(env: PistonChain) -> OsInit:
    """All pistons play `piston`: no holding, and the two pistons around the ball must push it on."""
    spec = make_spec(
        roles={"piston", "idler"},
        role_cardinalities={"piston": (1, None)},
        goals={"ball_left"},
        missions={"lift_ball": {"ball_left"}, "lower_ahead": {"ball_left"}},
        deontic={("piston", "lift_ball", "obligation"), ("piston", "lower_ahead", "obligation")},
    )
    return OsInit(spec, {a: "piston" for a in env.agents})


def variants(config: PistonChainConfig | None = None) -> list[PistonChainConfig]:
    base = config or PistonChainConfig()
    return [replace(base, n_pistons=base.n_pistons + d) for d in (0, 1, 2)]
