"""Predator-prey with a commanding leader.

One leader and F followers hunt a single scripted prey on a G x G grid.
The leader sees coarse bearings from every predator to the prey and can
broadcast one of K orders; followers only see the prey if it is inside their
3 x 3 window, plus the order broadcast on the previous step.

Orders 1..4 mean "move N/E/S/W" and order 5 means "stay".  Capturing the
prey (a predator stepping onto its cell) ends the episode with +10.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

from ..constraints import OsInit
from ..decpomdp import DEFAULT_GAMMA, DecPomdpModel, FunctionPolicy
from ..orgmodel import make_spec
from ..relations import MessageSpec, Relation, RelationRegistry, SpecRef, TargetKind, TokenRule, parse_pattern

STAY, NORTH, EAST, SOUTH, WEST = 0, 1, 2, 3, 4
MOVES = (STAY, NORTH, EAST, SOUTH, WEST)
MOVE_LABELS = {STAY: "stay", NORTH: "N", EAST: "E", SOUTH: "S", WEST: "W"}
DELTAS = {STAY: (0, 0), NORTH: (-1, 0), EAST: (0, 1), SOUTH: (1, 0), WEST: (0, -1)}
PREY_ORDER = (NORTH, EAST, SOUTH, WEST)

LEADER_ACTION_BASE = 10
FOLLOWER_OBS_BASE = 200
LEADER_OBS_BASE = 1000
NO_PREY = 9  # prey slot when the prey is outside the 3x3 window


@dataclass(frozen=True)
class PredatorPreyConfig:
    grid: int = 7
    followers: int = 2
    messages: int = 5
    capture_reward: float = 10.0
    step_penalty: float = 0.05
    horizon: int = 100
    min_prey_distance: int = 3
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.min_prey_distance < 1:
            raise ValueError("min_prey_distance must be at least 1")
        if self.grid < 3:
            raise ValueError("grid must be at least 3")
        if self.followers < 1:
            raise ValueError("need at least one follower")
        if self.messages < 5:
            raise ValueError("at least 5 messages are needed to encode the orders")
        if (self.followers + 2) > self.grid * self.grid:
            raise ValueError("grid too small for distinct initial cells")


@dataclass(frozen=True)
class PPState:
    predators: tuple[tuple[int, int], ...]  # leader first
    prey: tuple[int, int]
    captured: bool = False


def order_move(message: int) -> int | None:
    """Move commanded by an order token (1..4 directions, 5 stay)."""
    if 1 <= message <= 4:
        return message
    if message == 5:
        return STAY
    return None


def move_order(move: int) -> int:
    return STAY + 5 if move == STAY else move


def sign(x: int) -> int:
    return (x > 0) - (x < 0)


class PredatorPrey(DecPomdpModel):
    env_id = "predator_prey"

    def __init__(self, config: PredatorPreyConfig | None = None):
        self.config = config or PredatorPreyConfig()
        c = self.config
        self.agents = ("leader",) + tuple(f"follower_{i}" for i in range(c.followers))
        self.horizon = c.horizon
        self.gamma = c.gamma

    # --- token codecs ---

    def leader_action(self, move: int, message: int) -> int:
        return LEADER_ACTION_BASE + move * (self.config.messages + 1) + message

    def split_leader_action(self, token: int) -> tuple[int, int]:
        return divmod(token - LEADER_ACTION_BASE, self.config.messages + 1)

    def follower_obs(self, prey_slot: int, message: int) -> int:
        return FOLLOWER_OBS_BASE + prey_slot * (self.config.messages + 1) + message

    def split_follower_obs(self, token: int) -> tuple[int, int]:
        return divmod(token - FOLLOWER_OBS_BASE, self.config.messages + 1)

    def leader_obs(self, bearings: tuple[tuple[int, int], ...]) -> int:
        code = 0
        for dr, dc in bearings:
            code = code * 9 + (dr + 1) * 3 + (dc + 1)
        return LEADER_OBS_BASE + code

    def split_leader_obs(self, token: int) -> tuple[tuple[int, int], ...]:
        code = token - LEADER_OBS_BASE
        out = []
        for _ in range(len(self.agents)):
            code, x = divmod(code, 9)
            out.append((x // 3 - 1, x % 3 - 1))
        return tuple(reversed(out))

    # --- model ---

    def action_space(self, agent):
        if agent == "leader":
            k = self.config.messages
            return tuple(self.leader_action(m, msg) for m in MOVES for msg in range(k + 1))
        return MOVES

    def observation_space(self, agent):
        if agent == "leader":
            return range(LEADER_OBS_BASE, LEADER_OBS_BASE + 9 ** len(self.agents))
        return range(FOLLOWER_OBS_BASE, FOLLOWER_OBS_BASE + 10 * (self.config.messages + 1))

    def action_labels(self, agent):
        if agent == "leader":
            return {
                self.leader_action(m, msg): f"{MOVE_LABELS[m]}+msg{msg}"
                for m in MOVES
                for msg in range(self.config.messages + 1)
            }
        return dict(MOVE_LABELS)

    def initial_state(self, rng):
        """Distinct random predator cells; the prey starts out of immediate reach.

        The prey cell is drawn among cells at Manhattan distance at least
        `min_prey_distance` from every predator, or among the farthest cells
        when the grid is too crowded for that.
        """
        g = self.config.grid
        cells = rng.choice(g * g, size=len(self.agents), replace=False)
        preds = tuple(divmod(int(c), g) for c in cells)
        free = [(r, c) for r in range(g) for c in range(g) if (r, c) not in preds]
        gap = {cell: min(abs(cell[0] - p[0]) + abs(cell[1] - p[1]) for p in preds) for cell in free}
        need = min(self.config.min_prey_distance, max(gap.values()))
        options = [cell for cell in free if gap[cell] >= need]
        return PPState(preds, options[int(rng.integers(len(options)))])

    def _move(self, cell, move):
        g = self.config.grid
        dr, dc = DELTAS[move]
        return (min(max(cell[0] + dr, 0), g - 1), min(max(cell[1] + dc, 0), g - 1))

    def _predator_moves(self, actions):
        out = []
        for agent in self.agents:
            a = actions[agent]
            out.append(self.split_leader_action(a)[0] if agent == "leader" else a)
        return out

    def transition(self, state, actions, rng):
        preds = tuple(self._move(p, m) for p, m in zip(state.predators, self._predator_moves(actions)))
        if state.prey in preds:
            return PPState(preds, state.prey, True)
        return PPState(preds, self._prey_step(preds, state.prey))

    def _prey_step(self, preds, prey):
        dist = [abs(p[0] - prey[0]) + abs(p[1] - prey[1]) for p in preds]
        nearest = preds[dist.index(min(dist))]
        g = self.config.grid
        for move in PREY_ORDER:
            dr, dc = DELTAS[move]
            cell = (prey[0] + dr, prey[1] + dc)
            if not (0 <= cell[0] < g and 0 <= cell[1] < g) or cell in preds:
                continue
            if abs(cell[0] - nearest[0]) + abs(cell[1] - nearest[1]) > min(dist):
                return cell
        return prey

    def observe(self, state, actions, rng):
        message = 0
        if actions is not None:
            message = self.split_leader_action(actions["leader"])[1]
        bearings = tuple(
            (sign(state.prey[0] - p[0]), sign(state.prey[1] - p[1])) for p in state.predators
        )
        out = {"leader": self.leader_obs(bearings)}
        for agent, p in zip(self.agents[1:], state.predators[1:]):
            dr, dc = state.prey[0] - p[0], state.prey[1] - p[1]
            slot = (dr + 1) * 3 + (dc + 1) if abs(dr) <= 1 and abs(dc) <= 1 else NO_PREY
            out[agent] = self.follower_obs(slot, message)
        return out

    def reward(self, state, actions, next_state):
        return self.config.capture_reward if next_state.captured else -self.config.step_penalty

    def is_terminal(self, state):
        return state.captured

    def config_dict(self):
        return asdict(self.config)


def toward(dr: int, dc: int, prefer_vertical: bool = True) -> int:
    """A move reducing the offset (dr, dc); signs are enough."""
    if dr == 0 and dc == 0:
        return STAY
    vertical = SOUTH if dr > 0 else NORTH
    horizontal = EAST if dc > 0 else WEST
    if dr == 0:
        return horizontal
    if dc == 0:
        return vertical
    return vertical if prefer_vertical else horizontal


def closing_moves(dr: int, dc: int) -> tuple[int, ...]:
    """Every move that reduces the offset (dr, dc)."""
    out = []
    if dr:
        out.append(SOUTH if dr > 0 else NORTH)
    if dc:
        out.append(EAST if dc > 0 else WEST)
    return tuple(out)


def slot_offset(slot: int) -> tuple[int, int]:
    return slot // 3 - 1, slot % 3 - 1


class ScriptedHunt:
    """Leader chases and orders; followers close in when they see the prey, else obey.

    Bearings are only signs, so diagonal approaches alternate axes based on
    the previous move to avoid mirroring the prey forever.
    """

    def __init__(self, env: PredatorPrey):
        self.env = env

    @staticmethod
    def _was_vertical(move: int | None) -> bool:
        return move in (NORTH, SOUTH)

    def leader(self, agent, history, observation):
        env = self.env
        bearings = env.split_leader_obs(observation)
        last = history.last_action() if history is not None else None
        last_move, last_msg = env.split_leader_action(last) if last is not None else (None, 0)
        own = toward(*bearings[0], prefer_vertical=not self._was_vertical(last_move))
        # the order steers the first follower still out of reach
        fdr, fdc = bearings[1]
        order = toward(fdr, fdc, prefer_vertical=not self._was_vertical(order_move(last_msg)))
        return env.leader_action(own, move_order(order))

    def follower(self, agent, history, observation):
        slot, message = self.env.split_follower_obs(observation)
        if slot != NO_PREY:
            last = history.last_action() if history is not None else None
            flip = int(agent.rsplit("_", 1)[1]) % 2 == 1
            return toward(*slot_offset(slot), prefer_vertical=(not self._was_vertical(last)) != flip)
        move = order_move(message)
        return STAY if move is None else move

    def __call__(self, agent, history, observation):
        if agent == "leader":
            return self.leader(agent, history, observation)
        return self.follower(agent, history, observation)


def scripted_policy(env: PredatorPrey):
    return FunctionPolicy(ScriptedHunt(env))


def relation_registry(env: PredatorPrey) -> RelationRegistry:
    k = env.config.messages
    broadcasts = [a for a in env.action_space("leader") if env.split_leader_action(a)[1] != 0]
    follower_rules = []
    obey, capture = [], []
    for msg in range(1, k + 1):
        move = order_move(msg)
        for slot in range(10):
            obs = env.follower_obs(slot, msg)
            follower_rules.append(TokenRule(obs, frozenset({move, STAY})))
            if slot == NO_PREY:
                obey.append(f".* {obs} {move}")
    for msg in range(k + 1):
        for slot in (1, 3, 5, 7):  # prey orthogonally adjacent
            dr, dc = slot_offset(slot)
            capture.append(f".* {env.follower_obs(slot, msg)} {toward(dr, dc)}")
    # leading: close in on the prey while ordering the first follower toward it (either axis)
    lead = []
    for code in range(9 ** len(env.agents)):
        obs = LEADER_OBS_BASE + code
        bearings = env.split_leader_obs(obs)
        if bearings[0] == (0, 0) or bearings[1] == (0, 0):
            continue
        for move in closing_moves(*bearings[0]):
            for order in closing_moves(*bearings[1]):
                lead.append(f".* {obs} {env.leader_action(move, move_order(order))}")
    rels = [
        Relation(SpecRef(TargetKind.ROLE, "leader"), rules=(TokenRule(None, frozenset(broadcasts)),)),
        Relation(SpecRef(TargetKind.ROLE, "follower"), rules=tuple(follower_rules)),
    ]
    rels += [Relation(SpecRef(TargetKind.MISSION, "obey_orders"), pattern=parse_pattern(p)) for p in obey]
    rels += [Relation(SpecRef(TargetKind.MISSION, "seize_prey"), pattern=parse_pattern(p)) for p in capture]
    rels += [Relation(SpecRef(TargetKind.MISSION, "lead_hunt"), pattern=parse_pattern(p)) for p in lead]
    # a broadcast followed, two tokens later, by a received order: leader -> follower authority
    messages = []
    for msg in range(1, k + 1):
        messages.append(
            MessageSpec(
                f"order_{msg}",
                send=frozenset(a for a in broadcasts if env.split_leader_action(a)[1] == msg),
                receive=frozenset(env.follower_obs(slot, msg) for slot in range(10)),
                comply=frozenset({order_move(msg)}),
            )
        )
    aliases = {f"move_{MOVE_LABELS[m]}": m for m in MOVES}
    return RelationRegistry(rels, aliases=aliases, messages=messages)


def partial_constraints(env: PredatorPrey) -> OsInit:
    """Followers obey orders and pounce; the leader closes in and steers them, axis left open."""
    spec = make_spec(
        roles={"leader", "follower"},
        role_cardinalities={"leader": (1, 1), "follower": (1, None)},
        goals={"capture"},
        missions={"obey_orders": {"capture"}, "seize_prey": {"capture"}, "lead_hunt": {"capture"}},
        deontic={
            ("follower", "obey_orders", "obligation"),
            ("follower", "seize_prey", "obligation"),
            ("leader", "lead_hunt", "obligation"),
        },
    )
    assignments = {"leader": "leader", **{a: "follower" for a in env.agents[1:]}}
    return OsInit(spec, assignments)


def variants(config: PredatorPreyConfig | None = None) -> list[PredatorPreyConfig]:
    base = config or PredatorPreyConfig()
    return [replace(base, grid=base.grid + d) for d in (0, -2, 2)]
