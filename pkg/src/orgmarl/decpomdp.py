"""Dec-POMDP kernel: environment contract, episode runner and history logs."""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Container, Iterable, Mapping, Protocol

import numpy as np

if TYPE_CHECKING:
    from .constraints import ConstraintGuard

DEFAULT_GAMMA = 0.95


class IllegalAction(ValueError):
    def __init__(self, agent: str, action: Any, step: int | None = None):
        self.agent, self.action, self.step = agent, action, step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"illegal action {action!r} for agent {agent!r}{where}")


class HistoryParseError(ValueError):
    def __init__(self, line: int, message: str, source: str | None = None):
        self.line, self.source = line, source
        prefix = f"{source}:" if source else ""
        super().__init__(f"{prefix}{line}: {message}")


class DecPomdpModel(ABC):
    """A cooperative Dec-POMDP with a common reward and finite horizon.

    Subclasses provide the tuple pieces separately (transition, observation,
    reward) and `step` composes them.  All randomness must come from the
    generator passed in so episodes replay exactly from a seed.
    """

    env_id: str = "abstract"
    agents: tuple[str, ...] = ()
    gamma: float = DEFAULT_GAMMA
    horizon: int = 0

    @abstractmethod
    def action_space(self, agent: str) -> tuple[int, ...]: ...

    @abstractmethod
    def observation_space(self, agent: str) -> Container[int]: ...

    @abstractmethod
    def initial_state(self, rng: np.random.Generator) -> Any: ...

    @abstractmethod
    def transition(self, state: Any, actions: Mapping[str, int], rng: np.random.Generator) -> Any: ...

    @abstractmethod
    def observe(
        self, state: Any, actions: Mapping[str, int] | None, rng: np.random.Generator
    ) -> dict[str, int]: ...

    @abstractmethod
    def reward(self, state: Any, actions: Mapping[str, int], next_state: Any) -> float: ...

    def is_terminal(self, state: Any) -> bool:
        return False

    def reset(self, rng: np.random.Generator) -> tuple[Any, dict[str, int]]:
        state = self.initial_state(rng)
        return state, self.observe(state, None, rng)

    def step(
        self, state: Any, actions: Mapping[str, int], rng: np.random.Generator
    ) -> tuple[Any, dict[str, int], float, bool]:
        for agent in self.agents:
            if actions[agent] not in self.action_space(agent):
                raise IllegalAction(agent, actions[agent])
        nxt = self.transition(state, actions, rng)
        obs = self.observe(nxt, actions, rng)
        return nxt, obs, float(self.reward(state, actions, nxt)), self.is_terminal(nxt)

    def action_labels(self, agent: str) -> dict[int, str]:
        return {}

    def equivalent_agent(self, agent: str, known: Iterable[str]) -> str | None:
        """Map an agent id unknown to a trained policy onto a known one."""
        return None

    def config_dict(self) -> dict:
        return {}


@dataclass(frozen=True)
class HistoryEntry:
    step: int
    observation: int
    action: int
    reward: float


@dataclass
class AgentHistory:
    agent: str
    entries: list[HistoryEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def observations(self) -> list[int]:
        return [e.observation for e in self.entries]

    def actions(self) -> list[int]:
        return [e.action for e in self.entries]

    def flatten(self) -> list[int]:
        """Token stream w0, a0, w1, a1, ... used by the pattern matcher."""
        out: list[int] = []
        for e in self.entries:
            out.append(e.observation)
            out.append(e.action)
        return out

    def last_action(self) -> int | None:
        return self.entries[-1].action if self.entries else None

    def prefix(self, n: int) -> AgentHistory:
        return AgentHistory(self.agent, self.entries[:n])


@dataclass
class JointHistory:
    episode: int
    seed: int
    env_id: str
    gamma: float
    histories: dict[str, AgentHistory]
    episode_return: float = 0.0

    @property
    def agents(self) -> list[str]:
        return list(self.histories)

    def __len__(self):
        return len(next(iter(self.histories.values()))) if self.histories else 0

    def rewards(self) -> list[float]:
        if not self.histories:
            return []
        first = next(iter(self.histories.values()))
        return [e.reward for e in first.entries]

    def recompute_return(self) -> float:
        return discounted_return(self.rewards(), self.gamma)


def discounted_return(rewards: Iterable[float], gamma: float) -> float:
    total, disc = 0.0, 1.0
    for r in rewards:
        total += disc * r
        disc *= gamma
    return total


class Policy(Protocol):
    def act(
        self,
        agent: str,
        history: AgentHistory,
        observation: int,
        allowed: tuple[int, ...],
        rng: np.random.Generator,
    ) -> int: ...


JointPolicy = Policy | Mapping[str, Policy]


def _policy_for(policy: JointPolicy, agent: str) -> Policy:
    if isinstance(policy, Mapping):
        return policy[agent]
    return policy


class RandomPolicy:
    """Uniform choice over the authorized actions."""

    def act(self, agent, history, observation, allowed, rng):
        return int(allowed[rng.integers(len(allowed))])


class FunctionPolicy:
    """Adapts a plain function `(agent, history, obs) -> action` to the Policy protocol.

    When the preferred action is not authorized the smallest authorized token
    is played instead.
    """

    def __init__(self, fn: Callable[[str, AgentHistory, int], int]):
        self.fn = fn

    def act(self, agent, history, observation, allowed, rng):
        a = self.fn(agent, history, observation)
        return a if a in allowed else min(allowed)


def run_episode(
    env: DecPomdpModel,
    policy: JointPolicy,
    guard: ConstraintGuard | None = None,
    seed: int = 0,
    episode: int = 0,
) -> JointHistory:
    """Roll out one episode with simultaneous stepping.

    Every stochastic draw (environment and policy) comes from a single
    generator seeded with `seed`.
    """
    if isinstance(policy, Mapping) and set(policy) != set(env.agents):
        raise ValueError(
            f"policy agents {sorted(policy)} do not match environment agents {sorted(env.agents)}"
        )
    rng = np.random.default_rng(seed)
    histories = {a: AgentHistory(a) for a in env.agents}
    vocab = {a: tuple(env.action_space(a)) for a in env.agents}
    trackers = guard.start_episode(env) if guard is not None else None
    rewards: list[float] = []
    if env.horizon > 0:
        state, obs = env.reset(rng)
        for k in range(env.horizon):
            actions = {}
            for agent in env.agents:
                if trackers is not None:
                    allowed = trackers[agent].allowed(obs[agent], k)
                    seen = trackers[agent].project(obs[agent])
                else:
                    allowed, seen = vocab[agent], obs[agent]
                a = int(_policy_for(policy, agent).act(agent, histories[agent], seen, allowed, rng))
                if a not in allowed:
                    raise IllegalAction(agent, a, k)
                actions[agent] = a
            state, next_obs, r, done = env.step(state, actions, rng)
            for agent in env.agents:
                histories[agent].entries.append(HistoryEntry(k, obs[agent], actions[agent], r))
                if trackers is not None:
                    trackers[agent].record(obs[agent], actions[agent])
            rewards.append(r)
            obs = next_obs
            if done:
                break
    return JointHistory(
        episode=episode,
        seed=seed,
        env_id=env.env_id,
        gamma=env.gamma,
        histories=histories,
        episode_return=discounted_return(rewards, env.gamma),
    )


def evaluate_policy(
    env: DecPomdpModel,
    policy: JointPolicy,
    episodes: int,
    seed: int = 0,
    guard: ConstraintGuard | None = None,
) -> tuple[float, float]:
    """Mean and (population) standard deviation of the episode return."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = [
        run_episode(env, policy, guard, seed + i, episode=i).episode_return for i in range(episodes)
    ]
    return float(np.mean(returns)), float(np.std(returns))


# --- JSON-lines log format ----------------------------------------------------


def serialize_history(h: JointHistory) -> str:
    header = {
        "episode": h.episode,
        "seed": h.seed,
        "agents": list(h.histories),
        "env_id": h.env_id,
        "gamma": h.gamma,
    }
    lines = [json.dumps(header, sort_keys=True)]
    n = len(h)
    for k in range(n):
        for agent, ah in h.histories.items():
            e = ah.entries[k]
            lines.append(
                json.dumps(
                    {"step": e.step, "agent": agent, "obs": e.observation, "act": e.action, "reward": e.reward},
                    sort_keys=True,
                )
            )
    return "\n".join(lines) + "\n"


def parse_histories(text: str, source: str | None = None) -> list[JointHistory]:
    """Parse one or more concatenated episode logs; a header line opens an episode."""
    out: list[JointHistory] = []
    current: JointHistory | None = None
    rewards: list[float] = []

    def close():
        if current is not None:
            current.episode_return = discounted_return(rewards, current.gamma)
            out.append(current)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise HistoryParseError(lineno, f"invalid JSON ({exc.msg})", source) from None
        if not isinstance(rec, dict):
            raise HistoryParseError(lineno, "record is not an object", source)
        if "agents" in rec:
            close()
            try:
                agents = [str(a) for a in rec["agents"]]
                current = JointHistory(
                    episode=int(rec["episode"]),
                    seed=int(rec["seed"]),
                    env_id=str(rec["env_id"]),
                    gamma=float(rec["gamma"]),
                    histories={a: AgentHistory(a) for a in agents},
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise HistoryParseError(lineno, f"bad header: {exc}", source) from None
            rewards = []
            continue
        if current is None:
            raise HistoryParseError(lineno, "entry before any header", source)
        try:
            agent = rec["agent"]
            entry = HistoryEntry(int(rec["step"]), int(rec["obs"]), int(rec["act"]), float(rec["reward"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise HistoryParseError(lineno, f"bad entry: {exc}", source) from None
        if agent not in current.histories:
            raise HistoryParseError(lineno, f"unknown agent {agent!r}", source)
        ah = current.histories[agent]
        if ah.entries and entry.step <= ah.entries[-1].step:
            raise HistoryParseError(lineno, "steps must strictly increase per agent", source)
        ah.entries.append(entry)
        if agent == current.agents[0]:
            rewards.append(entry.reward)
    close()
    for h in out:
        lengths = {len(ah) for ah in h.histories.values()}
        if len(lengths) > 1:
            raise HistoryParseError(0, f"episode {h.episode}: agent histories differ in length", source)
    return out


def parse_history(text: str, source: str | None = None) -> JointHistory:
    hs = parse_histories(text, source)
    if len(hs) != 1:
        raise HistoryParseError(0, f"expected exactly one episode, found {len(hs)}", source)
    return hs[0]


def check_history(env: DecPomdpModel, h: JointHistory) -> list[str]:
    """Kernel invariants for a recorded history; returns problems found."""
    problems = []
    if set(h.histories) != set(env.agents):
        problems.append("agent set differs from environment")
        return problems
    if len({len(ah) for ah in h.histories.values()}) > 1:
        problems.append("agent histories differ in length")
    if len(h) > env.horizon:
        problems.append("history longer than horizon")
    for k in range(len(h)):
        rs = {h.histories[a].entries[k].reward for a in env.agents}
        if len(rs) != 1:
            problems.append(f"step {k}: rewards differ between agents")
    for a, ah in h.histories.items():
        obs_space, act_space = env.observation_space(a), env.action_space(a)
        for e in ah.entries:
            if e.observation not in obs_space:
                problems.append(f"{a} step {e.step}: observation {e.observation} outside vocabulary")
            if e.action not in act_space:
                problems.append(f"{a} step {e.step}: action {e.action} outside vocabulary")
    if not math.isclose(h.recompute_return(), h.episode_return, abs_tol=1e-9):
        problems.append("stored return does not match rewards")
    return problems
