"""Independent tabular Q-learning under guard masking.

Each agent keeps a sparse table keyed by a length-1 memory context
(observation as seen by the agent, its own previous action).  Actions are
only ever chosen, and values only ever written, inside the authorized set
the guard computes for that step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .constraints import ConstraintGuard, EmptyAuthorizedSet
from .decpomdp import AgentHistory, DecPomdpModel, JointHistory, RandomPolicy, evaluate_policy, run_episode

START = -1  # "previous action" slot before the first step

Context = tuple[int, int]


class NonFiniteValue(ArithmeticError):
    pass


class DegenerateBaseline(ValueError):
    pass


class Case(str, Enum):
    NTS = "NTS"
    PTS = "PTS"
    FTS = "FTS"


@dataclass(frozen=True)
class TrainerConfig:
    iterations: int = 100
    episodes_per_iteration: int = 10
    seed: int = 0
    inference_period: int = 10
    reward_threshold: float | None = None
    case: Case = Case.NTS
    alpha: float = 0.1
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.6
    eval_episodes: int | None = None  # defaults to episodes_per_iteration

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.episodes_per_iteration < 1:
            raise ValueError("episodes_per_iteration must be >= 1")
        if self.inference_period < 1:
            raise ValueError("inference_period must be >= 1")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        object.__setattr__(self, "case", Case(self.case))

    def epsilon(self, iteration: int) -> float:
        """Exploration rate for a 0-based iteration: linear decay, then flat."""
        span = self.epsilon_decay_fraction * self.iterations
        if span <= 0:
            return self.epsilon_end
        frac = min(iteration / span, 1.0)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)

    @property
    def n_eval(self) -> int:
        return self.episodes_per_iteration if self.eval_episodes is None else self.eval_episodes

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["case"] = self.case.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> TrainerConfig:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown trainer config fields {sorted(unknown)}")
        return cls(**data)


class TabularPolicy:
    """Per-agent Q-tables over (observation, last own action) contexts.

    Acting greedily by default; `epsilon` > 0 turns on exploration.  The
    agent-name mapping lets a policy trained on one environment variant act
    in another one with a different agent set.
    """

    def __init__(self, agents: Sequence[str], gamma: float, alpha: float = 0.1):
        self.tables: dict[str, dict[Context, dict[int, float]]] = {a: {} for a in agents}
        self.gamma = gamma
        self.alpha = alpha
        self.epsilon = 0.0
        self.learning = False
        self.agent_map: dict[str, str] = {}
        self._pending: dict[str, tuple[Context, int]] = {}

    @staticmethod
    def context(history: AgentHistory, observation: int) -> Context:
        last = history.last_action()
        return (int(observation), START if last is None else int(last))

    def values(self, agent: str, ctx: Context) -> dict[int, float]:
        return self.tables[self.agent_map.get(agent, agent)].get(ctx, {})

    def greedy(self, agent: str, ctx: Context, allowed: Sequence[int], rng: np.random.Generator) -> int:
        q = self.values(agent, ctx)
        best = max(q.get(a, 0.0) for a in allowed)
        ties = [a for a in allowed if q.get(a, 0.0) == best]
        return int(ties[0] if len(ties) == 1 else ties[rng.integers(len(ties))])

    def _update(self, agent: str, target: float) -> None:
        ctx, action = self._pending.pop(agent)
        row = self.tables[agent].setdefault(ctx, {})
        old = row.get(action, 0.0)
        new = old + self.alpha * (target - old)
        if not math.isfinite(new):
            raise NonFiniteValue(f"Q[{agent}][{ctx}][{action}] became {new}")
        row[action] = new

    def act(self, agent, history, observation, allowed, rng):
        ctx = self.context(history, observation)
        if self.learning and agent in self._pending:
            q = self.tables[agent].get(ctx, {})
            bootstrap = max(q.get(a, 0.0) for a in allowed)
            self._update(agent, history.entries[-1].reward + self.gamma * bootstrap)
        if self.epsilon > 0 and rng.random() < self.epsilon:
            a = int(allowed[rng.integers(len(allowed))])
        else:
            a = self.greedy(agent, ctx, allowed, rng)
        if self.learning:
            self._pending[agent] = (ctx, a)
        return a

    def finish_episode(self, jh: JointHistory) -> None:
        """Close the episode: the last step of every agent gets a terminal target."""
        for agent in list(self._pending):
            self._update(agent, jh.histories[agent].entries[-1].reward)
        self._pending.clear()

    def for_env(self, env: DecPomdpModel) -> TabularPolicy:
        """A read-only view whose agents are mapped onto the trained ones."""
        view = TabularPolicy([], self.gamma, self.alpha)
        view.tables = self.tables
        known = list(self.tables)
        for agent in env.agents:
            mapped = agent if agent in self.tables else env.equivalent_agent(agent, known)
            if mapped is None:
                raise ValueError(f"no trained agent stands in for {agent!r}")
            view.agent_map[agent] = mapped
        return view

    def n_entries(self) -> int:
        return sum(len(row) for t in self.tables.values() for row in t.values())

    def to_dict(self) -> dict:
        return {
            agent: [
                {"obs": ctx[0], "last": ctx[1], "q": {str(a): v for a, v in sorted(row.items())}}
                for ctx, row in sorted(table.items())
            ]
            for agent, table in sorted(self.tables.items())
        }


@dataclass
class TrainingTrace:
    case: Case
    seed: int
    threshold: float | None
    returns: list[float] = field(default_factory=list)
    snapshots: list[tuple[int, object]] = field(default_factory=list)

    @property
    def convergence(self) -> int | None:
        if self.threshold is None:
            return None
        return convergence_iteration(self.returns, self.threshold)

    def rows(self) -> list[tuple[int, float, str, int]]:
        return [(i + 1, r, self.case.value, self.seed) for i, r in enumerate(self.returns)]


DEBOUNCE = 3


def convergence_iteration(trace: TrainingTrace | Sequence[float], s: float) -> int | None:
    """First 1-based iteration from which the mean return stays >= s for DEBOUNCE iterations."""
    returns = trace.returns if isinstance(trace, TrainingTrace) else list(trace)
    if not returns:
        raise ValueError("empty trace")
    for i in range(len(returns) - DEBOUNCE + 1):
        if all(r >= s for r in returns[i : i + DEBOUNCE]):
            return i + 1
    return None


def _train_seed(config: TrainerConfig, iteration: int, j: int) -> int:
    return (config.seed * 1_000_003 + iteration) * 1_009 + j


def _eval_seed(config: TrainerConfig, j: int) -> int:
    return 2_000_000_000 + config.seed * 10_007 + j


def train(
    env: DecPomdpModel,
    guard: ConstraintGuard | None,
    config: TrainerConfig,
    snapshot: Callable[[list[JointHistory]], object] | None = None,
) -> tuple[TabularPolicy, TrainingTrace]:
    """Train independent Q-learners; evaluate greedily after every iteration.

    Evaluation uses the same fixed episode seeds at every iteration, so the
    learning curve reflects the policy rather than seed noise.  When
    `snapshot` is given it is called every `inference_period` iterations on
    the evaluation histories and its result stored in the trace.
    """
    if config.case is Case.FTS:
        raise ValueError("FTS is a scripted reference: evaluate it, don't train it")
    policy = TabularPolicy(env.agents, env.gamma, config.alpha)
    trace = TrainingTrace(config.case, config.seed, config.reward_threshold)
    for it in range(config.iterations):
        policy.learning, policy.epsilon = True, config.epsilon(it)
        for j in range(config.episodes_per_iteration):
            jh = _run(env, policy, guard, _train_seed(config, it, j), j)
            policy.finish_episode(jh)
        policy.learning, policy.epsilon = False, 0.0
        evals = [_run(env, policy, guard, _eval_seed(config, j), j) for j in range(config.n_eval)]
        trace.returns.append(float(np.mean([h.episode_return for h in evals])))
        if snapshot is not None and (it + 1) % config.inference_period == 0:
            trace.snapshots.append((it + 1, snapshot(evals)))
    return policy, trace


def _run(env, policy, guard, seed, episode) -> JointHistory:
    try:
        return run_episode(env, policy, guard, seed=seed, episode=episode)
    except EmptyAuthorizedSet as exc:
        exc.args = (f"{exc.args[0]} (episode seed {seed})",)
        raise


def evaluation_seeds(config: TrainerConfig) -> list[int]:
    return [_eval_seed(config, j) for j in range(config.n_eval)]


@dataclass(frozen=True)
class StabilityResult:
    value: float
    mean: float
    max: float
    returns: tuple[float, ...]
    baselines: tuple[float, ...]


def performance_stability(
    policy,
    variants: Sequence[DecPomdpModel],
    episodes: int,
    seed: int = 0,
    guard_for: Callable[[DecPomdpModel], ConstraintGuard | None] | None = None,
) -> StabilityResult:
    """Average over maximum of baseline-shifted returns across environment variants.

    Each variant's return is shifted by the uniform-random policy's return
    on that variant, so a policy no better than chance scores zero.  A policy
    with a `for_env(env)` method is re-bound to every variant.
    """
    if len(variants) < 2:
        raise ValueError("performance stability needs at least two variants")
    returns, baselines = [], []
    for env in variants:
        guard = guard_for(env) if guard_for is not None else None
        pol = policy.for_env(env) if hasattr(policy, "for_env") else policy
        returns.append(evaluate_policy(env, pol, episodes, seed, guard)[0])
        baselines.append(evaluate_policy(env, RandomPolicy(), episodes, seed)[0])
    shifted = [r - b for r, b in zip(returns, baselines)]
    top = max(shifted)
    if top <= 0:
        raise DegenerateBaseline(f"no variant beats the random baseline (best shifted return {top})")
    mean = float(np.mean(shifted))
    return StabilityResult(mean / top, mean, top, tuple(returns), tuple(baselines))


def stability_from_returns(shifted: Sequence[float]) -> float:
    """The ratio alone, for already-normalized returns."""
    top = max(shifted)
    if top <= 0:
        raise DegenerateBaseline(f"best normalized return {top} is not positive")
    return float(np.mean(shifted)) / top


def with_case(config: TrainerConfig, case: Case | str) -> TrainerConfig:
    return replace(config, case=Case(case))
