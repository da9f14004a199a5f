"""Constraining the policy space: authorized action sets and satisfaction checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .decpomdp import AgentHistory, DecPomdpModel, JointHistory
from .orgmodel import (
    DeonticKind,
    OrganizationalSpecification,
    SpecParseError,
    ensure_valid,
    from_dict,
    make_spec,
)
from .relations import (
    MissionAutomaton,
    RelationRegistry,
    RolePredicate,
    TargetKind,
    compile_action_predicates,
    relation_fires,
)

MASKED = -1  # what a policy sees in place of a hidden observation


class EmptyAuthorizedSet(RuntimeError):
    def __init__(self, agent: str, step: int, role: str | None = None):
        self.agent, self.step, self.role = agent, step, role
        super().__init__(f"no authorized action for agent {agent!r} (role {role!r}) at step {step}")


class ConstraintConfigError(ValueError):
    pass


class Mode(str, Enum):
    HARD = "hard"
    OFF = "off"


@dataclass(frozen=True)
class AuthorizedSet:
    step: int
    agent: str
    allowed: tuple[int, ...]


@dataclass(frozen=True)
class OsInit:
    """Design constraints: a specification plus a static agent-to-role assignment."""

    spec: OrganizationalSpecification
    assignments: Mapping[str, str] = field(default_factory=dict)


class _FreeTracker:
    def __init__(self, vocab: tuple[int, ...]):
        self.vocab = vocab

    def allowed(self, observation: int, step: int) -> tuple[int, ...]:
        return self.vocab

    def project(self, observation: int) -> int:
        return observation

    def record(self, observation: int, action: int) -> None:
        pass


class _RoleTracker:
    """Incremental per-episode view of one agent's constraint state."""

    def __init__(self, agent: str, predicate: RolePredicate, vocab: tuple[int, ...], mask_obs: bool):
        self.agent = agent
        self.predicate = predicate
        self.base = tuple(a for a in vocab if a not in predicate.forbidden)
        self.vocab = vocab
        self.mask_obs = mask_obs
        self.states = predicate.start()
        self._cache: dict = {}

    def allowed(self, observation: int, step: int) -> tuple[int, ...]:
        demanded = self.predicate.demanded(self.states, observation, step)
        if demanded:
            allowed = tuple(a for a in self.base if a in demanded)
        else:
            allowed = self.base
        if not allowed:
            raise EmptyAuthorizedSet(self.agent, step, self.predicate.role)
        return allowed

    def project(self, observation: int) -> int:
        if self.mask_obs and observation in self.predicate.hidden_observations:
            return MASKED
        return observation

    def record(self, observation: int, action: int) -> None:
        self.states = self.predicate.advance(self.states, (observation, action))


class ConstraintGuard:
    """Per-agent authorized action computer compiled from an os_init and a registry."""

    def __init__(
        self,
        os_init: OsInit,
        registry: RelationRegistry,
        vocabularies: Mapping[str, Iterable[int]],
        mode: Mode | str = Mode.HARD,
        mask_observations: bool = True,
    ):
        ensure_valid(os_init.spec)
        for agent, role in os_init.assignments.items():
            if role not in os_init.spec.structural.roles:
                raise ConstraintConfigError(f"agent {agent!r} assigned to undeclared role {role!r}")
        self.os_init = os_init
        self.registry = registry
        self.mode = Mode(mode)
        self.mask_observations = mask_observations
        self.vocabularies = {a: tuple(v) for a, v in vocabularies.items()}
        self.predicates = compile_action_predicates(registry, os_init.spec)

    @classmethod
    def for_env(cls, env: DecPomdpModel, os_init: OsInit, registry: RelationRegistry, **kw) -> ConstraintGuard:
        unknown = set(os_init.assignments) - set(env.agents)
        if unknown:
            raise ConstraintConfigError(f"assignments name unknown agents {sorted(unknown)}")
        return cls(os_init, registry, {a: env.action_space(a) for a in env.agents}, **kw)

    def role_of(self, agent: str) -> str | None:
        return self.os_init.assignments.get(agent)

    def tracker(self, agent: str):
        role = self.role_of(agent)
        vocab = self.vocabularies[agent]
        if self.mode is Mode.OFF or role is None:
            return _FreeTracker(vocab)
        return _RoleTracker(agent, self.predicates[role], vocab, self.mask_observations)

    def start_episode(self, env: DecPomdpModel | None = None) -> dict:
        agents = env.agents if env is not None else tuple(self.vocabularies)
        return {a: self.tracker(a) for a in agents}

    def authorized_actions(self, agent: str, history: AgentHistory, observation: int) -> AuthorizedSet:
        t = self.tracker(agent)
        for e in history.entries:
            t.record(e.observation, e.action)
        step = len(history.entries)
        return AuthorizedSet(step, agent, t.allowed(observation, step))


def authorized_actions(guard: ConstraintGuard, agent: str, history: AgentHistory, observation: int) -> AuthorizedSet:
    return guard.authorized_actions(agent, history, observation)


# --- os_init files ------------------------------------------------------------


def os_init_from_dict(data: Mapping) -> OsInit:
    """Accept either {"organizational_specifications": ..., "policy_specs_constr": ...}
    or a bare policy_specs_constr mapping {agent: {"structural_specifications": {"roles": [...]}}}.
    """
    if not isinstance(data, Mapping):
        raise SpecParseError("os_init must be a JSON object")
    if "policy_specs_constr" in data or "organizational_specifications" in data:
        constr = data.get("policy_specs_constr", {}) or {}
        spec = from_dict(data.get("organizational_specifications", {}) or {})
    else:
        constr, spec = data, None
    assignments = {}
    for agent, body in constr.items():
        try:
            roles = body["structural_specifications"]["roles"]
        except (KeyError, TypeError):
            raise SpecParseError(f"agent {agent!r}: expected structural_specifications.roles") from None
        roles = [roles] if isinstance(roles, str) else list(roles)
        if len(roles) != 1:
            raise SpecParseError(f"agent {agent!r}: exactly one role per agent is supported")
        assignments[str(agent)] = str(roles[0])
    if spec is None:
        spec = make_spec(roles=set(assignments.values()))
    return OsInit(spec, assignments)


def os_init_to_dict(os_init: OsInit) -> dict:
    from .orgmodel import to_dict

    return {
        "organizational_specifications": to_dict(os_init.spec),
        "policy_specs_constr": {
            a: {"structural_specifications": {"roles": [r]}} for a, r in sorted(os_init.assignments.items())
        },
    }


def load_os_init(text: str) -> OsInit:
    try:
        return os_init_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise SpecParseError(f"line {exc.lineno}: {exc.msg}") from None


# --- satisfaction -------------------------------------------------------------


@dataclass(frozen=True)
class Counterexample:
    episode: int | None
    agent: str | None
    step: int | None


@dataclass(frozen=True)
class SatisfactionItem:
    kind: str  # forbidden_action | obligation | permission | role_cardinality
    subject: str
    satisfied: bool
    violations: int = 0
    counterexample: Counterexample | None = None
    detail: str = ""


@dataclass(frozen=True)
class SatisfactionReport:
    items: tuple[SatisfactionItem, ...]

    @property
    def satisfied(self) -> bool:
        return all(i.satisfied for i in self.items)

    def count(self, kind: str) -> int:
        return sum(i.violations for i in self.items if i.kind == kind)

    def to_dict(self) -> dict:
        return {
            "satisfied": self.satisfied,
            "items": [
                {
                    "kind": i.kind,
                    "subject": i.subject,
                    "satisfied": i.satisfied,
                    "violations": i.violations,
                    "counterexample": None
                    if i.counterexample is None
                    else {
                        "episode": i.counterexample.episode,
                        "agent": i.counterexample.agent,
                        "step": i.counterexample.step,
                    },
                    "detail": i.detail,
                }
                for i in self.items
            ],
        }


def _committed_steps(automaton: MissionAutomaton, h: AgentHistory) -> list[int]:
    """Steps at whose end the mission pattern matches the history prefix."""
    s = automaton.start
    out = []
    for e in h.entries:
        s = automaton.run((e.observation, e.action), s)
        if automaton.accepting(s):
            out.append(e.step)
    return out


def check_satisfaction(
    os_init: OsInit, joint_histories: list[JointHistory], registry: RelationRegistry
) -> SatisfactionReport:
    spec = os_init.spec
    predicates = compile_action_predicates(registry, spec)
    items: list[SatisfactionItem] = []

    # forbidden actions, per assigned agent
    for agent, role in sorted(os_init.assignments.items()):
        forbidden = predicates[role].forbidden
        count, first = 0, None
        for jh in joint_histories:
            h = jh.histories.get(agent)
            if h is None:
                continue
            for e in h.entries:
                if e.action in forbidden:
                    count += 1
                    first = first or Counterexample(jh.episode, agent, e.step)
        items.append(
            SatisfactionItem("forbidden_action", f"{agent} as {role}", count == 0, count, first)
        )

    for rel in sorted(spec.deontic):
        subject = f"{rel.kind.value}({rel.role},{rel.mission})"
        agents = sorted(a for a, r in os_init.assignments.items() if r == rel.role)
        pats = [r.pattern for r in registry.for_target(TargetKind.MISSION, rel.mission) if r.pattern]
        token_rels = [r for r in registry.for_target(TargetKind.MISSION, rel.mission) if not r.pattern]
        auto = MissionAutomaton(pats) if pats else None
        count, first, evidence = 0, None, 0
        for jh in joint_histories:
            for agent in agents:
                h = jh.histories.get(agent)
                if h is None:
                    continue
                steps = _committed_steps(auto, h) if auto else []
                for tr in token_rels:
                    ev = relation_fires(tr, h)
                    if ev:
                        steps += [h.entries[i].step for i in ev]
                in_tc = [k for k in steps if rel.active_at(k)]
                evidence += bool(in_tc)
                if rel.kind is DeonticKind.OBLIGATION and auto is not None:
                    s = auto.start
                    for e in h.entries:
                        if rel.active_at(e.step):
                            d = auto.demand(auto.step(s, e.observation))
                            if d and e.action not in d:
                                count += 1
                                first = first or Counterexample(jh.episode, agent, e.step)
                        s = auto.run((e.observation, e.action), s)
                elif rel.kind is DeonticKind.PERMISSION and rel.time_constraint:
                    outside = [k for k in steps if not rel.active_at(k)]
                    if outside:
                        count += len(outside)
                        first = first or Counterexample(jh.episode, agent, outside[0])
        if rel.kind is DeonticKind.OBLIGATION:
            ok = count == 0 and evidence > 0
            detail = f"{evidence} agent-episodes with commitment evidence"
            if evidence == 0:
                detail = "no evidence of commitment"
        else:
            ok = count == 0
            detail = f"{evidence} agent-episodes with commitment evidence"
        items.append(SatisfactionItem(rel.kind.value, subject, ok, count, first, detail))

    role_rels = {r: registry.for_target(TargetKind.ROLE, r) for r in spec.structural.roles}
    for role, card in sorted(spec.structural.role_cardinalities.items()):
        count, first = 0, None
        for jh in joint_histories:
            n = 0
            for agent, h in jh.histories.items():
                assigned = os_init.assignments.get(agent)
                if assigned is not None:
                    n += assigned == role
                elif any(relation_fires(rel, h) is not None for rel in role_rels.get(role, [])):
                    n += 1
            if not card.contains(n):
                count += 1
                first = first or Counterexample(jh.episode, None, None)
        hi = "inf" if card.max is None else card.max
        items.append(
            SatisfactionItem(
                "role_cardinality", f"{role} [{card.min},{hi}]", count == 0, count, first,
                f"{count} episodes outside the cardinality",
            )
        )
    return SatisfactionReport(tuple(items))
