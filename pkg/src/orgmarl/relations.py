"""Relations between history fragments and organizational specification elements.

Two kinds of matcher are supported:

* token rules, in the spirit of ``{"14": [74, 0]}``: the history contains
  observation 14 and one of the actions 74 or 0;
* history patterns over the flattened token stream ``w0, a0, w1, a1, ...``.

Pattern syntax: a literal token (integer or alias label), ``.`` for any
token, and the postfix quantifiers ``*``, ``*?`` and ``?``.  Tokens are
separated by spaces or commas; ``.*14.*?89`` needs no separators because
``.`` and quantifiers delimit themselves.  Matching is anchored at both ends.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .decpomdp import AgentHistory
from .orgmodel import LinkKind, OrganizationalSpecification


class PatternParseError(ValueError):
    pass


class RegistryError(ValueError):
    pass


class UncoveredRole(ValueError):
    def __init__(self, role: str):
        self.role = role
        super().__init__(f"role {role!r} has no relation in the registry")


# --- patterns -----------------------------------------------------------------

ANY = None  # atom token meaning "any single token"

ONE, STAR, STAR_LAZY, OPT, OPT_LAZY = "1", "*", "*?", "?", "??"


@dataclass(frozen=True)
class Atom:
    token: int | None  # None is the `.` wildcard
    quant: str = ONE

    def matches(self, t: int) -> bool:
        return self.token is None or self.token == t

    @property
    def repeats(self) -> bool:
        return self.quant in (STAR, STAR_LAZY)

    @property
    def optional(self) -> bool:
        return self.quant != ONE


_LEX = re.compile(r"\s*(?:(?P<dot>\.)|(?P<q>\*\?|\?\?|\*|\?)|(?P<tok>-?\d+|[A-Za-z_][\w\-]*)|(?P<sep>,)|(?P<bad>\S))")


@dataclass(frozen=True)
class HistoryPattern:
    source: str
    atoms: tuple[Atom, ...]

    @property
    def literals(self) -> frozenset[int]:
        return frozenset(a.token for a in self.atoms if a.token is not None)

    def __str__(self):
        return self.source


def parse_pattern(source: str, aliases: Mapping[str, int] | None = None) -> HistoryPattern:
    aliases = aliases or {}
    atoms: list[Atom] = []
    pos = 0
    text = source.rstrip()
    while pos < len(text):
        m = _LEX.match(text, pos)
        if m is None:  # only trailing whitespace left
            break
        pos = m.end()
        if m.group("bad"):
            raise PatternParseError(f"unexpected character {m.group('bad')!r} at {m.start('bad')}")
        if m.group("sep"):
            continue
        if m.group("q"):
            q = m.group("q")
            if not atoms or atoms[-1].quant != ONE:
                raise PatternParseError(f"quantifier {q!r} at {m.start('q')} has nothing to repeat")
            atoms[-1] = Atom(atoms[-1].token, q)
            continue
        if m.group("dot"):
            atoms.append(Atom(ANY))
            continue
        tok = m.group("tok")
        if re.fullmatch(r"-?\d+", tok):
            atoms.append(Atom(int(tok)))
        elif tok in aliases:
            atoms.append(Atom(int(aliases[tok])))
        else:
            raise PatternParseError(f"unknown token label {tok!r}")
    return HistoryPattern(source, tuple(atoms))


def _closure(atoms: Sequence[Atom], positions: Iterable[int]) -> frozenset[int]:
    out = set()
    stack = list(positions)
    while stack:
        p = stack.pop()
        if p in out:
            continue
        out.add(p)
        if p < len(atoms) and atoms[p].optional:
            stack.append(p + 1)
    return frozenset(out)


def _advance(atoms: Sequence[Atom], state: frozenset[int], t: int | None) -> frozenset[int]:
    nxt = []
    for p in state:
        if p < len(atoms):
            a = atoms[p]
            if a.token is None or (t is not None and a.token == t):
                nxt.append(p if a.repeats else p + 1)
    return _closure(atoms, nxt)


def match_pattern(pattern: HistoryPattern | str, sequence: Sequence[int]) -> bool:
    """Whole-sequence match via position-set (Thompson) simulation."""
    if isinstance(pattern, str):
        pattern = parse_pattern(pattern)
    atoms = pattern.atoms
    state = _closure(atoms, [0])
    for t in sequence:
        state = _advance(atoms, state, t)
        if not state:
            return False
    return len(atoms) in state


def match_path(pattern: HistoryPattern, sequence: Sequence[int]) -> list[tuple[int, int]] | None:
    """Preferred (greedy/lazy-respecting) match as (sequence index, atom index) pairs.

    Returns None when there is no match.  Failures are memoized on
    (atom, position) so the search stays polynomial.
    """
    atoms, n = pattern.atoms, len(sequence)
    failed: set[tuple[int, int]] = set()
    path: list[tuple[int, int]] = []

    def go(ai: int, si: int) -> bool:
        if (ai, si) in failed:
            return False
        if ai == len(atoms):
            if si == n:
                return True
            failed.add((ai, si))
            return False
        a = atoms[ai]
        can_take = si < n and a.matches(sequence[si])
        if a.quant == ONE:
            options = [("take", ai + 1)] if can_take else []
        elif a.repeats:
            take = [("take", ai)] if can_take else []
            options = take + [("skip", ai + 1)] if a.quant == STAR else [("skip", ai + 1)] + take
        else:
            take = [("take", ai + 1)] if can_take else []
            options = take + [("skip", ai + 1)] if a.quant == OPT else [("skip", ai + 1)] + take
        for kind, nxt in options:
            if kind == "take":
                path.append((si, ai))
                if go(nxt, si + 1):
                    return True
                path.pop()
            elif go(nxt, si):
                return True
        failed.add((ai, si))
        return False

    return list(path) if go(0, 0) else None


class MissionAutomaton:
    """Lazily determinized union of several patterns.

    NFA states are sets of (pattern index, position); each distinct set is
    interned as a small integer, which is what callers hold.  Tokens that do
    not occur as literals in any pattern behave identically and share one
    key, so the memo tables stay small.
    """

    OTHER = object()

    def __init__(self, patterns: Sequence[HistoryPattern]):
        self.patterns = tuple(patterns)
        self.literals = frozenset().union(*(p.literals for p in self.patterns)) if patterns else frozenset()
        self._ids: dict[frozenset, int] = {}
        self._sets: list[frozenset] = []
        self._accepting: list[bool] = []
        self._delta: dict[tuple[int, Any], int] = {}
        self._demand: dict[int, frozenset[int] | None] = {}
        self._closure_cache: dict[int, list[frozenset]] = {}
        self.start = self._intern(
            frozenset((i, p) for i, pat in enumerate(self.patterns) for p in _closure(pat.atoms, [0]))
        )

    def _intern(self, nfa_state: frozenset) -> int:
        sid = self._ids.get(nfa_state)
        if sid is None:
            sid = self._ids[nfa_state] = len(self._sets)
            self._sets.append(nfa_state)
            self._accepting.append(any(p == len(self.patterns[i].atoms) for i, p in nfa_state))
        return sid

    def positions(self, state: int) -> frozenset:
        """The (pattern index, position) pairs behind a state id."""
        return self._sets[state]

    def _closures(self, i: int) -> list[frozenset]:
        cl = self._closure_cache.get(i)
        if cl is None:
            atoms = self.patterns[i].atoms
            cl = self._closure_cache[i] = [
                frozenset((i, q) for q in _closure(atoms, [p])) for p in range(len(atoms) + 1)
            ]
        return cl

    def step(self, state: int, t: int) -> int:
        key = t if t in self.literals else self.OTHER
        hit = self._delta.get((state, key))
        if hit is None:
            tok = None if key is self.OTHER else t
            out: set = set()
            for i, p in self._sets[state]:
                atoms = self.patterns[i].atoms
                if p == len(atoms):
                    continue
                a = atoms[p]
                if a.token is None or (tok is not None and a.token == tok):
                    out |= self._closures(i)[p if a.repeats else p + 1]
            hit = self._delta[(state, key)] = self._intern(frozenset(out))
        return hit

    def accepting(self, state: int) -> bool:
        return self._accepting[state]

    def dead(self, state: int) -> bool:
        return not self._sets[state]

    def run(self, tokens: Iterable[int], state: int | None = None) -> int:
        s = self.start if state is None else state
        for t in tokens:
            s = self.step(s, t)
        return s

    def demand(self, state: int) -> frozenset[int] | None:
        """Tokens whose consumption next would complete a match.

        None means no demand: either nothing completes a match, or some
        token outside the literal set does (so almost anything goes).
        """
        if state in self._demand:
            return self._demand[state]
        hits: set[int] = set()
        result: frozenset[int] | None = None
        for i, p in self._sets[state]:
            atoms = self.patterns[i].atoms
            if p >= len(atoms):
                continue
            a = atoms[p]
            if len(atoms) not in _closure(atoms, [p if a.repeats else p + 1]):
                continue
            if a.token is None:
                hits = set()
                break
            hits.add(a.token)
        if hits:
            result = frozenset(hits)
        self._demand[state] = result
        return result


# --- registry -----------------------------------------------------------------


class TargetKind(str, Enum):
    ROLE = "role"
    LINK = "link"
    GOAL = "goal"
    MISSION = "mission"


@dataclass(frozen=True, order=True)
class SpecRef:
    kind: TargetKind
    name: str  # links use "source,dest,kind"

    def __str__(self):
        return f"{self.kind.value}: {self.name}"

    @classmethod
    def link(cls, source: str, dest: str, kind: LinkKind | str) -> SpecRef:
        return cls(TargetKind.LINK, f"{source},{dest},{LinkKind(kind).value}")


@dataclass(frozen=True)
class TokenRule:
    observation: int | None  # None: any observation
    actions: frozenset[int]

    def fires(self, observations: set[int], actions: set[int]) -> bool:
        seen = bool(observations) if self.observation is None else self.observation in observations
        return seen and not self.actions.isdisjoint(actions)


@dataclass(frozen=True)
class Relation:
    target: SpecRef
    rules: tuple[TokenRule, ...] = ()
    pattern: HistoryPattern | None = None

    @property
    def is_pattern(self) -> bool:
        return self.pattern is not None

    def actions(self) -> frozenset[int]:
        if self.pattern is not None:
            return self.pattern.literals
        return frozenset().union(*(r.actions for r in self.rules))

    def observations(self) -> frozenset[int]:
        if self.pattern is not None:
            return self.pattern.literals
        return frozenset(r.observation for r in self.rules if r.observation is not None)


@dataclass(frozen=True)
class MessageSpec:
    """A message channel: send actions, the observations that receive it, and compliant replies."""

    name: str
    send: frozenset[int]
    receive: frozenset[int]
    comply: frozenset[int] = frozenset()


@dataclass
class RelationRegistry:
    relations: list[Relation] = field(default_factory=list)
    aliases: dict[str, int] = field(default_factory=dict)
    messages: list[MessageSpec] = field(default_factory=list)
    copresence: frozenset[int] = frozenset()

    def __post_init__(self):
        tokens = list(self.aliases.values())
        if len(set(tokens)) != len(tokens):
            raise RegistryError("alias table is not bijective")

    def label(self, token: int) -> str:
        for k, v in self.aliases.items():
            if v == token:
                return k
        return str(token)

    def for_target(self, kind: TargetKind, name: str | None = None) -> list[Relation]:
        return [
            r for r in self.relations if r.target.kind is kind and (name is None or r.target.name == name)
        ]

    def roles(self) -> list[str]:
        return sorted({r.target.name for r in self.relations if r.target.kind is TargetKind.ROLE})

    def missions(self) -> list[str]:
        return sorted({r.target.name for r in self.relations if r.target.kind is TargetKind.MISSION})


_KIND_ABBREV = {"aut": "authority", "com": "communication", "acq": "acquaintance"}


def _parse_link_key(key: str) -> SpecRef:
    parts = [p.strip() for p in key.strip().strip("()").split(",")]
    if len(parts) != 3:
        raise RegistryError(f"link key {key!r} must be (source,dest,kind)")
    kind = _KIND_ABBREV.get(parts[2], parts[2])
    try:
        return SpecRef.link(parts[0], parts[1], kind)
    except ValueError:
        raise RegistryError(f"unknown link kind in {key!r}") from None


def _resolve(tok: Any, aliases: Mapping[str, int]) -> int:
    if isinstance(tok, bool):
        raise RegistryError(f"bad token {tok!r}")
    if isinstance(tok, int):
        return tok
    s = str(tok).strip()
    if re.fullmatch(r"-?\d+", s):
        return int(s)
    if s in aliases:
        return int(aliases[s])
    raise RegistryError(f"unknown token label {tok!r}")


def _parse_matchers(target: SpecRef, spec: Any, aliases: Mapping[str, int]) -> list[Relation]:
    items = spec if isinstance(spec, list) else [spec]
    out = []
    for item in items:
        if isinstance(item, str):
            try:
                out.append(Relation(target, pattern=parse_pattern(item, aliases)))
            except PatternParseError as exc:
                raise RegistryError(f"{target}: {exc}") from None
        elif isinstance(item, dict):
            rules = []
            for obs, acts in item.items():
                o = None if obs == "*" else _resolve(obs, aliases)
                acts = acts if isinstance(acts, list) else [acts]
                rules.append(TokenRule(o, frozenset(_resolve(a, aliases) for a in acts)))
            out.append(Relation(target, rules=tuple(rules)))
        else:
            raise RegistryError(f"{target}: matcher must be a pattern string or a token rule object")
    return out


def registry_from_dict(data: Mapping) -> RelationRegistry:
    aliases = {str(k): int(v) for k, v in data.get("aliases", {}).items()}
    relations: list[Relation] = []
    st = data.get("structural_specifications", {}) or {}
    fn = data.get("functional_specifications", {}) or {}
    for name, spec in sorted((st.get("roles") or {}).items()):
        relations += _parse_matchers(SpecRef(TargetKind.ROLE, name), spec, aliases)
    for key, spec in sorted((st.get("links") or {}).items()):
        relations += _parse_matchers(_parse_link_key(key), spec, aliases)
    for name, spec in sorted((fn.get("goals") or {}).items()):
        relations += _parse_matchers(SpecRef(TargetKind.GOAL, name), spec, aliases)
    for name, spec in sorted((fn.get("missions") or {}).items()):
        relations += _parse_matchers(SpecRef(TargetKind.MISSION, name), spec, aliases)
    messages = [
        MessageSpec(
            m["name"],
            frozenset(_resolve(t, aliases) for t in m["send"]),
            frozenset(_resolve(t, aliases) for t in m["receive"]),
            frozenset(_resolve(t, aliases) for t in m.get("comply", [])),
        )
        for m in data.get("messages", [])
    ]
    copresence = frozenset(_resolve(t, aliases) for t in data.get("copresence", []))
    return RelationRegistry(relations, aliases, messages, copresence)


def _matchers_to_json(rels: list[Relation]) -> Any:
    items: list[Any] = []
    for r in rels:
        if r.pattern is not None:
            items.append(r.pattern.source)
        else:
            d = {}
            for rule in r.rules:
                key = "*" if rule.observation is None else str(rule.observation)
                acts = sorted(rule.actions)
                d[key] = acts[0] if len(acts) == 1 else acts
            items.append(d)
    return items[0] if len(items) == 1 else items


def registry_to_dict(reg: RelationRegistry) -> dict:
    groups: dict[SpecRef, list[Relation]] = {}
    for r in reg.relations:
        groups.setdefault(r.target, []).append(r)
    st: dict[str, dict] = {"roles": {}, "links": {}}
    fn: dict[str, dict] = {"goals": {}, "missions": {}}
    for ref, rels in sorted(groups.items()):
        body = _matchers_to_json(rels)
        if ref.kind is TargetKind.ROLE:
            st["roles"][ref.name] = body
        elif ref.kind is TargetKind.LINK:
            s, d, k = ref.name.split(",")
            st["links"][f"({s},{d},{k})"] = body
        elif ref.kind is TargetKind.GOAL:
            fn["goals"][ref.name] = body
        else:
            fn["missions"][ref.name] = body
    return {
        "aliases": dict(sorted(reg.aliases.items())),
        "structural_specifications": st,
        "functional_specifications": fn,
        "messages": [
            {"name": m.name, "send": sorted(m.send), "receive": sorted(m.receive), "comply": sorted(m.comply)}
            for m in reg.messages
        ],
        "copresence": sorted(reg.copresence),
    }


def load_registry(text: str) -> RelationRegistry:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RegistryError(f"line {exc.lineno}: {exc.msg}") from None
    return registry_from_dict(data)


def dump_registry(reg: RelationRegistry) -> str:
    return json.dumps(registry_to_dict(reg), sort_keys=True, indent=1) + "\n"


# --- labeling -----------------------------------------------------------------


def relation_fires(rel: Relation, h: AgentHistory) -> tuple[int, ...] | None:
    """Evidence entry indices when the relation fires on `h`, else None."""
    if rel.pattern is not None:
        flat = h.flatten()
        if not rel.pattern.literals <= set(flat):
            return None  # some literal never occurs, so the pattern cannot match
        path = match_path(rel.pattern, flat)
        if path is None:
            return None
        return tuple(sorted({si // 2 for si, ai in path if rel.pattern.atoms[ai].token is not None}))
    obs = set(h.observations())
    acts = set(h.actions())
    evidence: set[int] = set()
    fired = False
    for rule in rel.rules:
        if rule.fires(obs, acts):
            fired = True
            for i, e in enumerate(h.entries):
                if e.action in rule.actions or (rule.observation is not None and e.observation == rule.observation):
                    evidence.add(i)
    return tuple(sorted(evidence)) if fired else None


def label_history(registry: RelationRegistry, h: AgentHistory) -> dict[SpecRef, tuple[int, ...]]:
    """Specification elements whose relations fire on `h`, with evidence indices."""
    out: dict[SpecRef, set[int]] = {}
    if not h.entries:
        return {}
    for rel in registry.relations:
        ev = relation_fires(rel, h)
        if ev is not None:
            out.setdefault(rel.target, set()).update(ev)
    return {k: tuple(sorted(v)) for k, v in sorted(out.items())}


# --- compiled action predicates -----------------------------------------------


@dataclass
class ObligationCheck:
    mission: str
    time_constraint: tuple[tuple[int, int], ...]
    automaton: MissionAutomaton

    def active_at(self, step: int) -> bool:
        return not self.time_constraint or any(a <= step <= b for a, b in self.time_constraint)


@dataclass
class RolePredicate:
    """Per-role constraint: (history, observation) -> (required, forbidden)."""

    role: str
    forbidden: frozenset[int]
    hidden_observations: frozenset[int]
    obligations: list[ObligationCheck]

    def start(self) -> list[int]:
        return [ob.automaton.start for ob in self.obligations]

    def advance(self, states: list[int], tokens: Sequence[int]) -> list[int]:
        return [ob.automaton.run(tokens, s) for ob, s in zip(self.obligations, states)]

    def demanded(self, states: list[int], observation: int, step: int) -> frozenset[int]:
        """Everything active obligations demand, before forbidden actions are removed."""
        req: set[int] = set()
        for ob, s in zip(self.obligations, states):
            if not ob.active_at(step):
                continue
            d = ob.automaton.demand(ob.automaton.step(s, observation))
            if d:
                req |= d
        return frozenset(req)

    def __call__(self, history: AgentHistory, observation: int, step: int | None = None):
        states = self.advance(self.start(), history.flatten())
        step = len(history.entries) if step is None else step
        return self.demanded(states, observation, step) - self.forbidden, self.forbidden


def compile_action_predicates(
    registry: RelationRegistry, spec_subset: OrganizationalSpecification
) -> dict[str, RolePredicate]:
    """Compile one predicate per role named in `spec_subset`.

    Forbidden actions for role r are those that occur only in relations
    targeting roles incompatible with r.  Required actions come from the
    pattern relations of r's obligations that are active at the current
    step.  Observations are hidden under the same exclusivity rule.
    """
    st = spec_subset.structural
    role_rels: dict[str, list[Relation]] = {}
    for rel in registry.relations:
        if rel.target.kind is TargetKind.ROLE:
            role_rels.setdefault(rel.target.name, []).append(rel)
    for role in sorted(st.roles):
        if role not in role_rels:
            raise UncoveredRole(role)

    # which targets mention each token
    act_owners: dict[int, set[SpecRef]] = {}
    obs_owners: dict[int, set[SpecRef]] = {}
    for rel in registry.relations:
        for a in rel.actions():
            act_owners.setdefault(a, set()).add(rel.target)
        for o in rel.observations():
            obs_owners.setdefault(o, set()).add(rel.target)

    def exclusive(owners: dict[int, set[SpecRef]], role: str) -> frozenset[int]:
        out = set()
        for tok, refs in owners.items():
            if all(
                ref.kind is TargetKind.ROLE and ref.name != role and not st.compatible(role, ref.name)
                for ref in refs
            ):
                out.add(tok)
        return frozenset(out)

    predicates = {}
    for role in sorted(st.roles):
        forbidden = exclusive(act_owners, role)
        hidden = exclusive(obs_owners, role)
        checks = []
        for ob in spec_subset.obligations(role):
            pats = [r.pattern for r in registry.for_target(TargetKind.MISSION, ob.mission) if r.pattern]
            if pats:
                checks.append(ObligationCheck(ob.mission, ob.time_constraint, MissionAutomaton(pats)))
        predicates[role] = RolePredicate(role, forbidden, hidden, checks)
    return predicates
