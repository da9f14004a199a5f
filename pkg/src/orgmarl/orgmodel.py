"""Organizational model: roles, links, missions and deontic relations.

Every value here is an immutable dataclass.  Sets are stored as frozensets and
the canonical JSON form sorts everything, so two equal specifications always
serialize to the same bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping


class InvalidSpec(ValueError):
    """A specification failed validation where a valid one was required."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


class MergeConflict(ValueError):
    def __init__(self, conflicts: list[str]):
        self.conflicts = conflicts
        super().__init__("merge conflict: " + "; ".join(conflicts))


class SpecParseError(ValueError):
    pass


class LinkKind(str, Enum):
    ACQUAINTANCE = "acquaintance"
    COMMUNICATION = "communication"
    AUTHORITY = "authority"

    @property
    def strength(self) -> int:
        return _LINK_ORDER.index(self)

    def implies(self, other: LinkKind) -> bool:
        """authority implies communication implies acquaintance."""
        return self.strength >= other.strength


_LINK_ORDER = [LinkKind.ACQUAINTANCE, LinkKind.COMMUNICATION, LinkKind.AUTHORITY]


class PlanOperator(str, Enum):
    SEQUENCE = "sequence"
    CHOICE = "choice"
    PARALLEL = "parallel"


class DeonticKind(str, Enum):
    PERMISSION = "permission"
    OBLIGATION = "obligation"


@dataclass(frozen=True, order=True)
class Link:
    source: str
    dest: str
    kind: LinkKind

    def __post_init__(self):
        object.__setattr__(self, "kind", LinkKind(self.kind))


@dataclass(frozen=True, order=True)
class Cardinality:
    min: int = 0
    max: int | None = None  # None is unbounded

    def contains(self, n: int) -> bool:
        return n >= self.min and (self.max is None or n <= self.max)

    def intersect(self, other: Cardinality) -> Cardinality | None:
        lo = max(self.min, other.min)
        if self.max is None:
            hi = other.max
        elif other.max is None:
            hi = self.max
        else:
            hi = min(self.max, other.max)
        if hi is not None and lo > hi:
            return None
        return Cardinality(lo, hi)


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class StructuralSpec:
    roles: frozenset[str] = frozenset()
    links: frozenset[Link] = frozenset()
    # stored as sorted pairs; (a, b) present means (b, a) present too
    compatibilities: frozenset[tuple[str, str]] = frozenset()
    role_cardinalities: Mapping[str, Cardinality] = field(default_factory=dict)
    subgroup_cardinalities: Mapping[str, Cardinality] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "roles", frozenset(self.roles))
        # keep only the strongest kind per (source, dest)
        strongest: dict[tuple[str, str], Link] = {}
        for link in self.links:
            key = (link.source, link.dest)
            if key not in strongest or link.kind.strength > strongest[key].kind.strength:
                strongest[key] = link
        object.__setattr__(self, "links", frozenset(strongest.values()))
        object.__setattr__(
            self, "compatibilities", frozenset(_pair(a, b) for a, b in self.compatibilities)
        )
        object.__setattr__(self, "role_cardinalities", _frozen_map(self.role_cardinalities))
        object.__setattr__(
            self, "subgroup_cardinalities", _frozen_map(self.subgroup_cardinalities)
        )

    def compatible(self, a: str, b: str) -> bool:
        return a == b or _pair(a, b) in self.compatibilities

    def link_between(self, source: str, dest: str) -> Link | None:
        for link in self.links:
            if link.source == source and link.dest == dest:
                return link
        return None

    def __hash__(self):
        return hash((self.roles, self.links, self.compatibilities))


@dataclass(frozen=True, order=True)
class Plan:
    goal: str
    operator: PlanOperator
    subgoals: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "operator", PlanOperator(self.operator))
        object.__setattr__(self, "subgoals", tuple(self.subgoals))


@dataclass(frozen=True)
class SocialScheme:
    goals: frozenset[str] = frozenset()
    plans: frozenset[Plan] = frozenset()
    missions: Mapping[str, frozenset[str]] = field(default_factory=dict)
    mission_cardinalities: Mapping[str, Cardinality] = field(default_factory=dict)
    preference_orders: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "goals", frozenset(self.goals))
        object.__setattr__(self, "plans", frozenset(self.plans))
        object.__setattr__(
            self, "missions", _frozen_map({m: frozenset(g) for m, g in self.missions.items()})
        )
        object.__setattr__(self, "mission_cardinalities", _frozen_map(self.mission_cardinalities))
        object.__setattr__(
            self,
            "preference_orders",
            _frozen_map({a: tuple(o) for a, o in self.preference_orders.items()}),
        )

    def __hash__(self):
        return hash((self.goals, self.plans))


Interval = tuple[int, int]


@dataclass(frozen=True, order=True)
class DeonticRelation:
    role: str
    mission: str
    kind: DeonticKind
    # inclusive step intervals; empty means "always"
    time_constraint: tuple[Interval, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", DeonticKind(self.kind))
        object.__setattr__(
            self,
            "time_constraint",
            tuple(sorted((int(a), int(b)) for a, b in self.time_constraint)),
        )

    def active_at(self, step: int) -> bool:
        if not self.time_constraint:
            return True
        return any(a <= step <= b for a, b in self.time_constraint)


@dataclass(frozen=True)
class OrganizationalSpecification:
    structural: StructuralSpec = field(default_factory=StructuralSpec)
    functional: SocialScheme = field(default_factory=SocialScheme)
    deontic: frozenset[DeonticRelation] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "deontic", frozenset(self.deontic))

    def obligations(self, role: str) -> list[DeonticRelation]:
        return sorted(
            d for d in self.deontic if d.role == role and d.kind is DeonticKind.OBLIGATION
        )

    def __hash__(self):
        return hash(canonical_json(self))


class _FrozenDict(dict):
    """A dict that refuses mutation, so specs stay hashable values."""

    def _blocked(self, *args, **kwargs):
        raise TypeError("specification maps are immutable")

    __setitem__ = __delitem__ = clear = pop = popitem = setdefault = update = _blocked

    def __hash__(self):
        return hash(tuple(sorted(self.items())))


def _frozen_map(m: Mapping) -> _FrozenDict:
    return _FrozenDict(m)


# --- validation ---------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Violation:
    element: str
    rule: str

    def __str__(self):
        return f"{self.element}: {self.rule}"


def _check_cardinality(label: str, card: Cardinality) -> list[Violation]:
    out = []
    if card.min < 0 or (card.max is not None and card.max < 0):
        out.append(Violation(label, "cardinality bounds must be non-negative"))
    if card.max is not None and card.min > card.max:
        out.append(Violation(label, f"min {card.min} exceeds max {card.max}"))
    return out


def validate_spec(spec: OrganizationalSpecification) -> list[Violation]:
    """Return every well-formedness violation; an empty list means valid."""
    v: list[Violation] = []
    st, fn = spec.structural, spec.functional
    roles = st.roles

    for r in sorted(roles):
        if not isinstance(r, str) or not r:
            v.append(Violation(f"role {r!r}", "role name must be a non-empty string"))
    for link in sorted(st.links):
        for end in (link.source, link.dest):
            if end not in roles:
                v.append(Violation(f"link {link.source}->{link.dest}", f"undeclared role {end!r}"))
    for a, b in sorted(st.compatibilities):
        for end in (a, b):
            if end not in roles:
                v.append(Violation(f"compatibility ({a},{b})", f"undeclared role {end!r}"))
    for r, card in sorted(st.role_cardinalities.items()):
        if r not in roles:
            v.append(Violation(f"role cardinality {r}", f"undeclared role {r!r}"))
        v += _check_cardinality(f"role cardinality {r}", card)
    for g, card in sorted(st.subgroup_cardinalities.items()):
        v += _check_cardinality(f"subgroup cardinality {g}", card)

    goals = fn.goals
    parents: dict[str, Plan] = {}
    for plan in sorted(fn.plans):
        if plan.goal in parents:
            v.append(Violation(f"plan {plan.goal}", "goal decomposed by more than one plan"))
        parents[plan.goal] = plan
        for g in (plan.goal, *plan.subgoals):
            if g not in goals:
                v.append(Violation(f"plan {plan.goal}", f"undeclared goal {g!r}"))
        if not plan.subgoals:
            v.append(Violation(f"plan {plan.goal}", "plan has no subgoals"))
    v += _check_plan_dag(parents)
    for m, mgoals in sorted(fn.missions.items()):
        for g in sorted(mgoals):
            if g not in goals:
                v.append(Violation(f"mission {m}", f"undeclared goal {g!r}"))
    for m, card in sorted(fn.mission_cardinalities.items()):
        if m not in fn.missions:
            v.append(Violation(f"mission cardinality {m}", f"undeclared mission {m!r}"))
        v += _check_cardinality(f"mission cardinality {m}", card)
    for agent, order in sorted(fn.preference_orders.items()):
        for m in order:
            if m not in fn.missions:
                v.append(Violation(f"preference order {agent}", f"undeclared mission {m!r}"))

    seen: set[tuple[str, str]] = set()
    for d in sorted(spec.deontic):
        label = f"{d.kind.value}({d.role},{d.mission})"
        if d.role not in roles:
            v.append(Violation(label, f"undeclared role {d.role!r}"))
        if d.mission not in fn.missions:
            v.append(Violation(label, f"undeclared mission {d.mission!r}"))
        if (d.role, d.mission) in seen:
            v.append(Violation(label, "more than one deontic relation for this role and mission"))
        seen.add((d.role, d.mission))
        prev_end = None
        for a, b in d.time_constraint:
            if a > b:
                v.append(Violation(label, f"interval [{a},{b}] has start after end"))
            if a < 0:
                v.append(Violation(label, f"interval [{a},{b}] starts before step 0"))
            if prev_end is not None and a <= prev_end:
                v.append(Violation(label, f"interval [{a},{b}] overlaps its predecessor"))
            prev_end = b
    return v


def _check_plan_dag(parents: dict[str, Plan]) -> list[Violation]:
    if not parents:
        return []
    out = []
    children = {g for p in parents.values() for g in p.subgoals}
    roots = sorted(set(parents) - children)
    if len(roots) != 1:
        out.append(Violation("plans", f"expected exactly one root goal, found {roots}"))
    # cycle detection by DFS colouring
    state: dict[str, int] = {}

    def visit(g: str) -> bool:
        state[g] = 1
        for c in parents[g].subgoals if g in parents else ():
            s = state.get(c, 0)
            if s == 1 or (s == 0 and visit(c)):
                return True
        state[g] = 2
        return False

    for g in sorted(parents):
        if state.get(g, 0) == 0 and visit(g):
            out.append(Violation("plans", f"cycle through goal {g!r}"))
            break
    return out


def ensure_valid(spec: OrganizationalSpecification) -> None:
    problems = validate_spec(spec)
    if problems:
        raise InvalidSpec(problems)


# --- flattened element view (drives diff, apply and merge) --------------------

# (section, field) pairs in canonical order
FIELDS = (
    ("structural", "roles"),
    ("structural", "links"),
    ("structural", "compatibilities"),
    ("structural", "role_cardinalities"),
    ("structural", "subgroup_cardinalities"),
    ("functional", "goals"),
    ("functional", "plans"),
    ("functional", "missions"),
    ("functional", "mission_cardinalities"),
    ("functional", "preference_orders"),
    ("deontic", "relations"),
)


def _elements(spec: OrganizationalSpecification) -> dict[tuple[str, str], dict[Any, Any]]:
    st, fn = spec.structural, spec.functional
    return {
        ("structural", "roles"): {r: True for r in st.roles},
        ("structural", "links"): {(l.source, l.dest): l.kind for l in st.links},
        ("structural", "compatibilities"): {p: True for p in st.compatibilities},
        ("structural", "role_cardinalities"): dict(st.role_cardinalities),
        ("structural", "subgroup_cardinalities"): dict(st.subgroup_cardinalities),
        ("functional", "goals"): {g: True for g in fn.goals},
        ("functional", "plans"): {p.goal: (p.operator, p.subgoals) for p in fn.plans},
        ("functional", "missions"): dict(fn.missions),
        ("functional", "mission_cardinalities"): dict(fn.mission_cardinalities),
        ("functional", "preference_orders"): dict(fn.preference_orders),
        ("deontic", "relations"): {
            (d.role, d.mission): (d.kind, d.time_constraint) for d in spec.deontic
        },
    }


def _from_elements(el: dict[tuple[str, str], dict[Any, Any]]) -> OrganizationalSpecification:
    structural = StructuralSpec(
        roles=frozenset(el[("structural", "roles")]),
        links=frozenset(Link(s, d, k) for (s, d), k in el[("structural", "links")].items()),
        compatibilities=frozenset(el[("structural", "compatibilities")]),
        role_cardinalities=el[("structural", "role_cardinalities")],
        subgroup_cardinalities=el[("structural", "subgroup_cardinalities")],
    )
    functional = SocialScheme(
        goals=frozenset(el[("functional", "goals")]),
        plans=frozenset(
            Plan(g, op, sub) for g, (op, sub) in el[("functional", "plans")].items()
        ),
        missions=el[("functional", "missions")],
        mission_cardinalities=el[("functional", "mission_cardinalities")],
        preference_orders=el[("functional", "preference_orders")],
    )
    deontic = frozenset(
        DeonticRelation(r, m, k, tc) for (r, m), (k, tc) in el[("deontic", "relations")].items()
    )
    return OrganizationalSpecification(structural, functional, deontic)


@dataclass(frozen=True)
class FieldDiff:
    added: Mapping[Any, Any] = field(default_factory=dict)
    removed: Mapping[Any, Any] = field(default_factory=dict)
    changed: Mapping[Any, tuple[Any, Any]] = field(default_factory=dict)

    def __bool__(self):
        return bool(self.added or self.removed or self.changed)


@dataclass(frozen=True)
class SpecDiff:
    fields: Mapping[tuple[str, str], FieldDiff] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not any(self.fields.values())

    def lines(self) -> list[str]:
        """Human-readable one-line-per-change rendering."""
        out = []
        for (section, name), fd in self.fields.items():
            for k in sorted(fd.added, key=repr):
                out.append(f"+ {section}.{name} {_fmt_key(k)} = {_fmt_val(fd.added[k])}")
            for k in sorted(fd.removed, key=repr):
                out.append(f"- {section}.{name} {_fmt_key(k)}")
            for k in sorted(fd.changed, key=repr):
                old, new = fd.changed[k]
                out.append(
                    f"~ {section}.{name} {_fmt_key(k)}: {_fmt_val(old)} -> {_fmt_val(new)}"
                )
        return out


def _fmt_key(k: Any) -> str:
    if isinstance(k, tuple):
        return "(" + ",".join(str(x) for x in k) + ")"
    return str(k)


def _fmt_val(v: Any) -> str:
    if v is True:
        return "present"
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, Cardinality):
        return f"[{v.min},{'inf' if v.max is None else v.max}]"
    if isinstance(v, frozenset):
        return "{" + ",".join(sorted(v)) + "}"
    if isinstance(v, tuple):
        return "(" + ",".join(_fmt_val(x) for x in v) + ")"
    return str(v)


def diff_specs(a: OrganizationalSpecification, b: OrganizationalSpecification) -> SpecDiff:
    ensure_valid(a)
    ensure_valid(b)
    ea, eb = _elements(a), _elements(b)
    out = {}
    for key in FIELDS:
        xa, xb = ea[key], eb[key]
        fd = FieldDiff(
            added={k: xb[k] for k in xb.keys() - xa.keys()},
            removed={k: xa[k] for k in xa.keys() - xb.keys()},
            changed={k: (xa[k], xb[k]) for k in xa.keys() & xb.keys() if xa[k] != xb[k]},
        )
        if fd:
            out[key] = fd
    return SpecDiff(out)


def apply_diff(a: OrganizationalSpecification, diff: SpecDiff) -> OrganizationalSpecification:
    el = _elements(a)
    for key, fd in diff.fields.items():
        target = el[key]
        for k in fd.removed:
            target.pop(k, None)
        for k, (_, new) in fd.changed.items():
            target[k] = new
        target.update(fd.added)
    return _from_elements(el)


def merge_specs(
    base: OrganizationalSpecification, overlay: OrganizationalSpecification
) -> OrganizationalSpecification:
    """Union of both specs; cardinalities intersect, links keep the strongest kind."""
    ensure_valid(base)
    ensure_valid(overlay)
    eb, eo = _elements(base), _elements(overlay)
    conflicts: list[str] = []
    merged: dict[tuple[str, str], dict] = {}
    for key in FIELDS:
        section, name = key
        out = dict(eb[key])
        for k, v in eo[key].items():
            if k not in out or out[k] == v:
                out[k] = v
                continue
            old = out[k]
            if name == "links":
                out[k] = old if old.strength >= v.strength else v
            elif name.endswith("cardinalities"):
                both = old.intersect(v)
                if both is None:
                    conflicts.append(
                        f"{section}.{name} {_fmt_key(k)}: {_fmt_val(old)} and {_fmt_val(v)} do not intersect"
                    )
                else:
                    out[k] = both
            elif name == "missions":
                out[k] = old | v
            elif name == "relations":
                kind = DeonticKind.OBLIGATION if DeonticKind.OBLIGATION in (old[0], v[0]) else old[0]
                out[k] = (kind, _union_intervals(old[1], v[1]))
            else:
                conflicts.append(
                    f"{section}.{name} {_fmt_key(k)}: {_fmt_val(old)} vs {_fmt_val(v)}"
                )
        merged[key] = out
    if conflicts:
        raise MergeConflict(conflicts)
    spec = _from_elements(merged)
    problems = validate_spec(spec)
    if problems:
        raise MergeConflict([str(p) for p in problems])
    return spec


def _union_intervals(a: tuple[Interval, ...], b: tuple[Interval, ...]) -> tuple[Interval, ...]:
    # an empty constraint already means "always"
    if not a or not b:
        return ()
    out: list[list[int]] = []
    for lo, hi in sorted(a + b):
        if out and lo <= out[-1][1] + 1:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return tuple((lo, hi) for lo, hi in out)


# --- canonical JSON -----------------------------------------------------------


def _card_to_json(c: Cardinality) -> dict:
    return {"min": c.min, "max": c.max}


def _card_from_json(d: Any) -> Cardinality:
    if isinstance(d, (list, tuple)):
        lo, hi = d
    else:
        lo, hi = d["min"], d.get("max")
    return Cardinality(int(lo), None if hi is None else int(hi))


def to_dict(spec: OrganizationalSpecification) -> dict:
    st, fn = spec.structural, spec.functional
    return {
        "structural_specifications": {
            "roles": sorted(st.roles),
            "links": [
                {"source": l.source, "dest": l.dest, "kind": l.kind.value} for l in sorted(st.links)
            ],
            "compatibilities": [list(p) for p in sorted(st.compatibilities)],
            "role_cardinalities": {
                r: _card_to_json(c) for r, c in sorted(st.role_cardinalities.items())
            },
            "subgroup_cardinalities": {
                g: _card_to_json(c) for g, c in sorted(st.subgroup_cardinalities.items())
            },
        },
        "functional_specifications": {
            "goals": sorted(fn.goals),
            "plans": [
                {"goal": p.goal, "operator": p.operator.value, "subgoals": list(p.subgoals)}
                for p in sorted(fn.plans)
            ],
            "missions": {m: sorted(g) for m, g in sorted(fn.missions.items())},
            "mission_cardinalities": {
                m: _card_to_json(c) for m, c in sorted(fn.mission_cardinalities.items())
            },
            "preference_orders": {a: list(o) for a, o in sorted(fn.preference_orders.items())},
        },
        "deontic_specifications": [
            {
                "role": d.role,
                "mission": d.mission,
                "kind": d.kind.value,
                "time_constraint": [list(iv) for iv in d.time_constraint],
            }
            for d in sorted(spec.deontic)
        ],
    }


def from_dict(data: Mapping) -> OrganizationalSpecification:
    try:
        st = data.get("structural_specifications", {}) or {}
        fn = data.get("functional_specifications", {}) or {}
        de = data.get("deontic_specifications", []) or []
        structural = StructuralSpec(
            roles=frozenset(st.get("roles", [])),
            links=frozenset(
                Link(l["source"], l["dest"], LinkKind(l["kind"])) for l in st.get("links", [])
            ),
            compatibilities=frozenset(tuple(p) for p in st.get("compatibilities", [])),
            role_cardinalities={
                r: _card_from_json(c) for r, c in st.get("role_cardinalities", {}).items()
            },
            subgroup_cardinalities={
                g: _card_from_json(c) for g, c in st.get("subgroup_cardinalities", {}).items()
            },
        )
        functional = SocialScheme(
            goals=frozenset(fn.get("goals", [])),
            plans=frozenset(
                Plan(p["goal"], PlanOperator(p["operator"]), tuple(p["subgoals"]))
                for p in fn.get("plans", [])
            ),
            missions={m: frozenset(g) for m, g in fn.get("missions", {}).items()},
            mission_cardinalities={
                m: _card_from_json(c) for m, c in fn.get("mission_cardinalities", {}).items()
            },
            preference_orders={a: tuple(o) for a, o in fn.get("preference_orders", {}).items()},
        )
        deontic = frozenset(
            DeonticRelation(
                d["role"],
                d["mission"],
                DeonticKind(d["kind"]),
                tuple(tuple(iv) for iv in d.get("time_constraint", [])),
            )
            for d in de
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise SpecParseError(f"malformed specification: {exc}") from exc
    return OrganizationalSpecification(structural, functional, deontic)


def canonical_json(spec: OrganizationalSpecification) -> str:
    return json.dumps(to_dict(spec), sort_keys=True, indent=2) + "\n"


def parse_spec(text: str) -> OrganizationalSpecification:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecParseError(f"line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise SpecParseError("top-level JSON value must be an object")
    return from_dict(data)


def make_spec(
    roles: Iterable[str] = (),
    links: Iterable[tuple[str, str, str]] = (),
    compatibilities: Iterable[tuple[str, str]] = (),
    role_cardinalities: Mapping[str, tuple[int, int | None]] | None = None,
    goals: Iterable[str] = (),
    missions: Mapping[str, Iterable[str]] | None = None,
    deontic: Iterable[tuple[str, str, str]] = (),
) -> OrganizationalSpecification:
    """Shorthand constructor used by presets and tests."""
    return OrganizationalSpecification(
        StructuralSpec(
            roles=frozenset(roles),
            links=frozenset(Link(s, d, LinkKind(k)) for s, d, k in links),
            compatibilities=frozenset(compatibilities),
            role_cardinalities={
                r: Cardinality(lo, hi) for r, (lo, hi) in (role_cardinalities or {}).items()
            },
        ),
        SocialScheme(
            goals=frozenset(goals),
            missions={m: frozenset(g) for m, g in (missions or {}).items()},
        ),
        frozenset(DeonticRelation(r, m, DeonticKind(k)) for r, m, k in deontic),
    )
