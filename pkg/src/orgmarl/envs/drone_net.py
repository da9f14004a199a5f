"""Networked drones defending against spreading malware.

Each drone runs a blue agent.  Malware jumps along live edges of a fixed
connected graph; agents can monitor themselves, try to restore, alert their
neighbours, switch their radio off or temporarily cut the link to one
neighbour.  The common reward is minus the number of compromised drones.

Neighbours are addressed by slot (their rank in the sorted neighbour list),
so every drone shares one token layout whatever its position in the graph.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..constraints import OsInit
from ..decpomdp import DEFAULT_GAMMA, DecPomdpModel, FunctionPolicy, IllegalAction
from ..orgmodel import make_spec
from ..relations import MessageSpec, Relation, RelationRegistry, SpecRef, TargetKind, TokenRule, parse_pattern

NOOP, MONITOR, RESTORE, ALERT, COMMS_OFF, COMMS_ON = 0, 1, 2, 3, 4, 5
ISOLATE_BASE = 10
BASE_LABELS = {
    NOOP: "noop",
    MONITOR: "monitor",
    RESTORE: "restore_self",
    ALERT: "broadcast_alert",
    COMMS_OFF: "comms_off",
    COMMS_ON: "comms_on",
}
CLEAN, COMPROMISED, UNKNOWN = 0, 1, 2
OBS_BASE = 300
ISOLATION_STEPS = 5


class IsolateNonNeighbor(IllegalAction):
    def __init__(self, agent: str, slot: int):
        self.slot = slot
        super().__init__(agent, ISOLATE_BASE + slot)
        self.args = (f"agent {agent!r} tried to isolate neighbour slot {slot}, which does not exist",)


def random_connected_graph(n: int, extra_edges: int, max_degree: int, seed: int) -> tuple[tuple[int, int], ...]:
    """Random spanning tree plus up to `extra_edges` chords, degrees capped."""
    rng = np.random.default_rng(seed)
    order = [int(x) for x in rng.permutation(n)]
    degree = [0] * n
    edges: set[tuple[int, int]] = set()
    for i in range(1, n):
        candidates = [u for u in order[:i] if degree[u] < max_degree]
        u = candidates[int(rng.integers(len(candidates)))]
        v = order[i]
        edges.add((min(u, v), max(u, v)))
        degree[u] += 1
        degree[v] += 1
    free = [
        (u, v)
        for u in range(n)
        for v in range(u + 1, n)
        if (u, v) not in edges
    ]
    for idx in rng.permutation(len(free)):
        if extra_edges <= 0:
            break
        u, v = free[int(idx)]
        if degree[u] < max_degree and degree[v] < max_degree:
            edges.add((u, v))
            degree[u] += 1
            degree[v] += 1
            extra_edges -= 1
    return tuple(sorted(edges))


def _connected(n: int, edges) -> bool:
    adj = {i: set() for i in range(n)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    seen, todo = {0}, [0]
    while todo:
        for w in adj[todo.pop()] - seen:
            seen.add(w)
            todo.append(w)
    return len(seen) == n


@dataclass(frozen=True)
class DroneNetConfig:
    n_nodes: int = 8
    extra_edges: int = 3
    max_degree: int = 4
    graph_seed: int = 0
    edges: tuple[tuple[int, int], ...] | None = None  # explicit graph overrides the random one
    infection_prob: float = 0.15
    restore_prob: float = 0.8
    initial_compromised: int = 1
    compromise_penalty: float = 1.0
    horizon: int = 60
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("need at least two drones")
        for name in ("infection_prob", "restore_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.initial_compromised <= self.n_nodes:
            raise ValueError("initial_compromised out of range")
        if self.edges is not None:
            if any(not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes) or u == v for u, v in self.edges):
                raise ValueError("edges must join distinct existing nodes")
            if not _connected(self.n_nodes, self.edges):
                raise ValueError("drone graph must be connected")

    def graph(self) -> tuple[tuple[int, int], ...]:
        if self.edges is not None:
            return tuple(sorted((min(u, v), max(u, v)) for u, v in self.edges))
        return random_connected_graph(self.n_nodes, self.extra_edges, self.max_degree, self.graph_seed)


@dataclass(frozen=True)
class DroneState:
    compromised: tuple[bool, ...]
    comms: tuple[bool, ...]
    cut: tuple[int, ...]  # remaining isolation steps per edge (same order as the edge list)
    monitored: tuple[bool, ...]
    alerts: tuple[int, ...]  # per drone, bitmask over neighbour slots that alerted it


class DroneNet(DecPomdpModel):
    env_id = "drone_net"

    def __init__(self, config: DroneNetConfig | None = None):
        self.config = config or DroneNetConfig()
        c = self.config
        self.edges = c.graph()
        self.agents = tuple(f"drone_{i}" for i in range(c.n_nodes))
        self.horizon = c.horizon
        self.gamma = c.gamma
        self.neighbors = [sorted({v for u, v in self.edges if u == i} | {u for u, v in self.edges if v == i})
                          for i in range(c.n_nodes)]
        self.width = max(c.max_degree, max(len(nb) for nb in self.neighbors))
        self._edge_index = {e: k for k, e in enumerate(self.edges)}
        self._index = {a: i for i, a in enumerate(self.agents)}

    # --- token codecs ---

    def encode_obs(self, flag: int, links: int, alerts: int) -> int:
        span = 1 << self.width
        return OBS_BASE + (flag * span + links) * span + alerts

    def decode_obs(self, token: int) -> tuple[int, int, int]:
        span = 1 << self.width
        code, alerts = divmod(token - OBS_BASE, span)
        flag, links = divmod(code, span)
        return flag, links, alerts

    def edge_of(self, i: int, j: int) -> int:
        return self._edge_index[(min(i, j), max(i, j))]

    # --- model ---

    def action_space(self, agent):
        deg = len(self.neighbors[self._index[agent]])
        return tuple(BASE_LABELS) + tuple(ISOLATE_BASE + k for k in range(deg))

    def observation_space(self, agent):
        span = 1 << self.width
        return range(OBS_BASE, OBS_BASE + 3 * span * span)

    def action_labels(self, agent):
        labels = dict(BASE_LABELS)
        for a in self.action_space(agent):
            if a >= ISOLATE_BASE:
                labels[a] = f"isolate_{a - ISOLATE_BASE}"
        return labels

    def step(self, state, actions, rng):
        for agent in self.agents:
            a = actions[agent]
            deg = len(self.neighbors[self._index[agent]])
            if isinstance(a, (int, np.integer)) and a >= ISOLATE_BASE + deg:
                raise IsolateNonNeighbor(agent, int(a) - ISOLATE_BASE)
        return super().step(state, actions, rng)

    def initial_state(self, rng):
        c = self.config
        n = c.n_nodes
        bad = {int(i) for i in rng.choice(n, size=c.initial_compromised, replace=False)}
        return DroneState(
            compromised=tuple(i in bad for i in range(n)),
            comms=(True,) * n,
            cut=(0,) * len(self.edges),
            monitored=(False,) * n,
            alerts=(0,) * n,
        )

    def transition(self, state, actions, rng):
        c = self.config
        n = c.n_nodes
        comms = list(state.comms)
        cut = [max(t - 1, 0) for t in state.cut]
        monitored = [False] * n
        restoring = [False] * n
        alerting = [False] * n
        for i, agent in enumerate(self.agents):
            a = actions[agent]
            if a == COMMS_OFF:
                comms[i] = False
            elif a == COMMS_ON:
                comms[i] = True
            elif a == MONITOR:
                monitored[i] = True
            elif a == RESTORE:
                restoring[i] = True
            elif a == ALERT:
                alerting[i] = True
            elif a >= ISOLATE_BASE:
                j = self.neighbors[i][a - ISOLATE_BASE]
                cut[self.edge_of(i, j)] = ISOLATION_STEPS

        compromised = list(state.compromised)
        for k, (u, v) in enumerate(self.edges):
            if cut[k] > 0:
                continue
            for src, dst in ((u, v), (v, u)):
                if state.compromised[src] and not state.compromised[dst] and comms[dst]:
                    if rng.random() < c.infection_prob:
                        compromised[dst] = True
        for i in range(n):
            if restoring[i] and compromised[i] and rng.random() < c.restore_prob:
                compromised[i] = False

        alerts = [0] * n
        for i in range(n):
            if not (alerting[i] and comms[i]):
                continue
            for j in self.neighbors[i]:
                if comms[j] and cut[self.edge_of(i, j)] == 0:
                    alerts[j] |= 1 << self.neighbors[j].index(i)
        return DroneState(tuple(compromised), tuple(comms), tuple(cut), tuple(monitored), tuple(alerts))

    def observe(self, state, actions, rng):
        out = {}
        for i, agent in enumerate(self.agents):
            flag = (COMPROMISED if state.compromised[i] else CLEAN) if state.monitored[i] else UNKNOWN
            links = 0
            for k, j in enumerate(self.neighbors[i]):
                if state.cut[self.edge_of(i, j)] == 0:
                    links |= 1 << k
            out[agent] = self.encode_obs(flag, links, state.alerts[i])
        return out

    def reward(self, state, actions, next_state):
        return -self.config.compromise_penalty * sum(next_state.compromised)

    def equivalent_agent(self, agent, known):
        known = sorted(known, key=lambda a: int(a.rsplit("_", 1)[1]))
        if agent in known:
            return agent
        if not known:
            return None
        return known[self._index[agent] % len(known)]

    def config_dict(self):
        d = asdict(self.config)
        d["edges"] = [list(e) for e in self.edges]
        return d


class ScriptedDefender:
    """Monitor, alert and repair yourself when hit; isolate neighbours that raised an alert."""

    def __init__(self, env: DroneNet):
        self.env = env

    def __call__(self, agent, history, observation):
        flag, links, alerts = self.env.decode_obs(observation)
        last = history.last_action() if history is not None else None
        if last == ALERT:
            return RESTORE  # the alert went out because we saw ourselves compromised
        if flag == COMPROMISED:
            return ALERT
        suspects = alerts & links
        if suspects:
            slot = (suspects & -suspects).bit_length() - 1
            return ISOLATE_BASE + slot
        return MONITOR


def scripted_policy(env: DroneNet):
    return FunctionPolicy(ScriptedDefender(env))


def relation_registry(env: DroneNet) -> RelationRegistry:
    width = env.width
    span = 1 << width
    isolates = frozenset(ISOLATE_BASE + k for k in range(width))
    alerted = frozenset(
        env.encode_obs(flag, links, alerts)
        for flag in (CLEAN, COMPROMISED, UNKNOWN)
        for links in range(span)
        for alerts in range(1, span)
    )
    contain = []
    for flag in (CLEAN, UNKNOWN):
        for links in range(span):
            for alerts in range(1, span):
                suspects = alerts & links
                if suspects:
                    slot = (suspects & -suspects).bit_length() - 1
                    contain.append(f".* {env.encode_obs(flag, links, alerts)} {ISOLATE_BASE + slot}")
    repair = [f".* {env.encode_obs(COMPROMISED, links, alerts)} {RESTORE}"
              for links in range(span) for alerts in range(span)]
    rels = [
        Relation(SpecRef(TargetKind.ROLE, "sentinel"), rules=(TokenRule(None, frozenset({MONITOR, ALERT})),)),
        Relation(SpecRef(TargetKind.ROLE, "isolator"), rules=(TokenRule(None, isolates),)),
        Relation(SpecRef(TargetKind.ROLE, "dark_node"), rules=(TokenRule(None, frozenset({COMMS_OFF})),)),
    ]
    rels += [Relation(SpecRef(TargetKind.MISSION, "contain_threat"), pattern=parse_pattern(p)) for p in contain]
    rels += [Relation(SpecRef(TargetKind.MISSION, "self_repair"), pattern=parse_pattern(p)) for p in repair]
    messages = [MessageSpec("alert", send=frozenset({ALERT}), receive=alerted, comply=isolates)]
    aliases = {label: a for a, label in BASE_LABELS.items()}
    aliases.update({f"isolate_{k}": ISOLATE_BASE + k for k in range(width)})
    return RelationRegistry(rels, aliases=aliases, messages=messages)


def partial_constraints(env: DroneNet) -> OsInit:
    """Every drone is a sentinel: radios stay on and a drone seen compromised must repair itself."""
    spec = make_spec(
        roles={"sentinel", "isolator", "dark_node"},
        compatibilities={("sentinel", "isolator")},
        role_cardinalities={"sentinel": (1, None)},
        goals={"network_clean"},
        missions={"self_repair": {"network_clean"}, "contain_threat": {"network_clean"}},
        deontic={("sentinel", "self_repair", "obligation"), ("sentinel", "contain_threat", "permission")},
    )
    return OsInit(spec, {a: "sentinel" for a in env.agents})


def variants(config: DroneNetConfig | None = None) -> list[DroneNetConfig]:
    base = config or DroneNetConfig()
    return [replace(base, n_nodes=base.n_nodes + d) for d in (0, 1, 2)]
