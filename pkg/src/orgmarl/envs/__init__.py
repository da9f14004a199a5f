"""Built-in environments and the presets the experiment harness needs for each."""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from typing import Any, Callable

from ..constraints import OsInit
from ..decpomdp import DecPomdpModel
from ..relations import RelationRegistry
from . import drone_net, piston_chain, predator_prey
from .drone_net import DroneNet, DroneNetConfig
from .piston_chain import PistonChain, PistonChainConfig
from .predator_prey import PredatorPrey, PredatorPreyConfig
from .toy import ChainConfig, ChainEnv, MatrixGame, MatrixGameConfig


@dataclass(frozen=True)
class EnvPreset:
    env_id: str
    config_cls: type
    env_cls: type
    scripted: Callable[[DecPomdpModel], Any]
    registry: Callable[[DecPomdpModel], RelationRegistry]
    partial_constraints: Callable[[DecPomdpModel], OsInit]
    variants: Callable[[Any], list]
    # environment overrides and trainer settings used by `train` unless the plan says otherwise
    experiment_env: dict = field(default_factory=dict)
    experiment_trainer: dict = field(default_factory=dict)

    def config(self, data: dict | None = None):
        return config_from_dict(self.config_cls, data or {})

    def make(self, data: dict | None = None) -> DecPomdpModel:
        return self.env_cls(self.config(data))


PRESETS: dict[str, EnvPreset] = {
    "piston_chain": EnvPreset(
        "piston_chain",
        PistonChainConfig,
        PistonChain,
        scripted=lambda env: piston_chain.scripted_policy(),
        registry=lambda env: piston_chain.relation_registry(),
        partial_constraints=piston_chain.partial_constraints,
        variants=piston_chain.variants,
        experiment_trainer={"iterations": 100, "episodes_per_iteration": 1, "eval_episodes": 10},
    ),
    "predator_prey": EnvPreset(
        "predator_prey",
        PredatorPreyConfig,
        PredatorPrey,
        scripted=predator_prey.scripted_policy,
        registry=predator_prey.relation_registry,
        partial_constraints=predator_prey.partial_constraints,
        variants=predator_prey.variants,
        experiment_env={"grid": 5},
        experiment_trainer={"iterations": 400, "episodes_per_iteration": 10, "eval_episodes": 20},
    ),
    "drone_net": EnvPreset(
        "drone_net",
        DroneNetConfig,
        DroneNet,
        scripted=drone_net.scripted_policy,
        registry=drone_net.relation_registry,
        partial_constraints=drone_net.partial_constraints,
        variants=drone_net.variants,
        experiment_trainer={"iterations": 100, "episodes_per_iteration": 5, "eval_episodes": 10},
    ),
}


def get_preset(env_id: str) -> EnvPreset:
    try:
        return PRESETS[env_id]
    except KeyError:
        raise KeyError(f"unknown env_id {env_id!r}; known: {sorted(PRESETS)}") from None


def make_env(env_id: str, config: dict | None = None) -> DecPomdpModel:
    return get_preset(env_id).make(config)


def _coerce(tp, value):
    """Turn JSON lists back into the tuples the frozen configs expect."""
    if value is None:
        return None
    origin = typing.get_origin(tp)
    if origin is typing.Union or origin is types.UnionType:
        for arg in typing.get_args(tp):
            if arg is not type(None):
                return _coerce(arg, value)
    if origin is tuple and isinstance(value, (list, tuple)):
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v) for v in value)
        return tuple(_coerce(a, v) for a, v in zip(args, value))
    return value


def config_from_dict(config_cls: type, data: dict):
    hints = typing.get_type_hints(config_cls)
    names = {f.name for f in dataclasses.fields(config_cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown {config_cls.__name__} fields {sorted(unknown)}")
    return config_cls(**{k: _coerce(hints[k], v) for k, v in data.items()})


__all__ = [
    "PRESETS",
    "EnvPreset",
    "get_preset",
    "make_env",
    "config_from_dict",
    "PistonChain",
    "PistonChainConfig",
    "PredatorPrey",
    "PredatorPreyConfig",
    "DroneNet",
    "DroneNetConfig",
    "ChainEnv",
    "ChainConfig",
    "MatrixGame",
    "MatrixGameConfig",
]
