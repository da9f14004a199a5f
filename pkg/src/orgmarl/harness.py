"""Experiment driver: NTS / PTS / FTS cells over seeds, traces and reports.

A plan names an environment, the cases to run and the seeds.  Every
(case, seed) cell is independent and deterministic, so cells can run in
worker processes and the assembled report is byte-identical across runs
(apart from the optional timestamp).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .constraints import ConstraintGuard, EmptyAuthorizedSet
from .decpomdp import DecPomdpModel, JointHistory, run_episode, serialize_history
from .envs import EnvPreset, get_preset
from .inference import InsufficientEpisodes, synthesize
from .trainer import (
    Case,
    DegenerateBaseline,
    TrainerConfig,
    TrainingTrace,
    convergence_iteration,
    evaluation_seeds,
    performance_stability,
    train,
)

THRESHOLD_FRACTION = 0.8  # s = reference return minus 20% of its magnitude
CASE_ORDER = (Case.NTS, Case.PTS, Case.FTS)


class PlanError(ValueError):
    """Invalid experiment plan; the message starts with the offending field."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class ExperimentPlan:
    env_id: str
    cases: tuple[Case, ...] = CASE_ORDER
    seeds: tuple[int, ...] = (0,)
    trainer: dict = field(default_factory=dict)  # TrainerConfig overrides on top of the preset's
    env: dict = field(default_factory=dict)  # environment config overrides on top of the preset's
    variants: tuple[dict, ...] | None = None  # environment configs for performance stability
    stability: bool = True
    inference: bool = True

    def __post_init__(self):
        try:
            preset = get_preset(self.env_id)
        except KeyError as exc:
            raise PlanError("env_id", str(exc.args[0])) from None
        try:
            cases = tuple(Case(c) for c in self.cases)
        except ValueError as exc:
            raise PlanError("cases", str(exc)) from None
        if not cases:
            raise PlanError("cases", "must name at least one of NTS, PTS, FTS")
        if len(set(cases)) != len(cases):
            raise PlanError("cases", "must be distinct")
        object.__setattr__(self, "cases", cases)
        if not self.seeds:
            raise PlanError("seeds", "must be non-empty")
        if any(isinstance(s, bool) or not isinstance(s, int) for s in self.seeds):
            raise PlanError("seeds", "must be integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise PlanError("seeds", "must be distinct")
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if "seed" in self.trainer or "case" in self.trainer:
            raise PlanError("trainer", "seed and case are set per cell, not in the trainer overrides")
        try:
            self.trainer_config(Case.NTS, self.seeds[0])
        except (TypeError, ValueError) as exc:
            raise PlanError("trainer", str(exc)) from None
        try:
            preset.config(self.env_config())
        except (TypeError, ValueError) as exc:
            raise PlanError("env", str(exc)) from None
        if self.variants is not None:
            variants = tuple(dict(v) for v in self.variants)
            if len(variants) < 2:
                raise PlanError("variants", "performance stability needs at least two variants")
            for v in variants:
                try:
                    preset.config(v)
                except (TypeError, ValueError) as exc:
                    raise PlanError("variants", str(exc)) from None
            object.__setattr__(self, "variants", variants)

    @property
    def preset(self) -> EnvPreset:
        return get_preset(self.env_id)

    def env_config(self) -> dict:
        return {**self.preset.experiment_env, **self.env}

    def make_env(self) -> DecPomdpModel:
        return self.preset.make(self.env_config())

    def trainer_config(self, case: Case, seed: int) -> TrainerConfig:
        data = {**self.preset.experiment_trainer, **self.trainer, "seed": seed, "case": Case(case)}
        return TrainerConfig.from_dict(data)

    def variant_envs(self) -> list[DecPomdpModel]:
        preset = self.preset
        if self.variants is not None:
            return [preset.make(v) for v in self.variants]
        return [preset.env_cls(c) for c in preset.variants(preset.config(self.env_config()))]

    def to_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "cases": [c.value for c in self.cases],
            "seeds": list(self.seeds),
            "trainer": dict(sorted(self.trainer.items())),
            "env": dict(sorted(self.env.items())),
            "variants": None if self.variants is None else [dict(sorted(v.items())) for v in self.variants],
            "stability": self.stability,
            "inference": self.inference,
        }

    @classmethod
    def from_dict(cls, data: Any) -> ExperimentPlan:
        if not isinstance(data, dict):
            raise PlanError("plan", "must be a JSON object")
        known = {"env_id", "cases", "seeds", "trainer", "env", "variants", "stability", "inference"}
        unknown = set(data) - known
        if unknown:
            raise PlanError(sorted(unknown)[0], "unknown plan field")
        if "env_id" not in data:
            raise PlanError("env_id", "is required")
        kw = dict(data)
        for name in ("cases", "seeds"):
            if name in kw:
                if not isinstance(kw[name], (list, tuple)):
                    raise PlanError(name, "must be a list")
                kw[name] = tuple(kw[name])
        for name in ("trainer", "env"):
            if name in kw and not isinstance(kw[name], dict):
                raise PlanError(name, "must be an object")
        if kw.get("variants") is not None:
            if not isinstance(kw["variants"], (list, tuple)) or not all(isinstance(v, dict) for v in kw["variants"]):
                raise PlanError("variants", "must be a list of objects")
            kw["variants"] = tuple(kw["variants"])
        return cls(**kw)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def git_blob_sha1(data: bytes) -> str:
    """Content hash as `git hash-object` computes it."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def reward_threshold(reference: float) -> float:
    """Convergence threshold s: within 20% of the scripted reference return."""
    return reference - (1.0 - THRESHOLD_FRACTION) * abs(reference)


class ScriptedFactory:
    """The preset's scripted policy, rebuilt for whichever environment it acts in."""

    def __init__(self, preset: EnvPreset):
        self.preset = preset

    def for_env(self, env: DecPomdpModel):
        return self.preset.scripted(env)


def _guard(plan: ExperimentPlan, env: DecPomdpModel) -> ConstraintGuard:
    preset = plan.preset
    return ConstraintGuard.for_env(env, preset.partial_constraints(env), preset.registry(env))


def scripted_evaluation(plan: ExperimentPlan, env: DecPomdpModel, config: TrainerConfig) -> list[JointHistory]:
    policy = plan.preset.scripted(env)
    return [run_episode(env, policy, seed=s, episode=j) for j, s in enumerate(evaluation_seeds(config))]


def trace_csv(trace: TrainingTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "mean_return", "case", "seed"])
    for it, r, case, seed in trace.rows():
        w.writerow([it, repr(float(r)), case, seed])
    return buf.getvalue()


def run_cell(plan: ExperimentPlan, case: Case | str, seed: int) -> dict:
    """Run one (case, seed) cell and return a JSON-ready result with its artifacts.

    Errors the harness maps to exit codes are returned, not raised, so a
    failing cell in a worker process does not lose the others.
    """
    case = Case(case)
    env = plan.make_env()
    config = plan.trainer_config(case, seed)
    reference = float(np.mean([h.episode_return for h in scripted_evaluation(plan, env, config)]))
    threshold = config.reward_threshold if config.reward_threshold is not None else reward_threshold(reference)
    out: dict[str, Any] = {"case": case.value, "seed": seed, "reference_return": reference, "threshold": threshold}
    guard = _guard(plan, env) if case is Case.PTS else None
    try:
        if case is Case.FTS:
            evals = scripted_evaluation(plan, env, config)
            value = float(np.mean([h.episode_return for h in evals]))
            trace = TrainingTrace(case, seed, threshold, [value] * config.iterations)
            convergence: int | None = 1  # the full specification is the reference itself
            policy: Any = ScriptedFactory(plan.preset)
        else:
            policy, trace = train(env, guard, config)
            policy.learning, policy.epsilon = False, 0.0
            evals = [
                run_episode(env, policy, guard, seed=s, episode=j)
                for j, s in enumerate(evaluation_seeds(config))
            ]
            convergence = convergence_iteration(trace.returns, threshold)
    except EmptyAuthorizedSet as exc:
        out["error"] = {"kind": "EmptyAuthorizedSet", "message": str(exc)}
        return out
    out.update(
        convergence=convergence,
        final_return=trace.returns[-1],
        trace_csv=trace_csv(trace),
        histories="".join(serialize_history(h) for h in evals),
    )
    if plan.stability:
        guard_for = (lambda e: _guard(plan, e)) if case is Case.PTS else None
        try:
            res = performance_stability(policy, plan.variant_envs(), config.n_eval, seed=evaluation_seeds(config)[0], guard_for=guard_for)
            out["stability"] = {
                "value": res.value,
                "returns": list(res.returns),
                "baselines": list(res.baselines),
            }
        except DegenerateBaseline as exc:
            out["stability"] = {"value": None, "error": str(exc)}
    if plan.inference:
        try:
            report = synthesize(plan.env_id, evals, plan.preset.registry(env))
            out["inference"] = {
                "json": report.to_json(),
                "pca_csv": report.pca_csv(),
                "dendrogram_csv": report.dendrogram_csv(),
                "summary": _inference_summary(report),
            }
        except InsufficientEpisodes as exc:
            out["inference"] = {"error": str(exc)}
    return out


def _inference_summary(report) -> dict:
    d = report.to_dict()
    return {
        "roles": {c["role"]: c["size"] for c in d["roles"]["clusters"]},
        "links": [f"{l['source']}->{l['dest']}:{l['kind']}" for l in d["links"]],
        "goals": len(d["goals"]),
        "deontic": [
            f"{r['kind']}({r['role']},{r['mission']})"
            for r in d["organizational_specifications"]["deontic_specifications"]
        ],
    }


def _median(values: Sequence[float]) -> float | None:
    return float(statistics.median(values)) if values else None


def aggregate(plan: ExperimentPlan, cells: Sequence[dict]) -> dict:
    """Median convergence per case and the NTS/PTS and PTS/FTS ratios.

    A ratio only uses seeds where both of its cases converged; the count of
    seeds left out is reported next to it.
    """
    conv = {
        c.value: {cell["seed"]: cell.get("convergence") for cell in cells if cell["case"] == c.value and "error" not in cell}
        for c in plan.cases
    }
    per_case = {}
    for case, by_seed in conv.items():
        done = [v for v in by_seed.values() if v is not None]
        per_case[case] = {
            "converged": len(done),
            "non_converged": len(by_seed) - len(done),
            "median_convergence": _median(done),
        }
    ratios = {}
    for a, b in (("NTS", "PTS"), ("PTS", "FTS")):
        if a not in conv or b not in conv:
            continue
        both = [s for s in plan.seeds if conv[a].get(s) is not None and conv[b].get(s) is not None]
        ma = _median([conv[a][s] for s in both])
        mb = _median([conv[b][s] for s in both])
        ratios[f"{a}/{b}"] = {
            "value": None if ma is None or mb is None else ma / mb,
            "seeds_used": both,
            "non_converged_seeds": [s for s in plan.seeds if s not in both],
        }
    stability = {}
    for c in plan.cases:
        vals = [
            cell["stability"]["value"]
            for cell in cells
            if cell["case"] == c.value and cell.get("stability", {}).get("value") is not None
        ]
        stability[c.value] = _median(vals)
    return {"cases": per_case, "ratios": ratios, "median_performance_stability": stability}


def _cell_name(case: str, seed: int) -> str:
    return f"{case}_seed{seed}"


def write_cell(out_dir: Path, cell: dict) -> dict:
    """Write a cell's artifacts; returns the cell entry for the report."""
    name = _cell_name(cell["case"], cell["seed"])
    entry = {k: cell[k] for k in ("case", "seed", "reference_return", "threshold") if k in cell}
    if "error" in cell:
        entry["error"] = cell["error"]
        return entry
    entry["convergence"] = cell["convergence"]
    entry["final_return"] = cell["final_return"]
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    (out_dir / "histories").mkdir(parents=True, exist_ok=True)
    (out_dir / "traces" / f"{name}.csv").write_text(cell["trace_csv"])
    (out_dir / "histories" / f"{name}.jsonl").write_text(cell["histories"])
    entry["trace"] = f"traces/{name}.csv"
    entry["histories"] = f"histories/{name}.jsonl"
    if "stability" in cell:
        entry["stability"] = cell["stability"]
    inf = cell.get("inference")
    if inf is not None:
        if "error" in inf:
            entry["inference"] = {"error": inf["error"]}
        else:
            (out_dir / "inference").mkdir(parents=True, exist_ok=True)
            (out_dir / "inference" / f"{name}.json").write_text(inf["json"])
            (out_dir / "inference" / f"{name}.pca.csv").write_text(inf["pca_csv"])
            (out_dir / "inference" / f"{name}.dendrogram.csv").write_text(inf["dendrogram_csv"])
            entry["inference"] = {"report": f"inference/{name}.json", **inf["summary"]}
    return entry


def run_experiment(plan: ExperimentPlan, out_dir: Path, jobs: int = 1, timestamp: bool = True) -> dict:
    """Run every cell, write artifacts and `report.json`, and return the report."""
    out_dir.mkdir(parents=True, exist_ok=True)
    plan_text = plan.canonical_json()
    (out_dir / "plan.json").write_text(plan_text)
    order = [(c.value, s) for c in plan.cases for s in plan.seeds]
    if jobs > 1 and len(order) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, plan, c, s) for c, s in order]
            cells = [f.result() for f in futures]
    else:
        cells = [run_cell(plan, c, s) for c, s in order]
    entries = [write_cell(out_dir, cell) for cell in cells]
    errors = [e for e in entries if "error" in e]
    report = {
        "env_id": plan.env_id,
        "config_sha1": git_blob_sha1(plan_text.encode()),
        "plan": plan.to_dict(),
        "status": "failed" if errors else "ok",
        "cells": entries,
        "aggregate": aggregate(plan, cells),
    }
    if timestamp:
        report["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return report
