"""Command-line entry point: train, infer, validate, diff and satisfaction.

Exit codes::

    0  success
    1  violations found (validate, diff of an invalid spec, satisfaction)
    2  a constrained run hit an empty authorized action set
    3  configuration error (bad plan, flags or empty inputs)
    4  too few episodes for inference
    5  input parse error (file and line when known)

Errors are reported as a single JSON object on one line of standard error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .constraints import ConstraintConfigError, check_satisfaction, load_os_init
from .decpomdp import HistoryParseError, JointHistory, parse_histories
from .envs import get_preset
from .harness import ExperimentPlan, PlanError, run_experiment
from .inference import InsufficientEpisodes, MissingMessageDeclaration, synthesize
from .orgmodel import InvalidSpec, SpecParseError, diff_specs, parse_spec, validate_spec
from .relations import PatternParseError, RegistryError, RelationRegistry, load_registry

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_EMPTY_AUTHORIZED = 2
EXIT_CONFIG = 3
EXIT_INSUFFICIENT = 4
EXIT_PARSE = 5


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        self.code, self.kind, self.extra = code, kind, extra
        super().__init__(message)

    def line(self) -> str:
        return json.dumps({"error": self.kind, "exit": self.code, "message": str(self), **self.extra}, sort_keys=True)


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors, which is taken; report them as config errors."""

    def error(self, message):
        raise CliError(EXIT_CONFIG, "UsageError", message)


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise CliError(EXIT_CONFIG, "FileError", f"{path}: {exc.strerror}", file=path) from None


def _parse_error(exc: Exception, path: str) -> CliError:
    line = getattr(exc, "line", None)
    if line is None:
        msg = str(exc)
        if msg.startswith("line "):
            try:
                line = int(msg.split()[1].rstrip(":"))
            except ValueError:
                line = None
    extra = {"file": path}
    if line:
        extra["line"] = line
    where = f"{path}:{line}" if line else path
    return CliError(EXIT_PARSE, type(exc).__name__, f"{where}: {exc}", **extra)


def _load_spec(path: str):
    try:
        return parse_spec(_read(path))
    except SpecParseError as exc:
        raise _parse_error(exc, path) from None


def _history_files(paths: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            files += sorted(path.glob("*.jsonl"))
        elif path.exists():
            files.append(path)
        else:
            raise CliError(EXIT_CONFIG, "FileError", f"{p}: no such file or directory", file=p)
    return files


def _load_histories(paths: Sequence[str]) -> list[JointHistory]:
    out: list[JointHistory] = []
    for f in _history_files(paths):
        try:
            out += parse_histories(f.read_text(), str(f))
        except HistoryParseError as exc:
            extra = {"line": exc.line} if exc.line else {}
            raise CliError(EXIT_PARSE, "HistoryParseError", str(exc), file=str(f), **extra) from None
    if not out:
        raise CliError(EXIT_CONFIG, "NoHistories", "no episodes found in the given history files")
    return out


def _registry(args, histories: Sequence[JointHistory]) -> RelationRegistry:
    if args.registry:
        try:
            return load_registry(_read(args.registry))
        except (RegistryError, PatternParseError) as exc:
            raise _parse_error(exc, args.registry) from None
    env_id = args.env or histories[0].env_id
    try:
        preset = get_preset(env_id)
    except KeyError as exc:
        raise CliError(EXIT_CONFIG, "UnknownEnv", str(exc.args[0])) from None
    env_config = {}
    if args.env_config:
        try:
            env_config = json.loads(_read(args.env_config))
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_PARSE, "JSONDecodeError", f"{args.env_config}:{exc.lineno}: {exc.msg}",
                           file=args.env_config, line=exc.lineno) from None
    try:
        env = preset.make(env_config)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, "EnvConfigError", str(exc)) from None
    return preset.registry(env)


def _relabel_episodes(histories: list[JointHistory]) -> list[JointHistory]:
    """Episode numbers restart in every trace file; make them unique in file order."""
    seen = [h.episode for h in histories]
    if len(set(seen)) == len(seen):
        return histories
    for i, h in enumerate(histories):
        h.episode = i
    return histories


# --- subcommands ---------------------------------------------------------------


def cmd_train(args) -> int:
    data: dict = {}
    if args.plan:
        try:
            data = json.loads(_read(args.plan))
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_PARSE, "JSONDecodeError", f"{args.plan}:{exc.lineno}: {exc.msg}",
                           file=args.plan, line=exc.lineno) from None
        if not isinstance(data, dict):
            raise CliError(EXIT_CONFIG, "PlanError", "plan: must be a JSON object", field="plan")
    if args.env:
        data["env_id"] = args.env
    if args.cases:
        data["cases"] = [c.strip().upper() for c in args.cases.split(",") if c.strip()]
    if args.seeds is not None:
        try:
            data["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise CliError(EXIT_CONFIG, "PlanError", "seeds: must be integers", field="seeds") from None
    elif "seeds" not in data:
        data["seeds"] = [args.seed]
    trainer = dict(data.get("trainer", {}) or {})
    if args.iterations is not None:
        trainer["iterations"] = args.iterations
    if args.episodes is not None:
        trainer["episodes_per_iteration"] = args.episodes
    if trainer:
        data["trainer"] = trainer
    if args.no_stability:
        data["stability"] = False
    if args.no_inference:
        data["inference"] = False
    try:
        plan = ExperimentPlan.from_dict(data)
    except PlanError as exc:
        raise CliError(EXIT_CONFIG, "PlanError", str(exc), field=exc.field) from None
    out = Path(args.out or "out")
    report = run_experiment(plan, out, jobs=args.jobs, timestamp=not args.no_timestamp)
    for cell in report["cells"]:
        if "error" in cell and cell["error"]["kind"] == "EmptyAuthorizedSet":
            raise CliError(EXIT_EMPTY_AUTHORIZED, "EmptyAuthorizedSet",
                           f"{cell['case']} seed {cell['seed']}: {cell['error']['message']}")
    ratios = report["aggregate"]["ratios"]
    print(f"wrote {out / 'report.json'}")
    for name, r in ratios.items():
        value = "n/a" if r["value"] is None else f"{r['value']:.3f}"
        print(f"{name} median convergence ratio: {value} (seeds used: {len(r['seeds_used'])})")
    return EXIT_OK


def cmd_infer(args) -> int:
    histories = _relabel_episodes(_load_histories(args.histories))
    registry = _registry(args, histories)
    try:
        report = synthesize(args.env or histories[0].env_id, histories, registry, k=args.roles)
    except InsufficientEpisodes as exc:
        raise CliError(EXIT_INSUFFICIENT, "InsufficientEpisodes", str(exc), got=exc.got, need=exc.need) from None
    except MissingMessageDeclaration as exc:
        raise CliError(EXIT_CONFIG, "MissingMessageDeclaration", str(exc)) from None
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "inference.json").write_text(report.to_json())
    (out / "pca.csv").write_text(report.pca_csv())
    (out / "dendrogram.csv").write_text(report.dendrogram_csv())
    d = report.to_dict()
    roles = ", ".join(f"{c['role']}={c['size']}" for c in d["roles"]["clusters"])
    print(f"roles: {roles}")
    for link in d["links"]:
        print(f"link: {link['source']} -> {link['dest']} ({link['kind']}, support {link['support']})")
    print(f"wrote {out / 'inference.json'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    spec = _load_spec(args.spec)
    violations = validate_spec(spec)
    if not violations:
        print("OK")
        return EXIT_OK
    for v in violations:
        print(f"violation: {v}")
    return EXIT_VIOLATIONS


def cmd_diff(args) -> int:
    a, b = _load_spec(args.a), _load_spec(args.b)
    try:
        diff = diff_specs(a, b)
    except InvalidSpec as exc:
        print(f"violation: {exc}")
        return EXIT_VIOLATIONS
    if diff.is_empty():
        print("no differences")
    else:
        print("\n".join(diff.lines()))
    return EXIT_OK


def cmd_satisfaction(args) -> int:
    try:
        os_init = load_os_init(_read(args.os_init))
    except SpecParseError as exc:
        raise _parse_error(exc, args.os_init) from None
    histories = _load_histories(args.histories)
    registry = _registry(args, histories)
    try:
        report = check_satisfaction(os_init, histories, registry)
    except (ConstraintConfigError, InvalidSpec) as exc:
        raise CliError(EXIT_CONFIG, type(exc).__name__, str(exc)) from None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "satisfaction.json").write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    for item in report.items:
        status = "ok" if item.satisfied else f"VIOLATED x{item.violations}"
        where = ""
        if item.counterexample is not None and not item.satisfied:
            c = item.counterexample
            where = f" (episode {c.episode}, agent {c.agent}, step {c.step})"
        print(f"{item.kind} {item.subject}: {status}{where}")
    print("satisfied" if report.satisfied else "not satisfied")
    return EXIT_OK if report.satisfied else EXIT_VIOLATIONS


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="orgmarl", description="Organization-aware multi-agent experiments.")
    parser.add_argument("--seed", type=int, default=0, help="seed used when a command is not given explicit seeds")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for independent runs")
    parser.add_argument("--out", help="output directory (default: ./out for train and infer)")
    parser.add_argument("--no-timestamp", action="store_true", help="omit timestamps so reports are byte-stable")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="run NTS/PTS/FTS cells and write traces and a report")
    p.add_argument("--plan", help="experiment plan JSON file")
    p.add_argument("--env", help="environment id (overrides the plan)")
    p.add_argument("--cases", help="comma-separated subset of NTS,PTS,FTS")
    p.add_argument("--seeds", help="comma-separated seeds (default: the global --seed)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--episodes", type=int, help="training episodes per iteration")
    p.add_argument("--no-stability", action="store_true", help="skip performance stability")
    p.add_argument("--no-inference", action="store_true", help="skip inference on the final evaluation")
    p.set_defaults(func=cmd_train)

    def registry_args(q):
        q.add_argument("--registry", help="relation registry JSON file")
        q.add_argument("--env", help="use the built-in registry of this environment")
        q.add_argument("--env-config", help="environment config JSON used with --env")

    p = sub.add_parser("infer", help="infer an organizational specification from episode logs")
    p.add_argument("histories", nargs="+", help="JSON-lines episode logs or directories of them")
    registry_args(p)
    p.add_argument("--roles", type=int, help="number of roles (default: chosen from the dendrogram)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("validate", help="check a specification file")
    p.add_argument("spec")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("diff", help="structured difference between two specifications")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("satisfaction", help="check episode logs against an os_init")
    p.add_argument("os_init")
    p.add_argument("histories", nargs="+")
    registry_args(p)
    p.set_defaults(func=cmd_satisfaction)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise CliError(EXIT_CONFIG, "UsageError", "--jobs must be at least 1")
        return args.func(args)
    except CliError as exc:
        print(exc.line(), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
