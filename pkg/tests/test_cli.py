from __future__ import annotations

import json
import subprocess
import sys

import pytest

from orgmarl import harness
from orgmarl.cli import main
from orgmarl.constraints import ConstraintGuard, OsInit, os_init_to_dict
from orgmarl.decpomdp import RandomPolicy, run_episode, serialize_history
from orgmarl.envs import get_preset
from orgmarl.harness import ExperimentPlan, PlanError, aggregate, git_blob_sha1, reward_threshold
from orgmarl.orgmodel import canonical_json, make_spec
from orgmarl.relations import registry_from_dict

SMALL = ["train", "--env", "piston_chain", "--seeds", "0,1", "--iterations", "20"]


def _err(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["--out", str(out), "--no-timestamp", *SMALL]) == 0
    return out


def test_train_writes_traces_histories_and_report(trained):
    report = json.loads((trained / "report.json").read_text())
    assert report["status"] == "ok"
    assert {(c["case"], c["seed"]) for c in report["cells"]} == {(c, s) for c in ("NTS", "PTS", "FTS") for s in (0, 1)}
    assert report["config_sha1"] == git_blob_sha1((trained / "plan.json").read_bytes())
    assert "generated_at" not in report
    header = (trained / "traces" / "NTS_seed0.csv").read_text().splitlines()[0]
    assert header == "iteration,mean_return,case,seed"
    fts = (trained / "traces" / "FTS_seed1.csv").read_text().splitlines()[1:]
    assert len(fts) == 20 and len({row.split(",")[1] for row in fts}) == 1
    assert (trained / "inference" / "PTS_seed0.pca.csv").exists()
    ratios = report["aggregate"]["ratios"]
    assert ratios["PTS/FTS"]["seeds_used"] == [0, 1]


def test_train_is_byte_deterministic(trained, tmp_path):
    again = tmp_path / "again"
    assert main(["--out", str(again), "--no-timestamp", "--jobs", "2", *SMALL]) == 0
    assert (again / "report.json").read_bytes() == (trained / "report.json").read_bytes()


def test_infer_on_logs(trained, tmp_path, capsys):
    out = tmp_path / "inf"
    assert main(["--out", str(out), "infer", str(trained / "histories")]) == 0
    text = capsys.readouterr().out
    assert "roles:" in text
    assert json.loads((out / "inference.json").read_text())["env"] == "piston_chain"
    assert (out / "pca.csv").read_text().startswith("agent,episode,x,y,role")


def test_satisfaction_on_guarded_and_unguarded_logs(trained, tmp_path, capsys):
    env = get_preset("piston_chain").make()
    os_path = tmp_path / "os_init.json"
    os_path.write_text(json.dumps(os_init_to_dict(get_preset("piston_chain").partial_constraints(env))))
    pts = sorted(str(p) for p in (trained / "histories").glob("PTS_*.jsonl"))
    assert main(["--out", str(tmp_path / "sat"), "satisfaction", str(os_path), *pts]) == 0
    assert "satisfied" in capsys.readouterr().out
    assert json.loads((tmp_path / "sat" / "satisfaction.json").read_text())["satisfied"]
    free = tmp_path / "free.jsonl"
    free.write_text("".join(serialize_history(run_episode(env, RandomPolicy(), seed=s, episode=s)) for s in range(3)))
    assert main(["satisfaction", str(os_path), str(free)]) == 1
    out = capsys.readouterr().out
    assert "VIOLATED" in out and out.strip().endswith("not satisfied")


def test_validate_and_diff(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(canonical_json(make_spec(["a", "b"], links=[("a", "b", "authority")])))
    bad = tmp_path / "bad.json"
    d = json.loads(good.read_text())
    d["structural_specifications"]["links"].append({"source": "a", "dest": "ghost", "kind": "communication"})
    bad.write_text(json.dumps(d))
    assert main(["validate", str(good)]) == 0
    assert capsys.readouterr().out.strip() == "OK"
    assert main(["validate", str(bad)]) == 1
    assert capsys.readouterr().out.startswith("violation: link a->ghost")
    assert main(["diff", str(good), str(good)]) == 0
    assert capsys.readouterr().out.strip() == "no differences"
    other = tmp_path / "other.json"
    other.write_text(canonical_json(make_spec(["a", "b"], links=[("a", "b", "communication")])))
    assert main(["diff", str(good), str(other)]) == 0
    assert "~ structural.links (a,b): authority -> communication" in capsys.readouterr().out


def test_parse_errors_exit_5_with_file_and_line(tmp_path, capsys):
    broken = tmp_path / "broken.json"
    broken.write_text('{\n  "structural_specifications": [\n')
    assert main(["validate", str(broken)]) == 5
    err = _err(capsys)
    assert err["exit"] == 5 and err["file"] == str(broken) and "line" in err

    env = get_preset("piston_chain").make()
    lines = serialize_history(run_episode(env, RandomPolicy(), seed=0)).splitlines()
    lines[16] = "not json"
    log = tmp_path / "log.jsonl"
    log.write_text("\n".join(lines) + "\n")
    assert main(["infer", str(log)]) == 5
    err = _err(capsys)
    assert err["line"] == 17 and err["file"] == str(log)


def test_too_few_episodes_exit_4(tmp_path, capsys):
    env = get_preset("piston_chain").make()
    log = tmp_path / "four.jsonl"
    log.write_text("".join(serialize_history(run_episode(env, RandomPolicy(), seed=s, episode=s)) for s in range(4)))
    assert main(["--out", str(tmp_path / "o"), "infer", str(log)]) == 4
    assert _err(capsys)["error"] == "InsufficientEpisodes"


def test_config_errors_exit_3(tmp_path, capsys):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"env_id": "piston_chain", "seeds": []}))
    assert main(["train", "--plan", str(plan)]) == 3
    err = _err(capsys)
    assert err["field"] == "seeds" and err["message"].startswith("seeds:")
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["infer", str(empty)]) == 3
    assert _err(capsys)["error"] == "NoHistories"
    assert main(["train", "--env", "nowhere"]) == 3
    assert _err(capsys)["field"] == "env_id"
    assert main(["frobnicate"]) == 3
    assert _err(capsys)["error"] == "UsageError"
    assert main(["--jobs", "0", "validate", "x"]) == 3
    _err(capsys)


def test_empty_authorized_set_exit_2(tmp_path, capsys, monkeypatch):
    reg = registry_from_dict(
        {
            "structural_specifications": {"roles": {"stuck": {"*": [0, 1, 2]}}},
            "functional_specifications": {"missions": {"impossible": ".* 9"}},
        }
    )
    spec = make_spec(["stuck"], goals=["g"], missions={"impossible": ["g"]}, deontic=[("stuck", "impossible", "obligation")])

    def over_constrained(plan, env):
        return ConstraintGuard.for_env(env, OsInit(spec, {a: "stuck" for a in env.agents}), reg)

    monkeypatch.setattr(harness, "_guard", over_constrained)
    out = tmp_path / "o"
    code = main(["--out", str(out), "train", "--env", "piston_chain", "--cases", "PTS,FTS", "--iterations", "3",
                 "--no-stability", "--no-inference"])
    assert code == 2
    assert _err(capsys)["error"] == "EmptyAuthorizedSet"
    # the other cells are preserved
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "failed"
    assert [c["case"] for c in report["cells"] if "error" not in c] == ["FTS"]


def test_module_entry_point_propagates_exit_code(tmp_path):
    r = subprocess.run([sys.executable, "-m", "orgmarl", "validate", str(tmp_path / "missing.json")],
                       capture_output=True, text=True)
    assert r.returncode == 3
    assert json.loads(r.stderr)["error"] == "FileError"


def test_plan_validation():
    with pytest.raises(PlanError, match="seeds"):
        ExperimentPlan("piston_chain", seeds=(1, 1))
    with pytest.raises(PlanError, match="cases"):
        ExperimentPlan("piston_chain", cases=("NTS", "NTS"))
    with pytest.raises(PlanError, match="trainer"):
        ExperimentPlan("piston_chain", trainer={"seed": 3})
    with pytest.raises(PlanError, match="env"):
        ExperimentPlan("piston_chain", env={"n_pistons": 1})
    with pytest.raises(PlanError, match="variants"):
        ExperimentPlan("piston_chain", variants=({},))
    with pytest.raises(PlanError, match="bogus"):
        ExperimentPlan.from_dict({"env_id": "piston_chain", "bogus": 1})
    p = ExperimentPlan("piston_chain", cases=("FTS",), seeds=(4,))
    assert ExperimentPlan.from_dict(p.to_dict()) == p


def test_ratios_use_only_seeds_where_both_converged():
    plan = ExperimentPlan("piston_chain", seeds=(0, 1, 2))
    cells = []
    conv = {"NTS": [10, None, 30], "PTS": [2, 5, 3], "FTS": [1, 1, 1]}
    for case, its in conv.items():
        for seed, c in enumerate(its):
            cells.append({"case": case, "seed": seed, "convergence": c})
    agg = aggregate(plan, cells)
    r = agg["ratios"]["NTS/PTS"]
    assert r["seeds_used"] == [0, 2] and r["non_converged_seeds"] == [1]
    assert r["value"] == pytest.approx(20 / 2.5)
    assert agg["cases"]["NTS"]["non_converged"] == 1


def test_threshold_and_hash():
    assert reward_threshold(10.0) == pytest.approx(8.0)
    assert reward_threshold(-10.0) == pytest.approx(-12.0)
    assert git_blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"
