"""Command-line pipeline: artifacts, manifests, exit codes, replay."""

from __future__ import annotations

import hashlib
import json
import shutil
import subprocess
import sys
import time
from pathlib import Path

import pytest

from cascadeserve import __version__
from cascadeserve.cli import EXIT_INFEASIBLE, EXIT_INVARIANT, EXIT_MISSING, EXIT_OK, RunConfig, fixture_config, main

ARTIFACTS = [
    "trace.json", "calibration.json", "graph.csv", "selection.json", "skip_plan.json", "plan.json",
    "plan_giant.json", "sim_report.json", "sim_giant.json", "utilization.csv", "latency_hist.csv",
    "latency_hist_giant.csv", "frontier.csv", "latency_cdf.csv", "comparison.csv",
]


def digest_dir(d: Path) -> dict[str, str]:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir()) if p.is_file()}


def write_config(path: Path, fixture: str = "t5", **overrides) -> Path:
    """Copy of a fixture config with absolute input paths and overrides."""
    src = fixture_config(fixture)
    doc = json.loads(src.read_text())
    doc["paths"] = {k: str((src.parent / v).resolve()) for k, v in doc["paths"].items()}
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(doc.get(key), dict):
            doc[key] = {**doc[key], **val}
        else:
            doc[key] = val
    path.write_text(json.dumps(doc, indent=2))
    return path


@pytest.fixture(scope="module")
def t5_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("t5")
    fixture_dir = fixture_config("t5").parent
    before = digest_dir(fixture_dir)
    outs, times = [], []
    for k in range(2):
        out = root / f"run{k}"
        t0 = time.perf_counter()
        rc = main(["pipeline", "--config", str(fixture_config("t5")), "--out", str(out)])
        times.append(time.perf_counter() - t0)
        assert rc == EXIT_OK
        outs.append(out)
    return {"outs": outs, "times": times, "before": before, "after": digest_dir(fixture_dir), "root": root}


def test_pipeline_writes_every_artifact_with_manifest(t5_runs):
    out = t5_runs["outs"][0]
    for name in ARTIFACTS:
        assert (out / name).is_file(), name
        man = json.loads((out / f"{name}.manifest.json").read_text())
        assert man["kind"] == "manifest" and man["artifact"] == name
        assert man["sha256"] == hashlib.sha256((out / name).read_bytes()).hexdigest()
        assert man["version"] == __version__ and man["seed"] == 0 and man["mode"] == "AP"
        assert man["schema_version"] == 1


def test_pipeline_under_five_minutes(t5_runs):
    assert max(t5_runs["times"]) < 300


def test_pipeline_is_byte_deterministic(t5_runs):
    a, b = t5_runs["outs"]
    assert digest_dir(a) == digest_dir(b)


def test_pipeline_leaves_inputs_untouched(t5_runs):
    assert t5_runs["before"] == t5_runs["after"]


def test_manifest_inputs_chain_to_upstream_artifacts(t5_runs):
    out = t5_runs["outs"][0]
    man = json.loads((out / "plan.json.manifest.json").read_text())
    assert man["inputs"]["skip_plan:skip_plan.json"] == hashlib.sha256((out / "skip_plan.json").read_bytes()).hexdigest()
    assert {k.split(":")[0] for k in man["inputs"]} == {"skip_plan", "profiles", "cluster"}


def test_artifacts_are_versioned_json(t5_runs):
    out = t5_runs["outs"][0]
    for name in ARTIFACTS:
        if name.endswith(".json"):
            assert json.loads((out / name).read_text())["schema_version"] == 1


@pytest.mark.parametrize("artifact", ["graph.csv", "skip_plan.json", "plan.json", "sim_report.json", "comparison.csv"])
def test_replay_reproduces_bytes(t5_runs, tmp_path, artifact):
    out = t5_runs["outs"][0]
    rc = main(["replay", "--manifest", str(out / f"{artifact}.manifest.json"), "--inputs",
               str(fixture_config("t5").parent), "--out", str(tmp_path)])
    assert rc == EXIT_OK
    assert (tmp_path / artifact).read_bytes() == (out / artifact).read_bytes()


def test_replay_detects_tampering(t5_runs, tmp_path):
    src = t5_runs["outs"][0]
    work = tmp_path / "work"
    shutil.copytree(src, work)
    man_path = work / "skip_plan.json.manifest.json"
    man = json.loads(man_path.read_text())
    man["sha256"] = "0" * 64
    man_path.write_text(json.dumps(man))
    fx = str(fixture_config("t5").parent)
    assert main(["replay", "--manifest", str(man_path), "--inputs", fx, "--out", str(tmp_path / "o")]) == EXIT_INVARIANT
    # an input whose bytes changed can no longer be located
    (work / "trace.json").write_text((work / "trace.json").read_text() + " ")
    rc = main(["replay", "--manifest", str(work / "calibration.json.manifest.json"), "--out", str(tmp_path / "p")])
    assert rc == EXIT_MISSING


def test_search_twice_same_seed(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", "vit", trace={"records": 600})
    for k in range(2):
        assert main(["gen-trace", "--config", str(cfg), "--out", str(tmp_path / f"o{k}")]) == EXIT_OK
        assert main(["calibrate", "--config", str(cfg), "--out", str(tmp_path / f"o{k}")]) == EXIT_OK
        assert main(["search", "--config", str(cfg), "--out", str(tmp_path / f"o{k}")]) == EXIT_OK
    assert (tmp_path / "o0" / "graph.csv").read_bytes() == (tmp_path / "o1" / "graph.csv").read_bytes()
    main(["gen-trace", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "o2")])
    assert (tmp_path / "o2" / "trace.json").read_bytes() != (tmp_path / "o0" / "trace.json").read_bytes()
    man = json.loads((tmp_path / "o2" / "trace.json.manifest.json").read_text())
    assert man["seed"] == 7 and man["config"]["seed"] == 7


def upstream(t5_runs, tmp_path) -> Path:
    """Directory holding the T5 trace, calibration and skip plan."""
    d = tmp_path / "up"
    d.mkdir()
    for name in ("trace.json", "calibration.json", "skip_plan.json"):
        shutil.copy(t5_runs["outs"][0] / name, d / name)
    return d


def cluster_file(path: Path, memories) -> Path:
    n = len(memories)
    doc = {
        "schema_version": 1,
        "kind": "cluster",
        "gpus": [{"gpu_id": f"gpu{k}", "memory": m, "idle_power": 25.0, "active_power": 230.0}
                 for k, m in enumerate(memories)],
        "transmission": [[0.0 if a == b else 1e-10 for b in range(n)] for a in range(n)],
    }
    path.write_text(json.dumps(doc))
    return path


def test_plan_forced_to_split_giant(t5_runs, tmp_path):
    up = upstream(t5_runs, tmp_path)
    # the 14 GB giant fits no single 10 GB device
    cl = cluster_file(tmp_path / "cluster.json", [10e9] * 4)
    cfg = write_config(tmp_path / "cfg.json", paths={
        **json.loads(write_config(tmp_path / "base.json").read_text())["paths"],
        "cluster": str(cl), "skip_plan": str(up / "skip_plan.json"),
    })
    assert main(["plan", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    plan = json.loads((tmp_path / "o" / "plan.json").read_text())
    assert plan["S"][-1] == 2 and plan["feasible"]
    giant = json.loads((tmp_path / "o" / "plan_giant.json").read_text())
    assert giant["S"][0] >= 2 and giant["feasible"]


def test_plan_infeasible_exit_code(t5_runs, tmp_path):
    up = upstream(t5_runs, tmp_path)
    cl = cluster_file(tmp_path / "cluster.json", [2e9])
    base = json.loads(write_config(tmp_path / "base.json").read_text())["paths"]
    cfg = write_config(tmp_path / "cfg.json", paths={**base, "cluster": str(cl), "skip_plan": str(up / "skip_plan.json")})
    assert main(["plan", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_INFEASIBLE
    assert not (tmp_path / "o" / "plan.json").exists()


def test_missing_inputs_exit_code(tmp_path):
    assert main(["search", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_MISSING
    cfg = write_config(tmp_path / "cfg.json")
    # calibrate needs a trace that was never generated
    assert main(["calibrate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_MISSING
    base = json.loads(cfg.read_text())["paths"]
    cfg2 = write_config(tmp_path / "cfg2.json", paths={**base, "joint_spec": str(tmp_path / "gone.json")})
    assert main(["gen-trace", "--config", str(cfg2), "--out", str(tmp_path / "o")]) == EXIT_MISSING


def test_invariant_violation_exit_code(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", "vit", trace={"records": 300}, search={"epsilon": 0.9})
    out = str(tmp_path / "o")
    # search parameters are validated before any stage writes
    assert main(["gen-trace", "--config", str(cfg), "--out", out]) == EXIT_INVARIANT
    assert not (tmp_path / "o" / "trace.json").exists()
    bad_mode = write_config(tmp_path / "bad.json", mode="FAST")
    assert main(["gen-trace", "--config", str(bad_mode), "--out", out]) == EXIT_INVARIANT


def test_mode_override_reaches_skip_plan(t5_runs, tmp_path):
    up = upstream(t5_runs, tmp_path)
    base = json.loads(write_config(tmp_path / "base.json").read_text())["paths"]
    cfg = write_config(tmp_path / "cfg.json", paths={**base, "trace": str(up / "trace.json"),
                                                     "calibration": str(up / "calibration.json")})
    assert main(["skip", "--config", str(cfg), "--mode", "EO", "--out", str(tmp_path / "o")]) == EXIT_OK
    assert json.loads((tmp_path / "o" / "skip_plan.json").read_text())["mode"] == "EO"


def test_config_roundtrip_fields():
    cfg = RunConfig.load(fixture_config("t5"))
    assert cfg.mode == "AP" and cfg.search_params().seed == cfg.seed
    assert cfg.workload().rate == 80.0 and cfg.sim_params().max_batch == 8
    eff = cfg.effective()
    assert set(eff) == {"mode", "seed", "trace", "search", "planner", "simulator"}


def test_console_entry_point_and_log_env(tmp_path):
    env_ok = subprocess.run([sys.executable, "-m", "cascadeserve", "--version"], capture_output=True, text=True)
    assert env_ok.returncode == 0 and __version__ in env_ok.stdout
    cfg = write_config(tmp_path / "cfg.json", "vit", trace={"records": 200})
    proc = subprocess.run(
        [sys.executable, "-m", "cascadeserve", "gen-trace", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True, text=True, env={**__import__("os").environ, "CASCADESERVE_LOG": "INFO"},
    )
    assert proc.returncode == 0 and "wrote" in proc.stderr
    quiet = subprocess.run(
        [sys.executable, "-m", "cascadeserve", "gen-trace", "--config", str(cfg), "--out", str(tmp_path / "q")],
        capture_output=True, text=True,
    )
    assert quiet.returncode == 0 and quiet.stderr == ""
    missing = subprocess.run([sys.executable, "-m", "cascadeserve", "plan", "--config", str(tmp_path / "x.json")],
                             capture_output=True, text=True)
    assert missing.returncode == EXIT_MISSING
