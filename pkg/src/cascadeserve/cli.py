"""Command-line pipeline: every stage reads and writes files in one output
directory, and every artifact gets a ``<name>.manifest.json`` next to it."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .calibration import calibrate, load_calibration
from .cascade_eval import Costs, ScoreTable
from .errors import CascadeError, InfeasibleError, MissingModelError
from .planner import PlannerParams, ProfileMap, choose_batch_size, load_plan, plan_search
from .simulator import SimParams, SimReport, Workload, compare_plans, comparison_csv, paths_from_table, run
from .skip_config import SkipPlan, prune_and_rewire
from .threshold_search import PerfGraph, SearchParams, search, select
from .trace_model import SCHEMA_VERSION, dumps_trace, generate_synthetic_trace, load_cluster, load_joint_spec, load_profiles, load_trace

log = logging.getLogger("cascadeserve")

EXIT_OK = 0
EXIT_MISSING = 2
EXIT_INFEASIBLE = 3
EXIT_INVARIANT = 4

LOG_ENV = "CASCADESERVE_LOG"
MODES = ("AP", "EO")


class MissingInputError(CascadeError):
    pass


@dataclass
class RunConfig:
    base_dir: Path
    paths: dict[str, str | None] = field(default_factory=dict)
    mode: str = "AP"
    seed: int = 0
    trace: dict = field(default_factory=lambda: {"records": 2000})
    search: dict = field(default_factory=dict)
    planner: dict = field(default_factory=dict)
    simulator: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise CascadeError(f"mode must be one of {MODES}, got {self.mode!r}")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise MissingInputError(f"config file {p} not found")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise CascadeError(f"{p}: {exc}") from exc
        known = {"paths", "mode", "seed", "trace", "search", "planner", "simulator"}
        return cls(base_dir=p.resolve().parent, **{k: v for k, v in doc.items() if k in known})

    def input_path(self, key: str) -> Path | None:
        v = self.paths.get(key)
        return None if v is None else (self.base_dir / v)

    def effective(self) -> dict:
        """Everything that affects artifact bytes except file locations."""
        return {
            "mode": self.mode,
            "seed": self.seed,
            "trace": self.trace,
            "search": self.search_params().__dict__,
            "planner": self.planner,
            "simulator": self.simulator,
        }

    def search_params(self) -> SearchParams:
        return SearchParams(**{**self.search, "seed": self.seed})

    def sim_params(self) -> SimParams:
        keys = {"max_batch", "max_wait", "hop_overhead", "meter_period", "power_down_unused"}
        return SimParams(**{k: v for k, v in self.simulator.items() if k in keys})

    def workload(self) -> Workload:
        s = self.simulator
        arrivals = s.get("arrivals")
        return Workload(
            rate=s.get("rate"),
            duration=float(s.get("duration", 10.0)),
            seed=self.seed,
            arrivals=None if arrivals is None else tuple(arrivals),
        )


# -- artifact plumbing -------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Stage:
    """Collects a stage's input hashes and writes artifacts plus manifests."""

    def __init__(self, name: str, cfg: RunConfig, out: Path):
        self.name = name
        self.cfg = cfg
        self.out = out
        self.inputs: dict[str, str] = {}

    def need(self, key: str, default: str | None = None) -> Path:
        """Configured input ``key``, else ``default`` inside the output dir."""
        p = self.cfg.input_path(key)
        if p is None and default is not None:
            p = self.out / default
        if p is None or not p.is_file():
            raise MissingInputError(f"stage {self.name}: input {key!r} not found ({p})")
        self.inputs[f"{key}:{p.name}"] = sha256_file(p)
        return p

    def write(self, name: str, text: str) -> Path:
        data = text.encode()
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "kind": "manifest",
            "artifact": name,
            "sha256": hashlib.sha256(data).hexdigest(),
            "stage": self.name,
            "tool": "cascadeserve",
            "version": __version__,
            "seed": self.cfg.seed,
            "mode": self.cfg.mode,
            "inputs": dict(sorted(self.inputs.items())),
            "config": self.cfg.effective(),
        }
        # the manifest is built first so a bad config leaves no orphan artifact
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_bytes(data)
        (self.out / f"{name}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        log.info("wrote %s", path)
        return path


def _profiles(stage: Stage):
    return load_profiles(stage.need("profiles"))


def _table(stage: Stage):
    trace = load_trace(stage.need("trace", "trace.json"))
    calib = load_calibration(stage.need("calibration", "calibration.json"))
    return trace, calib, ScoreTable.build(trace, calib)


def _load_skip(path: Path) -> SkipPlan:
    doc = json.loads(path.read_text())
    if doc.get("kind") != "skip_plan":
        raise CascadeError(f"{path}: expected a skip plan")
    return SkipPlan.from_dict(doc)


# -- stages ------------------------------------------------------------------


def stage_gen_trace(cfg: RunConfig, out: Path) -> None:
    st = Stage("gen-trace", cfg, out)
    spec = load_joint_spec(st.need("joint_spec"))
    bundle = generate_synthetic_trace(spec, int(cfg.trace.get("records", 2000)), cfg.seed)
    st.write("trace.json", dumps_trace(bundle))


def stage_calibrate(cfg: RunConfig, out: Path) -> None:
    st = Stage("calibrate", cfg, out)
    trace = load_trace(st.need("trace", "trace.json"))
    st.write("calibration.json", calibrate(trace).dumps())


def stage_search(cfg: RunConfig, out: Path) -> None:
    st = Stage("search", cfg, out)
    _, _, table = _table(st)
    costs = Costs.of(_profiles(st), table.models)
    graph = search(table, costs, cfg.search_params())
    sel = {mode: select(graph, mode) for mode in MODES}
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "selection",
        "models": list(graph.models),
        "model_accuracy": list(graph.model_accuracy),
        "rounds": graph.rounds,
        "evaluations": graph.evaluations,
        "selected": {
            m: {"thresholds": list(s.point.thresholds), "accuracy": s.point.accuracy, "energy": s.point.energy,
                "fallback": s.fallback}
            for m, s in sel.items()
        },
    }
    st.write("graph.csv", graph.to_csv())
    st.write("selection.json", json.dumps(doc, indent=2) + "\n")


def stage_skip(cfg: RunConfig, out: Path) -> None:
    st = Stage("skip", cfg, out)
    _, _, table = _table(st)
    plan = prune_and_rewire(table, _profiles(st), cfg.search_params(), cfg.mode)
    st.write("skip_plan.json", plan.dumps())


def planner_params(cfg: RunConfig, profile_map: ProfileMap, models: Sequence[str]) -> PlannerParams:
    p = dict(cfg.planner)
    budget = p.pop("latency_budget", None)
    if "batch_size" not in p and budget is not None:
        p["batch_size"] = choose_batch_size(profile_map, models, float(budget))
    keys = set(PlannerParams.__dataclass_fields__)
    return PlannerParams(**{k: v for k, v in p.items() if k in keys})


def stage_plan(cfg: RunConfig, out: Path) -> None:
    st = Stage("plan", cfg, out)
    skip = _load_skip(st.need("skip_plan", "skip_plan.json"))
    profiles = _profiles(st)
    cluster = load_cluster(st.need("cluster"))
    pmap = ProfileMap.from_profiles(profiles)
    params = planner_params(cfg, pmap, skip.models)
    m = skip.skip_metrics or skip.metrics
    plan = plan_search(skip.models, m.reach, m.flow, profiles, cluster, params, pmap)
    giant = skip.models[-1]
    baseline = plan_search([giant], [1.0], [[0.0]], profiles, cluster, params, pmap)
    st.write("plan.json", plan.dumps())
    st.write("plan_giant.json", baseline.dumps())


def stage_simulate(cfg: RunConfig, out: Path) -> None:
    st = Stage("simulate", cfg, out)
    plan = load_plan(st.need("plan", "plan.json"))
    baseline = load_plan(st.need("plan_giant", "plan_giant.json"))
    skip = _load_skip(st.need("skip_plan", "skip_plan.json"))
    trace, calib, _ = _table(st)
    profiles = _profiles(st)
    cluster = load_cluster(st.need("cluster"))
    paths = paths_from_table(ScoreTable.build(trace, calib, skip.models), skip.config)
    wl, sp = cfg.workload(), cfg.sim_params()
    rep = run(plan, paths, profiles, cluster, wl, sp)
    base = run(baseline, [(baseline.models[-1],)], profiles, cluster, wl, sp)
    st.write("sim_report.json", rep.dumps())
    st.write("sim_giant.json", base.dumps())
    st.write("utilization.csv", rep.utilization_csv(sp.meter_period))
    st.write("latency_hist.csv", rep.latency_csv())
    st.write("latency_hist_giant.csv", base.latency_csv())


def _read_hist(path: Path) -> np.ndarray:
    rows = list(csv.reader(io.StringIO(path.read_text())))[1:]
    return np.array([int(r[1]) for r in rows], dtype=np.int64)


def _report_from_json(path: Path) -> SimReport:
    d = json.loads(path.read_text())
    return SimReport(
        models=tuple(d["models"]), gpu_ids=tuple(d["gpu_joules"]), duration=d["duration"],
        arrivals=d["arrivals"], completions=d["completions"], in_flight=d["in_flight"],
        throughput=d["throughput"], mean_latency=d["mean_latency"], p999_latency=d["p999_latency"],
        joules_total=d["joules_total"], joules_per_request=d["joules_per_request"], gpu_joules=d["gpu_joules"],
        reach=d["reach"], queue_delay=d["queue_delay"], service_time=d["service_time"],
        gpu_utilization=d["gpu_utilization"], mean_in_system=d["mean_in_system"],
        utilization_series=np.zeros((0, 0)), latency_hist=np.zeros(0),
    )


def stage_report(cfg: RunConfig, out: Path) -> None:
    st = Stage("report", cfg, out)
    sel = json.loads(st.need("selection", "selection.json").read_text())
    graph = PerfGraph.from_csv(st.need("graph", "graph.csv").read_text(), sel["models"])
    cascade = _report_from_json(st.need("sim_report", "sim_report.json"))
    giant = _report_from_json(st.need("sim_giant", "sim_giant.json"))
    h_c = _read_hist(st.need("latency_hist", "latency_hist.csv"))
    h_g = _read_hist(st.need("latency_hist_giant", "latency_hist_giant.csv"))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["accuracy", "energy"] + [f"t_{m}" for m in graph.models[:-1]])
    for p in sorted(graph.pareto, key=lambda p: (p.accuracy, p.energy, p.thresholds)):
        w.writerow([repr(p.accuracy), repr(p.energy)] + [repr(t) for t in p.thresholds])
    st.write("frontier.csv", buf.getvalue())

    n = max(len(h_c), len(h_g))
    cdf_c = np.cumsum(np.pad(h_c, (0, n - len(h_c)))) / max(h_c.sum(), 1)
    cdf_g = np.cumsum(np.pad(h_g, (0, n - len(h_g)))) / max(h_g.sum(), 1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["latency_ms_upper", "cascade_cdf", "giant_cdf"])
    for k in range(n):
        w.writerow([k + 1, repr(float(cdf_c[k])), repr(float(cdf_g[k]))])
    st.write("latency_cdf.csv", buf.getvalue())

    st.write("comparison.csv", comparison_csv(compare_plans([giant, cascade], ["giant", f"cascade-{cfg.mode}"])))


STAGES: dict[str, Callable[[RunConfig, Path], None]] = {
    "gen-trace": stage_gen_trace,
    "calibrate": stage_calibrate,
    "search": stage_search,
    "skip": stage_skip,
    "plan": stage_plan,
    "simulate": stage_simulate,
    "report": stage_report,
}


def stage_pipeline(cfg: RunConfig, out: Path) -> None:
    for name, fn in STAGES.items():
        if name == "gen-trace" and cfg.input_path("trace") is not None:
            continue
        if name == "calibrate" and cfg.input_path("calibration") is not None:
            continue
        log.info("stage %s", name)
        fn(cfg, out)


# -- entry point -------------------------------------------------------------


def _find_input(name: str, digest: str, dirs: Sequence[Path]) -> Path:
    for d in dirs:
        p = d / name
        if p.is_file() and sha256_file(p) == digest:
            return p
    raise MissingInputError(f"no file named {name} with sha256 {digest[:12]}... in {[str(d) for d in dirs]}")


def replay(manifest_path: Path, out: Path, search_dirs: Sequence[Path] = ()) -> bool:
    """Re-run the stage that produced a manifest's artifact into ``out``.

    Inputs are located by basename in the manifest's directory and then in
    ``search_dirs``, and must match the recorded hashes.  Returns whether the
    regenerated artifact has the recorded sha256.
    """
    if not manifest_path.is_file():
        raise MissingInputError(f"manifest {manifest_path} not found")
    man = json.loads(manifest_path.read_text())
    if man.get("kind") != "manifest":
        raise CascadeError(f"{manifest_path}: expected a manifest")
    dirs = [manifest_path.resolve().parent, *[Path(d) for d in search_dirs]]
    paths = {}
    for key_name, digest in man["inputs"].items():
        key, name = key_name.split(":", 1)
        paths[key] = str(_find_input(name, digest, dirs).resolve())
    c = man["config"]
    cfg = RunConfig(
        base_dir=Path("/"), paths=paths, mode=c["mode"], seed=c["seed"], trace=c["trace"],
        search={k: v for k, v in c["search"].items() if k != "seed"}, planner=c["planner"], simulator=c["simulator"],
    )
    STAGES[man["stage"]](cfg, out)
    return sha256_file(out / man["artifact"]) == man["sha256"]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cascadeserve", description=__doc__)
    ap.add_argument("--version", action="version", version=f"cascadeserve {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["pipeline"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--mode", choices=MODES, help="override the config mode")
        p.add_argument("--out", help="output directory (default: config paths.out or ./out)")
    p = sub.add_parser("replay", help="re-run the stage recorded in a manifest and compare bytes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--inputs", action="append", default=[], help="extra directory to search for inputs")
    p.add_argument("--out", required=True)
    return ap


def fixture_config(name: str) -> Path:
    """Path of a bundled fixture family's run config."""
    return Path(__file__).resolve().parent / "fixtures" / name / "config.json"


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            if not replay(Path(args.manifest), Path(args.out), args.inputs):
                print("replay produced different bytes", file=sys.stderr)
                return EXIT_INVARIANT
            return EXIT_OK
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.mode is not None:
            cfg.mode = args.mode
        out = Path(args.out) if args.out else (cfg.input_path("out") or Path("out"))
        fn = stage_pipeline if args.command == "pipeline" else STAGES[args.command]
        fn(cfg, out)
    except (MissingInputError, MissingModelError, FileNotFoundError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except CascadeError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
