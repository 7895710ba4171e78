"""Regenerate the bundled fixture families.

Energy per request is derived from the same power model the simulator uses:
``(active - idle) * u(b) * l(b) / b`` at the nominal batch size.
"""

import json
import pathlib

import numpy as np

from cascadeserve.trace_model import (
    GPU,
    ClusterSpec,
    JointAccuracySpec,
    ModelProfile,
    TaskKind,
    dumps_cluster,
    dumps_profiles,
)

ROOT = pathlib.Path(__file__).resolve().parents[1] / "src" / "cascadeserve" / "fixtures"
NOMINAL_BATCH = 8
IDLE, ACTIVE, GPU_MEM = 25.0, 230.0, 24e9
LINK = 1e-10  # seconds per byte between distinct GPUs


def profile(name, params_m, acc, a, c, u, mem, out_bytes, hidden):
    b = NOMINAL_BATCH
    lat = a * b + c
    util = min(1.0, u[0] * b + u[1])
    return ModelProfile(
        model_id=name,
        param_count=int(params_m * 1e6),
        standalone_accuracy=acc,
        energy_per_request=round((ACTIVE - IDLE) * util * lat / b, 6),
        service_latency=round(lat, 6),
        memory=mem,
        utilization_coeffs=u,
        transmission_coeffs=(2e-5, 1e-4),
        output_bytes=out_bytes,
        latency_coeffs=(a, c),
        memory_per_item=5e7,
        hidden_bytes=hidden,
    )


def cluster(g):
    t = np.full((g, g), LINK)
    np.fill_diagonal(t, 0.0)
    return ClusterSpec(tuple(GPU(f"gpu{k}", GPU_MEM, IDLE, ACTIVE) for k in range(g)), t)


def write(name, spec, profiles, gpus, config):
    d = ROOT / name
    d.mkdir(parents=True, exist_ok=True)
    (d / "joint_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    (d / "profiles.json").write_text(dumps_profiles(profiles))
    (d / "cluster.json").write_text(dumps_cluster(cluster(gpus)))
    base = {
        "schema_version": 1,
        "kind": "run_config",
        "paths": {"joint_spec": "joint_spec.json", "profiles": "profiles.json", "cluster": "cluster.json"},
        "mode": "AP",
        "seed": 0,
        "trace": {"records": 2000},
        "search": {"samples": 256, "epsilon": 0.05, "max_rounds": 50},
        "planner": {"batch_size": NOMINAL_BATCH, "objective": "min", "intra_discount": 1.0,
                    "partition_slack": 1, "max_replicas": gpus, "max_load": 0.8},
        "simulator": {"duration": 30.0, "max_batch": 8, "max_wait": 0.01},
    }
    for k, v in config.items():
        base[k].update(v) if isinstance(v, dict) else base.__setitem__(k, v)
    (d / "config.json").write_text(json.dumps(base, indent=2) + "\n")


def t5():
    spec = JointAccuracySpec(
        models=("t5-s", "t5-m", "t5-l", "t5-xl"),
        contributions=(0.782, 0.08, 0.04, 0.03),
        marginals=(0.782, 0.842, 0.871, 0.905),
        task=TaskKind("classification"),
        dim=3,
        logit_scale=(1.0, 1.3, 1.6, 2.0),
    )
    profiles = [
        profile("t5-s", 60, 0.782, 0.0008, 0.002, (0.03, 0.30), 0.74e9, 4096, 65536),
        profile("t5-m", 220, 0.842, 0.0025, 0.003, (0.03, 0.45), 1.38e9, 4096, 196608),
        profile("t5-l", 770, 0.871, 0.0070, 0.004, (0.02, 0.60), 4.1e9, 4096, 262144),
        profile("t5-xl", 3000, 0.905, 0.0250, 0.006, (0.01, 0.85), 14e9, 4096, 524288),
    ]
    write("t5", spec, profiles, 4, {"simulator": {"rate": 80.0}, "planner": {"rate": 80.0}})


def gpt():
    models = ("gpt-xs", "gpt-s", "gpt-m", "gpt-l", "gpt-xl", "gpt-xxl")
    params = (86, 124, 345, 774, 1558, 6700)
    acc = (0.236, 0.311, 0.344, 0.354, 0.369, 0.423)
    spec = JointAccuracySpec(
        models=models,
        contributions=(0.236, 0.08, 0.04, 0.02, 0.0, 0.06),
        marginals=acc,
        task=TaskKind("generation", top_k=10),
        dim=20,
        steps=4,
        # the xl-like model's confidence carries no information about correctness
        overlap=(0.2, 0.2, 0.2, 0.2, 1.0, 0.2),
        logit_scale=(1.0, 1.1, 1.2, 1.3, 1.4, 1.6),
    )
    profiles = [
        profile(m, p, a, p * 8e-6, 0.002 + p * 1e-6, (0.02, 0.4 + 0.5 * p / 6700), p * 4e6 + 1.2e9, 51200, p * 300.0)
        for m, p, a in zip(models, params, acc)
    ]
    write("gpt", spec, profiles, 8, {"simulator": {"rate": 30.0}, "planner": {"rate": 30.0}})


def vit():
    models = ("vit-xs", "vit-s", "vit-m", "vit-l")
    params = (12, 45, 86, 307)
    acc = (0.748, 0.808, 0.812, 0.823)
    spec = JointAccuracySpec(
        models=models,
        contributions=(0.748, 0.07, 0.02, 0.02),
        marginals=acc,
        task=TaskKind("classification"),
        dim=100,
        logit_scale=(1.0, 1.2, 1.3, 1.5),
    )
    profiles = [
        profile(m, p, a, p * 2e-5, 0.001, (0.02, 0.3 + 0.5 * p / 307), p * 4e6 + 0.5e9, 4096, p * 1000.0)
        for m, p, a in zip(models, params, acc)
    ]
    write("vit", spec, profiles, 4, {"simulator": {"rate": 150.0}, "planner": {"rate": 150.0}})


if __name__ == "__main__":
    t5()
    gpt()
    vit()
