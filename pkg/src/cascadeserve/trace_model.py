"""Prediction traces, model profiles and cluster specs.

Everything downstream reads these types; they are immutable once built.
Files are JSON documents carrying a ``schema_version`` and a ``kind``; the
layout of each is documented in ``docs/schemas.md``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    InfeasibleError,
    InvariantError,
    MissingModelError,
    ShapeError,
    TraceFormatError,
)

SCHEMA_VERSION = 1

CLASSIFICATION = "classification"
GENERATION = "generation"
QUESTION_ANSWERING = "question_answering"
TASK_KINDS = (CLASSIFICATION, GENERATION, QUESTION_ANSWERING)


@dataclass(frozen=True)
class TaskKind:
    kind: str
    top_k: int | None = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise InvariantError(f"unknown task kind {self.kind!r}")
        if self.kind == GENERATION:
            if self.top_k is None or self.top_k < 2:
                raise InvariantError("generation tasks need top_k >= 2")
        elif self.top_k is not None:
            raise InvariantError("top_k only applies to generation tasks")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.top_k is not None:
            d["top_k"] = self.top_k
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskKind":
        return cls(d["kind"], d.get("top_k"))


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PredictionRecord:
    """One request: its ground truth and every model's raw output.

    Output layout by task: classification ``(classes,)``; generation
    ``(steps, vocab)``; question answering ``(2, context)`` with the start
    logits in row 0 and the end logits in row 1.  Labels are an int, a tuple of
    token ids, or a ``(start, end)`` tuple respectively.
    """

    request_id: str
    label: int | tuple[int, ...]
    outputs: Mapping[str, np.ndarray]

    def __post_init__(self):
        outs = {m: _frozen(v) for m, v in self.outputs.items()}
        object.__setattr__(self, "outputs", MappingProxyType(outs))
        if not isinstance(self.label, (int, np.integer)):
            object.__setattr__(self, "label", tuple(int(x) for x in self.label))
        else:
            object.__setattr__(self, "label", int(self.label))


def predicted(task: TaskKind, output: np.ndarray):
    if task.kind == CLASSIFICATION:
        return int(np.argmax(output))
    if task.kind == GENERATION:
        return tuple(int(i) for i in np.argmax(output, axis=1))
    return (int(np.argmax(output[0])), int(np.argmax(output[1])))


def is_correct(task: TaskKind, output: np.ndarray, label) -> bool:
    return predicted(task, output) == label


def _check_record(task: TaskKind, rec: PredictionRecord, models: Sequence[str]):
    missing = [m for m in models if m not in rec.outputs]
    if missing:
        raise MissingModelError(f"record {rec.request_id!r} lacks outputs for {missing}")
    extra = [m for m in rec.outputs if m not in models]
    if extra:
        raise MissingModelError(f"record {rec.request_id!r} has unknown models {extra}")
    for m in models:
        out = rec.outputs[m]
        if not np.all(np.isfinite(out)):
            raise ShapeError(f"record {rec.request_id!r}, model {m}: non-finite logits")
        if task.kind == CLASSIFICATION:
            if out.ndim != 1 or out.size < 2:
                raise ShapeError(f"record {rec.request_id!r}: classification logits must be 1-D, length >= 2")
            if not isinstance(rec.label, int) or not 0 <= rec.label < out.size:
                raise ShapeError(f"record {rec.request_id!r}: label out of range")
        elif task.kind == GENERATION:
            if out.ndim != 2 or out.shape[0] < 1:
                raise ShapeError(f"record {rec.request_id!r}: generation logits must be (steps>=1, vocab)")
            if out.shape[1] < task.top_k:
                raise ShapeError(f"record {rec.request_id!r}: vocab smaller than top_k")
            if not isinstance(rec.label, tuple) or len(rec.label) != out.shape[0]:
                raise ShapeError(f"record {rec.request_id!r}: label length != step count")
        else:
            if out.ndim != 2 or out.shape[0] != 2 or out.shape[1] < 2:
                raise ShapeError(f"record {rec.request_id!r}: QA logits must be (2, context>=2)")
            if not isinstance(rec.label, tuple) or len(rec.label) != 2:
                raise ShapeError(f"record {rec.request_id!r}: QA label must be (start, end)")


@dataclass(frozen=True)
class TraceBundle:
    task: TaskKind
    models: tuple[str, ...]
    records: tuple[PredictionRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "records", tuple(self.records))
        if len(set(self.models)) != len(self.models):
            raise InvariantError("duplicate model ids in trace")
        last_dim: dict[str, int] = {}
        for rec in self.records:
            _check_record(self.task, rec, self.models)
            for m in self.models:
                dim = rec.outputs[m].shape[-1]
                if last_dim.setdefault(m, dim) != dim:
                    raise ShapeError(
                        f"model {m}: logit length {dim} in {rec.request_id!r} "
                        f"differs from earlier records ({last_dim[m]})"
                    )

    def __len__(self):
        return len(self.records)

    def correctness(self) -> np.ndarray:
        """Boolean matrix ``(models, records)``."""
        out = np.zeros((len(self.models), len(self.records)), dtype=bool)
        for j, rec in enumerate(self.records):
            for i, m in enumerate(self.models):
                out[i, j] = is_correct(self.task, rec.outputs[m], rec.label)
        return out

    def standalone_accuracy(self) -> dict[str, float]:
        if not self.records:
            return {m: float("nan") for m in self.models}
        c = self.correctness()
        return {m: float(c[i].mean()) for i, m in enumerate(self.models)}

    def subset(self, models: Sequence[str]) -> "TraceBundle":
        recs = tuple(
            PredictionRecord(r.request_id, r.label, {m: r.outputs[m] for m in models})
            for r in self.records
        )
        return TraceBundle(self.task, tuple(models), recs)


# -- trace files -------------------------------------------------------------


def _label_to_json(label):
    return label if isinstance(label, int) else list(label)


def _output_to_json(task: TaskKind, out: np.ndarray):
    if task.kind == QUESTION_ANSWERING:
        return {"start": out[0].tolist(), "end": out[1].tolist()}
    return out.tolist()


def dumps_trace(bundle: TraceBundle) -> str:
    """Serialize a bundle; one record per line so fixtures diff cleanly."""
    head = json.dumps(
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "trace",
            "task": bundle.task.to_dict(),
            "models": list(bundle.models),
        }
    )
    lines = []
    for r in bundle.records:
        lines.append(
            json.dumps(
                {
                    "request_id": r.request_id,
                    "label": _label_to_json(r.label),
                    "outputs": {m: _output_to_json(bundle.task, r.outputs[m]) for m in bundle.models},
                }
            )
        )
    body = ",\n".join(lines)
    return head[:-1] + ', "records": [\n' + body + ("\n" if lines else "") + "]}\n"


def save_trace(bundle: TraceBundle, path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        f.write(dumps_trace(bundle))


def _read_json(path, kind: str) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise TraceFormatError(f"{path}: expected a {kind!r} document")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise TraceFormatError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    return doc


def parse_trace(doc: Mapping, task: TaskKind | None = None) -> TraceBundle:
    try:
        file_task = TaskKind.from_dict(doc["task"])
        models = tuple(doc["models"])
        raw_records = doc["records"]
    except (KeyError, TypeError) as exc:
        raise TraceFormatError(f"trace document missing field: {exc}") from exc
    if task is not None and task != file_task:
        raise ShapeError(f"trace declares task {file_task}, caller expects {task}")
    records = []
    for raw in raw_records:
        try:
            label = raw["label"]
            outputs = {}
            for m, v in raw["outputs"].items():
                if file_task.kind == QUESTION_ANSWERING:
                    if len(v["start"]) != len(v["end"]):
                        raise ShapeError(f"record {raw['request_id']!r}: start/end length mismatch")
                    outputs[m] = [v["start"], v["end"]]
                else:
                    outputs[m] = v
            records.append(PredictionRecord(str(raw["request_id"]), label, outputs))
        except (KeyError, TypeError) as exc:
            raise TraceFormatError(f"malformed record: {exc}") from exc
        except ValueError as exc:
            raise ShapeError(f"ragged logits: {exc}") from exc
    return TraceBundle(file_task, models, tuple(records))


def load_trace(path: str | os.PathLike, task: TaskKind | None = None) -> TraceBundle:
    return parse_trace(_read_json(path, "trace"), task)


# -- synthetic traces --------------------------------------------------------


@dataclass(frozen=True)
class JointAccuracySpec:
    """Correctness structure of a model family, ordered small to large.

    ``contributions[i]`` is the fraction of requests model ``i`` gets right
    while every smaller model gets them wrong; ``marginals[i]`` is model
    ``i``'s standalone accuracy (``None`` means it is also right wherever a
    smaller model is).  ``dim`` is the class count, vocabulary size or context
    length depending on the task.
    """

    models: tuple[str, ...]
    contributions: tuple[float, ...]
    task: TaskKind
    dim: int
    marginals: tuple[float | None, ...] | None = None
    steps: int = 4
    overlap: float | tuple[float, ...] = 0.2
    margin_width: float = 3.0
    logit_scale: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("models", "contributions"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        n = len(self.models)
        if len(self.contributions) != n:
            raise InvariantError("one contribution per model required")
        if self.marginals is not None:
            object.__setattr__(self, "marginals", tuple(self.marginals))
            if len(self.marginals) != n:
                raise InvariantError("one marginal (or null) per model required")
        if not isinstance(self.overlap, (int, float)):
            object.__setattr__(self, "overlap", tuple(self.overlap))
            if len(self.overlap) != n:
                raise InvariantError("per-model overlap needs one value per model")
        if self.logit_scale is not None:
            object.__setattr__(self, "logit_scale", tuple(self.logit_scale))
            if len(self.logit_scale) != n or min(self.logit_scale) <= 0:
                raise InvariantError("logit_scale needs one positive value per model")
        if self.dim < 2 or self.steps < 1 or self.margin_width <= 0:
            raise InvariantError("dim >= 2, steps >= 1, margin_width > 0 required")
        if self.task.kind == GENERATION and self.dim < self.task.top_k:
            raise InvariantError("vocabulary smaller than top_k")
        for o in self.overlaps():
            if not 0.0 <= o <= 1.0:
                raise InvariantError("overlap must lie in [0, 1]")

    def overlaps(self) -> tuple[float, ...]:
        if isinstance(self.overlap, tuple):
            return self.overlap
        return (float(self.overlap),) * len(self.models)

    def scales(self) -> tuple[float, ...]:
        return self.logit_scale or (1.0,) * len(self.models)

    def regions(self) -> list[tuple[float, float, float]]:
        """Per model ``(easy_hi, new_lo, new_hi)`` on the difficulty axis.

        Model ``i`` is correct iff ``d < easy_hi`` or ``new_lo <= d < new_hi``
        for the request's difficulty ``d ~ U(0, 1)``.
        """
        c = np.asarray(self.contributions, dtype=float)
        if np.any(c < 0):
            raise InfeasibleError("contributions must be nonnegative")
        if c.sum() > 1.0 + 1e-12:
            raise InfeasibleError(f"contributions sum to {c.sum():.4f} > 1")
        out = []
        start = 0.0
        for i, ci in enumerate(c):
            m = None if self.marginals is None else self.marginals[i]
            if m is None:
                m = start + ci
            if not 0.0 <= m <= 1.0:
                raise InfeasibleError(f"marginal of {self.models[i]} outside [0, 1]")
            overlap = m - ci
            if overlap < -1e-12 or overlap > start + 1e-12:
                raise InfeasibleError(
                    f"marginal {m} of {self.models[i]} incompatible with contribution {ci} "
                    f"(needs {ci} <= marginal <= {start + ci})"
                )
            out.append((max(overlap, 0.0), start, start + ci))
            start += ci
        return out

    @property
    def joint_accuracy(self) -> float:
        return float(sum(self.contributions))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "joint_spec",
            "models": list(self.models),
            "contributions": list(self.contributions),
            "marginals": None if self.marginals is None else list(self.marginals),
            "task": self.task.to_dict(),
            "dim": self.dim,
            "steps": self.steps,
            "overlap": self.overlap if not isinstance(self.overlap, tuple) else list(self.overlap),
            "margin_width": self.margin_width,
            "logit_scale": None if self.logit_scale is None else list(self.logit_scale),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "JointAccuracySpec":
        return cls(
            models=tuple(d["models"]),
            contributions=tuple(d["contributions"]),
            task=TaskKind.from_dict(d["task"]),
            dim=int(d["dim"]),
            marginals=None if d.get("marginals") is None else tuple(d["marginals"]),
            steps=int(d.get("steps", 4)),
            overlap=d.get("overlap", 0.2),
            margin_width=float(d.get("margin_width", 3.0)),
            logit_scale=None if d.get("logit_scale") is None else tuple(d["logit_scale"]),
        )


def load_joint_spec(path) -> JointAccuracySpec:
    doc = _read_json(path, "joint_spec")
    try:
        return JointAccuracySpec.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise TraceFormatError(f"{path}: {exc}") from exc


def _margins(rng, correct: np.ndarray, overlap: float, width: float) -> np.ndarray:
    # wrong: U(0, W); right: U((1-o)W, (2-o)W); the ranges share a band of o*W
    u = rng.random(correct.shape)
    lo = np.where(correct, (1.0 - overlap) * width, 0.0)
    return lo + u * width + 1e-3


def _plant(base: np.ndarray, winner: np.ndarray, gap: np.ndarray) -> np.ndarray:
    """Raise ``base[..., winner]`` to ``gap`` above the best other entry."""
    idx = np.expand_dims(winner, -1)
    others = base.copy()
    np.put_along_axis(others, idx, -np.inf, axis=-1)
    top = others.max(axis=-1)
    out = base.copy()
    np.put_along_axis(out, idx, np.expand_dims(top + gap, -1), axis=-1)
    return out


def _other_index(rng, true: np.ndarray, dim: int) -> np.ndarray:
    shift = rng.integers(1, dim, size=true.shape)
    return (true + shift) % dim


def generate_synthetic_trace(spec: JointAccuracySpec, n: int, seed: int) -> TraceBundle:
    """Draw ``n`` records whose per-model correctness follows ``spec``.

    A shared difficulty ``d ~ U(0, 1)`` per request decides which models are
    right (see :meth:`JointAccuracySpec.regions`).  A right model's winning
    logit sits a high margin above the rest, a wrong model's a low margin, with
    the two margin ranges overlapping by ``spec.overlap``.
    """
    if n < 0:
        raise InvariantError("n must be >= 0")
    regions = spec.regions()
    rng = np.random.default_rng(seed)
    task = spec.task
    d = rng.random(n)
    if task.kind == CLASSIFICATION:
        labels = rng.integers(0, spec.dim, size=n)
    elif task.kind == GENERATION:
        labels = rng.integers(0, spec.dim, size=(n, spec.steps))
    else:
        starts = rng.integers(0, spec.dim - 1, size=n)
        ends = np.minimum(starts + rng.integers(0, 4, size=n), spec.dim - 1)
        labels = np.stack([starts, ends], axis=1)

    per_model = {}
    for m, (easy_hi, new_lo, new_hi), overlap, scale in zip(
        spec.models, regions, spec.overlaps(), spec.scales()
    ):
        ok = (d < easy_hi) | ((d >= new_lo) & (d < new_hi))
        if task.kind == CLASSIFICATION:
            base = rng.normal(0.0, 1.0, size=(n, spec.dim))
            winner = np.where(ok, labels, _other_index(rng, labels, spec.dim))
            logits = _plant(base, winner, _margins(rng, ok, overlap, spec.margin_width))
        elif task.kind == GENERATION:
            base = rng.normal(0.0, 1.0, size=(n, spec.steps, spec.dim))
            bad_step = rng.integers(0, spec.steps, size=n)
            step_ok = ok[:, None] | (np.arange(spec.steps)[None, :] != bad_step[:, None])
            winner = np.where(step_ok, labels, _other_index(rng, labels, spec.dim))
            logits = _plant(base, winner, _margins(rng, step_ok, overlap, spec.margin_width))
        else:
            base = rng.normal(0.0, 1.0, size=(n, 2, spec.dim))
            # wrong answers miss the start, the end, or both
            which = rng.integers(0, 3, size=n)
            side_ok = np.stack([ok | (which == 1), ok | (which == 0)], axis=1)
            winner = np.where(side_ok, labels, _other_index(rng, labels, spec.dim))
            logits = _plant(base, winner, _margins(rng, side_ok, overlap, spec.margin_width))
        per_model[m] = logits * scale

    records = []
    width = len(str(max(n - 1, 0)))
    for j in range(n):
        label = int(labels[j]) if task.kind == CLASSIFICATION else tuple(int(x) for x in labels[j])
        records.append(
            PredictionRecord(f"r{j:0{width}d}", label, {m: per_model[m][j] for m in spec.models})
        )
    return TraceBundle(task, spec.models, tuple(records))


def contributions_of(correct: np.ndarray) -> np.ndarray:
    """Fraction right at model ``i`` and wrong at every smaller model."""
    seen = np.zeros(correct.shape[1], dtype=bool)
    out = []
    for row in correct:
        out.append(float((row & ~seen).mean()) if row.size else 0.0)
        seen |= row
    return np.array(out)


# -- profiles and clusters ---------------------------------------------------


@dataclass(frozen=True)
class ModelProfile:
    """Cost, accuracy and resource descriptors of one model.

    Affine coefficients are ``(slope, intercept)`` over batch size.  When
    ``latency_coeffs`` is absent the batch service time is flat at
    ``service_latency``.
    """

    model_id: str
    param_count: int
    standalone_accuracy: float
    energy_per_request: float
    service_latency: float
    memory: float
    utilization_coeffs: tuple[float, float]
    transmission_coeffs: tuple[float, float]
    output_bytes: float
    latency_coeffs: tuple[float, float] | None = None
    memory_per_item: float = 0.0
    hidden_bytes: float | None = None

    def __post_init__(self):
        for name in ("utilization_coeffs", "transmission_coeffs", "latency_coeffs"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(x) for x in v))
        if not self.energy_per_request > 0:
            raise InvariantError(f"{self.model_id}: energy_per_request must be > 0")
        if not self.service_latency > 0:
            raise InvariantError(f"{self.model_id}: service_latency must be > 0")
        if not self.memory > 0:
            raise InvariantError(f"{self.model_id}: memory must be > 0")
        if not 0.0 <= self.standalone_accuracy <= 1.0:
            raise InvariantError(f"{self.model_id}: standalone_accuracy outside [0, 1]")
        if self.output_bytes < 0 or self.memory_per_item < 0:
            raise InvariantError(f"{self.model_id}: byte counts must be nonnegative")

    @property
    def state_bytes(self) -> float:
        return self.output_bytes if self.hidden_bytes is None else self.hidden_bytes

    def to_dict(self) -> dict:
        d = {
            "model_id": self.model_id,
            "param_count": self.param_count,
            "standalone_accuracy": self.standalone_accuracy,
            "energy_per_request": self.energy_per_request,
            "service_latency": self.service_latency,
            "memory": self.memory,
            "utilization_coeffs": list(self.utilization_coeffs),
            "transmission_coeffs": list(self.transmission_coeffs),
            "output_bytes": self.output_bytes,
        }
        if self.latency_coeffs is not None:
            d["latency_coeffs"] = list(self.latency_coeffs)
        if self.memory_per_item:
            d["memory_per_item"] = self.memory_per_item
        if self.hidden_bytes is not None:
            d["hidden_bytes"] = self.hidden_bytes
        return d


def parse_profiles(doc: Mapping) -> list[ModelProfile]:
    try:
        profiles = [
            ModelProfile(
                model_id=str(p["model_id"]),
                param_count=int(p["param_count"]),
                standalone_accuracy=float(p["standalone_accuracy"]),
                energy_per_request=float(p["energy_per_request"]),
                service_latency=float(p["service_latency"]),
                memory=float(p["memory"]),
                utilization_coeffs=tuple(p["utilization_coeffs"]),
                transmission_coeffs=tuple(p["transmission_coeffs"]),
                output_bytes=float(p["output_bytes"]),
                latency_coeffs=None if p.get("latency_coeffs") is None else tuple(p["latency_coeffs"]),
                memory_per_item=float(p.get("memory_per_item", 0.0)),
                hidden_bytes=None if p.get("hidden_bytes") is None else float(p["hidden_bytes"]),
            )
            for p in doc["profiles"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"malformed profile: {exc}") from exc
    counts = [p.param_count for p in profiles]
    if counts != sorted(counts):
        raise InvariantError("profiles must be ordered by nondecreasing param_count")
    return profiles


def load_profiles(path) -> list[ModelProfile]:
    return parse_profiles(_read_json(path, "profiles"))


def dumps_profiles(profiles: Sequence[ModelProfile]) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "kind": "profiles", "profiles": [p.to_dict() for p in profiles]}
    return json.dumps(doc, indent=2) + "\n"


@dataclass(frozen=True)
class GPU:
    gpu_id: str
    memory: float
    idle_power: float
    active_power: float

    def __post_init__(self):
        if self.memory <= 0:
            raise InvariantError(f"{self.gpu_id}: memory must be > 0")
        if not 0 <= self.idle_power <= self.active_power:
            raise InvariantError(f"{self.gpu_id}: need 0 <= idle_power <= active_power")


@dataclass(frozen=True)
class ClusterSpec:
    """GPUs plus the seconds-per-byte transfer cost between every pair."""

    gpus: tuple[GPU, ...]
    transmission: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "gpus", tuple(self.gpus))
        t = _frozen(self.transmission)
        object.__setattr__(self, "transmission", t)
        g = len(self.gpus)
        if g == 0:
            raise InvariantError("cluster has no GPUs")
        if t.shape != (g, g):
            raise InvariantError(f"transmission matrix must be {g}x{g}")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise InvariantError("transmission costs must be finite and nonnegative")
        if not np.array_equal(t, t.T):
            raise InvariantError("transmission matrix must be symmetric")
        if np.any(np.diag(t)[:, None] > t):
            raise InvariantError("intra-GPU cost must not exceed any inter-GPU cost on the same row")

    @property
    def memories(self) -> np.ndarray:
        return np.array([gp.memory for gp in self.gpus])

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "cluster",
            "gpus": [
                {"gpu_id": g.gpu_id, "memory": g.memory, "idle_power": g.idle_power, "active_power": g.active_power}
                for g in self.gpus
            ],
            "transmission": self.transmission.tolist(),
        }


def parse_cluster(doc: Mapping) -> ClusterSpec:
    try:
        gpus = [
            GPU(str(g["gpu_id"]), float(g["memory"]), float(g["idle_power"]), float(g["active_power"]))
            for g in doc["gpus"]
        ]
        return ClusterSpec(tuple(gpus), np.array(doc["transmission"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"malformed cluster: {exc}") from exc


def load_cluster(path) -> ClusterSpec:
    return parse_cluster(_read_json(path, "cluster"))


def dumps_cluster(cluster: ClusterSpec) -> str:
    return json.dumps(cluster.to_dict(), indent=2) + "\n"
