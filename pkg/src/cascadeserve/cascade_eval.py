"""Route traces through a cascade and measure accuracy, energy and latency."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .calibration import Calibration
from .errors import InvariantError, MissingModelError
from .trace_model import SCHEMA_VERSION, ModelProfile, PredictionRecord, TaskKind, TraceBundle, is_correct

DEFAULT_HOP_OVERHEAD = 1e-3

Band = tuple[float, int]


@dataclass(frozen=True)
class CascadeConfig:
    """Ordered models with per-model thresholds and optional skip bands.

    ``thresholds`` may omit the last model; its threshold is forced to 0.
    ``skip_bands[i]`` lists ``(lower_bound, destination_index)`` pairs sorted
    from the band just below ``thresholds[i]`` down to the band starting at 0.
    An empty tuple means plain sequential escalation.
    """

    models: tuple[str, ...]
    thresholds: tuple[float, ...]
    skip_bands: tuple[tuple[Band, ...], ...] | None = None

    def __post_init__(self):
        models = tuple(self.models)
        n = len(models)
        if n == 0:
            raise InvariantError("a cascade needs at least one model")
        t = [float(x) for x in self.thresholds]
        if len(t) == n - 1:
            t.append(0.0)
        if len(t) != n:
            raise InvariantError(f"expected {n - 1} or {n} thresholds, got {len(t)}")
        t[-1] = 0.0
        if any(not 0.0 <= x <= 1.0 for x in t):
            raise InvariantError("thresholds must lie in [0, 1]")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "thresholds", tuple(t))
        if self.skip_bands is None:
            return
        bands = tuple(tuple((float(lo), int(d)) for lo, d in b) for b in self.skip_bands)
        if len(bands) != n:
            raise InvariantError("one skip-band list per model required")
        for i, b in enumerate(bands):
            if not b:
                continue
            if i == n - 1:
                raise InvariantError("the last model cannot have skip bands")
            lows = [lo for lo, _ in b]
            dests = [d for _, d in b]
            if not lows[0] < t[i] or lows[-1] != 0.0:
                raise InvariantError(f"bands of model {i} must partition [0, {t[i]})")
            if any(a <= c for a, c in zip(lows, lows[1:])):
                raise InvariantError(f"band bounds of model {i} must strictly decrease")
            if any(a >= c for a, c in zip(dests, dests[1:])) or dests[0] <= i or dests[-1] >= n:
                raise InvariantError(f"band destinations of model {i} must increase past it")
        object.__setattr__(self, "skip_bands", bands)

    @property
    def n(self) -> int:
        return len(self.models)

    def bands(self, i: int) -> tuple[Band, ...]:
        return () if self.skip_bands is None else self.skip_bands[i]

    def next_index(self, i: int, c: float) -> int:
        """Where a request rejected at model ``i`` with confidence ``c`` goes."""
        for lower, dest in self.bands(i):
            if c >= lower:
                return dest
        return i + 1

    def to_dict(self) -> dict:
        d = {"models": list(self.models), "thresholds": list(self.thresholds)}
        if self.skip_bands is not None:
            d["skip_bands"] = [[list(b) for b in bands] for bands in self.skip_bands]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CascadeConfig":
        sb = d.get("skip_bands")
        return cls(
            tuple(d["models"]),
            tuple(d["thresholds"]),
            None if sb is None else tuple(tuple((lo, dest) for lo, dest in b) for b in sb),
        )


@dataclass(frozen=True)
class Route:
    answer: int
    correct: bool
    path: tuple[int, ...]


def route_request(
    record: PredictionRecord, config: CascadeConfig, calib: Calibration, task: TaskKind | None = None
) -> Route:
    task = calib.task if task is None else task
    i = 0
    path = []
    while True:
        m = config.models[i]
        if m not in record.outputs:
            raise MissingModelError(f"record {record.request_id!r} has no output for {m}")
        path.append(i)
        out = record.outputs[m]
        if i == config.n - 1:
            break
        c = calib.score(m, out)
        if c >= config.thresholds[i]:
            break
        i = config.next_index(i, c)
    return Route(i, is_correct(task, record.outputs[config.models[i]], record.label), tuple(path))


@dataclass(frozen=True)
class ScoreTable:
    """Precomputed confidences and correctness, both ``(models, records)``."""

    models: tuple[str, ...]
    conf: np.ndarray = field(repr=False)
    correct: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, bundle: TraceBundle, calib: Calibration, models: Sequence[str] | None = None) -> "ScoreTable":
        models = tuple(bundle.models if models is None else models)
        if not set(models) <= set(bundle.models):
            raise MissingModelError(f"trace lacks models {sorted(set(models) - set(bundle.models))}")
        idx = [bundle.models.index(m) for m in models]
        conf = calib.score_table(bundle, models)
        correct = bundle.correctness()[idx]
        for a in (conf, correct):
            a.setflags(write=False)
        return cls(models, conf, correct)

    def subset(self, models: Sequence[str]) -> "ScoreTable":
        idx = [self.models.index(m) for m in models]
        return ScoreTable(tuple(models), self.conf[idx], self.correct[idx])

    @property
    def size(self) -> int:
        return self.conf.shape[1]

    def accuracy(self, model: str) -> float:
        return float(self.correct[self.models.index(model)].mean())

    def joint_accuracy(self) -> float:
        return float(self.correct.any(axis=0).mean())


@dataclass(frozen=True)
class CascadeMetrics:
    accuracy: float
    handled: tuple[float, ...]
    reach: tuple[float, ...]
    energy: float
    expected_latency: float
    flow: tuple[tuple[float, ...], ...]
    correct_count: int = 0
    count: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "handled": list(self.handled),
            "reach": list(self.reach),
            "energy": self.energy,
            "expected_latency": self.expected_latency,
            "flow": [list(r) for r in self.flow],
            "correct_count": self.correct_count,
            "count": self.count,
        }


@dataclass(frozen=True)
class Costs:
    energy: np.ndarray
    latency: np.ndarray

    @classmethod
    def of(cls, profiles: Mapping[str, ModelProfile] | Sequence[ModelProfile], models: Sequence[str]) -> "Costs":
        if not isinstance(profiles, Mapping):
            profiles = {p.model_id: p for p in profiles}
        missing = [m for m in models if m not in profiles]
        if missing:
            raise MissingModelError(f"no profile for {missing}")
        return cls(
            np.array([profiles[m].energy_per_request for m in models]),
            np.array([profiles[m].service_latency for m in models]),
        )


def route_table(conf: np.ndarray, config: CascadeConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Answering model per record, the ``(models, records)`` visit mask and
    the ``(models, models)`` escalation counts."""
    n, size = conf.shape
    pos = np.zeros(size, dtype=np.int64)
    answer = np.full(size, -1, dtype=np.int64)
    visited = np.zeros((n, size), dtype=bool)
    flow = np.zeros((n, n))
    for i in range(n):
        at = (pos == i) & (answer < 0)
        visited[i] = at
        if i == n - 1:
            answer[at] = i
            break
        c = conf[i]
        accept = at & (c >= config.thresholds[i])
        answer[accept] = i
        dest = np.full(size, i + 1, dtype=np.int64)
        for lower, to in reversed(config.bands(i)):
            dest[c >= lower] = to
        esc = at & ~accept
        pos[esc] = dest[esc]
        flow[i] = np.bincount(dest[esc], minlength=n)[:n]
    return answer, visited, flow


def evaluate_table(
    table: ScoreTable,
    config: CascadeConfig,
    costs: Costs,
    hop_overhead: float = DEFAULT_HOP_OVERHEAD,
    energy_mode: str = "reach",
) -> CascadeMetrics:
    if table.models != config.models:
        table = table.subset(config.models)
    size = table.size
    if size == 0:
        raise InvariantError("cannot evaluate a cascade on an empty trace")
    n = config.n
    answer, visited, flow = route_table(table.conf, config)
    right = int(table.correct[answer, np.arange(size)].sum())
    handled = np.bincount(answer, minlength=n) / size
    reach = visited.sum(axis=1) / size
    flow = flow / size
    if energy_mode == "reach":
        energy = float(reach @ costs.energy)
    elif energy_mode == "handled":
        energy = float(handled @ costs.energy)
    else:
        raise InvariantError(f"unknown energy mode {energy_mode!r}")
    return CascadeMetrics(
        accuracy=right / size,
        handled=tuple(float(x) for x in handled),
        reach=tuple(float(x) for x in reach),
        energy=energy,
        expected_latency=float(reach @ (costs.latency + hop_overhead)),
        flow=tuple(tuple(float(x) for x in row) for row in flow),
        correct_count=right,
        count=size,
    )


def evaluate(
    trace: TraceBundle,
    config: CascadeConfig,
    calib: Calibration,
    profiles,
    hop_overhead: float = DEFAULT_HOP_OVERHEAD,
    energy_mode: str = "reach",
) -> CascadeMetrics:
    if len(trace) == 0:
        raise InvariantError("cannot evaluate a cascade on an empty trace")
    table = ScoreTable.build(trace, calib, config.models)
    return evaluate_table(table, config, Costs.of(profiles, config.models), hop_overhead, energy_mode)


def dumps_metrics(metrics: CascadeMetrics, config: CascadeConfig) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "kind": "cascade_metrics", "config": config.to_dict()}
    doc.update(metrics.to_dict())
    return json.dumps(doc, indent=2) + "\n"
