"""Temperature-scaled confidence scores for classification, generation and QA."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InvariantError, ShapeError, TraceFormatError
from .trace_model import (
    CLASSIFICATION,
    GENERATION,
    SCHEMA_VERSION,
    TaskKind,
    TraceBundle,
)

log = logging.getLogger(__name__)

LOG_THETA_MIN = -4.0
LOG_THETA_MAX = 4.0
GRID_POINTS = 50
REL_TOL = 1e-4


@dataclass(frozen=True)
class Temperature:
    value: float = 1.0
    degenerate: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value > 0):
            raise InvariantError(f"temperature must be positive and finite, got {self.value}")


def _as_theta(theta) -> float:
    return theta.value if isinstance(theta, Temperature) else float(theta)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(z, axis))


def _check_logits(v: np.ndarray, min_len: int = 2) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] < min_len:
        raise ShapeError(f"need at least {min_len} logits, got {v.shape[-1]}")
    if not np.all(np.isfinite(v)):
        raise ShapeError("logits must be finite")
    return v


def max_prob_squared(logits: np.ndarray, theta: float) -> np.ndarray:
    """``max(softmax(logits / theta))**2`` along the last axis."""
    z = logits / theta
    z = z - z.max(axis=-1, keepdims=True)
    # max entry of z is 0, so max prob is 1 / sum(exp(z))
    p = 1.0 / np.exp(z).sum(axis=-1)
    return p * p


def score_classification(logits, theta=1.0, *, probabilities: bool = False) -> float:
    """Confidence of a classification output.

    With ``probabilities=True`` the input is an already-softmaxed vector: it is
    renormalized, its max is squared and the result raised to ``1/theta``.
    """
    v = _check_logits(logits)
    t = _as_theta(theta)
    if probabilities:
        if np.any(v < 0) or v.sum() <= 0:
            raise ShapeError("probabilities must be nonnegative with positive mass")
        p = v.max() / v.sum()
        return float((p * p) ** (1.0 / t))
    return float(max_prob_squared(v, t))


def _top_k(v: np.ndarray, k: int) -> np.ndarray:
    return np.partition(v, v.shape[-1] - k, axis=-1)[..., -k:]


def score_generation(step_logits, theta=1.0, top_k: int = 10) -> float:
    """Minimum over steps of the top-k restricted classification score."""
    v = np.asarray(step_logits, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ShapeError("generation output must be a non-empty (steps, vocab) array")
    if top_k > v.shape[1]:
        raise ShapeError(f"top_k={top_k} exceeds vocabulary size {v.shape[1]}")
    if top_k < 2:
        raise ShapeError("top_k must be >= 2")
    _check_logits(v)
    return float(max_prob_squared(_top_k(v, top_k), _as_theta(theta)).min())


def score_qa(start_logits, end_logits, theta=1.0) -> float:
    s = _check_logits(start_logits)
    e = _check_logits(end_logits)
    if s.shape != e.shape:
        raise ShapeError("start and end logits differ in length")
    t = _as_theta(theta)
    return float(min(max_prob_squared(s, t), max_prob_squared(e, t)))


def score_output(task: TaskKind, output: np.ndarray, theta=1.0) -> float:
    if task.kind == CLASSIFICATION:
        return score_classification(output, theta)
    if task.kind == GENERATION:
        return score_generation(output, theta, task.top_k)
    return score_qa(output[0], output[1], theta)


def score_many(task: TaskKind, outputs: Sequence[np.ndarray], theta=1.0) -> np.ndarray:
    """Vectorized :func:`score_output` over equally shaped outputs."""
    if not len(outputs):
        return np.zeros(0)
    t = _as_theta(theta)
    try:
        arr = np.stack([np.asarray(o, dtype=np.float64) for o in outputs])
    except ValueError:
        return np.array([score_output(task, o, t) for o in outputs])
    if task.kind == CLASSIFICATION:
        return max_prob_squared(arr, t)
    if task.kind == GENERATION:
        return max_prob_squared(_top_k(arr, task.top_k), t).min(axis=-1)
    return max_prob_squared(arr, t).min(axis=-1)


# -- fitting -----------------------------------------------------------------


def _nll_terms(task: TaskKind, outputs: Sequence[np.ndarray], labels: Sequence):
    """Flatten every (logit row, target index) pair the loss sums over."""
    rows, targets = [], []
    for out, lab in zip(outputs, labels):
        out = np.asarray(out, dtype=np.float64)
        if task.kind == CLASSIFICATION:
            rows.append(out[None, :])
            targets.append([int(lab)])
        else:
            rows.append(out)
            targets.append(list(lab))
    if not rows:
        return np.zeros((0, 2)), np.zeros(0, dtype=int)
    width = {r.shape[-1] for r in rows}
    if len(width) != 1:
        raise ShapeError("logit length differs across records")
    return np.concatenate(rows), np.concatenate([np.asarray(t, dtype=int) for t in targets])


def mean_nll(logits: np.ndarray, targets: np.ndarray, theta: float) -> float:
    lp = log_softmax(logits / theta)
    return float(-lp[np.arange(len(targets)), targets].mean())


def _golden(f, lo: float, hi: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    # bracket on log(theta): absolute width tol ~ relative tol on theta
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def fit_temperature(outputs: Sequence[np.ndarray], labels: Sequence, task: TaskKind) -> Temperature:
    """Temperature minimizing mean cross-entropy against the labels.

    A 50-point log grid over ``[e^-4, e^4]`` brackets the minimum, golden
    section refines it.  Minima on the grid boundary return the clamp value.
    A flat loss returns ``Temperature(1.0, degenerate=True)``.
    """
    if len(outputs) == 0:
        raise InvariantError("cannot fit a temperature on zero records")
    if len(outputs) != len(labels):
        raise ShapeError("outputs and labels differ in length")
    logits, targets = _nll_terms(task, outputs, labels)
    if not np.all(np.isfinite(logits)):
        raise ShapeError("logits must be finite")

    def loss(log_t):
        return mean_nll(logits, targets, math.exp(log_t))

    grid = np.linspace(LOG_THETA_MIN, LOG_THETA_MAX, GRID_POINTS)
    losses = np.array([loss(g) for g in grid])
    if np.ptp(losses) <= 1e-12 * max(1.0, abs(losses).max()):
        log.warning("flat calibration loss; keeping temperature 1")
        return Temperature(1.0, degenerate=True)
    k = int(np.argmin(losses))
    if k == 0:
        return Temperature(math.exp(LOG_THETA_MIN))
    if k == GRID_POINTS - 1:
        return Temperature(math.exp(LOG_THETA_MAX))
    best = _golden(loss, grid[k - 1], grid[k + 1], REL_TOL)
    if loss(best) > losses[k]:
        best = grid[k]
    return Temperature(math.exp(best))


# -- calibration files -------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    """Fitted temperature per model for one task."""

    task: TaskKind
    temperatures: Mapping[str, Temperature]

    def theta(self, model_id: str) -> float:
        try:
            return self.temperatures[model_id].value
        except KeyError:
            raise InvariantError(f"no temperature fitted for model {model_id!r}") from None

    def score(self, model_id: str, output: np.ndarray) -> float:
        return score_output(self.task, output, self.theta(model_id))

    def score_table(self, bundle: TraceBundle, models: Sequence[str] | None = None) -> np.ndarray:
        """Confidence matrix ``(models, records)``."""
        models = bundle.models if models is None else models
        return np.stack(
            [score_many(self.task, [r.outputs[m] for r in bundle.records], self.theta(m)) for m in models]
        ) if models else np.zeros((0, len(bundle)))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "calibration",
            "task": self.task.to_dict(),
            "temperatures": {
                m: {"theta": t.value, "degenerate": t.degenerate} for m, t in self.temperatures.items()
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "Calibration":
        try:
            temps = {
                m: Temperature(float(v["theta"]), bool(v.get("degenerate", False)))
                for m, v in d["temperatures"].items()
            }
            return cls(TaskKind.from_dict(d["task"]), temps)
        except (KeyError, TypeError) as exc:
            raise TraceFormatError(f"malformed calibration: {exc}") from exc

    @classmethod
    def identity(cls, task: TaskKind, models: Sequence[str]) -> "Calibration":
        return cls(task, {m: Temperature(1.0) for m in models})


def calibrate(bundle: TraceBundle) -> Calibration:
    """Fit one temperature per model of the bundle."""
    labels = [r.label for r in bundle.records]
    temps = {}
    for m in bundle.models:
        temps[m] = fit_temperature([r.outputs[m] for r in bundle.records], labels, bundle.task)
        log.info("model %s: theta=%.4g", m, temps[m].value)
    return Calibration(bundle.task, temps)


def load_calibration(path) -> Calibration:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}: {exc}") from exc
    if doc.get("kind") != "calibration":
        raise TraceFormatError(f"{path}: expected a calibration document")
    return Calibration.from_dict(doc)
