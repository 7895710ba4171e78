"""Sampled threshold search producing the accuracy/energy performance graph."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cascade_eval import DEFAULT_HOP_OVERHEAD, Costs, ScoreTable
from .errors import InvariantError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchParams:
    samples: int = 256
    epsilon: float = 0.05
    accuracy_cell: float = 0.001
    energy_cell_frac: float = 0.005
    max_rounds: int = 50
    seed: int = 0
    hop_overhead: float = DEFAULT_HOP_OVERHEAD
    energy_mode: str = "reach"

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise InvariantError("epsilon must lie in (0, 0.5)")
        if self.samples < 1 or self.max_rounds < 1:
            raise InvariantError("samples and max_rounds must be >= 1")
        if self.accuracy_cell <= 0 or self.energy_cell_frac <= 0:
            raise InvariantError("novelty cells must be positive")


@dataclass(frozen=True)
class PerfPoint:
    thresholds: tuple[float, ...]
    accuracy: float
    energy: float


@dataclass(frozen=True)
class PerfGraph:
    models: tuple[str, ...]
    points: tuple[PerfPoint, ...]
    pareto_mask: tuple[bool, ...]
    rounds: int = 0
    evaluations: int = 0
    model_accuracy: tuple[float, ...] = field(default=())

    @property
    def pareto(self) -> tuple[PerfPoint, ...]:
        return tuple(p for p, f in zip(self.points, self.pareto_mask) if f)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"t_{m}" for m in self.models[:-1]] + ["accuracy", "energy", "pareto"])
        for p, f in zip(self.points, self.pareto_mask):
            w.writerow([repr(t) for t in p.thresholds] + [repr(p.accuracy), repr(p.energy), int(f)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, models: Sequence[str]) -> "PerfGraph":
        rows = list(csv.reader(io.StringIO(text)))
        pts, mask = [], []
        for r in rows[1:]:
            k = len(r) - 3
            pts.append(PerfPoint(tuple(float(x) for x in r[:k]), float(r[k]), float(r[k + 1])))
            mask.append(bool(int(r[k + 2])))
        return cls(tuple(models), tuple(pts), tuple(mask))


def pareto_mask(acc: np.ndarray, energy: np.ndarray) -> np.ndarray:
    """True where no other point has accuracy >= and energy <= with one strict."""
    order = np.lexsort((energy, -acc))
    keep = np.zeros(len(acc), dtype=bool)
    best_higher = np.inf
    k = 0
    while k < len(order):
        j = k
        a = acc[order[k]]
        while j < len(order) and acc[order[j]] == a:
            j += 1
        group = order[k:j]
        gmin = energy[group].min()
        if gmin < best_higher:
            keep[group[energy[group] == gmin]] = True
        best_higher = min(best_higher, gmin)
        k = j
    return keep


def batch_accuracy_energy(
    table: ScoreTable, batch: np.ndarray, costs: Costs, energy_mode: str = "reach"
) -> tuple[np.ndarray, np.ndarray]:
    """Accuracy and energy of sequential cascades, one per threshold row.

    Matches :func:`evaluate_table` exactly for configurations without skip
    bands; used to keep the sampling loop cheap.
    """
    n, size = table.conf.shape
    if energy_mode not in ("reach", "handled"):
        raise InvariantError(f"unknown energy mode {energy_mode!r}")
    answer = np.full((len(batch), size), n - 1, dtype=np.int8 if n < 128 else np.int64)
    # walk backwards so the first accepting model wins
    for i in range(n - 2, -1, -1):
        answer[table.conf[i][None, :] >= batch[:, i, None]] = i
    counts = np.empty((len(batch), n), dtype=np.int64)
    right = np.zeros(len(batch), dtype=np.int64)
    for i in range(n):
        hit = answer == i
        counts[:, i] = hit.sum(axis=1)
        right += (hit & table.correct[i][None, :]).sum(axis=1)
    acc = right / size
    energy = np.empty(len(batch))
    for k in range(len(batch)):
        if energy_mode == "handled":
            energy[k] = float((counts[k] / size) @ costs.energy)
        else:
            energy[k] = float((np.cumsum(counts[k][::-1])[::-1] / size) @ costs.energy)
    return acc, energy


def search(table: ScoreTable, costs: Costs, params: SearchParams = SearchParams()) -> PerfGraph:
    """Sample the threshold space, refining around promising samples.

    Each round draws ``samples`` uniform threshold vectors; samples whose
    accuracy lies between the two largest models' accuracies seed a
    refinement batch inside ``[k - eps, k + eps]``.  The search stops once a
    round lands in no new (accuracy, energy) cell.  The all-zero and all-one
    corners are always evaluated so the largest model's accuracy is reachable.
    """
    n = len(table.models)
    if n < 2:
        raise InvariantError("threshold search needs at least two models")
    if table.size == 0:
        raise InvariantError("threshold search needs a nonempty trace")
    dim = n - 1
    rng = np.random.default_rng(params.seed)
    a_lo = float(table.correct[-2].mean())
    a_hi = float(table.correct[-1].mean())
    e_cell = params.energy_cell_frac * float(costs.energy[-1])

    points: list[PerfPoint] = []
    seen: set[tuple[int, int]] = set()

    def run(batch: np.ndarray) -> tuple[int, np.ndarray]:
        fresh = 0
        acc, energy = batch_accuracy_energy(table, batch, costs, params.energy_mode)
        for row, a, e in zip(batch, acc, energy):
            points.append(PerfPoint(tuple(float(x) for x in row), float(a), float(e)))
            cell = (int(np.floor(a / params.accuracy_cell)), int(np.floor(e / e_cell)))
            if cell not in seen:
                seen.add(cell)
                fresh += 1
        return fresh, batch[(acc >= a_lo) & (acc <= a_hi)]

    run(np.array([np.zeros(dim), np.ones(dim)]))
    rounds = 0
    while rounds < params.max_rounds:
        rounds += 1
        fresh, centers = run(rng.random((params.samples, dim)))
        if len(centers):
            pick = centers[rng.integers(0, len(centers), size=params.samples)]
            box = pick + rng.uniform(-params.epsilon, params.epsilon, size=pick.shape)
            more, _ = run(np.clip(box, 0.0, 1.0))
            fresh += more
        log.debug("round %d: %d new cells, %d points", rounds, fresh, len(points))
        if fresh == 0:
            break

    acc = np.array([p.accuracy for p in points])
    en = np.array([p.energy for p in points])
    mask = pareto_mask(acc, en)
    model_acc = tuple(float(x) for x in table.correct.mean(axis=1))
    return PerfGraph(table.models, tuple(points), tuple(bool(x) for x in mask), rounds, len(points), model_acc)


@dataclass(frozen=True)
class Selection:
    point: PerfPoint
    fallback: bool = False


def select_ap(graph: PerfGraph, a_target: float) -> Selection:
    """Cheapest point reaching ``a_target``; the most accurate point otherwise."""
    if not graph.points:
        raise InvariantError("empty performance graph")
    ok = [p for p in graph.points if p.accuracy >= a_target]
    if ok:
        return Selection(min(ok, key=lambda p: (p.energy, -p.accuracy)))
    log.warning("no point reaches accuracy %.4f; using the most accurate one", a_target)
    return Selection(max(graph.points, key=lambda p: (p.accuracy, -p.energy)), fallback=True)


EO_GRID_STEP = 0.001


def knee_index(acc: np.ndarray, energy: np.ndarray, step: float = EO_GRID_STEP) -> int:
    """Index of the interior frontier point nearest the largest second difference.

    ``acc`` must be strictly increasing with at least three entries.  The
    frontier is linearly interpolated on a uniform accuracy grid; ties in the
    second difference go to the lowest-energy grid location.
    """
    n_grid = int(np.floor((acc[-1] - acc[0]) / step + 1e-9)) + 1
    inner = np.arange(1, len(acc) - 1)
    if n_grid < 3:
        return int(inner[np.argmin(energy[inner])])
    grid = acc[0] + step * np.arange(n_grid)
    e = np.interp(grid, acc, energy)
    d2 = e[2:] - 2.0 * e[1:-1] + e[:-2]
    scale = max(np.abs(e).max(), 1e-300)
    ties = np.flatnonzero(d2 >= d2.max() - 1e-9 * scale)
    # grid energy is nondecreasing, so the first tie has the lowest energy
    g = grid[1 + ties[0]]
    dist = np.abs(acc[inner] - g)
    near = inner[dist <= dist.min() + 1e-12]
    return int(near[np.argmin(energy[near])])


def select_eo(graph: PerfGraph, a_floor: float, a_ceiling: float = np.inf) -> Selection:
    """Maximum-curvature point of the frontier between ``a_floor`` and ``a_ceiling``."""
    if not graph.points:
        raise InvariantError("empty performance graph")
    front = [p for p in graph.pareto if a_floor <= p.accuracy <= a_ceiling]
    if not front:
        log.warning("no frontier point reaches accuracy %.4f", a_floor)
        return Selection(max(graph.points, key=lambda p: (p.accuracy, -p.energy)), fallback=True)
    # one representative per accuracy value; frontier ties share the energy
    by_acc: dict[float, PerfPoint] = {}
    for p in sorted(front, key=lambda p: (p.accuracy, p.energy, p.thresholds)):
        by_acc.setdefault(p.accuracy, p)
    reps = [by_acc[a] for a in sorted(by_acc)]
    if len(reps) < 3:
        return Selection(min(reps, key=lambda p: (p.energy, -p.accuracy)), fallback=True)
    acc = np.array([p.accuracy for p in reps])
    en = np.array([p.energy for p in reps])
    return Selection(reps[knee_index(acc, en)])


def select(graph: PerfGraph, mode: str, a_floor: float | None = None, a_target: float | None = None) -> Selection:
    """AP or EO operating point.  EO never looks above the AP point's accuracy."""
    a_target = graph.model_accuracy[-1] if a_target is None else a_target
    a_floor = graph.model_accuracy[-2] if a_floor is None else a_floor
    ap = select_ap(graph, a_target)
    if mode == "AP":
        return ap
    if mode == "EO":
        return select_eo(graph, a_floor, ap.point.accuracy)
    raise InvariantError(f"unknown mode {mode!r}")
