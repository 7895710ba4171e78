"""Prune models that cost more energy than they save, then add skip bands."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .cascade_eval import CascadeConfig, CascadeMetrics, Costs, ScoreTable, evaluate_table
from .errors import InvariantError
from .threshold_search import PerfGraph, SearchParams, search, select
from .trace_model import SCHEMA_VERSION

log = logging.getLogger(__name__)


def energy_benefit(i: int, reach: Sequence[float], energy: Sequence[float]) -> float:
    """Joules per request model ``i`` saves its successor minus what it spends.

    ``reach[i]`` is the fraction of requests arriving at model ``i``;
    ``reach[i] - reach[i + 1]`` is the fraction it resolves.
    """
    if not 0 <= i < len(reach) - 1:
        raise InvariantError(f"energy benefit undefined for model {i} of {len(reach)}")
    return (reach[i] - reach[i + 1]) * energy[i + 1] - reach[i] * energy[i]


def assign_skip_bands(thresholds: Sequence[float], n: int | None = None) -> tuple[tuple[tuple[float, int], ...], ...]:
    """Decade-spaced skip bands below each threshold.

    Model ``i`` with ``s`` successors gets boundaries ``t_i * 10**-j`` for
    ``j = 1 .. s-1``; the band just below ``t_i`` feeds the next model and the
    band reaching 0 feeds the last one.  A zero threshold gets no bands.
    """
    n = len(thresholds) if n is None else n
    t = list(thresholds) + [0.0] * (n - len(thresholds))
    out = []
    for i in range(n):
        s = n - 1 - i
        if s == 0 or t[i] <= 0.0:
            out.append(())
            continue
        lows = [t[i] * 10.0 ** -j for j in range(1, s)] + [0.0]
        out.append(tuple((lo, i + 1 + k) for k, lo in enumerate(lows)))
    return tuple(out)


@dataclass(frozen=True)
class SkipPlan:
    models: tuple[str, ...]
    thresholds: tuple[float, ...]
    skip_bands: tuple[tuple[tuple[float, int], ...], ...]
    benefits: tuple[float, ...]
    removed: tuple[str, ...] = ()
    mode: str = "AP"
    metrics: CascadeMetrics | None = None
    skip_metrics: CascadeMetrics | None = None

    @property
    def config(self) -> CascadeConfig:
        return CascadeConfig(self.models, self.thresholds, self.skip_bands)

    @property
    def sequential_config(self) -> CascadeConfig:
        return CascadeConfig(self.models, self.thresholds)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "skip_plan",
            "mode": self.mode,
            "models": list(self.models),
            "thresholds": list(self.thresholds),
            "skip_bands": [[list(b) for b in bands] for bands in self.skip_bands],
            "energy_benefit": list(self.benefits),
            "removed": list(self.removed),
            "sequential_metrics": None if self.metrics is None else self.metrics.to_dict(),
            "metrics": None if self.skip_metrics is None else self.skip_metrics.to_dict(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "SkipPlan":
        def metrics(x):
            if x is None:
                return None
            return CascadeMetrics(
                accuracy=x["accuracy"],
                handled=tuple(x["handled"]),
                reach=tuple(x["reach"]),
                energy=x["energy"],
                expected_latency=x["expected_latency"],
                flow=tuple(tuple(r) for r in x["flow"]),
                correct_count=x.get("correct_count", 0),
                count=x.get("count", 0),
            )

        return cls(
            models=tuple(d["models"]),
            thresholds=tuple(d["thresholds"]),
            skip_bands=tuple(tuple((lo, dest) for lo, dest in b) for b in d["skip_bands"]),
            benefits=tuple(d["energy_benefit"]),
            removed=tuple(d.get("removed", ())),
            mode=d.get("mode", "AP"),
            metrics=metrics(d.get("sequential_metrics")),
            skip_metrics=metrics(d.get("metrics")),
        )


def _benefits(metrics: CascadeMetrics, costs: Costs) -> list[float]:
    return [energy_benefit(i, metrics.reach, costs.energy) for i in range(len(metrics.reach) - 1)]


def prune_and_rewire(
    table: ScoreTable,
    profiles,
    params: SearchParams = SearchParams(),
    mode: str = "AP",
    graphs: list[PerfGraph] | None = None,
) -> SkipPlan:
    """Drop the smallest model with nonpositive energy benefit until none is left.

    Thresholds are re-searched after each removal.  Accuracy targets stay
    those of the full family: the largest model's accuracy (AP) or the
    second-largest's (EO).  ``graphs`` collects every search's graph.
    """
    models = list(table.models)
    if len(models) < 2:
        raise InvariantError("pruning needs at least two models")
    a_target = table.accuracy(models[-1])
    a_floor = table.accuracy(models[-2])
    removed: list[str] = []
    while True:
        sub = table.subset(models)
        costs = Costs.of(profiles, models)
        if len(models) == 1:
            thresholds: tuple[float, ...] = (0.0,)
        else:
            graph = search(sub, costs, params)
            if graphs is not None:
                graphs.append(graph)
            thresholds = select(graph, mode, a_floor=a_floor, a_target=a_target).point.thresholds
        cfg = CascadeConfig(tuple(models), thresholds)
        metrics = evaluate_table(sub, cfg, costs, params.hop_overhead, params.energy_mode)
        benefits = _benefits(metrics, costs)
        worst = next((i for i, b in enumerate(benefits) if b <= 0.0), None)
        if worst is None:
            break
        log.info("removing %s (energy benefit %.4g J)", models[worst], benefits[worst])
        removed.append(models.pop(worst))

    bands = assign_skip_bands(cfg.thresholds)
    skip_cfg = CascadeConfig(tuple(models), cfg.thresholds, bands)
    skip_metrics = evaluate_table(sub, skip_cfg, costs, params.hop_overhead, params.energy_mode)
    return SkipPlan(
        models=tuple(models),
        thresholds=cfg.thresholds,
        skip_bands=bands,
        benefits=tuple(benefits),
        removed=tuple(removed),
        mode=mode,
        metrics=metrics,
        skip_metrics=skip_metrics,
    )
