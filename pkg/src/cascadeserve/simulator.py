"""Discrete-event simulation of a placed cascade serving a request stream."""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cascade_eval import DEFAULT_HOP_OVERHEAD, CascadeConfig, ScoreTable, route_table
from .errors import InvariantError, MissingModelError
from .planner import Plan, ProfileMap
from .trace_model import SCHEMA_VERSION, ClusterSpec, ModelProfile

LATENCY_BIN = 1e-3


@dataclass(frozen=True)
class Workload:
    """Poisson arrivals at ``rate`` or replayed ``arrivals`` timestamps."""

    rate: float | None = None
    duration: float = 10.0
    seed: int = 0
    arrivals: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise InvariantError("duration must be positive")
        if self.arrivals is None and not (self.rate is not None and self.rate > 0):
            raise InvariantError("Poisson workload needs rate > 0")
        if self.arrivals is not None and any(b < a for a, b in zip(self.arrivals, self.arrivals[1:])):
            raise InvariantError("replayed arrivals must be sorted")

    def times(self) -> np.ndarray:
        if self.arrivals is not None:
            t = np.asarray(self.arrivals, dtype=float)
            return t[(t >= 0) & (t < self.duration)]
        rng = np.random.default_rng(self.seed)
        out, t = [], 0.0
        while True:
            chunk = rng.exponential(1.0 / self.rate, size=max(16, int(self.rate * self.duration * 0.2) + 1))
            ts = t + np.cumsum(chunk)
            out.append(ts[ts < self.duration])
            if ts[-1] >= self.duration:
                break
            t = ts[-1]
        return np.concatenate(out)

    def to_dict(self) -> dict:
        return {"rate": self.rate, "duration": self.duration, "seed": self.seed,
                "arrivals": None if self.arrivals is None else list(self.arrivals)}


@dataclass(frozen=True)
class SimParams:
    max_batch: int = 8
    max_wait: float = 0.010
    hop_overhead: float = DEFAULT_HOP_OVERHEAD
    meter_period: float = 0.1
    power_down_unused: bool = False
    record_events: bool = False

    def __post_init__(self):
        if self.max_batch < 1 or self.max_wait < 0 or self.meter_period <= 0 or self.hop_overhead < 0:
            raise InvariantError("invalid simulator parameters")


@dataclass(frozen=True)
class SimEvent:
    time: float
    seq: int
    kind: str
    detail: tuple = ()


def paths_from_table(table: ScoreTable, config: CascadeConfig) -> list[tuple[str, ...]]:
    """The models each trace record visits under ``config``."""
    if table.models != config.models:
        table = table.subset(config.models)
    _, visited, _ = route_table(table.conf, config)
    return [tuple(config.models[i] for i in np.flatnonzero(visited[:, k])) for k in range(table.size)]


@dataclass
class SimReport:
    models: tuple[str, ...]
    gpu_ids: tuple[str, ...]
    duration: float
    arrivals: int
    completions: int
    in_flight: int
    throughput: float
    mean_latency: float
    p999_latency: float
    joules_total: float
    joules_per_request: float | None
    gpu_joules: dict[str, float]
    reach: dict[str, float]
    queue_delay: dict[str, float]
    service_time: dict[str, float]
    gpu_utilization: dict[str, float]
    mean_in_system: float
    utilization_series: np.ndarray = field(repr=False)
    latency_hist: np.ndarray = field(repr=False)
    events: list[SimEvent] | None = field(default=None, repr=False)

    @property
    def energy_defined(self) -> bool:
        return self.joules_per_request is not None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "sim_report",
            "models": list(self.models),
            "duration": self.duration,
            "arrivals": self.arrivals,
            "completions": self.completions,
            "in_flight": self.in_flight,
            "throughput": self.throughput,
            "mean_latency": self.mean_latency,
            "p999_latency": self.p999_latency,
            "joules_total": self.joules_total,
            "joules_per_request": self.joules_per_request,
            "joules_per_request_defined": self.energy_defined,
            "gpu_joules": self.gpu_joules,
            "reach": self.reach,
            "queue_delay": self.queue_delay,
            "service_time": self.service_time,
            "gpu_utilization": self.gpu_utilization,
            "mean_in_system": self.mean_in_system,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def utilization_csv(self, period: float = 0.1) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_end"] + list(self.gpu_ids))
        for k, row in enumerate(self.utilization_series):
            w.writerow([repr(round(min((k + 1) * period, self.duration), 12))] + [repr(float(x)) for x in row])
        return buf.getvalue()

    def latency_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_start_ms", "count"])
        for k, c in enumerate(self.latency_hist):
            w.writerow([k, int(c)])
        return buf.getvalue()


class _Replica:
    __slots__ = ("model", "index", "gpus", "queue", "stage_busy", "stage_wait", "timer_at")

    def __init__(self, model: int, index: int, gpus: list[int]):
        self.model = model
        self.index = index
        self.gpus = gpus
        self.queue: deque = deque()
        self.stage_busy = [False] * len(gpus)
        self.stage_wait: list[deque] = [deque() for _ in gpus]
        self.timer_at: float | None = None


def _replicas(plan: Plan, cluster: ClusterSpec) -> dict[str, list[_Replica]]:
    gpu_index = {g.gpu_id: k for k, g in enumerate(cluster.gpus)}
    placed = {}
    for nd in plan.nodes:
        gid = plan.assignment.get(nd.node_id)
        if gid is None:
            raise InvariantError(f"node {nd.node_id} is not placed")
        if gid not in gpu_index:
            raise InvariantError(f"node {nd.node_id} sits on unknown GPU {gid}")
        placed[(nd.model_id, nd.replica, nd.partition)] = gpu_index[gid]
    out = {}
    for i, m in enumerate(plan.models):
        reps = []
        for r in range(1, plan.R[i] + 1):
            gpus = []
            for s in range(1, plan.S[i] + 1):
                if (m, r, s) not in placed:
                    raise InvariantError(f"node {m}/r{r}/s{s} is not placed")
                gpus.append(placed[(m, r, s)])
            reps.append(_Replica(i, r - 1, gpus))
        out[m] = reps
    return out


def run(
    plan: Plan,
    paths: Sequence[Sequence[str]],
    profiles: Sequence[ModelProfile] | Mapping[str, ModelProfile],
    cluster: ClusterSpec,
    workload: Workload,
    params: SimParams = SimParams(),
    profile_map: ProfileMap | None = None,
) -> SimReport:
    """Serve ``workload`` on ``plan``; request ``k`` follows ``paths[k % len(paths)]``.

    A replica batches its queue (``max_batch`` / ``max_wait``) and pushes the
    batch through its partitions, each taking ``l(b) / S``.  A stage occupies
    its GPU's kernel clock for ``u(b)`` of its window; co-located stages
    serialize only when their kernel windows collide.
    """
    if plan.violations:
        raise InvariantError(f"plan is infeasible: {plan.violations[0]}")
    if not isinstance(profiles, Mapping):
        profiles = {p.model_id: p for p in profiles}
    if not paths:
        raise InvariantError("no request paths")
    models = plan.models
    midx = {m: i for i, m in enumerate(models)}
    for p in paths:
        for m in p:
            if m not in midx:
                raise MissingModelError(f"workload visits {m!r}, which the plan does not place")
        if not p:
            raise InvariantError("empty request path")
    pmap = profile_map or ProfileMap.from_profiles([profiles[m] for m in models])
    curves = [pmap[m] for m in models]
    reps = _replicas(plan, cluster)
    T = np.asarray(cluster.transmission, dtype=float)
    G = len(cluster.gpus)
    D = workload.duration
    P = params.meter_period
    hop = params.hop_overhead

    arrivals = workload.times()
    n_req = len(arrivals)
    t_arr = arrivals
    t_done = np.full(n_req, np.nan)
    pos = np.zeros(n_req, dtype=np.int64)
    path_of = [tuple(midx[m] for m in paths[k % len(paths)]) for k in range(n_req)]
    rr = [0] * len(models)

    kclock = np.zeros(G)
    busy: list[list[tuple[float, float]]] = [[] for _ in range(G)]
    busy_ptr = [0] * G
    hosting = np.zeros(G, dtype=bool)
    for rs in reps.values():
        for rep in rs:
            hosting[rep.gpus] = True
    metered = hosting if params.power_down_unused else np.ones(G, dtype=bool)
    idle = np.array([g.idle_power for g in cluster.gpus])
    active = np.array([g.active_power for g in cluster.gpus])
    gpu_joules = np.zeros(G)
    util_rows: list[np.ndarray] = []

    visits = np.zeros(len(models), dtype=np.int64)
    qdelay_sum = np.zeros(len(models))
    svc_sum = np.zeros(len(models))
    svc_n = np.zeros(len(models), dtype=np.int64)
    enq_time = {}

    heap: list = []
    seq = 0
    log: list[SimEvent] | None = [] if params.record_events else None

    def push(t, kind, *detail):
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, detail))
        seq += 1

    in_system = 0
    area = 0.0
    last_t = 0.0
    completions = 0

    def enqueue(rep: _Replica, reqs, t):
        i = rep.model
        for k in reqs:
            rep.queue.append(k)
            enq_time[(k, i)] = t
            visits[i] += 1
        try_dispatch(rep, t)

    def try_dispatch(rep: _Replica, t):
        if rep.stage_busy[0] or not rep.queue:
            return
        oldest = enq_time[(rep.queue[0], rep.model)]
        if len(rep.queue) >= params.max_batch or t >= oldest + params.max_wait - 1e-12:
            batch = [rep.queue.popleft() for _ in range(min(params.max_batch, len(rep.queue)))]
            for k in batch:
                qdelay_sum[rep.model] += t - enq_time[(k, rep.model)]
            start_stage(rep, 0, (batch, t), t)
        elif rep.timer_at is None or rep.timer_at > oldest + params.max_wait:
            rep.timer_at = oldest + params.max_wait
            push(rep.timer_at, "batch-dispatch", rep.model, rep.index)

    def start_stage(rep: _Replica, s: int, job, t):
        batch, _ = job
        b = len(batch)
        c = curves[rep.model]
        dur = float(c.latency(b)) / len(rep.gpus)
        g = rep.gpus[s]
        work = float(c.utilization(b)) * dur
        k0 = max(kclock[g], t)
        kclock[g] = k0 + work
        if work > 0:
            busy[g].append((k0, k0 + work))
        rep.stage_busy[s] = True
        push(max(t + dur, kclock[g]), "service-complete", rep.model, rep.index, s, job)

    def stage_done(rep: _Replica, s: int, job, t):
        batch, t_disp = job
        i = rep.model
        rep.stage_busy[s] = False
        if s == 0:
            try_dispatch(rep, t)
        elif rep.stage_wait[s]:
            start_stage(rep, s, rep.stage_wait[s].popleft(), t)
        m = models[i]
        g = rep.gpus[s]
        if s + 1 < len(rep.gpus):
            g2 = rep.gpus[s + 1]
            delay = T[g, g2] * profiles[m].state_bytes * len(batch)
            if g2 != g:
                delay += float(curves[i].transmission(len(batch)))
            push(t + delay, "transfer-complete", "stage", i, rep.index, s + 1, job)
            return
        svc_sum[i] += (t - t_disp) * len(batch)
        svc_n[i] += len(batch)
        groups: dict[tuple[int, int], list[int]] = {}
        for k in batch:
            pos[k] += 1
            if pos[k] == len(path_of[k]):
                push(t + hop, "complete", k)
                continue
            j = path_of[k][pos[k]]
            r = rr[j]
            rr[j] = (r + 1) % len(reps[models[j]])
            groups.setdefault((j, r), []).append(k)
        for (j, r), reqs in groups.items():
            g2 = reps[models[j]][r].gpus[0]
            delay = hop + T[g, g2] * profiles[m].output_bytes * len(reqs)
            if g2 != g:
                delay += float(curves[i].transmission(len(reqs)))
            push(t + delay, "transfer-complete", "model", j, r, reqs)

    def meter(t_end, t_start):
        span = t_end - t_start
        row = np.zeros(G)
        for g in range(G):
            ivs = busy[g]
            k = busy_ptr[g]
            # drop intervals that ended before this tick
            while k < len(ivs) and ivs[k][1] <= t_start:
                k += 1
            busy_ptr[g] = k
            tot = 0.0
            while k < len(ivs) and ivs[k][0] < t_end:
                tot += min(ivs[k][1], t_end) - max(ivs[k][0], t_start)
                k += 1
            row[g] = tot
            if metered[g]:
                gpu_joules[g] += idle[g] * span + (active[g] - idle[g]) * tot
        util_rows.append(row / span)

    n_ticks = int(math.floor(D / P + 1e-9))
    for k in range(1, n_ticks + 1):
        push(k * P, "meter-tick", (k - 1) * P)
    if n_ticks * P < D - 1e-12:
        push(D, "meter-tick", n_ticks * P)
    next_arrival = 0
    if n_req:
        push(t_arr[0], "arrival", 0)

    while heap and heap[0][0] <= D:
        t, sq, kind, detail = heapq.heappop(heap)
        if log is not None:
            log.append(SimEvent(t, sq, kind, tuple(x if not isinstance(x, tuple) else len(x[0]) for x in detail)))
        area += in_system * (t - last_t)
        last_t = t
        if kind == "arrival":
            k = detail[0]
            in_system += 1
            next_arrival += 1
            if next_arrival < n_req:
                push(t_arr[next_arrival], "arrival", next_arrival)
            j = path_of[k][0]
            r = rr[j]
            rr[j] = (r + 1) % len(reps[models[j]])
            enqueue(reps[models[j]][r], [k], t)
        elif kind == "batch-dispatch":
            rep = reps[models[detail[0]]][detail[1]]
            if rep.timer_at is not None and abs(rep.timer_at - t) < 1e-15:
                rep.timer_at = None
            try_dispatch(rep, t)
        elif kind == "service-complete":
            i, r, s, job = detail
            stage_done(reps[models[i]][r], s, job, t)
        elif kind == "transfer-complete":
            if detail[0] == "stage":
                _, i, r, s, job = detail
                rep = reps[models[i]][r]
                if rep.stage_busy[s]:
                    rep.stage_wait[s].append(job)
                else:
                    start_stage(rep, s, job, t)
            else:
                _, j, r, reqs = detail
                enqueue(reps[models[j]][r], reqs, t)
        elif kind == "complete":
            k = detail[0]
            t_done[k] = t
            in_system -= 1
            completions += 1
        elif kind == "meter-tick":
            meter(t, detail[0])
    area += in_system * (D - last_t)

    done = ~np.isnan(t_done)
    lat = t_done[done] - t_arr[done]
    if len(lat):
        mean_lat = float(lat.mean())
        p999 = float(np.quantile(lat, 0.999))
        hist = np.bincount(np.floor(lat / LATENCY_BIN + 1e-9).astype(np.int64))
    else:
        mean_lat = p999 = 0.0
        hist = np.zeros(0, dtype=np.int64)
    total = float(gpu_joules.sum())
    series = np.array(util_rows) if util_rows else np.zeros((0, G))
    span = np.diff(np.concatenate([[0.0], np.minimum(np.arange(1, len(series) + 1) * P, D)]))
    mean_util = (series * span[:, None]).sum(axis=0) / D if len(series) else np.zeros(G)
    gids = tuple(g.gpu_id for g in cluster.gpus)
    return SimReport(
        models=models,
        gpu_ids=gids,
        duration=D,
        arrivals=n_req,
        completions=completions,
        in_flight=in_system,
        throughput=completions / D,
        mean_latency=mean_lat,
        p999_latency=p999,
        joules_total=total,
        joules_per_request=total / n_req if n_req else None,
        gpu_joules={gid: float(x) for gid, x in zip(gids, gpu_joules)},
        reach={m: float(visits[i] / n_req) if n_req else 0.0 for i, m in enumerate(models)},
        queue_delay={m: float(qdelay_sum[i] / visits[i]) if visits[i] else 0.0 for i, m in enumerate(models)},
        service_time={m: float(svc_sum[i] / svc_n[i]) if svc_n[i] else 0.0 for i, m in enumerate(models)},
        gpu_utilization={gid: float(x) for gid, x in zip(gids, mean_util)},
        mean_in_system=area / D,
        utilization_series=series,
        latency_hist=hist,
        events=log,
    )


COMPARE_FIELDS = ("throughput", "mean_latency", "p999_latency", "joules_per_request", "joules_total")


def compare_plans(reports: Sequence[SimReport], names: Sequence[str] | None = None) -> dict:
    """Side-by-side metrics and ratios against the first report."""
    if len(reports) < 2:
        raise InvariantError("need at least two reports to compare")
    names = [f"plan{k}" for k in range(len(reports))] if names is None else list(names)
    rows = []
    for name, r in zip(names, reports):
        rows.append({"name": name, **{f: getattr(r, f) for f in COMPARE_FIELDS}})
    base = rows[0]
    ratios = []
    for row in rows:
        out = {"name": row["name"]}
        for f in COMPARE_FIELDS:
            a, b = row[f], base[f]
            if a is None or b is None:
                out[f] = None
            elif b == 0:
                out[f] = 1.0 if a == 0 else math.inf
            else:
                out[f] = a / b
        ratios.append(out)
    return {"rows": rows, "ratios": ratios}


def comparison_csv(table: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name"] + list(COMPARE_FIELDS) + [f"{f}_ratio" for f in COMPARE_FIELDS])
    for row, ratio in zip(table["rows"], table["ratios"]):
        w.writerow([row["name"]] + [repr(row[f]) for f in COMPARE_FIELDS] + [repr(ratio[f]) for f in COMPARE_FIELDS])
    return buf.getvalue()
