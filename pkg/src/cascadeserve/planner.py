"""GPU placement, partitioning and replication for a cascade.

Placement is a binary program: every node (one partition of one replica of
one model) goes on exactly one GPU, per-GPU memory and kernel utilization stay
within bounds, and the objective sums ``T(g, g') * bytes`` over traffic edges.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InfeasibleError, InvariantError, TraceFormatError
from .trace_model import SCHEMA_VERSION, ClusterSpec, ModelProfile

log = logging.getLogger(__name__)

TOL = 1e-9


# -- batch-size profiles -----------------------------------------------------


@dataclass(frozen=True)
class AffineMap:
    slope: float
    intercept: float
    lo: float = 0.0
    hi: float = math.inf

    def __call__(self, b):
        return np.clip(self.slope * np.asarray(b, dtype=float) + self.intercept, self.lo, self.hi)


@dataclass(frozen=True)
class ModelCurves:
    utilization: AffineMap
    transmission: AffineMap
    memory: AffineMap
    latency: AffineMap


@dataclass(frozen=True)
class FitReport:
    model_id: str
    residuals: dict[str, float]
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ProfileMap:
    curves: Mapping[str, ModelCurves]
    reports: tuple[FitReport, ...] = ()

    def __getitem__(self, model_id: str) -> ModelCurves:
        return self.curves[model_id]

    @classmethod
    def from_profiles(cls, profiles: Sequence[ModelProfile]) -> "ProfileMap":
        curves = {}
        for p in profiles:
            lat = p.latency_coeffs or (0.0, p.service_latency)
            curves[p.model_id] = ModelCurves(
                utilization=AffineMap(*p.utilization_coeffs, lo=0.0, hi=1.0),
                transmission=AffineMap(*p.transmission_coeffs, lo=0.0),
                memory=AffineMap(p.memory_per_item, p.memory, lo=0.0),
                latency=AffineMap(*lat, lo=1e-12),
            )
        return cls(curves)


def _lstsq_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    a = np.stack([x, np.ones_like(x)], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = float(np.sqrt(np.mean((a @ np.array([slope, icpt]) - y) ** 2)))
    return float(slope), float(icpt), resid


def fit_profiles(
    samples: Mapping[str, Sequence[Sequence[float]]],
    latency: Mapping[str, AffineMap] | None = None,
) -> ProfileMap:
    """Least-squares affine fits of ``(b, u, T, mem)`` samples per model.

    Utilization above 1 inside the sampled batch range is clamped with a
    warning.  ``latency`` supplies service-time maps; without it latency is
    left flat at 1 s.
    """
    curves, reports = {}, []
    for model_id, rows in samples.items():
        arr = np.asarray(rows, dtype=float)
        if arr.ndim != 2 or arr.shape[1] < 4:
            raise InvariantError(f"{model_id}: samples must be (b, u, T, mem) tuples")
        b = arr[:, 0]
        if len(np.unique(b)) < 2:
            raise InvariantError(f"{model_id}: need at least two distinct batch sizes")
        fits = {name: _lstsq_line(b, arr[:, k]) for k, name in enumerate(("u", "T", "mem"), start=1)}
        warnings = []
        su, iu, _ = fits["u"]
        peak = max(su * b.min() + iu, su * b.max() + iu)
        if peak > 1.0:
            warnings.append(f"fitted utilization reaches {peak:.3f} > 1 in range; clamped")
            log.warning("%s: %s", model_id, warnings[-1])
        curves[model_id] = ModelCurves(
            utilization=AffineMap(su, iu, lo=0.0, hi=1.0),
            transmission=AffineMap(fits["T"][0], fits["T"][1], lo=0.0),
            memory=AffineMap(fits["mem"][0], fits["mem"][1], lo=0.0),
            latency=(latency or {}).get(model_id, AffineMap(0.0, 1.0)),
        )
        reports.append(FitReport(model_id, {k: v[2] for k, v in fits.items()}, tuple(warnings)))
    return ProfileMap(curves, tuple(reports))


# -- replication -------------------------------------------------------------


MAX_REPLICAS = 2**52


def _round_half_up(x):
    # clipped so absurd scales cannot overflow the integer cast
    return np.floor(np.minimum(np.asarray(x, dtype=float), MAX_REPLICAS) + 0.5).astype(np.int64)


def replicas_at(v: np.ndarray, S: np.ndarray, scale: float) -> np.ndarray:
    return np.maximum(1, _round_half_up(v * scale / S))


@dataclass(frozen=True)
class Replication:
    R: tuple[int, ...]
    scale: float


def size_replication(
    v: Sequence[float],
    S: Sequence[int],
    memory: Sequence[float],
    cluster_memory: float,
    multiplier: float = 1.0,
) -> Replication:
    """Replica counts with ``R_i * S_i`` proportional to ``v_i = rho_i * l_i``.

    The base scale makes the smallest positive ``v`` map to one unit; it is
    multiplied by ``multiplier`` and then shrunk until the replicated models fit
    in ``cluster_memory`` in total.
    """
    v = np.asarray(v, dtype=float)
    S = np.asarray(S, dtype=np.int64)
    mem = np.asarray(memory, dtype=float)
    if np.any(v < 0) or np.any(S < 1):
        raise InvariantError("need v >= 0 and S >= 1")
    if mem.sum() > cluster_memory * (1 + TOL):
        raise InfeasibleError(
            f"one replica of every model needs {mem.sum():.4g} B, cluster has {cluster_memory:.4g} B"
        )
    pos = v[v > 0]
    if pos.size == 0:
        return Replication(tuple(int(x) for x in np.ones_like(S)), 0.0)
    # past this scale every positive demand is already at the replica ceiling
    with np.errstate(over="ignore"):
        scale = min(multiplier / pos.min(), MAX_REPLICAS * S.min() / v.max())
    R = replicas_at(v, S, scale)
    while (R * mem).sum() > cluster_memory * (1 + TOL):
        scale *= 0.9
        R = replicas_at(v, S, scale)
    return Replication(tuple(int(x) for x in R), float(scale))


def replication_steps(
    v: Sequence[float], S: Sequence[int], max_replicas: int
) -> list[tuple[tuple[int, ...], float]]:
    """Every distinct replica vector ``max(1, round(v * scale / S))`` over
    ``scale > 0``, from all ones upward, stopping once any model would
    exceed ``max_replicas``.

    Scales below the base scale are included: they are what the memory check
    in :func:`size_replication` shrinks to.
    """
    v = np.asarray(v, dtype=float)
    S = np.asarray(S, dtype=np.int64)
    ones = tuple(1 for _ in S)
    pos = v > 0
    if not pos.any():
        return [(ones, 0.0)]
    cuts = set()
    for i in np.flatnonzero(pos):
        for k in range(1, max_replicas + 1):
            c = (k + 0.5) * float(S[i]) / float(v[i]) if v[i] >= 1e-300 else math.inf
            if math.isfinite(c):
                cuts.add(c)
    out, seen = [(ones, 0.0)], {ones}
    for c in sorted(cuts):
        # a hair above the cut, where the rounding has flipped
        c = c * (1 + 1e-12)
        R = replicas_at(v, S, c)
        if R.max() > max_replicas:
            break
        key = tuple(int(x) for x in R)
        if key not in seen:
            seen.add(key)
            out.append((key, float(c)))
    return out


# -- placement problem -------------------------------------------------------


@dataclass(frozen=True)
class PlacementNode:
    node_id: str
    model_id: str
    replica: int
    partition: int
    memory: float
    utilization: float


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    bytes: float
    kind: str = "route"


def node_id(model_id: str, replica: int, partition: int) -> str:
    return f"{model_id}/r{replica}/s{partition}"


def build_nodes(
    models: Sequence[str],
    R: Sequence[int],
    S: Sequence[int],
    reach: Sequence[float],
    flow: Sequence[Sequence[float]],
    profile_map: ProfileMap,
    profiles: Mapping[str, ModelProfile],
    batch_size: float,
) -> tuple[list[PlacementNode], list[Edge]]:
    """Nodes and traffic edges for one ``(R, S)`` choice.

    Batch-dependent quantities use the batch each model actually sees,
    ``reach_i * batch_size``.  Partition chains carry hidden state; only a
    model's last partition sends routed traffic to successor models.
    """
    nodes: list[PlacementNode] = []
    index: dict[tuple[int, int, int], int] = {}
    for i, m in enumerate(models):
        c = profile_map[m]
        bi = reach[i] * batch_size
        mem = float(c.memory(bi)) / S[i]
        util = float(c.utilization(bi)) / R[i]
        for r in range(1, R[i] + 1):
            for s in range(1, S[i] + 1):
                index[(i, r, s)] = len(nodes)
                nodes.append(PlacementNode(node_id(m, r, s), m, r, s, mem, util))
    edges: list[Edge] = []
    for i, m in enumerate(models):
        hidden = profiles[m].state_bytes * reach[i] * batch_size / R[i]
        for r in range(1, R[i] + 1):
            for s in range(1, S[i]):
                edges.append(Edge(index[(i, r, s)], index[(i, r, s + 1)], hidden, "chain"))
        for j in range(i + 1, len(models)):
            f = flow[i][j]
            if f <= 0:
                continue
            w = f * batch_size * profiles[m].output_bytes / (R[i] * R[j])
            for r in range(1, R[i] + 1):
                for r2 in range(1, R[j] + 1):
                    edges.append(Edge(index[(i, r, S[i])], index[(j, r2, 1)], w, "route"))
    return nodes, edges


@dataclass
class PlacementProblem:
    nodes: list[PlacementNode]
    edges: list[Edge]
    gpu_ids: tuple[str, ...]
    gpu_memory: np.ndarray
    cost: np.ndarray  # effective seconds-per-byte between GPUs

    @property
    def mem(self) -> np.ndarray:
        return np.array([n.memory for n in self.nodes])

    @property
    def util(self) -> np.ndarray:
        return np.array([n.utilization for n in self.nodes])

    def objective(self, assign: Sequence[int]) -> float:
        return float(sum(e.bytes * self.cost[assign[e.src], assign[e.dst]] for e in self.edges))

    def violations(self, assign: Sequence[int]) -> list[str]:
        out = []
        g = len(self.gpu_ids)
        a = np.asarray(assign)
        if len(a) != len(self.nodes) or np.any(a < 0) or np.any(a >= g):
            return ["every node must sit on exactly one GPU"]
        used_mem = np.bincount(a, weights=self.mem, minlength=g)
        used_util = np.bincount(a, weights=self.util, minlength=g)
        for k in range(g):
            if used_mem[k] > self.gpu_memory[k] * (1 + TOL):
                out.append(f"{self.gpu_ids[k]}: memory {used_mem[k]:.6g} > {self.gpu_memory[k]:.6g}")
            if used_util[k] > 1 + TOL:
                out.append(f"{self.gpu_ids[k]}: utilization {used_util[k]:.6g} > 1")
        return out

    def linearized(self) -> dict:
        """Dense matrices of the product-linearized binary program.

        Variables are ``x[k, g]`` (row-major) followed by one ``y`` per
        (edge, g, g').  Returns ``c``, ``A_eq``/``b_eq`` and ``A_ub``/``b_ub``.
        """
        n, g, E = len(self.nodes), len(self.gpu_ids), len(self.edges)
        nx = n * g
        ny = E * g * g
        c = np.zeros(nx + ny)
        eq, ub, b_ub = [], [], []
        for k in range(n):
            row = np.zeros(nx + ny)
            row[k * g : (k + 1) * g] = 1
            eq.append(row)
        mem, util = self.mem, self.util
        for gg in range(g):
            rm = np.zeros(nx + ny)
            ru = np.zeros(nx + ny)
            rm[gg:nx:g] = mem
            ru[gg:nx:g] = util
            ub += [rm, ru]
            b_ub += [self.gpu_memory[gg], 1.0]
        for e_i, e in enumerate(self.edges):
            for g1 in range(g):
                for g2 in range(g):
                    y = nx + (e_i * g + g1) * g + g2
                    c[y] = e.bytes * self.cost[g1, g2]
                    xi, xj = e.src * g + g1, e.dst * g + g2
                    for x in (xi, xj):
                        r = np.zeros(nx + ny)
                        r[y], r[x] = 1, -1
                        ub.append(r)
                        b_ub.append(0.0)
                    r = np.zeros(nx + ny)
                    r[xi], r[xj], r[y] = 1, 1, -1
                    ub.append(r)
                    b_ub.append(1.0)
        return {
            "c": c,
            "A_eq": np.array(eq),
            "b_eq": np.ones(n),
            "A_ub": np.array(ub),
            "b_ub": np.array(b_ub),
            "n_x": nx,
        }


def build_problem(
    nodes: Sequence[PlacementNode],
    edges: Sequence[Edge],
    cluster: ClusterSpec,
    intra_discount: float = 1.0,
) -> PlacementProblem:
    """Placement program over ``cluster``.

    ``intra_discount`` scales the same-GPU transfer cost, standing in for
    zero-copy style optimizations applied after placement (1.0 = none).
    """
    cost = np.array(cluster.transmission, dtype=float)
    np.fill_diagonal(cost, np.diag(cost) * intra_discount)
    mem = cluster.memories
    for nd in nodes:
        if nd.memory > mem.max() * (1 + TOL):
            raise InfeasibleError(f"{nd.node_id} needs {nd.memory:.4g} B; largest GPU has {mem.max():.4g} B")
        if nd.utilization > 1 + TOL:
            raise InfeasibleError(f"{nd.node_id} needs utilization {nd.utilization:.3g} > 1")
    return PlacementProblem(list(nodes), list(edges), tuple(g.gpu_id for g in cluster.gpus), mem, cost)


# -- solvers -----------------------------------------------------------------


@dataclass
class SolveResult:
    assign: tuple[int, ...]
    objective: float
    method: str
    nodes_explored: int
    lower_bound: float

    @property
    def gap(self) -> float:
        return max(0.0, self.objective - self.lower_bound)


class _Incidence:
    def __init__(self, prob: PlacementProblem):
        self.adj: list[list[tuple[int, float, bool]]] = [[] for _ in prob.nodes]
        for e in prob.edges:
            self.adj[e.src].append((e.dst, e.bytes, True))
            self.adj[e.dst].append((e.src, e.bytes, False))

    def delta(self, prob: PlacementProblem, assign, k: int, g: int) -> float:
        """Cost of edges between node ``k`` on ``g`` and already placed nodes."""
        total = 0.0
        for other, w, out in self.adj[k]:
            go = assign[other]
            if go >= 0:
                total += w * (prob.cost[g, go] if out else prob.cost[go, g])
        return total


def _check_aggregate(prob: PlacementProblem) -> None:
    if prob.util.sum() > len(prob.gpu_ids) * (1 + TOL):
        raise InfeasibleError(
            f"total utilization {prob.util.sum():.4g} exceeds {len(prob.gpu_ids)} GPUs"
        )
    if prob.mem.sum() > prob.gpu_memory.sum() * (1 + TOL):
        raise InfeasibleError(
            f"total memory {prob.mem.sum():.4g} B exceeds cluster memory {prob.gpu_memory.sum():.4g} B"
        )


def greedy(prob: PlacementProblem, local_search: bool = True) -> SolveResult | None:
    """Best-fit by utilization, then move/swap hill climbing."""
    n, g = len(prob.nodes), len(prob.gpu_ids)
    inc = _Incidence(prob)
    mem, util = prob.mem, prob.util
    rem_mem = prob.gpu_memory.astype(float).copy()
    rem_util = np.ones(g)
    assign = [-1] * n
    evals = 0
    for k in sorted(range(n), key=lambda k: (-util[k], -mem[k], k)):
        best = None
        for gg in range(g):
            evals += 1
            if mem[k] > rem_mem[gg] * (1 + TOL) + TOL or util[k] > rem_util[gg] + TOL:
                continue
            key = (inc.delta(prob, assign, k, gg), rem_util[gg] - util[k], gg)
            if best is None or key < best:
                best = key
        if best is None:
            return None
        gg = best[2]
        assign[k] = gg
        rem_mem[gg] -= mem[k]
        rem_util[gg] -= util[k]

    def fits(k, gg, extra_mem=0.0, extra_util=0.0):
        return mem[k] <= (rem_mem[gg] + extra_mem) * (1 + TOL) + TOL and util[k] <= rem_util[gg] + extra_util + TOL

    def node_cost(k, gg):
        total = 0.0
        for other, w, out in inc.adj[k]:
            go = gg if other == k else assign[other]
            total += w * (prob.cost[gg, go] if out else prob.cost[go, gg])
        return total

    def pair_cost(k1, g1, k2, g2):
        # node costs of k1 and k2 at (g1, g2), counting a shared edge once
        total = 0.0
        for k, gk in ((k1, g1), (k2, g2)):
            for other, w, out in inc.adj[k]:
                if other == k1:
                    go = g1
                elif other == k2:
                    go = g2
                else:
                    go = assign[other]
                if k == k2 and other == k1:
                    continue
                total += w * (prob.cost[gk, go] if out else prob.cost[go, gk])
        return total

    improved = local_search
    while improved:
        improved = False
        for k in range(n):
            cur = assign[k]
            base = node_cost(k, cur)
            for gg in range(g):
                evals += 1
                if gg == cur or not fits(k, gg):
                    continue
                if node_cost(k, gg) < base - 1e-12:
                    rem_mem[cur] += mem[k]
                    rem_util[cur] += util[k]
                    rem_mem[gg] -= mem[k]
                    rem_util[gg] -= util[k]
                    assign[k] = gg
                    improved = True
                    break
        for k1, k2 in itertools.combinations(range(n), 2):
            g1, g2 = assign[k1], assign[k2]
            if g1 == g2:
                continue
            evals += 1
            if not (
                mem[k2] <= (rem_mem[g1] + mem[k1]) * (1 + TOL) + TOL
                and util[k2] <= rem_util[g1] + util[k1] + TOL
                and mem[k1] <= (rem_mem[g2] + mem[k2]) * (1 + TOL) + TOL
                and util[k1] <= rem_util[g2] + util[k2] + TOL
            ):
                continue
            if pair_cost(k1, g2, k2, g1) < pair_cost(k1, g1, k2, g2) - 1e-12:
                assign[k1], assign[k2] = g2, g1
                rem_mem[g1] += mem[k1] - mem[k2]
                rem_util[g1] += util[k1] - util[k2]
                rem_mem[g2] += mem[k2] - mem[k1]
                rem_util[g2] += util[k2] - util[k1]
                improved = True
    obj = prob.objective(assign)
    return SolveResult(tuple(assign), obj, "greedy", evals, 0.0)


def gpu_classes(prob: PlacementProblem) -> np.ndarray:
    """Class label per GPU; swapping two GPUs of a class maps feasible
    placements to feasible placements of equal cost."""
    g = len(prob.gpu_ids)
    cost, mem = prob.cost, prob.gpu_memory
    label = np.arange(g)
    for b in range(g):
        for a in range(b):
            if label[a] != a:
                continue
            perm = np.arange(g)
            perm[[a, b]] = [b, a]
            if mem[a] == mem[b] and np.array_equal(cost[np.ix_(perm, perm)], cost):
                label[b] = a
                break
    return label


def _replicas_swappable(prob: PlacementProblem, a: int, b: int) -> bool:
    """Whether swapping the replicas owning first partitions ``a`` and ``b`` maps the problem onto itself."""
    na, nb = prob.nodes[a], prob.nodes[b]
    parts_a = {nd.partition: k for k, nd in enumerate(prob.nodes) if (nd.model_id, nd.replica) == (na.model_id, na.replica)}
    parts_b = {nd.partition: k for k, nd in enumerate(prob.nodes) if (nd.model_id, nd.replica) == (nb.model_id, nb.replica)}
    if parts_a.keys() != parts_b.keys():
        return False
    perm = list(range(len(prob.nodes)))
    for s, ka in parts_a.items():
        kb = parts_b[s]
        if prob.mem[ka] != prob.mem[kb] or prob.util[ka] != prob.util[kb]:
            return False
        perm[ka], perm[kb] = kb, ka
    edges = Counter((e.src, e.dst, e.bytes) for e in prob.edges)
    return edges == Counter((perm[e.src], perm[e.dst], e.bytes) for e in prob.edges)


def branch_and_bound(prob: PlacementProblem, node_limit: int = 200_000) -> SolveResult:
    """Exact best-first search over node-to-GPU assignments.

    The bound adds, for every edge with an unplaced end, the cheapest transfer
    cost still allowed by the capacity-filtered domains; an empty domain prunes
    the subproblem.  Interchangeable empty GPUs and interchangeable replicas
    are branched on only once.
    """
    _check_aggregate(prob)
    n, g = len(prob.nodes), len(prob.gpu_ids)
    mem, util = prob.mem, prob.util
    order = sorted(range(n), key=lambda k: (-mem[k], -util[k], k))
    cost = prob.cost
    src = np.array([e.src for e in prob.edges], dtype=np.int64)
    dst = np.array([e.dst for e in prob.edges], dtype=np.int64)
    w = np.array([e.bytes for e in prob.edges])
    label = gpu_classes(prob)
    # interchangeable replicas of one model: first partitions on nondecreasing GPUs
    twin_prev: dict[int, int] = {}
    firsts: dict[str, list[int]] = {}
    for k, nd in enumerate(prob.nodes):
        if nd.partition == 1:
            firsts.setdefault(nd.model_id, []).append(k)
    for ks in firsts.values():
        ks = sorted(ks, key=lambda k: prob.nodes[k].replica)
        for a, b in zip(ks, ks[1:]):
            if order.index(a) < order.index(b) and _replicas_swappable(prob, a, b):
                twin_prev[b] = a
    eye = np.eye(g, dtype=bool)

    def bound(assign: np.ndarray, rem_mem: np.ndarray, rem_util: np.ndarray) -> float | None:
        free = assign < 0
        dom = (mem[:, None] <= rem_mem[None, :] * (1 + TOL) + TOL) & (util[:, None] <= rem_util[None, :] + TOL)
        if np.any(free & ~dom.any(axis=1)):
            return None
        if mem[free].sum() > rem_mem.sum() * (1 + TOL) + TOL or util[free].sum() > rem_util.sum() + TOL:
            return None
        if not len(w):
            return 0.0
        dom[~free] = eye[assign[~free]]
        both = dom[src][:, :, None] & dom[dst][:, None, :]
        best = np.where(both, cost[None, :, :], np.inf).min(axis=(1, 2))
        return float(w @ best)

    root = np.full(n, -1, dtype=np.int64)
    root_lb = bound(root, prob.gpu_memory.astype(float), np.ones(g))
    if root_lb is None:
        raise InfeasibleError("some node fits on no GPU")

    best_assign, best_obj = None, math.inf
    warm = greedy(prob)
    if warm is not None and not prob.violations(warm.assign):
        best_assign, best_obj = warm.assign, warm.objective

    def cutoff():
        return best_obj - 1e-12 * max(1.0, abs(best_obj))

    counter = itertools.count()
    # deeper subproblems first among equal bounds
    heap = [(root_lb, 0, next(counter), root, prob.gpu_memory.astype(float), np.ones(g))]
    explored = 0
    truncated = False
    while heap:
        lb, neg_depth, _, assign, rem_mem, rem_util = heapq.heappop(heap)
        depth = -neg_depth
        if lb >= cutoff():
            continue
        explored += 1
        if explored > node_limit:
            truncated = True
            heapq.heappush(heap, (lb, neg_depth, next(counter), assign, rem_mem, rem_util))
            break
        if depth == n:
            best_assign, best_obj = tuple(int(x) for x in assign), prob.objective(assign)
            continue
        k = order[depth]
        start = int(assign[twin_prev[k]]) if k in twin_prev else 0
        used = np.zeros(g, dtype=bool)
        used[assign[assign >= 0]] = True
        opened: set[int] = set()
        for gg in range(start, g):
            if not used[gg]:
                if label[gg] in opened:
                    continue
                opened.add(int(label[gg]))
            if mem[k] > rem_mem[gg] * (1 + TOL) + TOL or util[k] > rem_util[gg] + TOL:
                continue
            child = assign.copy()
            child[k] = gg
            cm, cu = rem_mem.copy(), rem_util.copy()
            cm[gg] -= mem[k]
            cu[gg] -= util[k]
            clb = bound(child, cm, cu)
            if clb is None or clb >= cutoff():
                continue
            heapq.heappush(heap, (clb, -(depth + 1), next(counter), child, cm, cu))
    if best_assign is None:
        if truncated:
            raise InfeasibleError("branch-and-bound budget exhausted before any feasible placement")
        raise InfeasibleError("no placement satisfies the memory and utilization constraints")
    if truncated:
        lower = min(h[0] for h in heap)
        return SolveResult(tuple(best_assign), best_obj, "bnb-truncated", explored, min(lower, best_obj))
    return SolveResult(tuple(best_assign), best_obj, "bnb", explored, best_obj)


def solve(prob: PlacementProblem, exact_var_limit: int = 60, node_limit: int = 200_000) -> SolveResult:
    """Exact search for small programs, greedy plus local search above
    ``exact_var_limit`` assignment variables (gap reported against the root bound)."""
    _check_aggregate(prob)
    if len(prob.nodes) * len(prob.gpu_ids) <= exact_var_limit:
        return branch_and_bound(prob, node_limit)
    res = greedy(prob)
    if res is None or prob.violations(res.assign):
        raise InfeasibleError("heuristic placement found no feasible assignment")
    lb = sum(e.bytes for e in prob.edges) * float(prob.cost.min())
    res.lower_bound = min(lb, res.objective)
    return res


# -- plans -------------------------------------------------------------------


@dataclass
class Plan:
    models: tuple[str, ...]
    R: tuple[int, ...]
    S: tuple[int, ...]
    nodes: list[PlacementNode]
    edges: list[Edge]
    assignment: dict[str, str]
    objective: float
    batch_size: float
    violations: list[str] = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    search_stats: dict = field(default_factory=dict)
    gpu_memory_used: dict[str, float] = field(default_factory=dict)
    gpu_utilization: dict[str, float] = field(default_factory=dict)
    gpu_load: dict[str, float] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def gpus_used(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.assignment.values())))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "plan",
            "models": list(self.models),
            "R": list(self.R),
            "S": list(self.S),
            "batch_size": self.batch_size,
            "objective": self.objective,
            "feasible": self.feasible,
            "violations": list(self.violations),
            "assignment": [
                {
                    "node_id": nd.node_id,
                    "model_id": nd.model_id,
                    "replica": nd.replica,
                    "partition": nd.partition,
                    "memory": nd.memory,
                    "utilization": nd.utilization,
                    "gpu_id": self.assignment[nd.node_id],
                }
                for nd in self.nodes
            ],
            "edges": [
                {"src": self.nodes[e.src].node_id, "dst": self.nodes[e.dst].node_id, "bytes": e.bytes, "kind": e.kind}
                for e in self.edges
            ],
            "gpu_memory_used": self.gpu_memory_used,
            "gpu_utilization": self.gpu_utilization,
            "gpu_load": self.gpu_load,
            "solver": self.solver,
            "search": self.search_stats,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "Plan":
        try:
            nodes = [
                PlacementNode(a["node_id"], a["model_id"], int(a["replica"]), int(a["partition"]), float(a["memory"]), float(a["utilization"]))
                for a in d["assignment"]
            ]
            idx = {nd.node_id: k for k, nd in enumerate(nodes)}
            edges = [Edge(idx[e["src"]], idx[e["dst"]], float(e["bytes"]), e.get("kind", "route")) for e in d["edges"]]
            return cls(
                models=tuple(d["models"]),
                R=tuple(d["R"]),
                S=tuple(d["S"]),
                nodes=nodes,
                edges=edges,
                assignment={a["node_id"]: a["gpu_id"] for a in d["assignment"]},
                objective=float(d["objective"]),
                batch_size=float(d["batch_size"]),
                violations=list(d.get("violations", [])),
                solver=dict(d.get("solver", {})),
                search_stats=dict(d.get("search", {})),
                gpu_memory_used=dict(d.get("gpu_memory_used", {})),
                gpu_utilization=dict(d.get("gpu_utilization", {})),
                gpu_load=dict(d.get("gpu_load", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(f"malformed plan: {exc}") from exc


def load_plan(path) -> Plan:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}: {exc}") from exc
    if doc.get("kind") != "plan":
        raise TraceFormatError(f"{path}: expected a plan document")
    return Plan.from_dict(doc)


def make_plan(
    prob: PlacementProblem,
    res: SolveResult,
    models: Sequence[str],
    R: Sequence[int],
    S: Sequence[int],
    batch_size: float,
) -> Plan:
    g = len(prob.gpu_ids)
    a = np.asarray(res.assign)
    used_mem = np.bincount(a, weights=prob.mem, minlength=g)
    used_util = np.bincount(a, weights=prob.util, minlength=g)
    return Plan(
        models=tuple(models),
        R=tuple(int(x) for x in R),
        S=tuple(int(x) for x in S),
        nodes=list(prob.nodes),
        edges=list(prob.edges),
        assignment={nd.node_id: prob.gpu_ids[a[k]] for k, nd in enumerate(prob.nodes)},
        objective=res.objective,
        batch_size=batch_size,
        violations=prob.violations(res.assign),
        solver={"method": res.method, "nodes_explored": res.nodes_explored, "gap": res.gap},
        gpu_memory_used={gid: float(used_mem[k]) for k, gid in enumerate(prob.gpu_ids)},
        gpu_utilization={gid: float(used_util[k]) for k, gid in enumerate(prob.gpu_ids)},
    )


# -- plan search -------------------------------------------------------------


@dataclass(frozen=True)
class PlannerParams:
    batch_size: float = 8.0
    objective: str = "min"
    intra_discount: float = 1.0
    max_partitions: int | None = None
    partition_slack: int | None = 1
    max_replicas: int = 8
    rate: float | None = None
    max_load: float = 0.8
    exact_var_limit: int = 60
    node_limit: int = 200_000

    def __post_init__(self):
        if self.objective not in ("min", "max"):
            raise InvariantError("objective must be 'min' or 'max'")
        if self.batch_size <= 0 or not 0 < self.max_load <= 1:
            raise InvariantError("need batch_size > 0 and max_load in (0, 1]")


def choose_batch_size(
    profile_map: ProfileMap, models: Sequence[str], latency_budget: float, candidates: Sequence[int] = (1, 2, 4, 8, 16, 32)
) -> int:
    """Largest candidate batch whose service time fits the budget for every model."""
    ok = [b for b in candidates if all(float(profile_map[m].latency(b)) <= latency_budget for m in models)]
    if not ok:
        raise InfeasibleError(f"no batch size meets the {latency_budget:g} s latency budget")
    return max(ok)


def per_request_latency(curves: ModelCurves, batch_size: float) -> float:
    return float(curves.latency(batch_size)) / batch_size


def capacity_ok(
    models: Sequence[str],
    R: Sequence[int],
    S: Sequence[int],
    reach: Sequence[float],
    profile_map: ProfileMap,
    params: PlannerParams,
) -> bool:
    """Whether every model keeps up with ``params.rate`` at ``params.max_load``."""
    if params.rate is None:
        return True
    for i, m in enumerate(models):
        per_req = per_request_latency(profile_map[m], params.batch_size)
        need = reach[i] * params.rate * per_req / S[i]
        if need > params.max_load * R[i] + TOL:
            return False
    return True


def kernel_load(
    prob: PlacementProblem,
    assign: Sequence[int],
    models: Sequence[str],
    R: Sequence[int],
    S: Sequence[int],
    reach: Sequence[float],
    profile_map: ProfileMap,
    params: PlannerParams,
) -> np.ndarray:
    """Expected fraction of time each GPU runs kernels at ``params.rate``."""
    g = len(prob.gpu_ids)
    load = np.zeros(g)
    if params.rate is None:
        return load
    b = params.batch_size
    idx = {m: i for i, m in enumerate(models)}
    for k, nd in enumerate(prob.nodes):
        i = idx[nd.model_id]
        c = profile_map[nd.model_id]
        batches = reach[i] * params.rate / (R[i] * b)
        load[assign[k]] += batches * float(c.utilization(b)) * float(c.latency(b)) / S[i]
    return load


def partition_choices(
    models: Sequence[str], reach: Sequence[float], profile_map: ProfileMap, cluster: ClusterSpec, params: PlannerParams
) -> list[list[int]]:
    g = len(cluster.gpus)
    top = cluster.memories.max()
    cap = g if params.max_partitions is None else min(g, params.max_partitions)
    out = []
    for i, m in enumerate(models):
        need = float(profile_map[m].memory(reach[i] * params.batch_size))
        lo = max(1, math.ceil(need / top - 1e-12))
        hi = cap if params.partition_slack is None else min(cap, lo + params.partition_slack)
        out.append(list(range(lo, hi + 1)))
    return out


def plan_search(
    models: Sequence[str],
    reach: Sequence[float],
    flow: Sequence[Sequence[float]],
    profiles: Sequence[ModelProfile] | Mapping[str, ModelProfile],
    cluster: ClusterSpec,
    params: PlannerParams = PlannerParams(),
    profile_map: ProfileMap | None = None,
) -> Plan:
    """Enumerate partition vectors and proportional replica vectors, solve each
    placement, keep the best feasible plan.

    Ties on the objective prefer fewer GPUs, then fewer nodes.
    """
    if not isinstance(profiles, Mapping):
        profiles = {p.model_id: p for p in profiles}
    profile_map = profile_map or ProfileMap.from_profiles([profiles[m] for m in models])
    b = params.batch_size
    v = [reach[i] * per_request_latency(profile_map[m], b) for i, m in enumerate(models)]
    cluster_mem = float(cluster.memories.sum())
    stats = {"partition_vectors": 0, "combinations": 0, "memory_rejected": 0, "capacity_rejected": 0,
             "solved": 0, "infeasible": 0, "load_rejected": 0, "solver_nodes": 0}
    best: tuple | None = None
    for S in itertools.product(*partition_choices(models, reach, profile_map, cluster, params)):
        stats["partition_vectors"] += 1
        for R, _scale in replication_steps(v, S, params.max_replicas):
            stats["combinations"] += 1
            mem_total = sum(R[i] * float(profile_map[m].memory(reach[i] * b)) for i, m in enumerate(models))
            if mem_total > cluster_mem * (1 + TOL):
                stats["memory_rejected"] += 1
                continue
            if not capacity_ok(models, R, S, reach, profile_map, params):
                stats["capacity_rejected"] += 1
                continue
            nodes, edges = build_nodes(models, R, S, reach, flow, profile_map, profiles, b)
            try:
                prob = build_problem(nodes, edges, cluster, params.intra_discount)
                res = solve(prob, params.exact_var_limit, params.node_limit)
            except InfeasibleError:
                stats["infeasible"] += 1
                continue
            stats["solved"] += 1
            stats["solver_nodes"] += res.nodes_explored
            load = kernel_load(prob, res.assign, models, R, S, reach, profile_map, params)
            if load.max(initial=0.0) > params.max_load + TOL:
                stats["load_rejected"] += 1
                continue
            obj = res.objective if params.objective == "min" else -res.objective
            key = (round(obj, 12), len(set(res.assign)), len(nodes), tuple(S), tuple(R))
            if best is None or key < best[0]:
                best = (key, prob, res, R, S, load)
    if best is None:
        raise InfeasibleError(f"no feasible (R, S) combination ({stats})")
    _, prob, res, R, S, load = best
    plan = make_plan(prob, res, models, R, S, b)
    plan.search_stats = stats
    plan.gpu_load = {gid: float(x) for gid, x in zip(prob.gpu_ids, load)}
    return plan
