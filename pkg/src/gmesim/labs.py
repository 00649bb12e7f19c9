"""Locality-aware block scheduling: balanced partitioning, annealed part-to-CU mapping, greedy baseline.

The partitioner is a multilevel scheme: heavy-edge matching contracts the
graph, a greedy connectivity-driven assignment seeds the coarsest level, and
k-way Fiduccia-Mattheyses passes refine every level on the way back up.
Edges are treated as undirected with their byte weights summed.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archmodel import GpuConfig, MachineConfig, TorusNoc
from .blockgraph import BlockGraph

DEFAULT_EPS = 0.05
ANNEAL_COOLING = 0.95
ANNEAL_BUDGET_FACTOR = 50
INITIAL_TRIALS = 32


class LabsError(ValueError):
    pass


class BalanceError(LabsError):
    pass


# -- cost functions ---------------------------------------------------------

def phi(graph: BlockGraph, partition) -> int:
    """Total byte weight of edges whose endpoints sit in different parts."""
    assign = _assign_of(partition)
    total = 0
    for e in graph.edges:
        try:
            if assign[e.src] != assign[e.dst]:
                total += e.bytes
        except KeyError as k:
            raise LabsError(f"node {k.args[0]} has no part") from None
    return total


def gamma(graph: BlockGraph, mapping, noc: TorusNoc | None = None, link_cost=None) -> int:
    """Sum of edge bytes times the link cost between the CUs of the two endpoints."""
    noc = noc or TorusNoc()
    cu = mapping.node_cu if isinstance(mapping, (Mapping, Schedule)) else mapping
    cost = _cost_fn(noc, link_cost)
    total = 0
    for e in graph.edges:
        try:
            a, b = cu[e.src], cu[e.dst]
        except KeyError as k:
            raise LabsError(f"node {k.args[0]} is not mapped") from None
        if a != b:
            total += e.bytes * cost(a, b)
    return total


def _assign_of(partition) -> dict:
    return partition.assign if isinstance(partition, Partition) else partition


def _cost_fn(noc: TorusNoc, link_cost):
    """Per-byte cost between two CUs; hop distance unless a router-level matrix is supplied."""
    if link_cost is None:
        D = hop_matrix(noc)
        return lambda a, b: int(D[a, b])
    M = np.asarray(link_cost)
    if M.shape != (noc.routers, noc.routers):
        raise LabsError(f"link cost matrix must be {noc.routers}x{noc.routers}")
    return lambda a, b: M[a // noc.concentration, b // noc.concentration]


def hop_matrix(noc: TorusNoc, link_cost=None) -> np.ndarray:
    r = np.arange(noc.cu_count) // noc.concentration
    if link_cost is not None:
        M = np.asarray(link_cost, dtype=np.float64)
        return M[np.ix_(r, r)]
    R = np.array([[noc.router_hops(a, b) for b in range(noc.routers)] for a in range(noc.routers)])
    return R[np.ix_(r, r)]


# -- partitions -------------------------------------------------------------

@dataclass
class Partition:
    assign: dict
    k: int
    eps: float = DEFAULT_EPS
    weights: dict = field(default_factory=dict)

    @property
    def cap(self) -> float:
        return (1 + self.eps) * sum(self.weights.values()) / self.k

    def part_weights(self) -> list[float]:
        pw = [0.0] * self.k
        for v, p in self.assign.items():
            pw[p] += self.weights[v]
        return pw

    def check(self) -> "Partition":
        if set(self.assign) != set(self.weights):
            raise LabsError("partition does not cover the graph")
        cap = self.cap * (1 + 1e-12)
        for p, w in enumerate(self.part_weights()):
            if w > cap:
                raise BalanceError(f"part {p} weighs {w:.6g} > cap {self.cap:.6g}")
        return self

    def parts(self) -> list[list[int]]:
        out = [[] for _ in range(self.k)]
        for v in sorted(self.assign):
            out[self.assign[v]].append(v)
        return out


class _Level:
    """Undirected weighted graph on 0..n-1 used inside the multilevel scheme."""

    def __init__(self, vw: list, adj: list):
        self.vw = vw
        self.adj = adj  # adj[v] = {u: w}

    @property
    def n(self):
        return len(self.vw)

    @classmethod
    def from_graph(cls, g: BlockGraph, weights: dict):
        ids = [n.id for n in g.nodes]
        idx = {v: i for i, v in enumerate(ids)}
        adj = [dict() for _ in ids]
        for e in g.edges:
            a, b = idx[e.src], idx[e.dst]
            if a == b:
                continue
            adj[a][b] = adj[a].get(b, 0) + e.bytes
            adj[b][a] = adj[b].get(a, 0) + e.bytes
        return cls([weights[v] for v in ids], adj), ids


def node_weights(graph: BlockGraph) -> dict:
    # zero-cost nodes still occupy a slot; keep them strictly positive
    floor = 1e-9 * max((n.weight for n in graph.nodes), default=1.0)
    return {n.id: max(n.weight, floor) for n in graph.nodes}


def _coarsen(lv: _Level, rng: random.Random, max_vw: float):
    match = [-1] * lv.n
    order = list(range(lv.n))
    rng.shuffle(order)
    for v in order:
        if match[v] >= 0:
            continue
        best, bw = -1, -1
        for u, w in lv.adj[v].items():
            if match[u] < 0 and u != v and lv.vw[u] + lv.vw[v] <= max_vw and w > bw:
                best, bw = u, w
        if best >= 0:
            match[v], match[best] = best, v
        else:
            match[v] = v
    cmap = [-1] * lv.n
    nc = 0
    for v in range(lv.n):
        if cmap[v] < 0:
            cmap[v] = cmap[match[v]] = nc
            nc += 1
    vw = [0.0] * nc
    adj = [dict() for _ in range(nc)]
    for v in range(lv.n):
        cv = cmap[v]
        vw[cv] += lv.vw[v]
        for u, w in lv.adj[v].items():
            cu = cmap[u]
            if cu != cv:
                adj[cv][cu] = adj[cv].get(cu, 0) + w
    return _Level(vw, adj), cmap


def _initial(lv: _Level, k: int, cap: float, rng: random.Random, jitter: float = 0.0):
    # heaviest first; restarts perturb the weights so the greedy takes other routes
    order = sorted(range(lv.n), key=lambda v: (-lv.vw[v] * (1 + jitter * rng.random()), rng.random()))
    part = [-1] * lv.n
    pw = [0.0] * k
    for v in order:
        conn = [0.0] * k
        for u, w in lv.adj[v].items():
            if part[u] >= 0:
                conn[part[u]] += w
        fits = [p for p in range(k) if pw[p] + lv.vw[v] <= cap]
        if not fits:
            return None
        p = max(fits, key=lambda p: (conn[p], -pw[p], -p))
        part[v] = p
        pw[p] += lv.vw[v]
    return part


def _cut(lv: _Level, part) -> float:
    return sum(w for v in range(lv.n) for u, w in lv.adj[v].items() if part[u] != part[v]) / 2


SWAP_MAX_NODES = 128


def _swap_pass(lv: _Level, part: list, k: int, cap: float) -> None:
    """Pairwise exchanges with positive gain, for levels where single moves are balance-locked."""
    n = lv.n
    while True:
        pw = [0.0] * k
        for v in range(n):
            pw[part[v]] += lv.vw[v]
        conn = [[0.0] * k for _ in range(n)]
        for v in range(n):
            for u, w in lv.adj[v].items():
                conn[v][part[u]] += w
        best, pair = 1e-12, None
        for u in range(n):
            pu = part[u]
            for v in range(u + 1, n):
                pv = part[v]
                if pu == pv:
                    continue
                if pw[pv] - lv.vw[v] + lv.vw[u] > cap or pw[pu] - lv.vw[u] + lv.vw[v] > cap:
                    continue
                g = (conn[u][pv] - conn[u][pu]) + (conn[v][pu] - conn[v][pv]) - 2 * lv.adj[u].get(v, 0)
                if g > best:
                    best, pair = g, (u, v)
        if pair is None:
            return
        u, v = pair
        part[u], part[v] = part[v], part[u]


def _refine(lv: _Level, part: list, k: int, cap: float) -> None:
    _fm(lv, part, k, cap)
    if lv.n <= SWAP_MAX_NODES:
        _swap_pass(lv, part, k, cap)
        _fm(lv, part, k, cap)


def _fm(lv: _Level, part: list, k: int, cap: float, max_passes: int = 8) -> None:
    """k-way boundary refinement with locked moves and best-prefix rollback, in place."""
    n = lv.n
    pw = [0.0] * k
    for v in range(n):
        pw[part[v]] += lv.vw[v]
    conn = [dict() for _ in range(n)]
    for v in range(n):
        c = conn[v]
        for u, w in lv.adj[v].items():
            c[part[u]] = c.get(part[u], 0) + w

    def best_move(v):
        own = conn[v].get(part[v], 0)
        best, bg = -1, None
        for p, w in conn[v].items():
            if p != part[v] and pw[p] + lv.vw[v] <= cap:
                g = w - own
                if bg is None or g > bg or (g == bg and pw[p] < pw[best]):
                    best, bg = p, g
        return best, bg

    for _ in range(max_passes):
        heap = []
        ver = [0] * n
        for v in range(n):
            if len(conn[v]) > 1 or part[v] not in conn[v] and conn[v]:
                p, g = best_move(v)
                if p >= 0:
                    heap.append((-g, v, 0, p))
        heapq.heapify(heap)
        locked = [False] * n
        moves = []
        run = best_run = 0
        best_len = stall = 0
        limit = max(50, n // 10)
        while heap and stall < limit:
            ng, v, vv, p = heapq.heappop(heap)
            if locked[v] or vv != ver[v]:
                continue
            p2, g2 = best_move(v)
            if p2 < 0:
                continue
            if p2 != p or g2 != -ng:
                ver[v] += 1
                heapq.heappush(heap, (-g2, v, ver[v], p2))
                continue
            src = part[v]
            part[v] = p
            pw[src] -= lv.vw[v]
            pw[p] += lv.vw[v]
            locked[v] = True
            moves.append((v, src))
            run += g2
            for u, w in lv.adj[v].items():
                cu = conn[u]
                cu[src] -= w
                if cu[src] == 0:
                    del cu[src]
                cu[p] = cu.get(p, 0) + w
                if not locked[u]:
                    q, g = best_move(u)
                    ver[u] += 1
                    if q >= 0:
                        heapq.heappush(heap, (-g, u, ver[u], q))
            if run > best_run:
                best_run, best_len, stall = run, len(moves), 0
            else:
                stall += 1
        keep = best_len if best_run > 0 else 0
        for v, src in reversed(moves[keep:]):
            dst = part[v]
            part[v] = src
            pw[dst] -= lv.vw[v]
            pw[src] += lv.vw[v]
            for u, w in lv.adj[v].items():
                cu = conn[u]
                cu[dst] -= w
                if cu[dst] == 0:
                    del cu[dst]
                cu[src] = cu.get(src, 0) + w
        if best_run <= 0:
            break


def multilevel_partition(graph: BlockGraph, k: int, eps: float = DEFAULT_EPS, seed: int = 0,
                         trials: int = INITIAL_TRIALS) -> Partition:
    if k < 1:
        raise LabsError("k must be >= 1")
    if not graph.nodes:
        raise LabsError("cannot partition an empty graph")
    weights = node_weights(graph)
    total = sum(weights.values())
    cap = (1 + eps) * total / k
    heavy = max(weights, key=weights.get)
    if weights[heavy] > cap:
        raise BalanceError(f"node {heavy} weighs {weights[heavy]:.6g}, above the part cap {cap:.6g}")
    if k == 1:
        return Partition({v: 0 for v in weights}, 1, eps, weights).check()

    rng = random.Random(seed)
    lv, ids = _Level.from_graph(graph, weights)
    target = max(2 * k, 32)
    max_vw = min(cap, max(max(lv.vw), 1.5 * total / target))
    levels, maps = [lv], []
    while levels[-1].n > target:
        c, cmap = _coarsen(levels[-1], rng, max_vw)
        if c.n > 0.95 * levels[-1].n:
            break
        levels.append(c)
        maps.append(cmap)

    coarse = levels[-1]
    best, best_cut = None, math.inf
    for t in range(trials):
        part = _initial(coarse, k, cap, random.Random(rng.random() if t else seed), 1.0 if t else 0.0)
        if part is None:
            continue
        _refine(coarse, part, k, cap)
        c = _cut(coarse, part)
        if c < best_cut:
            best, best_cut = part, c
    if best is None:
        raise BalanceError(f"no {k}-way partition within {eps:.0%} imbalance was found")

    part = best
    for lvl in range(len(maps) - 1, -1, -1):
        cmap = maps[lvl]
        part = [part[cmap[v]] for v in range(levels[lvl].n)]
        _refine(levels[lvl], part, k, cap)
    return Partition({ids[i]: part[i] for i in range(len(ids))}, k, eps, weights).check()


# -- mapping ----------------------------------------------------------------

@dataclass
class Mapping:
    part_cu: list  # part index -> CU id
    node_cu: dict  # node id -> CU id

    @classmethod
    def from_parts(cls, partition: Partition, part_cu) -> "Mapping":
        part_cu = [int(c) for c in part_cu]
        return cls(part_cu, {v: part_cu[p] for v, p in partition.assign.items()})


@dataclass(frozen=True)
class AnnealSchedule:
    cooling: float = ANNEAL_COOLING
    t0: float | None = None
    budget: int | None = None  # proposals; default 50 * parts^2


def torus_order(noc: TorusNoc) -> list[int]:
    """CU ids along a boustrophedon walk of the router grid."""
    out = []
    for r in range(noc.rows):
        cols = range(noc.cols) if r % 2 == 0 else reversed(range(noc.cols))
        for c in cols:
            base = (r * noc.cols + c) * noc.concentration
            out.extend(range(base, base + noc.concentration))
    return out


def _part_matrix(graph: BlockGraph, partition: Partition) -> tuple[np.ndarray, int]:
    k = partition.k
    W = np.zeros((k, k))
    cut = 0
    a = partition.assign
    for e in graph.edges:
        p, q = a[e.src], a[e.dst]
        if p != q:
            W[p, q] += e.bytes
            W[q, p] += e.bytes
            cut += 1
    return W, cut


def _chain_order(W: np.ndarray) -> list[int]:
    """Parts ordered so that consecutive parts share heavy traffic."""
    k = W.shape[0]
    left = set(range(k))
    cur = int(np.argmax(W.sum(axis=1)))
    out = [cur]
    left.discard(cur)
    while left:
        cand = sorted(left)
        cur = max(cand, key=lambda q: (W[cur, q], -q))
        out.append(cur)
        left.discard(cur)
    return out


def initial_placement(partition: Partition, noc: TorusNoc, W: np.ndarray | None = None) -> list[int]:
    k = partition.k
    if k > noc.cu_count:
        raise LabsError(f"{k} parts exceed {noc.cu_count} CUs")
    walk = torus_order(noc)
    stride = noc.cu_count // k
    order = _chain_order(W) if W is not None else list(range(k))
    place = [0] * k
    for i, p in enumerate(order):
        place[p] = walk[i * stride]
    return place


def _total(W, D, pos) -> float:
    return float((W * D[np.ix_(pos, pos)]).sum() / 2)


def anneal_map(graph: BlockGraph, partition: Partition, noc: TorusNoc | None = None, seed: int = 0,
               schedule: AnnealSchedule | None = None, link_cost=None) -> Mapping:
    noc = noc or TorusNoc()
    schedule = schedule or AnnealSchedule()
    k = partition.k
    W, n_cut = _part_matrix(graph, partition)
    D = hop_matrix(noc, link_cost).astype(np.float64)
    pos = np.array(initial_placement(partition, noc, W), dtype=np.int64)
    cur = _total(W, D, pos)
    if k == 1 or cur == 0:
        return Mapping.from_parts(partition, pos)
    rng = np.random.default_rng(seed)
    owner = np.full(noc.cu_count, -1, dtype=np.int64)
    owner[pos] = np.arange(k)
    T = schedule.t0 if schedule.t0 is not None else cur / max(n_cut, 1)
    budget = schedule.budget if schedule.budget is not None else ANNEAL_BUDGET_FACTOR * k * k
    best, best_pos = cur, pos.copy()
    parts = rng.integers(0, k, size=budget)
    cus = rng.integers(0, noc.cu_count, size=budget)
    coins = rng.random(budget)
    for it in range(budget):
        a, y = int(parts[it]), int(cus[it])
        x = int(pos[a])
        if x == y:
            continue
        b = int(owner[y])
        delta = W[a] @ (D[y, pos] - D[x, pos])
        if b >= 0:
            delta += W[b] @ (D[x, pos] - D[y, pos]) + 2 * W[a, b] * D[x, y]
        if delta <= 0 or (T > 0 and coins[it] < math.exp(-delta / T)):
            pos[a] = y
            owner[y] = a
            if b >= 0:
                pos[b] = x
                owner[x] = b
            else:
                owner[x] = -1
            cur += delta
            if cur < best - 1e-9:
                best, best_pos = cur, pos.copy()
        if (it + 1) % k == 0:
            T *= schedule.cooling
    return Mapping.from_parts(partition, best_pos)


def random_placement(partition: Partition, noc: TorusNoc | None = None, seed: int = 0) -> Mapping:
    noc = noc or TorusNoc()
    rng = np.random.default_rng(seed)
    return Mapping.from_parts(partition, rng.choice(noc.cu_count, size=partition.k, replace=False))


# -- schedules --------------------------------------------------------------

@dataclass
class Schedule:
    node_cu: dict
    order: list
    scheduler: str = ""
    phi: int = 0
    gamma: int = 0
    k: int = 0

    def to_dict(self) -> dict:
        return {"scheduler": self.scheduler, "k": self.k, "phi": self.phi, "gamma": self.gamma,
                "mapping": {str(v): c for v, c in sorted(self.node_cu.items())}, "order": list(self.order)}

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        try:
            m = {int(v): int(c) for v, c in d["mapping"].items()}
            return cls(m, [int(v) for v in d["order"]], d.get("scheduler", ""),
                       int(d.get("phi", 0)), int(d.get("gamma", 0)), int(d.get("k", 0)))
        except (KeyError, TypeError, ValueError) as e:
            raise LabsError(f"malformed schedule document: {e}") from None

    def check(self, graph: BlockGraph) -> "Schedule":
        ids = {n.id for n in graph.nodes}
        if set(self.node_cu) != ids or sorted(self.order) != sorted(ids):
            raise LabsError("schedule does not match the graph")
        pos = {v: i for i, v in enumerate(self.order)}
        for e in graph.edges:
            if pos[e.src] > pos[e.dst]:
                raise LabsError(f"dispatch order runs {e.dst} before its producer {e.src}")
        return self


def save_schedule(s: Schedule, path) -> None:
    Path(path).write_text(json.dumps(s.to_dict()) + "\n")


def load_schedule(path) -> Schedule:
    try:
        return Schedule.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as e:
        raise LabsError(f"malformed schedule file: {e}") from None


def _gpu_noc(config) -> tuple[GpuConfig, TorusNoc]:
    if isinstance(config, MachineConfig):
        return config.gpu, config.noc
    if isinstance(config, GpuConfig):
        return config, TorusNoc(rows=1, cols=config.se_count, concentration=config.cus_per_se)
    return GpuConfig(), TorusNoc()


def greedy_schedule(graph: BlockGraph, config=None) -> Schedule:
    """Topological FIFO dispatch onto the least-loaded CU, blind to data locality."""
    gpu, noc = _gpu_noc(config)
    if not graph.nodes:
        return Schedule({}, [], "greedy")
    order = graph.topo_order()
    heap = [(0.0, c) for c in range(gpu.cu_count)]
    node_cu = {}
    for v in order:
        load, c = heapq.heappop(heap)
        node_cu[v] = c
        heapq.heappush(heap, (load + graph.node(v).weight, c))
    s = Schedule(node_cu, order, "greedy", k=gpu.cu_count)
    s.phi = phi(graph, node_cu)
    s.gamma = gamma(graph, node_cu, noc)
    return s


def locality_order(graph: BlockGraph, assign: dict) -> list[int]:
    """Topological order that keeps dispatching from the current part while it has ready blocks."""
    rank = {v: i for i, v in enumerate(graph.topo_order())}
    indeg = {n.id: len(graph.pred[n.id]) for n in graph.nodes}
    ready_by_part: dict = {}
    glob = []
    for v, d in indeg.items():
        if d == 0:
            heapq.heappush(ready_by_part.setdefault(assign[v], []), (rank[v], v))
            heapq.heappush(glob, (rank[v], v))
    done = set()
    out = []
    cur = None
    while len(out) < len(indeg):
        pick = None
        h = ready_by_part.get(cur)
        while h:
            r, v = heapq.heappop(h)
            if v not in done:
                pick = v
                break
        if pick is None:
            while glob:
                r, v = heapq.heappop(glob)
                if v not in done:
                    pick = v
                    break
        done.add(pick)
        out.append(pick)
        cur = assign[pick]
        for e in graph.succ[pick]:
            indeg[e.dst] -= 1
            if indeg[e.dst] == 0:
                item = (rank[e.dst], e.dst)
                heapq.heappush(ready_by_part.setdefault(assign[e.dst], []), item)
                heapq.heappush(glob, item)
    return out


def default_parts(graph: BlockGraph, cu_count: int, eps: float = DEFAULT_EPS) -> int:
    """Largest k <= cu_count for which no single block exceeds the part cap."""
    w = node_weights(graph)
    total, heavy = sum(w.values()), max(w.values(), default=0.0)
    if heavy <= 0:
        return 1
    return max(1, min(cu_count, len(w), int((1 + eps) * total / heavy)))


def labs_schedule(graph: BlockGraph, config=None, k: int | None = None, eps: float = DEFAULT_EPS,
                  seed: int = 0, anneal: AnnealSchedule | None = None, link_cost=None) -> Schedule:
    gpu, noc = _gpu_noc(config)
    if not graph.nodes:
        return Schedule({}, [], "labs")
    k = k or default_parts(graph, gpu.cu_count, eps)
    while True:
        try:
            part = multilevel_partition(graph, k, eps, seed)
            break
        except BalanceError:
            if k == 1:
                raise
            k = max(1, int(k * 0.9))
    m = anneal_map(graph, part, noc, seed, anneal, link_cost)
    order = locality_order(graph, part.assign)
    return Schedule(m.node_cu, order, "labs", phi(graph, part), gamma(graph, m, noc, link_cost), k)


def make_schedule(graph: BlockGraph, name: str, config=None, seed: int = 0, **kw) -> Schedule:
    if name == "greedy":
        return greedy_schedule(graph, config)
    if name == "labs":
        return labs_schedule(graph, config, seed=seed, **kw)
    raise LabsError(f"unknown scheduler {name!r}")
