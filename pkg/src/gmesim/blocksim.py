"""Block-level analytical timing model.

Blocks run one after another in dispatch order, each spread over every
CU. A block's operations are expanded into a limb-granular access trace
that mirrors the analytic operation costs, and the trace is replayed
through a liveness-aware LRU model of the shared LDS. Accesses that miss,
stream (evaluation keys) or must be written back go to DRAM; on-chip hits
to data homed at another CU's router travel the torus. Block time is
max(compute, DRAM) plus the NoC term.

Each block has an anchor CU from the schedule. Its data layout is a set
of coefficient slices placed relative to that anchor, so reading a limb
produced by a block anchored elsewhere shifts every slice by the same
router displacement and the NoC cost is bytes times hops.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from . import heblocks as H
from .archmodel import KINDS, Features, MachineConfig, instr_cycles, load_config
from .blockgraph import BlockGraph, DagBuilder, build_workload
from .labs import hop_matrix, make_schedule
from .params import CkksParams
from .polyring import WORD_BYTES

REPORT_SCHEMA = "gmesim.simreport/1"
CSV_SCHEMA = "# gmesim-csv v1"
CSV_FIELDS = ("workload", "features", "cycles", "runtime_ms", "dram_bytes", "cpt", "cpi",
              "utilization", "speedup", "t_as_ns")
# an elementwise op touches two operand limbs and one result limb
MIN_WORKING_LIMBS = 3
# baseline HEAdd latency used as the one calibration point, microseconds
CALIBRATION_HEADD_US = 217.0
LADDER = ("baseline", "cnoc", "mod", "wmac", "labs")

READ, WRITE, STREAM = K._pykernels.READ, K._pykernels.WRITE, K._pykernels.STREAM


class SimError(ValueError):
    pass


# -- limb traces ------------------------------------------------------------

@dataclass
class _BlockTrace:
    items: np.ndarray
    kinds: np.ndarray
    outputs: tuple  # polys, each an array of limb ids


class _Tracer:
    """Emits limb accesses for one block at a time, with globally unique limb ids.

    Limb-wise operations between two cross-limb steps (base conversions and
    explicit barriers) form a fused segment that is executed limb-major:
    accesses are ordered by (segment, limb position), op order breaking ties.
    """

    def __init__(self, params: CkksParams):
        self.p = params
        self.ext = len(params.ext_moduli) or params.ext_limbs
        self.alpha = params.alpha
        self.next_id = 0
        self._seg = 0
        self._parts: list = []

    def alloc(self, n: int) -> np.ndarray:
        a = np.arange(self.next_id, self.next_id + n, dtype=np.int64)
        self.next_id += n
        return a

    def barrier(self):
        self._seg += 1

    def _emit(self, cols, kinds, pos=None):
        n = len(cols[0])
        if n == 0:
            return
        w = len(cols)
        p = np.arange(n) if pos is None else pos
        self._parts.append((np.stack(cols, axis=1).ravel(), np.tile(np.array(kinds, dtype=np.uint8), n),
                            np.full(n * w, self._seg), np.repeat(p, w), np.full(n * w, len(self._parts))))

    def take(self, verify: bool = False) -> tuple[np.ndarray, np.ndarray]:
        if not self._parts:
            return np.zeros(0, np.int64), np.zeros(0, np.uint8)
        it, kd, seg, pos, op = (np.concatenate(x) for x in zip(*self._parts))
        self._parts = []
        order = np.lexsort((pos, seg))
        if verify:
            _check_program_order(it[order], kd[order], op[order])
        return it[order], kd[order]

    # operations, one call per cost-function term
    def ew(self, a, b, stream_b: bool = False):
        c = self.alloc(len(a))
        self._emit([a, b, c], [READ, STREAM if stream_b else READ, WRITE])
        return c

    def un(self, a, in_place: bool = False):
        c = a if in_place else self.alloc(len(a))
        self._emit([a, c], [READ, WRITE])
        return c

    def conv(self, a, dst: int):
        c = self.alloc(dst)
        self.barrier()
        self._emit([a], [READ], np.zeros(len(a), dtype=np.int64))
        self._emit([c], [WRITE], np.zeros(dst, dtype=np.int64))
        self.barrier()
        return c

    def mod_down(self, x, keep: int, drop: int, eval_rep: bool = True):
        self.barrier()
        low, high = x[:keep], x[keep:keep + drop]
        t = self.un(high) if eval_rep else high
        u = self.conv(t, keep)
        if drop > 1:
            self.un(u, in_place=True)
        if eval_rep:
            self.un(u, in_place=True)
        v = self.ew(low, u)
        return self.un(v)

    def key_switch(self, d, level: int):
        l1 = level + 1
        self.barrier()
        dc = self.un(d)
        key = np.zeros(l1 + self.ext, dtype=np.int64)
        acc = [None, None]
        for lo, hi in H.digits_at(level, self.alpha):
            e = self.conv(dc[lo:hi], l1 - (hi - lo) + self.ext)
            # the digit's own limbs sit first in the raised basis; positions follow the raised basis
            self._emit([e, e], [READ, WRITE], np.arange(hi - lo, l1 + self.ext))
            dj_pos = np.arange(l1 + self.ext)
            dj = np.concatenate([d[lo:hi], e])
            prods = []
            for _ in range(2):
                c = self.alloc(len(dj))
                self._emit([dj, key, c], [READ, STREAM, WRITE], dj_pos)
                prods.append(c)
            for t in range(2):
                acc[t] = prods[t] if acc[t] is None else self.ew(acc[t], prods[t])
        self.barrier()
        out = tuple(self.mod_down(a, l1, self.ext) for a in acc)
        self.barrier()
        return out


def _check_program_order(items, kinds, op):
    """Every limb must see its operations in program order after the limb-major reordering."""
    m = kinds != STREAM
    items, op = items[m], op[m]
    idx = np.lexsort((np.arange(len(items)), items))
    same = items[idx[:-1]] == items[idx[1:]]
    bad = same & (op[idx[1:]] < op[idx[:-1]])
    if bad.any():
        raise SimError(f"fused trace reorders accesses to limb {int(items[idx[1:]][bad][0])}")


def _operands(kind: str) -> int:
    return 2 if kind in ("HEAdd", "HEMult") else 1


def _block_trace(tr: _Tracer, kind: str, level: int, ins: list) -> tuple:
    l1 = level + 1
    if kind == "ScalarAdd":
        c0, c1 = ins[0]
        return (tr.un(c0), c1)
    if kind == "ScalarMult":
        return tuple(tr.un(c) for c in ins[0])
    if kind in ("PolyAdd", "PolyMult"):
        pt = tr.alloc(l1)
        c0, c1 = ins[0]
        if kind == "PolyAdd":
            return (tr.ew(c0, pt), c1)
        return (tr.ew(c0, pt), tr.ew(c1, pt))
    if kind == "HEAdd":
        (a0, a1), (b0, b1) = ins
        return (tr.ew(a0, b0), tr.ew(a1, b1))
    if kind == "HEMult":
        (a0, a1), (b0, b1) = ins
        d0 = tr.ew(a0, b0)
        d1 = tr.ew(tr.ew(a1, b0), tr.ew(b1, a0))
        d2 = tr.ew(a1, b1)
        k0, k1 = tr.key_switch(d2, level)
        return (tr.ew(d0, k0), tr.ew(d1, k1))
    if kind in ("HERotate", "Conjugate"):
        c0, c1 = ins[0]
        g0, g1 = tr.un(c0), tr.un(c1)
        k0, k1 = tr.key_switch(g1, level)
        return (tr.ew(g0, k0), k1)
    if kind == "KeySwitch":
        return tr.key_switch(ins[0][0], level)
    if kind == "HERescale":
        return tuple(tr.mod_down(c, level, 1) for c in ins[0])
    if kind in ("NTT", "iNTT"):
        return (tr.un(ins[0][0]),)
    if kind == "ModRaise":
        out = []
        for c in ins[0]:
            t = tr.un(c[:1])
            u = tr.conv(t, level)
            out.append(tr.un(np.concatenate([t, u]), in_place=True))
            tr.barrier()
        return tuple(out)
    if kind == "ModDown":
        x = np.concatenate([ins[0][0], tr.alloc(tr.ext)])
        return (tr.mod_down(x, l1, tr.ext),)
    raise SimError(f"no trace model for block kind {kind!r}")


def _fresh_operand(tr: _Tracer, kind: str, level: int) -> tuple:
    if kind == "ModRaise":
        return (tr.alloc(1), tr.alloc(1))
    if kind in ("NTT", "iNTT", "KeySwitch", "ModDown"):
        return (tr.alloc(level + 1),)
    return (tr.alloc(level + 1), tr.alloc(level + 1))


@dataclass
class GraphTraces:
    blocks: dict  # node id -> _BlockTrace
    n_items: int
    liveout: np.ndarray
    limb_bytes: int


def build_traces(graph: BlockGraph, params: CkksParams, verify: bool = False) -> GraphTraces:
    """Per-block limb traces; limb ids do not depend on the dispatch order."""
    tr = _Tracer(params)
    lb = params.N * WORD_BYTES
    blocks = {}
    for v in graph.topo_order():
        node = graph.node(v)
        ins = []
        for e in graph.pred[v]:
            src = blocks[e.src].outputs
            nl = e.bytes // (len(src) * lb)
            ins.append(tuple(p[:nl] for p in src))
        while len(ins) < _operands(node.kind):
            ins.append(_fresh_operand(tr, node.kind, node.level))
        outs = _block_trace(tr, node.kind, node.level, ins[: _operands(node.kind)])
        it, kd = tr.take(verify)
        blocks[v] = _BlockTrace(it, kd, outs)
    live = np.zeros(tr.next_id, dtype=np.uint8)
    for n in graph.nodes:
        if not graph.succ[n.id]:
            for p in blocks[n.id].outputs:
                live[p] = 1
    return GraphTraces(blocks, tr.next_id, live, lb)


def trace_bytes(bt: _BlockTrace, limb_bytes: int) -> tuple[int, int]:
    w = int((bt.kinds == WRITE).sum())
    return (len(bt.kinds) - w) * limb_bytes, w * limb_bytes


def _next_use(items: np.ndarray, kinds: np.ndarray) -> np.ndarray:
    n = len(items)
    nxt = np.full(n, -1, dtype=np.int64)
    idx = np.flatnonzero(kinds != STREAM)
    if len(idx) == 0:
        return nxt
    order = idx[np.argsort(items[idx], kind="stable")]
    same = items[order[:-1]] == items[order[1:]]
    nxt[order[:-1][same]] = order[1:][same]
    return nxt


# -- configuration and reports ---------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    machine: MachineConfig
    params: CkksParams
    lds_total_bytes: int | None = None
    scheduler: str = "greedy"
    noc_links: int | None = None  # directional links sharing a displacement; default 4 per router
    calibration: float = 1.0  # wall-clock scale applied to modeled cycles

    def __post_init__(self):
        if self.scheduler not in ("greedy", "labs"):
            raise SimError(f"unknown scheduler {self.scheduler!r}")
        f = self.machine.features
        if f.labs and not f.cnoc:
            raise SimError("labs requires cnoc for cross-CU LDS reuse")

    @property
    def features(self) -> Features:
        return self.machine.features

    @property
    def lds_bytes(self) -> int:
        return self.machine.gpu.lds_total_bytes if self.lds_total_bytes is None else int(self.lds_total_bytes)

    def with_features(self, **kw) -> "SimConfig":
        return replace(self, machine=self.machine.with_features(**kw))


@dataclass
class SimReport:
    workload: str
    features: str
    scheduler: str
    blocks: dict  # column name -> list, one entry per dispatched block
    cycles: float = 0.0
    runtime_ms: float = 0.0
    calibrated_ms: float = 0.0
    dram_bytes: int = 0
    lds_hit_bytes: int = 0
    remote_bytes: int = 0
    declared_bytes: int = 0
    noc_byte_hops: int = 0
    instructions: int = 0
    transactions: int = 0
    avg_cpt: float = 0.0
    avg_cpi: float = 0.0
    cu_utilization: float = 0.0
    lds_total_bytes: int = 0
    speedup_vs_baseline: float | None = None
    t_as_ns: float | None = None
    meta: dict = field(default_factory=dict)

    def conserved(self) -> bool:
        return self.dram_bytes + self.lds_hit_bytes + self.remote_bytes == self.declared_bytes

    def summary(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "workload", "features", "scheduler", "cycles", "runtime_ms", "calibrated_ms", "dram_bytes",
            "lds_hit_bytes", "remote_bytes", "declared_bytes", "noc_byte_hops", "instructions",
            "transactions", "avg_cpt", "avg_cpi", "cu_utilization", "lds_total_bytes",
            "speedup_vs_baseline", "t_as_ns")}
        return d

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, **self.summary(), "meta": self.meta, "blocks": self.blocks}

    def csv_row(self) -> dict:
        return {"workload": self.workload, "features": self.features, "cycles": self.cycles,
                "runtime_ms": self.runtime_ms, "dram_bytes": self.dram_bytes, "cpt": self.avg_cpt,
                "cpi": self.avg_cpi, "utilization": self.cu_utilization,
                "speedup": self.speedup_vs_baseline, "t_as_ns": self.t_as_ns}


def reports_csv(reports) -> str:
    buf = io.StringIO()
    buf.write(CSV_SCHEMA + "\n")
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({k: ("" if v is None else v) for k, v in r.csv_row().items()})
    return buf.getvalue()


# -- simulation -------------------------------------------------------------

def compute_cycles(profile: H.BlockProfile, machine: MachineConfig, N: int) -> float:
    """Wave64 throughput over all CUs, rounded up to whole coefficient batches."""
    gpu, f = machine.gpu, machine.features
    work = sum(getattr(profile, k) * instr_cycles(k, machine.isa, f) for k in KINDS)
    per_cycle = gpu.cu_count * gpu.simd_per_cu * gpu.wavefront_size
    quant = gpu.batches(N) * gpu.lanes / N
    return work / per_cycle * quant


def _traces_for(graph: BlockGraph, params: CkksParams) -> GraphTraces:
    cache = graph.__dict__.setdefault("_trace_cache", {})
    key = (params.N, params.alpha, len(params.ext_moduli) or params.ext_limbs)
    if key not in cache:
        cache[key] = build_traces(graph, params)
    return cache[key]


def ntt_passes(N: int, machine, capacity_limbs: int = 0) -> int:
    """DRAM passes per limb transform: one if a whole limb fits on chip, else
    enough passes for the butterfly stages that fit in one CU's LDS."""
    if capacity_limbs >= 1 or N <= 1:
        return 1
    per_cu = machine.gpu.lds_per_cu_bytes // 8
    if per_cu < 2:
        raise SimError("per-CU LDS cannot hold a butterfly")
    return math.ceil(math.log2(N) / math.floor(math.log2(per_cu)))


def simulate(graph: BlockGraph, schedule, config: SimConfig) -> SimReport:
    m = config.machine
    f = m.features
    rep = SimReport(graph.name, f.label(), config.scheduler, _empty_blocks(), lds_total_bytes=config.lds_bytes)
    if not graph.nodes:
        return rep
    if schedule is None:
        raise SimError("a schedule is required")
    missing = [n.id for n in graph.nodes if n.id not in schedule.node_cu]
    if missing or len(schedule.order) != len(graph.nodes):
        raise SimError(f"schedule does not cover the graph (first missing: {missing[:5]})")
    schedule.check(graph)
    tr = _traces_for(graph, config.params)
    lb = tr.limb_bytes

    order = list(schedule.order)
    items = np.concatenate([tr.blocks[v].items for v in order])
    kinds = np.concatenate([tr.blocks[v].kinds for v in order])
    lens = np.array([len(tr.blocks[v].items) for v in order])
    blk = np.repeat(np.arange(len(order)), lens)
    anchors = np.array([schedule.node_cu[v] for v in order], dtype=np.int64)
    nxt = _next_use(items, kinds)

    capacity = 0
    if f.cnoc:
        capacity = config.lds_bytes // lb
        if capacity < MIN_WORKING_LIMBS:
            warnings.warn(f"LDS budget of {capacity} limbs is below one block's working set; streaming from DRAM")
            capacity = 0
    passes = ntt_passes(config.params.N, m, capacity)
    hop = hop_matrix(m.noc).astype(np.int64)
    dram, hops = K.lru_serve(items, kinds, nxt, tr.liveout, anchors[blk], hop, capacity)

    nb = len(order)
    dram_acc = np.bincount(blk, weights=dram, minlength=nb)
    remote = (dram == 0) & (hops > 0)
    local = (dram == 0) & (hops == 0)
    remote_acc = np.bincount(blk, weights=remote, minlength=nb)
    local_acc = np.bincount(blk, weights=local, minlength=nb)
    hop_acc = np.bincount(blk, weights=hops * (dram == 0), minlength=nb)
    max_hops = np.zeros(nb, dtype=np.int64)
    np.maximum.at(max_hops, blk, hops * (dram == 0))

    noc = m.noc
    links = config.noc_links or 4 * noc.routers
    bw_dram = m.gpu.dram_bytes_per_cycle
    cols = _empty_blocks()
    t = 0.0
    instr = 0
    comp_total = 0.0
    spill_total = 0
    for i, v in enumerate(order):
        node = graph.node(v)
        c = compute_cycles(node.profile, m, config.params.N)
        # NTT passes that do not fit on chip round-trip each limb through DRAM
        spill = (passes - 1) * 2 * (node.profile.ntt + node.profile.intt) * lb
        dbytes = int(dram_acc[i]) * lb + spill
        spill_total += spill
        mem = dbytes / bw_dram
        nc = hop_acc[i] * lb / (links * noc.link_bytes_per_cycle) + max_hops[i] * noc.router_hop_cycles
        dur = max(c, mem) + nc
        cols["id"].append(v)
        cols["kind"].append(node.kind)
        cols["level"].append(node.level)
        cols["cu"].append(int(anchors[i]))
        cols["compute_cycles"].append(c)
        cols["memory_cycles"].append(mem)
        cols["noc_cycles"].append(float(nc))
        cols["start"].append(t)
        cols["end"].append(t + dur)
        cols["dram_bytes"].append(dbytes)
        cols["lds_hit_bytes"].append(int(local_acc[i]) * lb)
        cols["remote_bytes"].append(int(remote_acc[i]) * lb)
        t += dur
        comp_total += c
        instr += sum(getattr(node.profile, k) for k in KINDS)

    rep.blocks = cols
    rep.cycles = t
    rep.runtime_ms = t / (m.gpu.freq_ghz * 1e6)
    rep.calibrated_ms = rep.runtime_ms * config.calibration
    rep.dram_bytes = int(dram.sum()) * lb + spill_total
    rep.lds_hit_bytes = int(local.sum()) * lb
    rep.remote_bytes = int(remote.sum()) * lb
    rep.declared_bytes = len(items) * lb + spill_total
    rep.noc_byte_hops = int((hops * (dram == 0)).sum()) * lb
    rep.instructions = int(instr)
    rep.transactions = len(items)
    rep.avg_cpt = t / len(items) if len(items) else 0.0
    rep.avg_cpi = t / instr if instr else 0.0
    rep.cu_utilization = comp_total / t if t else 0.0
    rep.meta = {"capacity_limbs": capacity, "ntt_passes": passes, "limb_bytes": lb, "noc_links": links,
                "calibration": config.calibration, "model": "sequential blocks, max(compute, dram) + noc"}
    return rep


def _empty_blocks() -> dict:
    return {k: [] for k in ("id", "kind", "level", "cu", "compute_cycles", "memory_cycles", "noc_cycles",
                            "start", "end", "dram_bytes", "lds_hit_bytes", "remote_bytes")}


# -- derived metrics and experiments ---------------------------------------

def amortized_mult_slot(t_boot_ms: float, t_mult_per_level, params: CkksParams) -> float:
    """Amortized multiplication time per slot in nanoseconds.

    t_mult_per_level is a mapping or callable giving the milliseconds of a
    multiplication at level l, for l = 1 .. L - L_boot.
    """
    depth = params.L - params.L_boot
    if depth <= 0:
        raise SimError("amortized mult time needs L > L_boot")
    get = t_mult_per_level if callable(t_mult_per_level) else t_mult_per_level.__getitem__
    total = t_boot_ms + sum(get(lv) for lv in range(1, depth + 1))
    return total / depth / params.n * 1e6


def single_block_graph(kind: str, params: CkksParams, level: int | None = None) -> BlockGraph:
    b = DagBuilder(params, kind)
    level = params.L if level is None else level
    ins = [b.fresh(level)] * _operands(kind)
    b.emit(kind, level, ins, ext_in=0)
    return b.g


def _mult_graph(params: CkksParams, level: int) -> BlockGraph:
    b = DagBuilder(params, f"mult@{level}")
    x = b.fresh(level)
    b.rescale(b.emit("HEMult", level, [x, x]))
    return b.g


def sim_config(machine, params: CkksParams, scheduler: str | None = None, **kw) -> SimConfig:
    m = load_config(machine) if isinstance(machine, str) else machine
    sched = scheduler or ("labs" if m.features.labs else "greedy")
    return SimConfig(m, params, scheduler=sched, **kw)


def run(graph: BlockGraph, config: SimConfig, seed: int = 0, schedule=None) -> SimReport:
    s = schedule or make_schedule(graph, config.scheduler, config.machine, seed=seed)
    return simulate(graph, s, config)


def calibrate(params: CkksParams, machine=None) -> float:
    """Wall-clock scale that maps the baseline HEAdd model onto its measured latency."""
    m = (load_config(machine) if isinstance(machine, str) else machine) or load_config("mi100")
    m = m.with_features(cnoc=False, mod=False, wmac=False, labs=False)
    r = run(single_block_graph("HEAdd", params), SimConfig(m, params))
    return CALIBRATION_HEADD_US / (r.runtime_ms * 1e3)


def block_latency_us(kind: str, params: CkksParams, config: SimConfig, level: int | None = None) -> float:
    r = run(single_block_graph(kind, params, level), config)
    return r.calibrated_ms * 1e3


def rung_features(rung: str) -> dict:
    if rung not in LADDER:
        raise SimError(f"unknown ladder rung {rung!r}")
    on = LADDER[1: LADDER.index(rung) + 1]
    return {k: k in on for k in ("cnoc", "mod", "wmac", "labs")}


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_experiment(graph: BlockGraph, ladder=LADDER, config: SimConfig | None = None, seed: int = 0,
                   params: CkksParams | None = None, workers: int = 1) -> list[SimReport]:
    """Cumulative feature ladder on one graph; speedups are relative to the first rung."""
    ladder = tuple(ladder)
    if list(ladder) != [r for r in LADDER if r in ladder]:
        raise SimError("ladder rungs must follow baseline, cnoc, mod, wmac, labs order")
    if config is None:
        if params is None:
            raise SimError("need a config or params")
        config = sim_config("gme", params)
    cfgs = []
    for rung in ladder:
        feats = rung_features(rung)
        cfgs.append(replace(config.with_features(**feats), scheduler="labs" if feats["labs"] else "greedy"))
    scheds = {}
    for cfg in cfgs:
        if cfg.scheduler not in scheds:
            scheds[cfg.scheduler] = make_schedule(graph, cfg.scheduler, cfg.machine, seed=seed)
    _traces_for(graph, config.params)
    out = _map(lambda c: simulate(graph, scheds[c.scheduler], c), cfgs, workers)
    base = out[0].cycles
    for rung, r in zip(ladder, out):
        r.features = rung
        r.speedup_vs_baseline = base / r.cycles if r.cycles else 1.0
    return out


MIB = 2**20
DEFAULT_LDS_SWEEP = tuple(x * MIB for x in (7.5, 11.5, 15.5, 19.5, 23.5, 31.5))
# on-chip memory of the full GME design point
GME_LDS_BYTES = int(15.5 * MIB)


@dataclass
class SweepPoint:
    lds_bytes: int
    cycles: float
    speedup: float
    report: SimReport


def sweep_lds(graph: BlockGraph, sizes=DEFAULT_LDS_SWEEP, config: SimConfig | None = None, seed: int = 0,
              reference: int = int(7.5 * MIB), workers: int = 1) -> tuple[list[SweepPoint], int | None]:
    """Speedup per LDS size relative to `reference`; returns (points, knee size)."""
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes):
        raise SimError("sizes must be ascending")
    if config is None:
        raise SimError("need a config")
    sched = make_schedule(graph, config.scheduler, config.machine, seed=seed)
    _traces_for(graph, config.params)
    ref = simulate(graph, sched, replace(config, lds_total_bytes=reference)).cycles
    runs = _map(lambda s: simulate(graph, sched, replace(config, lds_total_bytes=s)), sizes, workers)
    pts = []
    for s, r in zip(sizes, runs):
        r.features = f"lds={s / MIB:g}MiB"
        r.speedup_vs_baseline = ref / r.cycles if r.cycles else 1.0
        pts.append(SweepPoint(s, r.cycles, r.speedup_vs_baseline, r))
    return pts, knee(pts)


def knee(points, threshold: float = 0.05):
    """First size after which every further step gains less than `threshold`."""
    for i in range(len(points) - 1):
        if all(points[j + 1].speedup / points[j].speedup - 1 < threshold for j in range(i, len(points) - 1)):
            return points[i].lds_bytes
    return points[-1].lds_bytes if points else None


def t_as(params: CkksParams, config: SimConfig, seed: int = 0, boot_graph: BlockGraph | None = None) -> dict:
    """Amortized mult time per slot from simulated bootstrapping and per-level mult+rescale."""
    g = boot_graph or build_workload("boot", params)
    tb = run(g, config, seed).calibrated_ms
    tm = {lv: run(_mult_graph(params, lv), config, seed).calibrated_ms
          for lv in range(1, params.L - params.L_boot + 1)}
    tm = {lv: float(v) for lv, v in tm.items()}
    return {"t_boot_ms": float(tb), "t_mult_ms": tm, "t_as_ns": float(amortized_mult_slot(tb, tm, params))}


def report_json(reports, manifest_hash: str = "", extra: dict | None = None) -> str:
    doc = {"schema": REPORT_SCHEMA, "manifest_hash": manifest_hash,
           "reports": [r.to_dict() for r in reports]}
    if extra:
        doc.update(extra)
    return json.dumps(doc, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o).__name__)


def is_finite_report(r: SimReport) -> bool:
    return all(math.isfinite(x) for x in (r.cycles, r.runtime_ms, r.avg_cpt, r.avg_cpi))
