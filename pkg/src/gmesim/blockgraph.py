"""Weighted DAGs of FHE blocks for bootstrapping, HE-LR and ResNet-20 style workloads.

The generators are cost-faithful rather than value-faithful: every node
carries the analytic profile of its block at the level where it runs, and
edges carry the ciphertext bytes the consumer reads. Levels are tracked so
that each multiplicative step consumes exactly one level and bootstrapping
is inserted whenever an operand runs out of levels.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from . import heblocks as H
from .archmodel import KINDS, Features, GpuConfig, IsaCostTable, instr_cycles
from .params import CkksParams

# EvalSine core polynomial: degree 2^SINE_POLY_DEPTH - 1 evaluated as a product tree
SINE_POLY_DEPTH = 5
# sign approximation in the ReLU surrogate, degree 2^RELU_POLY_DEPTH - 1
RELU_POLY_DEPTH = 3
HELR_FEATURES_LOG2 = 8
HELR_BATCH_LOG2 = 6
RESNET_LAYERS = 19
RESNET_KERNEL = 9
RESNET_GROUPS = 4


class GraphError(ValueError):
    pass


@dataclass
class BlockNode:
    id: int
    kind: str
    level: int
    weight: float
    profile: H.BlockProfile
    r: int | None = None
    ext_in_bytes: int = 0  # operands fetched from memory rather than produced in the graph
    region: str = "app"  # "boot" for nodes emitted inside a bootstrapping subgraph

    def to_dict(self) -> dict:
        d = {"id": self.id, "kind": self.kind, "level": self.level, "weight": self.weight,
             "profile": self.profile.to_dict(), "ext_in_bytes": self.ext_in_bytes,
             "region": self.region}
        if self.r is not None:
            d["r"] = self.r
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BlockNode":
        return cls(int(d["id"]), d["kind"], int(d["level"]), float(d["weight"]),
                   H.BlockProfile.from_dict(d["profile"]), d.get("r"), int(d.get("ext_in_bytes", 0)),
                   d.get("region", "app"))


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    bytes: int


@dataclass
class BlockGraph:
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        self._reindex()

    def _reindex(self):
        self.index = {n.id: i for i, n in enumerate(self.nodes)}
        self.succ = {n.id: [] for n in self.nodes}
        self.pred = {n.id: [] for n in self.nodes}
        for e in self.edges:
            if e.src not in self.index or e.dst not in self.index:
                raise GraphError(f"edge {e.src}->{e.dst} references an unknown node")
            self.succ[e.src].append(e)
            self.pred[e.dst].append(e)

    def __len__(self):
        return len(self.nodes)

    def node(self, nid: int) -> BlockNode:
        return self.nodes[self.index[nid]]

    def add_node(self, node: BlockNode) -> int:
        if node.id in self.index:
            raise GraphError(f"duplicate node id {node.id}")
        self.index[node.id] = len(self.nodes)
        self.nodes.append(node)
        self.succ[node.id] = []
        self.pred[node.id] = []
        return node.id

    def add_edge(self, src: int, dst: int, nbytes: int) -> None:
        if nbytes <= 0:
            raise GraphError("edge weight must be positive")
        e = Edge(src, dst, int(nbytes))
        self.edges.append(e)
        self.succ[src].append(e)
        self.pred[dst].append(e)

    def topo_order(self) -> list[int]:
        indeg = {n.id: len(self.pred[n.id]) for n in self.nodes}
        q = deque(n.id for n in self.nodes if indeg[n.id] == 0)
        out = []
        while q:
            v = q.popleft()
            out.append(v)
            for e in self.succ[v]:
                indeg[e.dst] -= 1
                if indeg[e.dst] == 0:
                    q.append(e.dst)
        if len(out) != len(self.nodes):
            stuck = sorted(v for v, d in indeg.items() if d > 0)
            raise GraphError(f"cycle detected among nodes {stuck[:20]}")
        return out

    def validate(self) -> "BlockGraph":
        self.topo_order()
        for e in self.edges:
            if e.bytes <= 0:
                raise GraphError(f"non-positive edge weight on {e.src}->{e.dst}")
            if e.bytes > self.node(e.src).profile.bytes_out:
                raise GraphError(f"edge {e.src}->{e.dst} carries more than its producer writes")
        return self

    def total_weight(self) -> float:
        return sum(n.weight for n in self.nodes)

    def mean_edge_bytes_per_node(self, region: str | None = None) -> float:
        """Incoming edge bytes per node, optionally restricted to one region."""
        keep = {n.id for n in self.nodes if region is None or n.region == region}
        if not keep:
            return 0.0
        return sum(e.bytes for e in self.edges if e.dst in keep) / len(keep)

    def kind_counts(self) -> dict:
        out: dict = {}
        for n in self.nodes:
            out[n.kind] = out.get(n.kind, 0) + 1
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "nodes": [n.to_dict() for n in self.nodes],
                "edges": [{"src": e.src, "dst": e.dst, "bytes": e.bytes} for e in self.edges]}

    @classmethod
    def from_dict(cls, d: dict) -> "BlockGraph":
        try:
            nodes = [BlockNode.from_dict(n) for n in d["nodes"]]
            edges = [Edge(int(e["src"]), int(e["dst"]), int(e["bytes"])) for e in d["edges"]]
        except (KeyError, TypeError, ValueError) as e:
            raise GraphError(f"malformed DAG document: {e}") from None
        if len({n.id for n in nodes}) != len(nodes):
            raise GraphError("duplicate node ids")
        for e in edges:
            if e.bytes <= 0:
                raise GraphError(f"non-positive edge weight on {e.src}->{e.dst}")
        return cls(nodes, edges, d.get("name", "")).validate()


def save_dag(g: BlockGraph, path) -> None:
    Path(path).write_text(json.dumps(g.to_dict()) + "\n")


def load_dag(path) -> BlockGraph:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise GraphError(f"malformed DAG file: {e}") from None
    return BlockGraph.from_dict(d)


# -- construction -----------------------------------------------------------

@lru_cache(maxsize=4096)
def _profile(kind: str, params: CkksParams, level: int) -> H.BlockProfile:
    return H.profile_block(kind, params, level)


def block_weight(p: H.BlockProfile, gpu: GpuConfig | None = None) -> float:
    """Compute-cycle estimate on the vanilla ISA with every lane busy."""
    gpu = gpu or GpuConfig()
    isa, f = IsaCostTable(), Features()
    return sum(getattr(p, k) * instr_cycles(k, isa, f) for k in KINDS) / gpu.lanes


@dataclass(frozen=True)
class Handle:
    node: int | None  # None for a ciphertext read from memory
    level: int


class DagBuilder:
    """Emits nodes while tracking ciphertext levels."""

    def __init__(self, params: CkksParams, name: str = ""):
        self.p = params
        self.g = BlockGraph(name=name)
        self.N = params.N
        self.boots = 0
        self.region = "app"

    def _ct(self, level: int) -> int:
        return 2 * (level + 1) * self.N * 8

    def _pt(self, level: int) -> int:
        return (level + 1) * self.N * 8

    def emit(self, kind: str, level: int, inputs, ext_in: int = 0, r=None, in_level=None) -> Handle:
        prof = _profile(kind, self.p, level)
        nid = len(self.g.nodes)
        ext = ext_in
        read_level = level if in_level is None else in_level
        edges = []
        for h in inputs:
            if h.level < read_level:
                raise GraphError(f"{kind} at level {read_level} fed by a level-{h.level} operand")
            if h.node is None:
                ext += self._ct(read_level)
            else:
                edges.append((h.node, self._ct(read_level)))
        self.g.add_node(BlockNode(nid, kind, level, block_weight(prof), prof, r, ext, self.region))
        for src, b in edges:
            self.g.add_edge(src, nid, b)
        out_level = level - 1 if kind == "HERescale" else level
        return Handle(nid, out_level)

    # primitive blocks
    def fresh(self, level: int | None = None) -> Handle:
        return Handle(None, self.p.L if level is None else level)

    def add(self, a: Handle, b: Handle) -> Handle:
        return self.emit("HEAdd", min(a.level, b.level), [a, b])

    def rotate(self, a: Handle, r: int) -> Handle:
        return self.emit("HERotate", a.level, [a], r=r)

    def conj(self, a: Handle) -> Handle:
        return self.emit("Conjugate", a.level, [a])

    def sadd(self, a: Handle) -> Handle:
        return self.emit("ScalarAdd", a.level, [a])

    def rescale(self, a: Handle) -> Handle:
        if a.level < 1:
            raise GraphError("rescale at level 0")
        return self.emit("HERescale", a.level, [a])

    def ensure(self, a: Handle, need: int = 1) -> Handle:
        if a.level >= need:
            return a
        if self.p.L - self.p.L_boot < need:
            raise GraphError(f"only {self.p.L - self.p.L_boot} levels after bootstrapping, {need} needed")
        return self.bootstrap(a)

    def mult(self, a: Handle, b: Handle) -> Handle:
        a, b = self.ensure(a), self.ensure(b)
        return self.rescale(self.emit("HEMult", min(a.level, b.level), [a, b]))

    def square(self, a: Handle) -> Handle:
        a = self.ensure(a)
        return self.rescale(self.emit("HEMult", a.level, [a, a]))

    def smult(self, a: Handle) -> Handle:
        a = self.ensure(a)
        return self.rescale(self.emit("ScalarMult", a.level, [a]))

    def pmult_raw(self, a: Handle) -> Handle:
        return self.emit("PolyMult", a.level, [a], ext_in=self._pt(a.level))

    # composite structures
    def linear_transform(self, x: Handle, radix: int, stride: int) -> Handle:
        """Diagonal-method transform with baby-step giant-step rotations; consumes one level."""
        x = self.ensure(x)
        slots = self.p.n
        diags = min(2 * radix - 1, slots)
        nb = math.ceil(math.sqrt(diags))
        ng = math.ceil(diags / nb)
        baby = [x] + [self.rotate(x, (i * stride) % slots) for i in range(1, nb)]
        total = None
        used = 0
        for gi in range(ng):
            acc = None
            for bi in range(nb):
                if used == diags:
                    break
                t = self.pmult_raw(baby[bi])
                acc = t if acc is None else self.add(acc, t)
                used += 1
            if acc is None:
                break
            if gi:
                acc = self.rotate(acc, (gi * nb * stride) % slots)
            total = acc if total is None else self.add(total, acc)
        return self.rescale(total)

    def poly_tree(self, x: Handle, depth: int) -> Handle:
        """Degree 2^depth - 1 polynomial: linear leaves, then pairwise products with x^(2^j)."""
        x = self.ensure(x, depth)
        leaves = [self.sadd(self.smult(x)) for _ in range(2 ** (depth - 1))]
        power = x
        for _ in range(1, depth):
            power = self.square(power)
            nxt = []
            for i in range(0, len(leaves), 2):
                hi = self.mult(power, leaves[i + 1])
                nxt.append(self.add(leaves[i], hi))
            leaves = nxt
        return leaves[0]

    def bootstrap(self, h: Handle) -> Handle:
        p = self.p
        sine_depth = p.L_boot - 2 * p.fftIter
        if sine_depth < 1:
            raise GraphError("L_boot too small for the linear transforms plus EvalSine")
        self.boots += 1
        outer, self.region = self.region, "boot"
        x = self.emit("ModRaise", p.L, [Handle(h.node, max(h.level, 0))], in_level=0)
        radix = 2 ** math.ceil(math.log2(p.n) / p.fftIter)
        for s in range(p.fftIter):
            x = self.linear_transform(x, radix, radix ** s)
        x = self.add(x, self.conj(x))
        k = min(SINE_POLY_DEPTH, sine_depth)
        x = self.poly_tree(x, k)
        for _ in range(sine_depth - k):
            # double-angle step 2y^2 - 1
            y2 = self.square(x)
            x = self.sadd(self.add(y2, y2))
        for s in reversed(range(p.fftIter)):
            x = self.linear_transform(x, radix, radix ** s)
        exit_level = p.L - p.L_boot
        if x.level != exit_level:
            raise AssertionError(f"bootstrap exits at level {x.level}, expected {exit_level}")
        self.region = outer
        return x

    def rotate_sum(self, x: Handle, steps: int) -> Handle:
        for i in range(steps):
            x = self.add(x, self.rotate(x, 2 ** i))
        return x


def build_bootstrap_dag(params: CkksParams) -> BlockGraph:
    b = DagBuilder(params, "boot")
    if params.L_boot > params.L:
        raise GraphError("insufficient levels: L_boot > L")
    b.bootstrap(b.fresh(0))
    return b.g.validate()


def _helr_iteration(b: DagBuilder, w: Handle) -> Handle:
    X = b.fresh()
    z = b.mult(X, w)
    z = b.rotate_sum(z, HELR_FEATURES_LOG2)
    # degree-3 sigmoid a0 + a1 z + a3 z^3
    z = b.ensure(z, 2)
    z2 = b.square(z)
    a3z = b.smult(z)
    z3 = b.mult(z2, a3z)
    a1z = b.smult(z)
    s = b.sadd(b.add(z3, a1z))
    grad = b.mult(s, X)
    grad = b.rotate_sum(grad, HELR_BATCH_LOG2)
    grad = b.smult(grad)
    return b.add(w, grad)


def build_helr_dag(iterations: int, params: CkksParams) -> BlockGraph:
    b = DagBuilder(params, "helr")
    if iterations <= 0:
        return b.g
    w = b.fresh(params.L - params.L_boot)
    for _ in range(iterations):
        w = _helr_iteration(b, w)
    return b.g.validate()


def _relu_depth(b: DagBuilder) -> int:
    return max(1, min(RELU_POLY_DEPTH, b.p.L - b.p.L_boot - 2))


def _conv(b: DagBuilder, x: Handle) -> Handle:
    # bootstrap ahead of the whole layer so the convolution never runs on a nearly exhausted input
    x = b.ensure(x, min(_relu_depth(b) + 2, b.p.L - b.p.L_boot))
    rots = [x] + [b.rotate(x, k) for k in range(1, RESNET_KERNEL)]
    out = None
    for c in range(RESNET_GROUPS):
        acc = None
        for r in rots:
            t = b.pmult_raw(r)
            acc = t if acc is None else b.add(acc, t)
        if c:
            acc = b.rotate(acc, c * 32)
        out = acc if out is None else b.add(out, acc)
    return b.rescale(out)


def _relu(b: DagBuilder, x: Handle) -> Handle:
    depth = _relu_depth(b)
    x = b.ensure(x, depth + 1)
    sgn = b.poly_tree(x, depth)
    return b.mult(b.sadd(sgn), x)


def build_resnet20_dag(params: CkksParams, layers: int = RESNET_LAYERS) -> BlockGraph:
    b = DagBuilder(params, "resnet20")
    x = b.fresh(params.L - params.L_boot)
    shortcut = x
    for i in range(layers):
        y = _relu(b, _conv(b, x))
        if i % 2 == 1:
            y = b.add(y, shortcut)
            shortcut = y
        x = y
    x = b.rotate_sum(x, 6)
    x = b.rescale(b.pmult_raw(b.ensure(x)))
    b.rotate_sum(x, 6)
    return b.g.validate()


def build_workload(name: str, params: CkksParams, **kw) -> BlockGraph:
    if name == "boot":
        return build_bootstrap_dag(params)
    if name == "helr":
        return build_helr_dag(kw.get("iterations", 2), params)
    if name == "resnet20":
        return build_resnet20_dag(params, kw.get("layers", RESNET_LAYERS))
    if name.startswith("dag:"):
        return load_dag(name[4:])
    raise GraphError(f"unknown workload {name!r}")
