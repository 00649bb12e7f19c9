"""Machine description: GPU resources, modular-instruction cycle tables, and the CU-side torus NoC."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

MASK64 = (1 << 64) - 1
# 2^64 / golden ratio, the usual Fibonacci-hashing multiplier
HASH_MULT = 0x9E3779B97F4A7C15


class ArchError(ValueError):
    pass


@dataclass(frozen=True)
class Features:
    cnoc: bool = False
    mod: bool = False
    wmac: bool = False
    labs: bool = False

    def label(self) -> str:
        on = [k for k in ("cnoc", "mod", "wmac", "labs") if getattr(self, k)]
        return "+".join(on) if on else "baseline"


@dataclass(frozen=True)
class GpuConfig:
    cu_count: int = 120
    se_count: int = 15
    cus_per_se: int = 8
    simd_per_cu: int = 4
    lanes_per_simd: int = 16
    # work-items retired per SIMD instruction issue; instruction cycle counts are per wavefront
    wavefront_size: int = 64
    freq_ghz: float = 1.5
    lds_per_cu_bytes: int = 64 * 1024
    l2_bytes: int = 8 * 2**20
    dram_bw_gbps: float = 1229.0
    features: Features = field(default_factory=Features)

    def __post_init__(self):
        if self.cu_count != self.se_count * self.cus_per_se:
            raise ArchError("cu_count must equal se_count * cus_per_se")

    @property
    def lanes(self) -> int:
        """Peak parallel scalar operations per cycle."""
        return self.cu_count * self.simd_per_cu * self.lanes_per_simd

    @property
    def lds_total_bytes(self) -> int:
        return self.cu_count * self.lds_per_cu_bytes

    @property
    def dram_bytes_per_cycle(self) -> float:
        return self.dram_bw_gbps / self.freq_ghz

    def batches(self, N: int) -> int:
        return math.ceil(N / self.lanes)


MOD_KINDS = ("mod_red", "mod_add", "mod_mult")
RAW_KINDS = ("add", "mult")
KINDS = MOD_KINDS + RAW_KINDS


@dataclass(frozen=True)
class IsaCostTable:
    # cycles per modular instruction, one row per feature level
    vanilla: dict = field(default_factory=lambda: {"mod_red": 46, "mod_add": 62, "mod_mult": 63})
    mod: dict = field(default_factory=lambda: {"mod_red": 26, "mod_add": 18, "mod_mult": 38})
    mod_wmac: dict = field(default_factory=lambda: {"mod_red": 17, "mod_add": 7, "mod_mult": 23})
    # native 32-bit raw ops and the limb-emulation factors for 64-bit operands
    add: int = 1
    mult: int = 4
    int64_emul_penalty: dict = field(default_factory=lambda: {"add": 2, "mult": 3})

    def row(self, features: Features) -> dict:
        if features.mod and features.wmac:
            return self.mod_wmac
        if features.mod:
            return self.mod
        return self.vanilla


def instr_cycles(kind: str, table: IsaCostTable, features: Features) -> int:
    if kind in MOD_KINDS:
        return table.row(features)[kind]
    if kind in RAW_KINDS:
        base = getattr(table, kind)
        return base if features.wmac else base * table.int64_emul_penalty[kind]
    raise ArchError(f"unknown instruction kind {kind!r}")


@dataclass(frozen=True)
class TorusNoc:
    rows: int = 3
    cols: int = 5
    concentration: int = 8
    link_bytes_per_cycle: int = 32
    router_hop_cycles: int = 8
    line_bits: int = 6
    lds_hash_bits: int = 32

    @property
    def routers(self) -> int:
        return self.rows * self.cols

    @property
    def cu_count(self) -> int:
        return self.routers * self.concentration

    def router_of(self, cu: int) -> tuple[int, int]:
        if not 0 <= cu < self.cu_count:
            raise ArchError(f"CU id {cu} out of range [0, {self.cu_count})")
        r = cu // self.concentration
        return divmod(r, self.cols)

    def router_hops(self, ra: int, rb: int) -> int:
        (r1, c1), (r2, c2) = divmod(ra, self.cols), divmod(rb, self.cols)
        dr, dc = abs(r1 - r2), abs(c1 - c2)
        return min(dr, self.rows - dr) + min(dc, self.cols - dc)

    def neighbors(self, router: int) -> set[int]:
        r, c = divmod(router, self.cols)
        out = set()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            out.add(((r + dr) % self.rows) * self.cols + (c + dc) % self.cols)
        return out

    def diameter(self) -> int:
        return max(self.router_hops(0, b) for b in range(self.routers))


def hop_distance(cu_a: int, cu_b: int, noc: TorusNoc | None = None) -> int:
    noc = noc or TorusNoc()
    ra, rb = noc.router_of(cu_a), noc.router_of(cu_b)
    return noc.router_hops(ra[0] * noc.cols + ra[1], rb[0] * noc.cols + rb[1])


def lds_home(address: int, gpu: GpuConfig, noc: TorusNoc | None = None) -> int:
    """Home CU of a byte address in the shared LDS address space."""
    if not gpu.features.cnoc:
        raise ArchError("global LDS addressing requires cnoc")
    noc = noc or TorusNoc()
    line = address >> noc.line_bits
    h = ((line * HASH_MULT) & MASK64) >> (64 - noc.lds_hash_bits)
    return h % gpu.cu_count


def transfer_cycles(nbytes: int, cu_src: int, cu_dst: int, noc: TorusNoc | None = None) -> int:
    noc = noc or TorusNoc()
    if nbytes <= 0 or cu_src == cu_dst:
        return 0
    return hop_distance(cu_src, cu_dst, noc) * noc.router_hop_cycles + -(-nbytes // noc.link_bytes_per_cycle)


# -- configuration documents ------------------------------------------------

@dataclass(frozen=True)
class MachineConfig:
    gpu: GpuConfig
    isa: IsaCostTable
    noc: TorusNoc
    name: str = ""

    @property
    def features(self) -> Features:
        return self.gpu.features

    def with_features(self, **kw) -> "MachineConfig":
        return replace(self, gpu=replace(self.gpu, features=replace(self.gpu.features, **kw)))

    def with_lds_total(self, total_bytes: int) -> "MachineConfig":
        return replace(self, gpu=replace(self.gpu, lds_per_cu_bytes=int(total_bytes // self.gpu.cu_count)))

    def to_dict(self) -> dict:
        g = asdict(self.gpu)
        return {"name": self.name, "gpu": g, "isa": asdict(self.isa), "noc": asdict(self.noc)}

    @classmethod
    def from_dict(cls, d: dict) -> "MachineConfig":
        try:
            g = dict(d["gpu"])
            g["features"] = Features(**g.get("features", {}))
            gpu = GpuConfig(**g)
            isa = IsaCostTable(**d.get("isa", {}))
            noc = TorusNoc(**d.get("noc", {}))
        except (KeyError, TypeError) as e:
            raise ArchError(f"malformed machine config: {e}") from None
        if noc.routers != gpu.se_count or noc.concentration != gpu.cus_per_se:
            raise ArchError("NoC routers must match shader engines one to one")
        return cls(gpu, isa, noc, d.get("name", ""))


def load_config(src) -> MachineConfig:
    """Load a preset name ('mi100', 'gme') or a JSON file."""
    path = Path(str(src))
    if not path.suffix and not path.exists():
        text = resources.files("gmesim.data.configs").joinpath(f"{src}.json").read_text()
    else:
        text = path.read_text()
    return MachineConfig.from_dict(json.loads(text))


def mi100() -> MachineConfig:
    return load_config("mi100")


def gme() -> MachineConfig:
    return load_config("gme")
