"""Compare the compiled and numpy kernel backends on the hot paths.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import sys
import time

import numpy as np

from gmesim import _kernels as K
from gmesim import blocksim as S
from gmesim.blockgraph import build_workload
from gmesim.labs import make_schedule
from gmesim.params import gen_moduli, load_params
from gmesim.polyring import _basis_tables


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(N=2**14, limbs=8):
    rng = np.random.default_rng(0)
    basis = tuple(gen_moduli(limbs, 54, N))
    q, mu, k = K.barrett_table(basis)
    a = np.stack([rng.integers(0, qi, N, dtype=np.uint64) for qi in basis])
    b = np.stack([rng.integers(0, qi, N, dtype=np.uint64) for qi in basis])
    psi, ipsi, ninv = _basis_tables(basis, N)

    p = load_params("paper")
    g = build_workload("boot", p)
    cfg = S.sim_config("gme", p)
    sched = make_schedule(g, "greedy", cfg.machine)
    tr = S._traces_for(g, p)
    items = np.concatenate([tr.blocks[v].items for v in sched.order])
    kinds = np.concatenate([tr.blocks[v].kinds for v in sched.order])
    nxt = S._next_use(items, kinds)
    anchors = np.zeros(len(items), dtype=np.int64)
    hop = np.zeros((120, 120), dtype=np.int64)
    cap = cfg.lds_bytes // tr.limb_bytes

    def run(mod):
        return {
            f"mod_mult {limbs}x{N}": lambda: mod.mod_mult(a, b, q, mu, k),
            f"mod_add {limbs}x{N}": lambda: mod.mod_add(a, b, q),
            f"ntt_forward {limbs}x{N}": lambda: mod.ntt_forward(a.copy(), psi, q, mu, k),
            f"ntt_inverse {limbs}x{N}": lambda: mod.ntt_inverse(a.copy(), ipsi, ninv, q, mu, k),
            f"lru_serve boot ({len(items)} accesses)":
                lambda: mod.lru_serve(items, kinds, nxt, tr.liveout, anchors, hop, cap),
        }
    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    mods = K.backends()
    if "cython" not in mods:
        print("compiled backend not built; only the python backend is timed", file=sys.stderr)
    run = cases()
    table = {name: {} for name in run(mods["python"])}
    for bname, mod in mods.items():
        for name, fn in run(mod).items():
            table[name][bname] = _best(fn, args.repeat)
    print(f"{'kernel':<40}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, t in table.items():
        py, cy = t["python"], t.get("cython")
        cy_s = f"{cy * 1e3:12.3f}" if cy is not None else f"{'-':>12}"
        sp = f"{py / cy:10.1f}" if cy else f"{'-':>10}"
        print(f"{name:<40}{py * 1e3:12.3f}{cy_s}{sp}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(table, fh, indent=2)


if __name__ == "__main__":
    main()
