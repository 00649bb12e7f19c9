"""Command-line front end for parameter sets, workload DAGs, schedules and simulations.

Every command that produces results writes them atomically into ``--out`` and
embeds the hash of the run manifest (inputs, scheduler, seed) so any report
can be traced back to and replayed from its inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import blocksim as S
from . import heblocks as H
from .archmodel import ArchError, MachineConfig, load_config
from .blockgraph import GraphError, build_workload, save_dag
from .labs import LabsError, load_schedule, make_schedule, save_schedule
from .params import CkksParams, ParamsError, derive_sizes, load_params

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_PARAMS = 3
EXIT_CONFIG = 4
EXIT_WORKLOAD = 5
EXIT_SCHEDULE = 6
EXIT_SELFTEST = 7
EXIT_IO = 8

WORKLOADS = ("boot", "helr", "resnet20")
BENCH_KINDS = {k.lower(): k for k in H.BLOCK_KINDS}
MAX_SEED = 2**64 - 1


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


# -- plumbing ---------------------------------------------------------------

def atomic_write(path, data: str | bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def substream(seed: int, name: str) -> int:
    """Independent 64-bit seed for one named consumer of the manifest seed."""
    ss = np.random.SeedSequence([seed & (2**32 - 1), seed >> 32, zlib.crc32(name.encode())])
    return int(ss.generate_state(1, np.uint64)[0])


def threads() -> int:
    raw = os.environ.get("GME_SIM_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(EXIT_USAGE, "usage", f"GME_SIM_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _file_sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_params(src) -> CkksParams:
    try:
        return load_params(src)
    except FileNotFoundError:
        raise CliError(EXIT_PARAMS, "params", f"no parameter file or preset named {src!r}") from None
    except (ParamsError, KeyError, TypeError, ValueError) as e:
        raise CliError(EXIT_PARAMS, "params", f"invalid parameters {src!r}: {e}") from None


def _load_config(src) -> MachineConfig:
    try:
        return load_config(src)
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, "config", f"no machine config or preset named {src!r}") from None
    except (ArchError, ValueError) as e:
        raise CliError(EXIT_CONFIG, "config", f"invalid machine config {src!r}: {e}") from None


def _check_workload(name: str):
    if name in WORKLOADS:
        return
    if name.startswith("dag:"):
        if not Path(name[4:]).is_file():
            raise CliError(EXIT_WORKLOAD, "workload", f"DAG file {name[4:]!r} does not exist")
        return
    raise CliError(EXIT_WORKLOAD, "workload", f"unknown workload {name!r} (boot, helr, resnet20 or dag:<file>)")


def _workload(name: str, params: CkksParams):
    _check_workload(name)
    try:
        return build_workload(name, params)
    except (GraphError, KeyError, ValueError) as e:
        raise CliError(EXIT_WORKLOAD, "workload", f"cannot build workload {name!r}: {e}") from None


class Manifest(dict):
    """Run inputs; validated before any work starts, hashed into every report."""

    @classmethod
    def build(cls, args, **extra) -> "Manifest":
        m = cls(command=args.command, version=__version__, seed=args.seed)
        if getattr(args, "params", None) is not None:
            m["params"] = {"source": args.params, "sha256": _sha(_load_params(args.params).to_dict())}
        if getattr(args, "config", None) is not None:
            m["config"] = {"source": args.config, "sha256": _sha(_load_config(args.config).to_dict())}
        wl = getattr(args, "workload", None)
        if wl is not None:
            _check_workload(wl)
            m["workload"] = {"name": wl, "sha256": _file_sha(wl[4:]) if wl.startswith("dag:") else None}
        for key in ("sched", "lds_mib", "level"):
            if getattr(args, key, None) is not None:
                m[key] = getattr(args, key)
        m.update(extra)
        return m

    @property
    def hash(self) -> str:
        return _sha(dict(self))


def _emit(args, manifest: Manifest, stem: str, reports, extra: dict | None = None) -> list[Path]:
    out = Path(args.out)
    written = [atomic_write(out / "manifest.json", json.dumps({**manifest, "hash": manifest.hash}, indent=2) + "\n")]
    if args.format in ("json", "both"):
        written.append(atomic_write(out / f"{stem}.json", S.report_json(reports, manifest.hash, extra)))
    if args.format in ("csv", "both"):
        text = S.reports_csv(reports)
        lines = text.split("\n", 1)
        text = f"{lines[0]} manifest={manifest.hash}\n{lines[1]}"
        written.append(atomic_write(out / f"{stem}.csv", text))
    return written


def _sim_config(args, params, machine=None, scheduler=None) -> S.SimConfig:
    m = machine or _load_config(args.config)
    lds = None if getattr(args, "lds_mib", None) is None else int(args.lds_mib * S.MIB)
    try:
        return S.sim_config(m, params, scheduler=scheduler, lds_total_bytes=lds,
                            calibration=S.calibrate(params))
    except S.SimError as e:
        raise CliError(EXIT_CONFIG, "config", str(e)) from None


def _print_json(obj):
    print(json.dumps(obj, indent=2, default=S._json_default))


# -- commands ---------------------------------------------------------------

def cmd_params(args) -> int:
    p = _load_params(args.params)
    if args.action == "validate":
        _print_json({"ok": True, "name": p.name, "N": p.N, "n": p.n, "L": p.L, "L_boot": p.L_boot,
                     "dnum": p.dnum, "alpha": p.alpha, "ext_limbs": p.ext_limbs, "moduli": len(p.moduli)})
        return EXIT_OK
    d = {"name": p.name, "alpha": p.alpha, "ext_limbs": p.ext_limbs, **asdict(derive_sizes(p))}
    if args.out:
        atomic_write(Path(args.out) / "derived.json", json.dumps(d, indent=2) + "\n")
    _print_json(d)
    return EXIT_OK


def cmd_gen_dag(args) -> int:
    man = Manifest.build(args)
    g = _workload(args.workload, _load_params(args.params))
    out = Path(args.out)
    tmp = out / ".dag.json.tmp"
    out.mkdir(parents=True, exist_ok=True)
    save_dag(g, tmp)
    os.replace(tmp, out / "dag.json")
    atomic_write(out / "manifest.json", json.dumps({**man, "hash": man.hash}, indent=2) + "\n")
    _print_json({"workload": g.name, "nodes": len(g.nodes), "edges": len(g.edges), "path": str(out / "dag.json"),
                 "manifest_hash": man.hash})
    return EXIT_OK


def _schedule_for(args, g, cfg):
    if getattr(args, "schedule", None):
        try:
            return load_schedule(args.schedule).check(g)
        except FileNotFoundError:
            raise CliError(EXIT_SCHEDULE, "schedule", f"no schedule file {args.schedule!r}") from None
        except LabsError as e:
            raise CliError(EXIT_SCHEDULE, "schedule", str(e)) from None
    return make_schedule(g, cfg.scheduler, cfg.machine, seed=substream(args.seed, "annealer"))


def cmd_schedule(args) -> int:
    man = Manifest.build(args)
    params = _load_params(args.params)
    g = _workload(args.workload, params)
    cfg = _sim_config(args, params, scheduler=args.sched)
    s = _schedule_for(args, g, cfg)
    out = Path(args.out)
    doc = {**s.to_dict(), "manifest_hash": man.hash}
    atomic_write(out / "schedule.json", json.dumps(doc) + "\n")
    atomic_write(out / "manifest.json", json.dumps({**man, "hash": man.hash}, indent=2) + "\n")
    _print_json({"scheduler": s.scheduler, "k": s.k, "phi": s.phi, "gamma": s.gamma, "nodes": len(s.order),
                 "path": str(out / "schedule.json")})
    return EXIT_OK


def cmd_simulate(args) -> int:
    man = Manifest.build(args, schedule_file=args.schedule)
    params = _load_params(args.params)
    g = _workload(args.workload, params)
    cfg = _sim_config(args, params, scheduler=args.sched)
    s = _schedule_for(args, g, cfg)
    try:
        r = S.simulate(g, s, cfg)
    except (S.SimError, LabsError) as e:
        raise CliError(EXIT_SCHEDULE, "schedule", str(e)) from None
    _emit(args, man, "report", [r])
    _print_json({k: v for k, v in r.summary().items()})
    return EXIT_OK


def cmd_ladder(args) -> int:
    man = Manifest.build(args)
    params = _load_params(args.params)
    g = _workload(args.workload, params)
    cfg = _sim_config(args, params)
    rs = S.run_experiment(g, S.LADDER, cfg, seed=substream(args.seed, "annealer"), workers=threads())
    _emit(args, man, "ladder", rs)
    base = rs[0]
    prev = base
    print(f"{'rung':<10}{'ms':>12}{'speedup':>10}{'step':>8}{'dram_red':>10}")
    for r in rs:
        red = 1 - r.dram_bytes / base.dram_bytes if base.dram_bytes else 0.0
        step = prev.cycles / r.cycles if r.cycles else 1.0
        print(f"{r.features:<10}{r.calibrated_ms:>12.3f}{r.speedup_vs_baseline:>10.3f}{step:>8.3f}{red:>10.1%}")
        prev = r
    return EXIT_OK


def cmd_sweep(args) -> int:
    man = Manifest.build(args, sizes_mib=args.sizes_mib)
    params = _load_params(args.params)
    g = _workload(args.workload, params)
    cfg = _sim_config(args, params)
    sizes = [int(x * S.MIB) for x in args.sizes_mib]
    try:
        pts, kn = S.sweep_lds(g, sizes, cfg, seed=substream(args.seed, "annealer"), workers=threads())
    except S.SimError as e:
        raise CliError(EXIT_USAGE, "usage", str(e)) from None
    _emit(args, man, "sweep", [p.report for p in pts], {"knee_bytes": kn})
    print(f"{'lds_mib':>8}{'ms':>12}{'speedup':>10}")
    for p in pts:
        print(f"{p.lds_bytes / S.MIB:>8.1f}{p.report.calibrated_ms:>12.3f}{p.speedup:>10.3f}")
    print(f"knee: {kn / S.MIB:g} MiB" if kn else "knee: none")
    return EXIT_OK


def cmd_bench_block(args) -> int:
    kind = BENCH_KINDS.get(args.kind.lower())
    if kind is None:
        raise CliError(EXIT_USAGE, "usage", f"unknown block kind {args.kind!r}")
    man = Manifest.build(args, kind=kind, execute=not args.no_exec)
    params = _load_params(args.params)
    level = params.L if args.level is None else args.level
    if not 0 <= level <= params.L:
        raise CliError(EXIT_USAGE, "usage", f"level {level} outside [0, {params.L}]")
    prof = H.profile_block(kind, params, level)
    result = {"kind": kind, "level": level, "profile": prof.to_dict()}
    if not args.no_exec:
        ctx = H.CkksContext(params, seed=substream(args.seed, "keygen"))
        t0 = time.perf_counter()
        try:
            _, measured = H.run_block(ctx, kind, level, seed=substream(args.seed, "messages"))
        except H.HeError as e:
            raise CliError(EXIT_USAGE, "usage", str(e)) from None
        result["engine_seconds"] = time.perf_counter() - t0
        counted = measured.stats()
        result["profile_matches_engine"] = counted == prof.stats()
    cfg = _sim_config(args, params)
    r = S.run(S.single_block_graph(kind, params, level), cfg, seed=substream(args.seed, "annealer"))
    result.update(latency_us=r.calibrated_ms * 1e3, model_cycles=r.cycles, calibration=cfg.calibration,
                  dram_bytes=r.dram_bytes, features=r.features, manifest_hash=man.hash)
    if args.out:
        atomic_write(Path(args.out) / f"bench-{kind}.json", json.dumps(result, default=S._json_default) + "\n")
    _print_json(result)
    return EXIT_OK


def _selftest_modarith(rng) -> str | None:
    from .modarith import Modulus, mod_add, mod_mult, mod_red
    from .params import gen_moduli
    for q in gen_moduli(4, 54, 2**10, seed=int(rng.integers(1 << 30))):
        m = Modulus.make(q)
        for a, b in rng.integers(0, q, size=(500, 2)).tolist():
            x = int(rng.integers(0, q)) * int(rng.integers(0, q))
            if mod_red(x, m) != x % q or mod_add(a, b, m) != (a + b) % q or mod_mult(a, b, m) != a * b % q:
                return f"modular arithmetic mismatch at q={q}, a={a}, b={b}"
    return None


def _selftest_ntt(rng) -> str | None:
    from . import polyring as R
    from .params import gen_moduli
    for logn in range(4, 9):
        N = 1 << logn
        basis = tuple(gen_moduli(2, 54, N, seed=logn))
        a = [int(v) for v in rng.integers(-1000, 1000, N)]
        b = [int(v) for v in rng.integers(-1000, 1000, N)]
        pa = R.from_int_coeffs(a, basis, R.Rep.COEFF)
        if R.to_int_coeffs(R.ntt_inverse(R.ntt_forward(pa))) != a:
            return f"NTT round trip failed at N={N}"
        if logn <= 6:
            want = [0] * N
            for i in range(N):
                for j in range(N):
                    k = i + j
                    if k < N:
                        want[k] += a[i] * b[j]
                    else:
                        want[k - N] -= a[i] * b[j]
            pb = R.from_int_coeffs(b, basis, R.Rep.COEFF)
            got = R.ntt_inverse(R.pointwise_mult(R.ntt_forward(pa), R.ntt_forward(pb)))
            if R.to_int_coeffs(got) != want:
                return f"negacyclic convolution mismatch at N={N}"
    return None


def _selftest_he(rng, seed: int) -> str | None:
    params = load_params("desk")
    ctx = H.CkksContext(params, seed=substream(seed, "keygen"))
    n = params.n
    for _ in range(3):
        z1 = rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n)
        z2 = rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n)
        z1, z2 = z1 / np.linalg.norm(z1), z2 / np.linalg.norm(z2)
        c1, c2 = (H.encrypt(ctx, H.encode(ctx, z)) for z in (z1, z2))
        pt = H.encode(ctx, z2)
        checks = {
            "HEAdd": (H.he_add(c1, c2), z1 + z2),
            "HEMult": (H.he_rescale(H.he_mult(ctx, c1, c2)), z1 * z2),
            "HERotate": (H.he_rotate(ctx, c1, 1), np.roll(z1, -1)),
            "PolyMult": (H.he_rescale(H.poly_mult(c1, pt)), z1 * z2),
        }
        for name, (ct, want) in checks.items():
            err = np.linalg.norm(H.decrypt_decode(ctx, ct) - want) / max(np.linalg.norm(want), 1e-30)
            if not err < 1e-2:
                return f"{name} round trip relative error {err:.3g}"
    return None


def cmd_selftest(args) -> int:
    rng = np.random.default_rng(substream(args.seed, "selftest"))
    suites = [("modarith", lambda: _selftest_modarith(rng)), ("ntt", lambda: _selftest_ntt(rng)),
              ("homomorphic", lambda: _selftest_he(rng, args.seed))]
    failed = []
    for name, fn in suites:
        t0 = time.perf_counter()
        msg = fn()
        print(f"{name:<12} {'ok' if msg is None else 'FAIL'} {time.perf_counter() - t0:6.2f}s"
              + ("" if msg is None else f"  {msg}"))
        if msg is not None:
            failed.append({"suite": name, "message": msg})
    if failed:
        raise CliError(EXIT_SELFTEST, "selftest", json.dumps(failed))
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--params", default="paper", help="parameter file or preset (paper, desk)")
    common.add_argument("--seed", type=_seed, default=0, help="manifest seed (u64)")
    common.add_argument("--out", default="out", help="output directory")

    sim = _Parser(add_help=False)
    sim.add_argument("--config", default="gme", help="machine config file or preset (mi100, gme)")
    sim.add_argument("--workload", default="boot", help="boot | helr | resnet20 | dag:<file>")
    sim.add_argument("--format", choices=("json", "csv", "both"), default="both")
    sim.add_argument("--lds-mib", dest="lds_mib", type=float, default=None,
                     help="override the total LDS budget in MiB")

    p = _Parser(prog="gmesim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gmesim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("params", parents=[common], help="validate or derive a parameter set")
    q.add_argument("action", choices=("validate", "derive"))
    q.set_defaults(fn=cmd_params, out=None)

    q = sub.add_parser("gen-dag", parents=[common], help="write a workload block DAG")
    q.add_argument("--workload", default="boot")
    q.set_defaults(fn=cmd_gen_dag)

    q = sub.add_parser("schedule", parents=[common, sim], help="map a DAG onto CUs")
    q.add_argument("--sched", choices=("greedy", "labs"), default="labs")
    q.add_argument("--schedule", default=None, help=argparse.SUPPRESS)
    q.set_defaults(fn=cmd_schedule)

    q = sub.add_parser("simulate", parents=[common, sim], help="simulate one configuration")
    q.add_argument("--sched", choices=("greedy", "labs"), default=None)
    q.add_argument("--schedule", default=None, help="precomputed schedule JSON")
    q.set_defaults(fn=cmd_simulate)

    q = sub.add_parser("ladder", parents=[common, sim], help="cumulative feature ladder")
    q.set_defaults(fn=cmd_ladder)

    q = sub.add_parser("sweep-lds", parents=[common, sim], help="speedup versus total LDS size")
    q.add_argument("--sizes-mib", dest="sizes_mib", type=float, nargs="+",
                   default=[s / S.MIB for s in S.DEFAULT_LDS_SWEEP])
    q.set_defaults(fn=cmd_sweep)

    q = sub.add_parser("bench-block", parents=[common], help="run and model a single block")
    q.add_argument("kind", help="block kind, e.g. hemult, herotate, headd")
    q.add_argument("--config", default="mi100")
    q.add_argument("--level", type=int, default=None)
    q.add_argument("--lds-mib", dest="lds_mib", type=float, default=None)
    q.add_argument("--no-exec", action="store_true", help="skip the functional engine run")
    q.set_defaults(fn=cmd_bench_block, out=None)

    q = sub.add_parser("selftest", parents=[common], help="run the oracle suites")
    q.set_defaults(fn=cmd_selftest)
    return p


def _fail(err: CliError) -> int:
    print(json.dumps({"error": err.kind, "exit_code": err.code, "message": str(err)}), file=sys.stderr)
    return err.code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as e:
        return _fail(e)
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    try:
        return args.fn(args)
    except CliError as e:
        return _fail(e)
    except OSError as e:
        return _fail(CliError(EXIT_IO, "io", str(e)))
    except (ParamsError,) as e:
        return _fail(CliError(EXIT_PARAMS, "params", str(e)))
    except ArchError as e:
        return _fail(CliError(EXIT_CONFIG, "config", str(e)))
    except GraphError as e:
        return _fail(CliError(EXIT_WORKLOAD, "workload", str(e)))
    except LabsError as e:
        return _fail(CliError(EXIT_SCHEDULE, "schedule", str(e)))
    except Exception as e:  # noqa: BLE001 -- last-resort machine-readable error
        return _fail(CliError(EXIT_ERROR, type(e).__name__, str(e)))


if __name__ == "__main__":
    sys.exit(main())
