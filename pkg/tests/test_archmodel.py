import itertools
import json
from collections import Counter, deque

import pytest

from gmesim.archmodel import (ArchError, Features, GpuConfig, IsaCostTable, MachineConfig, TorusNoc, gme,
                              hop_distance, instr_cycles, lds_home, load_config, mi100, transfer_cycles)

NOC = TorusNoc()


def bfs_hops(noc):
    dist = {}
    for s in range(noc.routers):
        d = {s: 0}
        q = deque([s])
        while q:
            u = q.popleft()
            for v in noc.neighbors(u):
                if v not in d:
                    d[v] = d[u] + 1
                    q.append(v)
        dist[s] = d
    return dist


def test_isa_table_rows():
    t = IsaCostTable()
    rows = {Features(): (46, 62, 63), Features(mod=True): (26, 18, 38),
            Features(mod=True, wmac=True): (17, 7, 23)}
    for f, want in rows.items():
        assert tuple(instr_cycles(k, t, f) for k in ("mod_red", "mod_add", "mod_mult")) == want
    assert abs(instr_cycles("mod_red", t, Features(mod=True)) / instr_cycles("mod_red", t, Features()) - 0.565) <= 0.005


def test_raw_ops_and_unknown_kind():
    t = IsaCostTable()
    assert instr_cycles("mult", t, Features()) == 12
    assert instr_cycles("mult", t, Features(mod=True, wmac=True)) == 4
    with pytest.raises(ArchError):
        instr_cycles("div", t, Features())


def test_gpu_preset_counts():
    g = mi100().gpu
    assert g.cu_count == g.se_count * g.cus_per_se == 120
    assert g.lanes == 7680
    assert g.lds_total_bytes == 120 * 64 * 1024
    with pytest.raises(ArchError):
        GpuConfig(cu_count=100)


def test_hop_distance_metric_exhaustive():
    n = NOC.cu_count
    D = [[hop_distance(a, b, NOC) for b in range(n)] for a in range(n)]
    bfs = bfs_hops(NOC)
    for a in range(n):
        assert D[a][a] == 0
        for b in range(n):
            assert D[a][b] == D[b][a] >= 0
            assert D[a][b] == bfs[a // 8][b // 8]
            assert (D[a][b] == 0) == (a // 8 == b // 8)
    for a, b, c in itertools.product(range(0, n, 8), repeat=3):
        assert D[a][c] <= D[a][b] + D[b][c]
    assert NOC.diameter() == 3 == max(max(r) for r in D)


def test_hop_examples():
    assert hop_distance(5, 5) == 0
    assert hop_distance(0, 7) == 0
    assert NOC.router_hops(0, 1 * 5 + 2) == 3
    assert all(len(NOC.neighbors(r)) == 4 for r in range(NOC.routers))
    with pytest.raises(ArchError):
        hop_distance(0, 120)


def test_lds_home():
    g = gme().gpu
    assert lds_home(0, g) == 0  # pinned golden value of the hash at address 0
    assert lds_home(123456, g) == lds_home(123456, g)
    share = Counter(lds_home(i << NOC.line_bits, g) for i in range(2**20))
    uniform = 2**20 / g.cu_count
    assert len(share) == g.cu_count
    assert all(0.95 * uniform <= c <= 1.05 * uniform for c in share.values())
    with pytest.raises(ArchError):
        lds_home(0, mi100().gpu)


def test_transfer_cycles():
    assert transfer_cycles(0, 0, 100) == 0
    assert transfer_cycles(64, 0, 7) == 2  # same router, serialization only
    assert transfer_cycles(64, 0, 0) == 0
    assert transfer_cycles(64, 0, 8) == 8 + 2
    far = 7 * NOC.concentration
    assert hop_distance(0, far) == 3
    assert transfer_cycles(442_368, 0, far) == 3 * NOC.router_hop_cycles + -(-442_368 // NOC.link_bytes_per_cycle)


def test_config_roundtrip_and_validation(tmp_path):
    for m in (mi100(), gme()):
        assert MachineConfig.from_dict(json.loads(json.dumps(m.to_dict()))) == m
    assert gme().features == Features(True, True, True, True)
    assert mi100().features == Features()
    d = mi100().to_dict()
    d["noc"]["rows"] = 5
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    with pytest.raises(ArchError):
        load_config(p)
    with pytest.raises(ArchError):
        MachineConfig.from_dict({"isa": {}})


def test_with_features_and_lds():
    m = mi100().with_features(cnoc=True).with_lds_total(int(15.5 * 2**20))
    assert m.features.cnoc and not m.features.mod
    assert abs(m.gpu.lds_total_bytes - 15.5 * 2**20) < m.gpu.cu_count
    assert Features(cnoc=True, mod=True).label() == "cnoc+mod"
