import json

import pytest

from gmesim import blockgraph as BG
from gmesim.blockgraph import BlockGraph, BlockNode, DagBuilder, GraphError
from gmesim.heblocks import profile_block


def test_desk_bootstrap_golden(desk):
    g = BG.build_bootstrap_dag(desk)
    assert (len(g.nodes), len(g.edges)) == (302, 425)
    assert g.kind_counts()["ModRaise"] == 1
    assert all(n.region == "boot" for n in g.nodes)


def test_paper_bootstrap_shape(paper):
    g = BG.build_bootstrap_dag(paper)
    assert len(g.nodes) == 696
    sinks = [n for n in g.nodes if not g.succ[n.id]]
    assert len(sinks) == 1 and sinks[0].level == paper.L - paper.L_boot + 1  # the final rescale input level


def test_linear_transform_stages(desk, paper, monkeypatch):
    calls = []
    orig = DagBuilder.linear_transform

    def spy(self, x, radix, stride):
        calls.append(stride)
        return orig(self, x, radix, stride)

    monkeypatch.setattr(DagBuilder, "linear_transform", spy)
    BG.build_bootstrap_dag(paper)
    assert len(calls) == 2 * paper.fftIter == 8


def test_bootstrap_exit_level(desk):
    b = DagBuilder(desk)
    out = b.bootstrap(b.fresh(0))
    assert out.level == desk.L - desk.L_boot


def test_edge_bytes_match_operand_sizes(desk):
    for name in ("boot", "helr", "resnet20"):
        g = BG.build_workload(name, desk)
        for n in g.nodes:
            inb = sum(e.bytes for e in g.pred[n.id]) + n.ext_in_bytes
            prof = n.profile
            ct = 2 * (n.level + 1) * desk.N * 8
            if n.kind == "ModRaise":
                assert inb == 2 * desk.N * 8
            elif n.kind == "HERescale":
                assert inb == prof.bytes_in
            else:
                assert inb in (prof.bytes_in, ct * len(g.pred[n.id]) + n.ext_in_bytes)


def test_helr_and_resnet_structure(desk):
    assert len(BG.build_helr_dag(0, desk).nodes) == 0
    g1 = BG.build_helr_dag(1, desk)
    assert g1.kind_counts().get("ModRaise", 0) >= 1
    g = BG.build_resnet20_dag(desk)
    assert g.kind_counts()["ModRaise"] >= BG.RESNET_LAYERS
    with pytest.raises(GraphError):
        BG.build_workload("lenet", desk)


@pytest.mark.parametrize("pname", ["desk", "paper"])
def test_resnet_reuse_exceeds_helr(pname, request):
    p = request.getfixturevalue(pname)
    r = BG.build_workload("resnet20", p).mean_edge_bytes_per_node("app")
    h = BG.build_workload("helr", p).mean_edge_bytes_per_node("app")
    assert r > h > 0


def test_save_load_roundtrip(tmp_path, desk):
    g = BG.build_workload("helr", desk)
    p = tmp_path / "g.json"
    BG.save_dag(g, p)
    h = BG.load_dag(p)
    assert h.to_dict() == g.to_dict()


def _chain(weights=(10, 20)):
    prof = profile_block("HEAdd", _chain.params, 1)
    g = BlockGraph(name="chain")
    for i in range(3):
        g.add_node(BlockNode(i, "HEAdd", 1, 1.0, prof))
    g.add_edge(0, 1, weights[0])
    g.add_edge(1, 2, weights[1])
    return g


def test_chain_weights_preserved(tmp_path, desk):
    _chain.params = desk
    g = _chain((10, 20))
    p = tmp_path / "c.json"
    BG.save_dag(g, p)
    h = BG.load_dag(p)
    assert [(e.src, e.dst, e.bytes) for e in h.edges] == [(0, 1, 10), (1, 2, 20)]


def test_cycle_rejected(tmp_path, desk):
    _chain.params = desk
    d = _chain().to_dict()
    d["edges"].append({"src": 2, "dst": 0, "bytes": 5})
    p = tmp_path / "cyc.json"
    p.write_text(json.dumps(d))
    with pytest.raises(GraphError, match="cycle"):
        BG.load_dag(p)


def test_malformed_documents(tmp_path, desk):
    _chain.params = desk
    d = _chain().to_dict()
    bad = [dict(d, edges=[{"src": 0, "dst": 9, "bytes": 1}]), dict(d, edges=[{"src": 0, "dst": 1, "bytes": 0}]),
           {"nodes": d["nodes"] + d["nodes"][:1], "edges": []}, {"edges": []}]
    for doc in bad:
        with pytest.raises(GraphError):
            BlockGraph.from_dict(doc)
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(GraphError):
        BG.load_dag(p)


def test_builder_level_checks(desk):
    b = DagBuilder(desk)
    low = b.fresh(0)
    with pytest.raises(GraphError):
        b.rescale(low)
    with pytest.raises(GraphError):
        b.emit("HEAdd", 3, [low, low])
    with pytest.raises(GraphError):
        b.ensure(b.fresh(0), desk.L - desk.L_boot + 1)
