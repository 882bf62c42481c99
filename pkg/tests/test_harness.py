from __future__ import annotations

import json
import re

import pytest

from embodied_rag.errors import InvalidSpec, ParseError, ProviderError
from embodied_rag.forest import build_forest, save_forest
from embodied_rag.harness import (
    GoldQuery,
    WorldSpec,
    ablate_k,
    bundled_dataset,
    evaluate,
    export_world,
    generate_world,
    ingest_dataset,
    term_coverage,
)
from embodied_rag.harness.world import ADJECTIVES, NOUNS, MARKET, PARK
from embodied_rag.llm import Gateway, MockBackend
from embodied_rag.retrieval import Query
from embodied_rag.topo_map import MapNode, Pose, TopologicalMap, save_map

OBJECT_CAPTION = re.compile(rf"^an? ({'|'.join(ADJECTIVES)}) ({'|'.join(NOUNS)})$")


def build(tmap):
    return build_forest(tmap, MockBackend())


# -- worlds ----------------------------------------------------------------------------


def test_world_is_deterministic():
    a_map, a_q = generate_world(WorldSpec(seed=4))
    b_map, b_q = generate_world(WorldSpec(seed=4))
    assert save_map(a_map) == save_map(b_map)
    assert a_q == b_q
    c_map, _ = generate_world(WorldSpec(seed=5))
    assert save_map(c_map) != save_map(a_map)


def test_fifty_nodes_two_regions_captions_match_region():
    spec = WorldSpec(seed=0, node_count=50)
    tmap, _ = generate_world(spec)
    assert len(tmap) == 50
    strip = spec.extent / 2
    for n in tmap.nodes:
        assert 0 <= n.pose.x < spec.extent and 0 <= n.pose.y < spec.extent
        region = (PARK, MARKET)[int(n.pose.x // strip)]
        templates = {t for c in region.categories for t in c.templates}
        assert n.caption in templates or OBJECT_CAPTION.match(n.caption), n.caption


def test_single_node_world():
    tmap, queries = generate_world(WorldSpec(seed=0, node_count=1))
    assert len(tmap) == 1 and tmap.edges == []
    explicit = [q for q in queries if q.query.kind == "explicit"]
    assert len(explicit) == 1
    assert explicit[0].gold_leaves == {tmap.nodes[0].id}


def test_explicit_phrase_in_exactly_one_caption():
    for n in (50, 200, 500):
        tmap, queries = generate_world(WorldSpec(seed=n, node_count=n))
        for q in queries:
            if q.query.kind == "explicit":
                phrase = q.query.text.removeprefix("find the ")
                holders = [m.id for m in tmap.nodes if phrase in m.caption]
                assert holders == sorted(q.gold_leaves) and len(holders) == 1


def test_implicit_gold_is_vendor_not_fountain():
    tmap, queries = generate_world(WorldSpec(seed=1, node_count=100))
    implicit = [q for q in queries if q.query.kind == "implicit"]
    assert len(implicit) == 8
    gold = implicit[0].gold_leaves
    vendor = {t for c in MARKET.categories if c.name == "vendor_counter" for t in c.templates}
    assert gold and all(tmap.node(g).caption in vendor or OBJECT_CAPTION.match(tmap.node(g).caption) for g in gold)
    assert not any("fountain" in tmap.node(g).caption for g in gold)


def test_edge_policies():
    chain_map, _ = generate_world(WorldSpec(seed=2, node_count=30))
    assert len(chain_map.edges) == 29
    assert len(chain_map.connected_components()) == 1
    prox, _ = generate_world(WorldSpec(seed=2, node_count=30, edge_policy="proximity_radius", edge_radius=15.0))
    assert all(e.cost <= 15.0 for e in prox.edges)


@pytest.mark.parametrize("bad", [{"node_count": 0}, {"extent": -1.0}, {"region_specs": ()},
                                 {"edge_policy": "teleport"}, {"explicit_count": 99}])
def test_invalid_world_specs(bad):
    with pytest.raises(InvalidSpec):
        WorldSpec(**bad)


def test_world_spec_file_round_trip(tmp_path):
    spec = WorldSpec(seed=9, node_count=77, edge_policy="proximity_radius", edge_radius=20.0)
    path = tmp_path / "world.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert WorldSpec.from_file(path) == spec
    with pytest.raises(InvalidSpec):
        WorldSpec.from_dict({"seed": 1, "colour": "blue"})


def test_gold_query_invariants():
    with pytest.raises(InvalidSpec):
        GoldQuery("x", Query("find it", "explicit"))
    with pytest.raises(InvalidSpec):
        GoldQuery("g", Query("describe", "global"))


# -- scoring ----------------------------------------------------------------------------


def test_term_coverage():
    assert term_coverage("The Park has benches; the market sells fruit", ["park", "market"]) == 1.0
    assert term_coverage("a parking lot", ["park", "market"]) == 0.0
    assert term_coverage("MARKET stalls", ["park", "market"]) == 0.5


def tiny_world():
    tmap = TopologicalMap([
        MapNode("a", Pose(0, 0), "a red cup on a desk"),
        MapNode("b", Pose(1, 0), "a green tree"),
        MapNode("c", Pose(2, 0), "a desk lamp"),
    ])
    tmap.add_edge("a", "b")
    tmap.add_edge("b", "c")
    return tmap


def test_two_of_three_successes():
    tmap = tiny_world()
    queries = [
        GoldQuery("q1", Query("red cup"), {"a"}),
        GoldQuery("q2", Query("green tree"), {"b"}),
        GoldQuery("q3", Query("desk lamp"), {"a"}),  # deliberately wrong gold
    ]
    report = evaluate(tmap, build(tmap), queries, ["semantic_match"], k=1, gateway=Gateway())
    assert report.counts["semantic_match"]["explicit"] == [2, 3]
    assert report.sr("semantic_match", "explicit") == pytest.approx(0.6667, abs=1e-4)
    assert report.sr("semantic_match", "explicit") == 2 / 3


class ExplodingEmbedder(MockBackend):
    def embed(self, req):
        if "explode" in req.text:
            raise ProviderError("provider fell over")
        return super().embed(req)


def test_failing_query_recorded_not_fatal():
    tmap = tiny_world()
    queries = [GoldQuery("q1", Query("red cup"), {"a"}), GoldQuery("q2", Query("explode now"), {"b"})]
    report = evaluate(tmap, build(tmap), queries, ["semantic_match", "rag"], k=2,
                      gateway=Gateway(ExplodingEmbedder(), sleep=lambda _: None))
    failed = [r for r in report.records if r["id"] == "q2"]
    assert all(r["success"] is False and r["error"]["type"] == "ProviderError" for r in failed)
    assert all(r["success"] for r in report.records if r["id"] == "q1")
    assert report.counts["rag"]["explicit"] == [1, 2]


def test_empty_query_set_rejected():
    tmap = tiny_world()
    with pytest.raises(ValueError):
        evaluate(tmap, build(tmap), [], ["rag"])


def test_report_bounds_and_ordering():
    tmap, queries = generate_world(WorldSpec(seed=3, node_count=80))
    report = evaluate(tmap, build(tmap), queries, gateway=Gateway())
    for m, kinds in report.summary().items():
        for v in kinds.values():
            assert v is None or 0.0 <= v <= 1.0
    keys = [(report.methods.index(r["method"]), r["id"]) for r in report.records]
    assert keys == sorted(keys)
    assert "k=10" in report.table()


def test_report_independent_of_concurrency():
    tmap, queries = generate_world(WorldSpec(seed=3, node_count=80))
    forest = build(tmap)
    one = evaluate(tmap, forest, queries, gateway=Gateway(), concurrency=1)
    many = evaluate(tmap, forest, queries, gateway=Gateway(), concurrency=8)
    assert one.to_json(canonical=True) == many.to_json(canonical=True)


def test_ablate_single_k_equals_direct_evaluate():
    tmap, queries = generate_world(WorldSpec(seed=6, node_count=60))
    forest = build(tmap)
    sweep = ablate_k(tmap, forest, queries, ["rag", "embodied_rag"], [1], Gateway())
    direct = evaluate(tmap, forest, queries, ["rag", "embodied_rag"], 1, Gateway())
    assert len(sweep.reports) == 1
    assert sweep.reports[0].to_json(canonical=True) == direct.to_json(canonical=True)


def test_ablate_series_shape_and_csv():
    tmap, queries = generate_world(WorldSpec(seed=6, node_count=60))
    sweep = ablate_k(tmap, build(tmap), queries, ["semantic_match", "embodied_rag"], [1, 2, 5], Gateway())
    rows = sweep.rows()
    assert [(r["k"], r["method"]) for r in rows] == [(k, m) for k in (1, 2, 5) for m in ("semantic_match", "embodied_rag")]
    lines = sweep.to_csv().splitlines()
    assert lines[0] == "k,method,explicit_sr,implicit_sr,global_coverage"
    assert len(lines) == 7
    with pytest.raises(ValueError):
        ablate_k(tmap, build(tmap), queries, ["rag"], [])


# -- datasets ---------------------------------------------------------------------------------


def test_bundled_dataset_loads_builds_evaluates():
    tmap, queries = ingest_dataset(bundled_dataset())
    assert len(tmap) == 40 and queries
    report = evaluate(tmap, build(tmap), queries, gateway=Gateway())
    assert report.records
    assert ingest_dataset("bundled")[0] == tmap


def test_sidecar_with_unknown_node_rejected(tmp_path):
    tmap = tiny_world()
    export_world(tmap, None, tmp_path)
    (tmp_path / "queries.jsonl").write_text(
        '{"format":"erag-queries","version":1}\n'
        '{"id":"q1","text":"red cup","kind":"explicit","gold_leaves":["ghost"]}\n')
    with pytest.raises(ParseError) as info:
        ingest_dataset(tmp_path)
    assert info.value.line == 2 and info.value.field == "gold_leaves"


def test_map_without_sidecar(tmp_path):
    export_world(tiny_world(), None, tmp_path)
    tmap, queries = ingest_dataset(tmp_path)
    assert len(tmap) == 3 and queries is None
    with pytest.raises(FileNotFoundError):
        ingest_dataset(tmp_path / "missing")


def test_exported_world_reingests_to_identical_report(tmp_path):
    tmap, queries = generate_world(WorldSpec(seed=12, node_count=70))
    export_world(tmap, queries, tmp_path)
    tmap2, queries2 = ingest_dataset(tmp_path)
    assert queries2 == queries
    forest, forest2 = build(tmap), build(tmap2)
    assert save_forest(forest) == save_forest(forest2)
    a = evaluate(tmap, forest, queries, gateway=Gateway())
    b = evaluate(tmap2, forest2, queries2, gateway=Gateway())
    assert a.to_json(canonical=True) == b.to_json(canonical=True)
