from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embodied_rag.errors import NotALeaf
from embodied_rag.forest import ClusteringConfig, build_forest
from embodied_rag.harness.world import WorldSpec, generate_world
from embodied_rag.llm import Gateway, MockBackend
from embodied_rag.retrieval import (
    Query,
    allocate_quotas,
    render_chain,
    retrieve,
    retrieve_embodied,
    retrieve_rag,
    retrieve_semantic_match,
)
from embodied_rag.topo_map import MapNode, Pose, TopologicalMap
from retrieval_oracle import brute_force_ranking, quota_oracle

VOCAB = ("red", "cup", "desk", "lamp", "green", "tree", "bench", "coffee", "drinks", "counter",
         "window", "door", "blue", "chair", "shelf", "book", "sink", "plant")


def random_map(rng, n):
    tmap = TopologicalMap()
    for i in range(n):
        caption = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 5)))
        tmap.add_node(MapNode(f"m{i:03d}", Pose(rng.uniform(0, 50), rng.uniform(0, 50)), caption))
    return tmap


FIVE = ["a red cup on a desk", "a green tree", "a desk lamp", "red chair by the door", "a blue cup"]


def five_leaf_forest():
    tmap = TopologicalMap([MapNode(f"p{i}", Pose(float(i), 0.0), c) for i, c in enumerate(FIVE)])
    return tmap, build_forest(tmap, MockBackend())


# -- baselines -----------------------------------------------------------------------


def test_semantic_match_on_fixture():
    _, forest = five_leaf_forest()
    res = retrieve_semantic_match(forest, Query("red cup"), Gateway())
    assert res.leaves == ["leaf:p0"]
    assert res.leaves == [brute_force_ranking(forest, "red cup")[0][0]]


def test_rag_on_fixture():
    _, forest = five_leaf_forest()
    gw = Gateway()
    assert retrieve_rag(forest, "red cup", gw, k=2).leaves == [l for l, _ in brute_force_ranking(forest, "red cup")[:2]]
    everything = retrieve_rag(forest, "red cup", gw, k=50)
    assert everything.leaves == [l for l, _ in brute_force_ranking(forest, "red cup")]


def test_one_leaf_forest():
    tmap = TopologicalMap([MapNode("solo", Pose(0, 0), "a lamp")])
    forest = build_forest(tmap, MockBackend())
    gw = Gateway()
    assert retrieve_semantic_match(forest, "zebra", gw).leaves == ["leaf:solo"]
    res = retrieve_embodied(forest, "zebra", gw, k=5)
    assert [c.node_ids for c in res.chains] == [("leaf:solo",)]


def test_rag_rejects_bad_k():
    _, forest = five_leaf_forest()
    with pytest.raises(ValueError):
        retrieve_rag(forest, "x", Gateway(), k=0)


def test_baselines_match_bruteforce_on_random_instances():
    rng = random.Random(21)
    gw = Gateway()
    for _ in range(120):
        tmap = random_map(rng, rng.randint(1, 50))
        forest = build_forest(tmap, MockBackend())
        text = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 3)))
        k = rng.randint(1, 15)
        ranking = brute_force_ranking(forest, text)
        assert retrieve_rag(forest, text, gw, k).leaves == [l for l, _ in ranking[:k]]
        assert retrieve_semantic_match(forest, text, gw).leaves == [ranking[0][0]]


# -- quotas -------------------------------------------------------------------------------


def test_quota_examples():
    assert allocate_quotas({"a": 5, "b": 5}, 2) == {"a": 1, "b": 1}
    # remainder goes to the larger tree
    assert allocate_quotas({"a": 2, "b": 9}, 3) == {"b": 2, "a": 1}
    # a small tree yields all its leaves; the surplus goes back in order
    assert allocate_quotas({"a": 7, "b": 4, "c": 2, "d": 1}, 9) == {"a": 4, "b": 2, "c": 2, "d": 1}
    assert allocate_quotas({"a": 1, "b": 1}, 10) == {"a": 1, "b": 1}


@settings(max_examples=300, deadline=None)
@given(st.dictionaries(st.text("abcdef", min_size=1, max_size=3), st.integers(1, 12), min_size=1, max_size=7),
       st.integers(1, 60))
def test_quotas_match_documented_rule(counts, k):
    quotas = allocate_quotas(counts, k)
    assert quotas == quota_oracle(counts, k)
    assert sum(quotas.values()) == min(k, sum(counts.values()))
    assert all(0 <= quotas[r] <= counts[r] for r in counts)


# -- chain retrieval -------------------------------------------------------------------------


def assert_valid_chain(forest, chain):
    ids = chain.node_ids
    assert forest.nodes[ids[0]].is_leaf
    assert forest.nodes[ids[-1]].parent is None
    for child, parent in zip(ids, ids[1:]):
        assert forest.nodes[child].parent == parent
    assert chain == render_chain(forest, ids[0])


def test_two_trees_k_two_gives_one_chain_each():
    tmap = TopologicalMap([MapNode(f"x{i}", Pose(x, 0), f"thing {i}") for i, x in enumerate([0, 1, 100, 101])])
    forest = build_forest(tmap, MockBackend(), ClusteringConfig(threshold_schedule=(2.0,)))
    assert len(forest.roots) == 2
    res = retrieve_embodied(forest, "thing", Gateway(), k=2)
    assert sorted(forest.root_of(l) for l in res.leaves) == sorted(forest.roots)


def test_chain_properties_on_many_runs():
    rng = random.Random(31)
    runs = 0
    for trial in range(110):
        if trial % 3 == 0:
            tmap, _ = generate_world(WorldSpec(seed=trial, node_count=rng.randint(20, 120)))
        else:
            tmap = random_map(rng, rng.randint(1, 60))
        cfg = ClusteringConfig.for_map(tmap, max_children=rng.randint(2, 10))
        forest = build_forest(tmap, MockBackend(), cfg)
        k = rng.randint(1, 20)
        text = " ".join(rng.choice(VOCAB) for _ in range(rng.randint(1, 4)))
        gw = Gateway()
        res = retrieve_embodied(forest, text, gw, k=k, concurrency=rng.randint(1, 8))
        counts = {r: len(forest.leaves_under(r)) for r in forest.roots}
        assert res.quotas == quota_oracle(counts, k)
        assert len(res.chains) == min(k, len(forest.leaves()))
        assert len(set(res.leaves)) == len(res.leaves)
        for chain in res.chains:
            assert_valid_chain(forest, chain)
        per_tree = {}
        for leaf in res.leaves:
            per_tree[forest.root_of(leaf)] = per_tree.get(forest.root_of(leaf), 0) + 1
        assert per_tree == {r: q for r, q in res.quotas.items() if q}
        assert gw.requests["selector"] <= k * forest.depth
        for steps in res.traces:
            assert len(steps) <= forest.depth - 1
        runs += 1
    assert runs >= 100


def test_descent_trace_records_choices():
    _, forest = five_leaf_forest()
    res = retrieve_embodied(forest, "red cup", Gateway(), k=1)
    steps = res.traces[0]
    assert steps[0].node == forest.roots[0]
    for step in steps:
        assert step.selected in step.candidates
        assert list(step.candidates) == sorted(step.candidates)
    assert res.trace_record()[0]["leaf"] == res.leaves[0]


def test_explicit_soundness_with_k_one():
    tmap, queries = generate_world(WorldSpec(seed=9, node_count=150))
    forest = build_forest(tmap, MockBackend())
    gw = Gateway()
    for gq in queries:
        if gq.query.kind != "explicit":
            continue
        res = retrieve_embodied(forest, gq.query, gw, k=1)
        assert [forest.nodes[l].map_node for l in res.leaves] == sorted(gq.gold_leaves)


def test_render_chain_format():
    tmap = TopologicalMap([MapNode("a", Pose(0, 0), "a red chair"), MapNode("b", Pose(0, 1), "a desk")])
    forest = build_forest(tmap, MockBackend(), ClusteringConfig(threshold_schedule=(2.0,)))
    chain = render_chain(forest, "leaf:a")
    assert chain.rendering == (
        "L0 leaf:a (0.00, 0.00, 0.00): a red chair\n"
        "L1 c1.0 (0.00, 0.50, 0.00): a red chair; a desk"
    )
    assert render_chain(forest, "leaf:a") == chain
    with pytest.raises(NotALeaf):
        render_chain(forest, "c1.0")


def test_single_node_chain_renders_one_line():
    tmap = TopologicalMap([MapNode("a", Pose(1.234, 5.678), "a lamp")])
    forest = build_forest(tmap, MockBackend())
    assert render_chain(forest, "leaf:a").rendering == "L0 leaf:a (1.23, 5.68, 0.00): a lamp"


def test_dispatch_and_unknown_method():
    _, forest = five_leaf_forest()
    gw = Gateway()
    assert retrieve(forest, Query("red cup"), gw, "rag", 3).method == "rag"
    with pytest.raises(ValueError):
        retrieve(forest, Query("red cup"), gw, "telepathy")


def test_query_validation():
    with pytest.raises(ValueError):
        Query("")
    with pytest.raises(ValueError):
        Query("x", "rhetorical")
