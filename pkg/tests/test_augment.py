import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saug.augment import (AugmentConfig, EdgeEditPlan, SimilarityScores, augment, denoise_hubs,
                          discover_tails, hub_similarity, random_drop_baseline, similarity_matrix,
                          tail_similarity_chunked)
from saug.engine.autograd import sigmoid_np, softmax_np
from saug.engine.pretrain import EmbeddingPair
from saug.graph import GraphDelta, apply_delta, generate_powerlaw, small_graph
from saug.pagerank import NodePartition, pagerank, partition_nodes
from conftest import random_graph, star


def manual_partition(g, hubs=(), tails=()):
    return NodePartition(np.array(sorted(hubs), dtype=np.int64), np.array(sorted(tails), dtype=np.int64),
                         2.0, 0.3, pagerank(g))


def random_emb(n, rng, classes=3, d=4, scale=2.0):
    return EmbeddingPair(rng.normal(size=(n, d)), rng.normal(size=(n, classes)) * scale)


def dense_scores(emb):
    p = softmax_np(emb.z_label)
    return (p @ p.T) * sigmoid_np(emb.z_link @ emb.z_link.T)


# -- calibrated similarity -------------------------------------------------------

def test_identical_saturated_embeddings_score_one():
    g = small_graph(2, [(0, 1)])
    emb = EmbeddingPair(np.array([[np.sqrt(20)], [np.sqrt(20)]]), np.array([[50.0, 0.0], [50.0, 0.0]]))
    s = hub_similarity(emb, g, 0)
    assert s.candidates.tolist() == [1]
    assert s.scores[0] == pytest.approx(1.0, abs=1e-8)


def test_orthogonal_labels_score_zero():
    g = small_graph(2, [(0, 1)])
    emb = EmbeddingPair(np.array([[5.0], [5.0]]), np.array([[50.0, 0.0], [0.0, 50.0]]))
    assert hub_similarity(emb, g, 0).scores[0] == pytest.approx(0.0, abs=1e-12)


def test_uniform_labels_zero_link():
    g = small_graph(2, [(0, 1)])
    emb = EmbeddingPair(np.zeros((2, 3)), np.zeros((2, 7)))
    assert hub_similarity(emb, g, 0).scores[0] == pytest.approx(0.5 / 7)


def test_isolated_hub_is_error():
    g = small_graph(3, [(1, 2)])
    with pytest.raises(ValueError):
        hub_similarity(EmbeddingPair(np.zeros((3, 2)), np.zeros((3, 2))), g, 0)


def test_scores_in_open_unit_interval():
    rng = np.random.default_rng(0)
    emb = random_emb(30, rng)
    s = similarity_matrix(emb)
    assert (s > 0).all() and (s < 1).all()


def test_score_monotone_in_each_factor():
    rng = np.random.default_rng(1)
    base = random_emb(2, rng)
    s0 = similarity_matrix(base)[0, 1]
    # larger link logit
    zl = base.z_link.copy()
    zl[1] = zl[1] + 0.5 * zl[0] / np.linalg.norm(zl[0]) ** 2
    assert similarity_matrix(EmbeddingPair(zl, base.z_label))[0, 1] >= s0
    # move node 1's label distribution toward node 0's
    mixed = EmbeddingPair(base.z_link, np.vstack([base.z_label[0], 0.5 * (base.z_label[0] + base.z_label[1])]))
    p = softmax_np(mixed.z_label)
    p_old = softmax_np(base.z_label)
    if p[0] @ p[1] >= p_old[0] @ p_old[1]:
        assert similarity_matrix(mixed)[0, 1] >= s0


# -- denoising -----------------------------------------------------------------

def star_with_ring(leaves=5):
    edges = [(0, i) for i in range(1, leaves + 1)] + [(i, i % leaves + 1) for i in range(1, leaves + 1)]
    return small_graph(leaves + 1, edges)


def test_uniform_low_scores_keep_top_one():
    g = star_with_ring(5)
    emb = EmbeddingPair(np.zeros((6, 2)), np.zeros((6, 10)))  # every score = 0.1 * 0.5
    assert hub_similarity(emb, g, 0).scores == pytest.approx(np.full(5, 0.05))
    plan = denoise_hubs(emb, g, manual_partition(g, hubs=[0]), L=0.1)
    assert len(plan.removals) == 4 and not plan.additions
    assert {(e.u, e.v) for e in plan.removals} == {(0, 2), (0, 3), (0, 4), (0, 5)}  # tie keeps lowest id


def test_tiny_threshold_removes_nothing():
    g = star_with_ring(5)
    emb = random_emb(6, np.random.default_rng(0))
    assert len(denoise_hubs(emb, g, manual_partition(g, hubs=[0]), L=1e-12)) == 0


def test_denoise_never_isolates_leaves():
    g = star(5)
    emb = EmbeddingPair(np.zeros((6, 2)), np.zeros((6, 10)))
    g2, plan = augment(g, emb, manual_partition(g, hubs=[0]), AugmentConfig(L=0.1), discover=False)
    assert len(plan) == 0
    assert (g2.degrees > 0).all()


def test_edge_between_two_hubs_removed_if_either_flags():
    # hubs 0 and 1 share an edge; only node 0's view matters for the removal
    edges = [(0, 1), (0, 2), (0, 3), (1, 4), (1, 5), (2, 3), (4, 5), (2, 4), (3, 5)]
    g = small_graph(6, edges)
    z_label = np.zeros((6, 2))
    z_label[[0, 2, 3], 0] = 20
    z_label[[1, 4, 5], 1] = 20
    emb = EmbeddingPair(np.zeros((6, 2)), z_label)
    plan = denoise_hubs(emb, g, manual_partition(g, hubs=[0, 1]), L=0.1)
    assert (0, 1) in {(e.u, e.v) for e in plan.removals}


def test_noisy_leaf_has_minimum_score():
    rng = np.random.default_rng(3)
    g = star_with_ring(8)
    z_label = np.zeros((9, 3))
    z_label[:, 0] = 4.0
    z_label[7] = [0.0, 4.0, 0.0]  # planted noisy neighbor
    z_link = np.ones((9, 4)) + 0.1 * rng.normal(size=(9, 4))
    z_link[7] = rng.normal(size=4)
    emb = EmbeddingPair(z_link, z_label)
    s = hub_similarity(emb, g, 0)
    assert s.candidates[np.argmin(s.scores)] == 7


def test_denoise_respects_restricted_subgraph():
    g = star_with_ring(5)
    emb = EmbeddingPair(np.zeros((6, 2)), np.zeros((6, 10)))
    plan = denoise_hubs(emb, g, manual_partition(g, hubs=[0]), 0.1, restricted=[0, 3, 4])
    removed = {(e.u, e.v) for e in plan.removals}
    assert (0, 3) not in removed and (0, 4) not in removed
    assert removed == {(0, 2), (0, 5)}


# -- tail discovery --------------------------------------------------------------

def test_chunked_matches_dense_and_chunk_size():
    rng = np.random.default_rng(2)
    g = random_graph(20, 0.15, rng)
    emb = random_emb(20, rng)
    part = partition_nodes(pagerank(g))
    dense = dense_scores(emb)
    one = list(tail_similarity_chunked(emb, g, part, chunk_rows=1))
    full = list(tail_similarity_chunked(emb, g, part, chunk_rows=len(part.tails)))
    assert [s.owner for s in one] == part.tails.tolist()
    for a, b in zip(one, full):
        assert a.owner == b.owner and a.candidates.tolist() == b.candidates.tolist()
        np.testing.assert_allclose(a.scores, b.scores, atol=1e-12, rtol=0)
        np.testing.assert_allclose(a.scores, dense[a.owner, a.candidates], atol=1e-12, rtol=0)
        assert a.owner not in a.candidates
        assert not set(g.neighbors(a.owner)) & set(a.candidates)


def test_symmetric_candidates_get_equal_scores():
    # tail 0 hangs off node 1, which sits between two mirror-image branches
    g = small_graph(6, [(0, 1), (1, 2), (1, 3), (2, 4), (3, 5)], features=np.ones((6, 2)))
    z = np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 0.2], [0.5, 0.2], [0.3, 0.1], [0.3, 0.1]])
    emb = EmbeddingPair(z, z)
    (item,) = list(tail_similarity_chunked(emb, g, manual_partition(g, tails=[0])))
    s = dict(zip(item.candidates.tolist(), item.scores))
    assert s[2] == s[3] and s[4] == s[5]


def test_threshold_above_max_gives_empty_plan():
    items = [SimilarityScores(0, np.array([1, 2, 3]), np.array([0.2, 0.9, 0.5]))]
    assert len(discover_tails(items, AugmentConfig(strategy="threshold", P=0.999))) == 0


def test_topq_selects_exactly_q_best():
    scores = np.linspace(0.1, 0.9, 10)
    items = [SimilarityScores(20, np.arange(10), scores)]
    plan = discover_tails(items, AugmentConfig(strategy="topq", Q=3))
    assert sorted((e.u, e.v) for e in plan.additions) == [(7, 20), (8, 20), (9, 20)]


def test_topq_tie_break_by_id():
    items = [SimilarityScores(0, np.array([5, 2, 9, 4]), np.full(4, 0.3))]
    plan = discover_tails(items, AugmentConfig(strategy="topq", Q=2))
    assert [(e.u, e.v) for e in plan.additions] == [(0, 2), (0, 4)]


def test_mutual_selection_emitted_once():
    items = [SimilarityScores(1, np.array([2]), np.array([0.9])),
             SimilarityScores(2, np.array([1]), np.array([0.9]))]
    assert len(discover_tails(items, AugmentConfig(P=0.5))) == 1


def test_topq_large_equals_small_threshold():
    rng = np.random.default_rng(5)
    g = random_graph(25, 0.1, rng)
    emb = random_emb(25, rng)
    part = partition_nodes(pagerank(g))
    a = discover_tails(tail_similarity_chunked(emb, g, part), AugmentConfig(strategy="topq", Q=25))
    b = discover_tails(tail_similarity_chunked(emb, g, part), AugmentConfig(strategy="threshold", P=1e-300))
    assert {(e.u, e.v) for e in a.edits} == {(e.u, e.v) for e in b.edits}


def test_discover_restricted_pairs():
    rng = np.random.default_rng(6)
    g = random_graph(20, 0.1, rng)
    emb = random_emb(20, rng)
    part = partition_nodes(pagerank(g))
    restricted = part.tails[: len(part.tails) // 2].tolist() + [int(part.remainder()[0])]
    stream = tail_similarity_chunked(emb, g, part, restricted=restricted)
    plan = discover_tails(stream, AugmentConfig(strategy="topq", Q=20))
    r = set(restricted)
    assert not any(e.u in r and e.v in r for e in plan.additions)


@pytest.mark.parametrize("value", [0.0, 1.0, -0.1])
def test_config_validation(value):
    with pytest.raises(ValueError):
        AugmentConfig(L=value)
    with pytest.raises(ValueError):
        AugmentConfig(P=value)
    with pytest.raises(ValueError):
        AugmentConfig(strategy="topq", Q=0)


# -- augment -----------------------------------------------------------------------

def test_empty_partition_is_noop():
    g = random_graph(10, 0.3, np.random.default_rng(0))
    emb = random_emb(10, np.random.default_rng(1))
    g2, plan = augment(g, emb, manual_partition(g), AugmentConfig())
    assert len(plan) == 0 and g2.canonical_equal(g)


def test_removals_and_additions_are_disjoint():
    # discovery excludes the original neighbors, so a removed pair can never come back
    g = star_with_ring(5)
    emb = EmbeddingPair(np.zeros((6, 2)), np.zeros((6, 2)))
    part = manual_partition(g, hubs=[0], tails=[3])
    g2, plan = augment(g, emb, part, AugmentConfig(L=0.9, strategy="topq", Q=5))
    removed = {(e.u, e.v) for e in plan.removals}
    added = {(e.u, e.v) for e in plan.additions}
    assert (0, 3) in removed
    assert added and not added & removed
    assert not added & {tuple(e) for e in g.edges.tolist()}
    g2.check_invariants()


def test_augment_edge_accounting_and_locality():
    rng = np.random.default_rng(11)
    g = generate_powerlaw(80, 2, 8, 3, seed=4)
    emb = random_emb(80, rng)
    part = partition_nodes(pagerank(g))
    g2, plan = augment(g, emb, part, AugmentConfig(L=0.3, strategy="topq", Q=2))
    assert g2.num_edges == g.num_edges - len(plan.removals) + len(plan.additions)
    hubs, tails = set(part.hubs.tolist()), set(part.tails.tolist())
    assert all(e.u in hubs or e.v in hubs for e in plan.removals)
    assert all(e.u in tails or e.v in tails for e in plan.additions)
    assert (g2.degrees > 0).all()


def test_plan_jsonl_roundtrip(tmp_path):
    g = generate_powerlaw(50, 2, 8, 3, seed=1)
    emb = random_emb(50, np.random.default_rng(0))
    _, plan = augment(g, emb, partition_nodes(pagerank(g)), AugmentConfig(L=0.3, strategy="topq", Q=1))
    plan.save(tmp_path / "plan.jsonl")
    rows = [json.loads(l) for l in (tmp_path / "plan.jsonl").read_text().splitlines()]
    assert set(rows[0]) == {"op", "u", "v", "score"}
    back = EdgeEditPlan.load(tmp_path / "plan.jsonl")
    assert back.edits == plan.edits


def test_random_drop_baseline():
    g = random_graph(40, 0.15, np.random.default_rng(0))
    assert random_drop_baseline(g, 0.0, 1).canonical_equal(g)
    g2 = random_drop_baseline(g, 0.5, 1)
    assert g2.num_edges == g.num_edges - g.num_edges // 2
    assert random_drop_baseline(g, 0.5, 1).canonical_equal(g2)
    with pytest.raises(ValueError):
        random_drop_baseline(g, 1.0, 0)


def test_random_drop_exact_count():
    edges = [(i, j) for i in range(15) for j in range(i + 1, 15)][:100]
    g = small_graph(15, edges)
    assert random_drop_baseline(g, 0.5, 3).num_edges == 50


@settings(max_examples=30, deadline=None)
@given(st.integers(12, 40), st.integers(0, 10_000), st.floats(0.05, 0.6), st.integers(1, 6))
def test_augment_properties(n, seed, L, Q):
    g = generate_powerlaw(n, 2, 6, 3, seed=seed)
    emb = random_emb(n, np.random.default_rng(seed))
    part = partition_nodes(pagerank(g))
    g2, plan = augment(g, emb, part, AugmentConfig(L=L, strategy="topq", Q=Q))
    g2.check_invariants()
    assert g2.num_edges == g.num_edges - len(plan.removals) + len(plan.additions)
    assert (g2.degrees > 0).all()
    delta = plan.to_delta()
    assert apply_delta(g2, delta.inverse(g)).canonical_equal(g)
