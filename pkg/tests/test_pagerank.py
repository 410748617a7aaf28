import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saug.graph import Graph, GraphDelta, apply_delta, small_graph
from saug.pagerank import PartitionError, pagerank, partition_nodes, resample_tails, PageRankVector
from conftest import random_graph, star
from oracles import dense_pagerank


def test_cycle_is_uniform():
    g = small_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    np.testing.assert_allclose(pagerank(g).values, 0.25, atol=1e-12)


def test_path_matches_linear_solve():
    g = small_graph(3, [(0, 1), (1, 2)])
    pr = pagerank(g)
    np.testing.assert_allclose(pr.values, dense_pagerank(g.adjacency.toarray()), atol=1e-8, rtol=0)
    assert pr.values.sum() == pytest.approx(1, abs=1e-9)


def test_isolated_nodes_handled():
    g = small_graph(5, [(0, 1), (1, 2)])
    pr = pagerank(g)
    np.testing.assert_allclose(pr.values, dense_pagerank(g.adjacency.toarray()), atol=1e-8, rtol=0)
    assert (pr.values > 0).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 50), st.floats(0.0, 0.5), st.integers(0, 10_000))
def test_matches_dense_solve_on_random_graphs(n, p, seed):
    g = random_graph(n, p, np.random.default_rng(seed))
    pr = pagerank(g)
    np.testing.assert_allclose(pr.values, dense_pagerank(g.adjacency.toarray()), atol=1e-8, rtol=0)
    assert abs(pr.values.sum() - 1) < 1e-9


def test_relabeling_permutes_output():
    rng = np.random.default_rng(0)
    g = random_graph(30, 0.15, rng)
    perm = rng.permutation(30)
    inv = np.argsort(perm)
    h = small_graph(30, inv[g.edges])
    np.testing.assert_allclose(pagerank(h).values[inv], pagerank(g).values, atol=1e-12)


def test_bad_inputs():
    with pytest.raises(ValueError):
        pagerank(small_graph(2, [(0, 1)]), damping=1.0)
    with pytest.raises(ValueError):
        pagerank(Graph.from_edges(0, [], np.zeros((0, 1))))


def test_nonconvergence_is_reported(caplog):
    g = small_graph(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
    with caplog.at_level("WARNING"):
        pr = pagerank(g, max_iter=2)
    assert pr.iterations_used == 2 and pr.residual > 1e-10
    assert "converge" in caplog.text


def test_cora_mean(cora):
    pr = pagerank(cora)
    assert pr.values.mean() * 1e3 == pytest.approx(0.3693, abs=1e-4)


def _uniform(n):
    v = np.full(n, 1.0 / n)
    return PageRankVector(v, 0.85, 1, 0.0)


def test_uniform_partition_tie_break():
    part = partition_nodes(_uniform(10), K=2, M=30)
    assert part.hubs.tolist() == []
    assert part.tails.tolist() == [0, 1, 2]


def test_star_partition():
    g = star(9)
    pr = pagerank(g)
    assert dense_pagerank(g.adjacency.toarray())[0] > 2 / 10
    part = partition_nodes(pr, 2, 30)
    assert part.hubs.tolist() == [0]
    assert len(part.tails) == 2  # floor(0.3 * 9)
    assert set(part.tails) <= set(range(1, 10))


def test_partition_invariants_random():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g = random_graph(40, 0.08, rng)
        pr = pagerank(g)
        part = partition_nodes(pr, 2, 30)
        v = pr.values
        assert not set(part.hubs) & set(part.tails)
        assert (v[part.hubs] >= 2 * v.mean()).all()
        rest = part.remainder()
        if len(rest) and len(part.tails):
            assert v[rest].min() >= v[part.tails].max()
        assert len(part.tails) == int(np.floor(0.3 * (40 - len(part.hubs))))


def test_partition_monotone_in_k_and_m():
    g = random_graph(60, 0.06, np.random.default_rng(9))
    pr = pagerank(g)
    hubs = [len(partition_nodes(pr, k, 30).hubs) for k in (1.5, 2, 3, 4, 6)]
    assert hubs == sorted(hubs, reverse=True)
    tails = [len(partition_nodes(pr, 2, m).tails) for m in (10, 20, 30, 50, 100)]
    assert tails == sorted(tails)


def test_partition_errors():
    with pytest.raises(PartitionError):
        partition_nodes(_uniform(10), K=1, M=30)  # every node is a hub
    with pytest.raises(PartitionError):
        partition_nodes(_uniform(3), K=2, M=10)  # floor(0.3) == 0 tails
    with pytest.raises(PartitionError):
        partition_nodes(_uniform(3), K=0.5, M=10)


def test_partition_deterministic_and_weighted_policy():
    pr = pagerank(random_graph(50, 0.1, np.random.default_rng(1)))
    a, b = partition_nodes(pr), partition_nodes(pr)
    assert a.tails.tolist() == b.tails.tolist()
    w1 = partition_nodes(pr, policy="weighted", seed=4)
    w2 = partition_nodes(pr, policy="weighted", seed=4)
    assert w1.tails.tolist() == w2.tails.tolist()
    assert len(w1.tails) == len(a.tails)


def test_resample_identity_on_unchanged_graph():
    g = random_graph(30, 0.1, np.random.default_rng(2))
    assert resample_tails(g).tails.tolist() == partition_nodes(pagerank(g)).tails.tolist()


def test_resample_after_adding_tail_neighbors():
    g = star(9)
    part = partition_nodes(pagerank(g))
    adds = []
    for t in part.tails:
        others = [j for j in range(1, 10) if j != t and (min(t, j), max(t, j)) not in adds]
        adds += [(min(t, j), max(t, j)) for j in others[:3]]
    g2 = apply_delta(g, GraphDelta(added_edges=tuple(dict.fromkeys(adds))))
    new = resample_tails(g2)
    assert set(part.tails) - set(new.tails)


def test_hub_drops_after_losing_edges():
    g = star(9)
    # keep the leaves connected in a ring so the graph stays non-trivial
    ring = [(i, i % 9 + 1) for i in range(1, 10)]
    g = apply_delta(g, GraphDelta(added_edges=tuple(ring)))
    assert 0 in partition_nodes(pagerank(g)).hubs
    g2 = apply_delta(g, GraphDelta(removed_edges=tuple((0, i) for i in range(1, 10))))
    pr = pagerank(g2).values
    assert pr[0] < 2 * pr.mean()
    np.testing.assert_allclose(pr, dense_pagerank(g2.adjacency.toarray()), atol=1e-8)
