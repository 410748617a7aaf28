import gzip

import numpy as np
import pytest

from saug.graph import (AddedNode, Graph, GraphDelta, GraphError, apply_delta, degree_stats,
                        generate_powerlaw, load_graph, save_graph, load_graph_dir, small_graph,
                        strip_pseudo_nodes)
from conftest import star


def write_graph_files(tmp_path, edges, feats, labels):
    (tmp_path / "edges.txt").write_text("".join(f"{u} {v}\n" for u, v in edges))
    (tmp_path / "features.txt").write_text("".join(" ".join(str(x) for x in row) + "\n" for row in feats))
    (tmp_path / "labels.txt").write_text("".join(f"{y}\n" for y in labels))
    return tmp_path / "edges.txt", tmp_path / "features.txt", tmp_path / "labels.txt"


def test_load_merges_duplicate_and_reversed_edges(tmp_path):
    files = write_graph_files(tmp_path, [(0, 1), (1, 0), (2, 3)], np.eye(4, dtype=int), [0, 1, 0, 1])
    g = load_graph(*files)
    assert g.num_edges == 2
    assert g.degrees.tolist() == [1, 1, 1, 1]
    assert g.pseudo_flags.all()
    g.check_invariants()


def test_load_rejects_out_of_range_node(tmp_path):
    files = write_graph_files(tmp_path, [(0, 9)], np.eye(4, dtype=int), [0, 0, 0, 0])
    with pytest.raises(GraphError, match="outside"):
        load_graph(*files)


def test_load_rejects_ragged_features(tmp_path):
    e, f, y = write_graph_files(tmp_path, [(0, 1)], np.eye(2, dtype=int), [0, 1])
    f.write_text("1 0\n1\n")
    with pytest.raises(GraphError, match="non-rectangular"):
        load_graph(e, f, y)


def test_load_rejects_label_count_mismatch(tmp_path):
    files = write_graph_files(tmp_path, [(0, 1)], np.eye(3, dtype=int), [0, 1])
    with pytest.raises(GraphError):
        load_graph(*files)


def test_load_drops_self_loops_with_warning(tmp_path, caplog):
    files = write_graph_files(tmp_path, [(0, 1), (2, 2)], np.eye(3, dtype=int), [0, 1, 0])
    with caplog.at_level("WARNING"):
        g = load_graph(*files)
    assert g.num_edges == 1
    assert "self-loop" in caplog.text


def test_load_l1_normalizes_by_default(tmp_path):
    files = write_graph_files(tmp_path, [(0, 1)], [[1, 1, 2], [0, 0, 0]], [0, 1])
    g = load_graph(*files)
    np.testing.assert_allclose(g.features[0], [0.25, 0.25, 0.5])
    assert not g.features[1].any()  # zero rows stay zero
    raw = load_graph(*files, normalize=False)
    np.testing.assert_array_equal(raw.features[0], [1, 1, 2])


def test_gzip_features(tmp_path):
    e, f, y = write_graph_files(tmp_path, [(0, 1)], np.eye(2, dtype=int), [0, 1])
    with gzip.open(tmp_path / "features.txt.gz", "wt") as fh:
        fh.write(f.read_text())
    f.unlink()
    g = load_graph_dir(tmp_path)
    assert g.num_features == 2


def test_save_load_roundtrip(tmp_path):
    g = generate_powerlaw(40, 2, 6, 3, seed=1)
    save_graph(g, tmp_path)
    back = load_graph_dir(tmp_path, normalize=False)
    assert back.canonical_equal(g)


def test_save_load_roundtrip_with_pseudo_nodes(tmp_path):
    g = small_graph(3, [(0, 1), (1, 2)], features=np.array([[0.1, 0.2], [1 / 3, 0], [0, 7.0]]),
                    labels=[0, -1, 1])
    g2 = apply_delta(g, GraphDelta(added_edges=((2, 3),), added_nodes=(AddedNode(np.array([0.5, 1e-9]), 1),)))
    save_graph(g2, tmp_path)
    back = load_graph_dir(tmp_path, normalize=False)
    assert back.canonical_equal(g2)
    assert back.pseudo_flags.tolist() == [True, True, True, False]


def test_graph_invariants_symmetric_sorted():
    g = small_graph(5, [(3, 1), (1, 0), (4, 1), (0, 3)])
    g.check_invariants()
    assert g.neighbors(1).tolist() == [0, 3, 4]
    a = g.adjacency.toarray()
    assert (a == a.T).all() and not np.diag(a).any()


def test_graph_rejects_bad_labels():
    with pytest.raises(GraphError):
        small_graph(2, [(0, 1)], labels=[0, 3], num_classes=2)
    with pytest.raises(GraphError):
        small_graph(2, [(0, 1)], labels=[0, -2])


def test_graph_rejects_self_loop():
    with pytest.raises(GraphError):
        small_graph(2, [(1, 1)])


def test_graph_arrays_are_read_only():
    g = small_graph(2, [(0, 1)])
    with pytest.raises(ValueError):
        g.features[0, 0] = 5


def test_powerlaw_edge_count_and_skew():
    g = generate_powerlaw(100, 2, 16, 4, seed=7)
    assert g.num_nodes == 100
    assert g.num_edges == 2 * (100 - 3) + 3
    deg = g.degrees
    assert deg.max() >= 3 * np.median(deg)
    g.check_invariants()


def test_powerlaw_rejects_small_n():
    for n in (3, 4, 5):
        with pytest.raises(GraphError):
            generate_powerlaw(n, 4, 8, 2, seed=0)
    assert generate_powerlaw(6, 4, 8, 2, seed=0).num_edges == 4 + 10


def test_powerlaw_deterministic():
    a = generate_powerlaw(60, 3, 8, 3, seed=11)
    b = generate_powerlaw(60, 3, 8, 3, seed=11)
    assert a.edges.tobytes() == b.edges.tobytes()
    assert a.features.tobytes() == b.features.tobytes()
    c = generate_powerlaw(60, 3, 8, 3, seed=12)
    assert c.edges.tobytes() != a.edges.tobytes()


def test_remove_edge_from_triangle(triangle):
    g = apply_delta(triangle, GraphDelta(removed_edges=((0, 1),)))
    assert g.edges.tolist() == [[0, 2], [1, 2]]
    assert triangle.num_edges == 3  # base untouched


def test_add_pseudo_node():
    g = small_graph(4, [(0, 1), (1, 2), (2, 3)], labels=[0, 1, 0, 1])
    d3 = g.degrees[3]
    g2 = apply_delta(g, GraphDelta(added_edges=((3, 4),), added_nodes=(AddedNode(np.zeros(4), 0, real=False),)))
    assert g2.num_nodes == 5
    assert g2.degrees[3] == d3 + 1 and g2.degrees[4] == 1
    assert g2.pseudo_flags.tolist() == [True] * 4 + [False]


def test_delta_inverse_restores_base():
    g = generate_powerlaw(30, 2, 5, 2, seed=3)
    delta = GraphDelta(removed_edges=tuple(map(tuple, g.edges[:3])),
                       added_edges=((0, 29), (5, 30)) if not g.has_edge(0, 29) else ((5, 30),),
                       added_nodes=(AddedNode(np.ones(5), 1),))
    g2 = apply_delta(g, delta)
    back = apply_delta(g2, delta.inverse(g))
    assert back.canonical_equal(g)


@pytest.mark.parametrize("delta, msg", [
    (GraphDelta(removed_edges=((0, 2),)), "non-existent"),
    (GraphDelta(added_edges=((0, 1),)), "existing"),
    (GraphDelta(added_edges=((1, 1),)), "self-loop"),
    (GraphDelta(added_nodes=(AddedNode(np.zeros(7)),)), "width"),
])
def test_apply_delta_errors(delta, msg):
    g = small_graph(3, [(0, 1), (1, 2)])
    with pytest.raises(GraphError, match=msg):
        apply_delta(g, delta)


def test_delta_composition_associative():
    g = generate_powerlaw(25, 2, 4, 2, seed=5)
    e = g.edges
    d1 = GraphDelta(removed_edges=(tuple(e[0]),))
    d2 = GraphDelta(removed_edges=(tuple(e[1]),), added_edges=((0, 25),), added_nodes=(AddedNode(np.zeros(4)),))
    one = apply_delta(apply_delta(g, d1), d2)
    two = apply_delta(g, d1.compose(d2))
    assert one.canonical_equal(two)


def test_strip_pseudo_nodes_recovers_graph():
    g = generate_powerlaw(20, 2, 3, 2, seed=0)
    nodes = tuple(AddedNode(np.zeros(3), 0) for _ in range(2))
    g2 = apply_delta(g, GraphDelta(added_edges=((4, 20), (7, 21)), added_nodes=nodes))
    assert strip_pseudo_nodes(g2).canonical_equal(g)


def test_degree_stats_cycle_and_star():
    cycle = small_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    s = degree_stats(cycle)
    assert (s.min, s.max, s.mean) == (2, 2, 2.0)
    s = degree_stats(star(5))
    assert (s.min, s.max) == (1, 5)
    assert s.mean == pytest.approx(10 / 6)
    assert sum(s.histogram) == 6


def test_cora_statistics(cora):
    assert (cora.num_nodes, cora.num_edges, cora.num_features, cora.num_classes) == (2708, 5278, 1433, 7)
    assert degree_stats(cora).mean == pytest.approx(2 * 5278 / 2708)
    assert cora.pseudo_flags.all()
