"""Immutable undirected graph snapshots, plain-text I/O and synthetic generators."""
from __future__ import annotations

import gzip
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

UNLABELED = -1


class GraphError(ValueError):
    """Raised for malformed graph files or invalid edits."""


def canonical_pairs(pairs, num_nodes: int | None = None) -> np.ndarray:
    """Return sorted, deduplicated ``(u, v)`` pairs with ``u < v`` as an (E, 2) int64 array."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    arr = np.stack([lo, hi], axis=1)
    return np.unique(arr, axis=0)


def pair_keys(pairs: np.ndarray, num_nodes: int) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    return lo * num_nodes + hi


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph stored as symmetric CSR.

    ``indptr``/``indices`` hold both directions of every edge with sorted
    neighbor lists.  ``pseudo_flags[i]`` is True for real nodes and False for
    generated ones.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    pseudo_flags: np.ndarray
    num_classes: int

    def __post_init__(self):
        for name in ("indptr", "indices", "features", "labels", "pseudo_flags"):
            getattr(self, name).setflags(write=False)

    # -- construction -----------------------------------------------------
    @classmethod
    def from_edges(cls, num_nodes: int, edges, features, labels=None,
                   pseudo_flags=None, num_classes: int | None = None) -> "Graph":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != num_nodes:
            raise GraphError(f"feature matrix has shape {features.shape}, expected ({num_nodes}, d)")
        pairs = canonical_pairs(edges)
        if len(pairs):
            if pairs.min() < 0 or pairs.max() >= num_nodes:
                raise GraphError(f"edge references node outside [0, {num_nodes})")
            if np.any(pairs[:, 0] == pairs[:, 1]):
                raise GraphError("self-loops are not allowed")
        if labels is None:
            labels = np.full(num_nodes, UNLABELED, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64).copy()
        if labels.shape != (num_nodes,):
            raise GraphError(f"label vector has length {labels.shape}, expected {num_nodes}")
        if pseudo_flags is None:
            pseudo_flags = np.ones(num_nodes, dtype=bool)
        pseudo_flags = np.asarray(pseudo_flags, dtype=bool).copy()
        if pseudo_flags.shape != (num_nodes,):
            raise GraphError("pseudo_flags length must equal num_nodes")
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if num_nodes and labels.max() >= 0 else 0
        if num_nodes and (labels.min() < UNLABELED or labels.max() >= num_classes):
            raise GraphError(f"labels must lie in [-1, {num_classes})")
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=num_nodes), out=indptr[1:])
        return cls(indptr, dst.astype(np.int64), features.copy(), labels, pseudo_flags, int(num_classes))

    # -- basic structure --------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    @cached_property
    def edges(self) -> np.ndarray:
        """Canonical edge array, one row ``(u, v)`` with ``u < v`` per undirected edge."""
        src = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees)
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    @cached_property
    def edge_keys(self) -> np.ndarray:
        return pair_keys(self.edges, self.num_nodes)  # sorted because edges are lexsorted

    def has_edges(self, pairs) -> np.ndarray:
        keys = pair_keys(pairs, self.num_nodes)
        pos = np.searchsorted(self.edge_keys, keys)
        pos = np.minimum(pos, max(len(self.edge_keys) - 1, 0))
        if len(self.edge_keys) == 0:
            return np.zeros(len(keys), dtype=bool)
        return self.edge_keys[pos] == keys

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        k = np.searchsorted(nb, v)
        return bool(k < len(nb) and nb[k] == v)

    # -- matrices used by message passing --------------------------------
    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.num_nodes,) * 2)

    @cached_property
    def gcn_operator(self) -> sp.csr_matrix:
        """Symmetric normalization D^-1/2 (A + I) D^-1/2 with self-loops."""
        a_hat = (self.adjacency + sp.identity(self.num_nodes, format="csr")).tocsr()
        d = np.asarray(a_hat.sum(axis=1)).ravel()
        inv = 1.0 / np.sqrt(d)
        return sp.csr_matrix(sp.diags(inv) @ a_hat @ sp.diags(inv))

    @cached_property
    def mean_operator(self) -> sp.csr_matrix:
        """Row-normalized adjacency; isolated nodes aggregate to zero."""
        deg = self.degrees.astype(np.float64)
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return sp.csr_matrix(sp.diags(inv) @ self.adjacency)

    @cached_property
    def sparse_features(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.features)

    # -- misc -------------------------------------------------------------
    def check_invariants(self) -> None:
        a = self.adjacency
        if (a != a.T).nnz:
            raise GraphError("adjacency is not symmetric")
        if a.diagonal().any():
            raise GraphError("self-loop stored in edge set")
        for i in range(self.num_nodes):
            nb = self.neighbors(i)
            if np.any(np.diff(nb) <= 0):
                raise GraphError(f"neighbor list of node {i} not strictly increasing")
        if len(self.pseudo_flags) != self.num_nodes:
            raise GraphError("pseudo_flags length mismatch")

    def canonical_equal(self, other: "Graph") -> bool:
        return (self.num_nodes == other.num_nodes
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.pseudo_flags, other.pseudo_flags)
                and self.num_classes == other.num_classes)

    def with_labels(self, labels) -> "Graph":
        labels = np.asarray(labels, dtype=np.int64)
        return Graph(self.indptr, self.indices, self.features, labels.copy(),
                     self.pseudo_flags, self.num_classes)

    def with_edges(self, edges) -> "Graph":
        return Graph.from_edges(self.num_nodes, edges, self.features, self.labels,
                                self.pseudo_flags, self.num_classes)

    def real_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.pseudo_flags)


# ---------------------------------------------------------------------------
# deltas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AddedNode:
    features: np.ndarray
    label: int = UNLABELED
    real: bool = False


@dataclass(frozen=True)
class GraphDelta:
    """A batch of edits.  ``removed_nodes`` may only name trailing node ids."""

    removed_edges: tuple = ()
    added_edges: tuple = ()
    added_nodes: tuple = ()
    removed_nodes: tuple = ()

    def inverse(self, base: Graph) -> "GraphDelta":
        n = base.num_nodes
        new_ids = tuple(range(n, n + len(self.added_nodes)))
        restored = tuple(
            AddedNode(base.features[i].copy(), int(base.labels[i]), bool(base.pseudo_flags[i]))
            for i in self.removed_nodes
        )
        return GraphDelta(removed_edges=tuple(self.added_edges),
                          added_edges=tuple(self.removed_edges),
                          added_nodes=restored,
                          removed_nodes=new_ids)

    def compose(self, other: "GraphDelta") -> "GraphDelta":
        """Concatenate two deltas whose edge edits are disjoint."""
        return GraphDelta(self.removed_edges + tuple(other.removed_edges),
                          self.added_edges + tuple(other.added_edges),
                          self.added_nodes + tuple(other.added_nodes),
                          self.removed_nodes + tuple(other.removed_nodes))


def apply_delta(g: Graph, delta: GraphDelta) -> Graph:
    """Return a new graph with ``delta`` applied; ``g`` is left untouched."""
    n = g.num_nodes
    removed = canonical_pairs(delta.removed_edges)
    if len(removed) != len(delta.removed_edges):
        raise GraphError("duplicate pairs in removed_edges")
    if len(removed) and not g.has_edges(removed).all():
        bad = removed[~g.has_edges(removed)][0]
        raise GraphError(f"cannot remove non-existent edge {tuple(bad)}")

    new_feats = [np.asarray(a.features, dtype=np.float64) for a in delta.added_nodes]
    for row in new_feats:
        if row.shape != (g.num_features,):
            raise GraphError(f"added node feature width {row.shape} != ({g.num_features},)")
    n_total = n + len(new_feats)

    added = canonical_pairs(delta.added_edges)
    if len(added) != len(delta.added_edges):
        raise GraphError("duplicate pairs in added_edges")
    if len(added):
        if added.min() < 0 or added.max() >= n_total:
            raise GraphError("added edge references unknown node")
        if np.any(added[:, 0] == added[:, 1]):
            raise GraphError("cannot add a self-loop")
        old = added[added[:, 1] < n]
        if len(old) and g.has_edges(old).any():
            bad = old[g.has_edges(old)][0]
            raise GraphError(f"cannot add existing edge {tuple(bad)}")

    keep = np.ones(g.num_edges, dtype=bool)
    if len(removed):
        keep &= ~np.isin(g.edge_keys, pair_keys(removed, n))
    edges = np.concatenate([g.edges[keep], added]) if len(added) else g.edges[keep]

    feats, labels, flags = g.features, g.labels, g.pseudo_flags
    if new_feats:
        feats = np.vstack([feats, np.stack(new_feats)])
        labels = np.concatenate([labels, [a.label for a in delta.added_nodes]])
        flags = np.concatenate([flags, [a.real for a in delta.added_nodes]])

    if delta.removed_nodes:
        drop = np.asarray(sorted(delta.removed_nodes), dtype=np.int64)
        keep_n = n_total - len(drop)
        if not np.array_equal(drop, np.arange(keep_n, n_total)):
            raise GraphError("only trailing nodes can be removed")
        if len(edges) and np.any(edges.max(axis=1) >= keep_n):
            raise GraphError("removed nodes still have incident edges")
        feats, labels, flags = feats[:keep_n], labels[:keep_n], flags[:keep_n]
        n_total = keep_n

    return Graph.from_edges(n_total, edges, feats, labels, flags, g.num_classes)


def strip_pseudo_nodes(g: Graph) -> Graph:
    """Drop every node with ``pseudo_flags == False`` (they must be trailing)."""
    real = g.pseudo_flags
    k = int(real.sum())
    if not real[:k].all():
        raise GraphError("pseudo nodes are not trailing")
    edges = g.edges[g.edges.max(axis=1) < k] if g.num_edges else g.edges
    return Graph.from_edges(k, edges, g.features[:k], g.labels[:k], g.pseudo_flags[:k], g.num_classes)


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def _open_text(path, mode="rt"):
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def l1_normalize(features: np.ndarray) -> np.ndarray:
    s = np.abs(features).sum(axis=1, keepdims=True)
    return np.divide(features, s, out=np.zeros_like(features), where=s > 0)


def load_graph(edge_file, feature_file, label_file, flag_file=None,
               normalize: bool = True, num_classes: int | None = None) -> Graph:
    """Read the plain-text triple (edge list, dense features, labels).

    Duplicate and reversed edge lines are merged; self-loop lines are
    dropped and counted.  Features are L1 row-normalized unless
    ``normalize`` is False.
    """
    with _open_text(feature_file) as fh:
        rows = [line.split() for line in fh if line.strip()]
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise GraphError(f"non-rectangular feature matrix (row widths {sorted(widths)})")
    features = np.array(rows, dtype=np.float64) if rows else np.zeros((0, 0))
    n = features.shape[0]

    labels = np.loadtxt(label_file, dtype=np.int64, ndmin=1)
    if labels.shape[0] != n:
        raise GraphError(f"label count {labels.shape[0]} != feature row count {n}")

    with _open_text(edge_file) as fh:
        raw = [tuple(map(int, line.split()[:2])) for line in fh if line.strip()]
    pairs = np.array(raw, dtype=np.int64).reshape(-1, 2)
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= n):
        bad = pairs[(pairs < 0).any(axis=1) | (pairs >= n).any(axis=1)][0]
        raise GraphError(f"edge {tuple(bad)} references node outside [0, {n})")
    loops = pairs[:, 0] == pairs[:, 1]
    if loops.any():
        log.warning("dropped %d self-loop lines from %s", int(loops.sum()), edge_file)
        pairs = pairs[~loops]

    flags = None
    if flag_file is not None and os.path.exists(flag_file):
        flags = np.loadtxt(flag_file, dtype=np.int64, ndmin=1).astype(bool)
    if normalize:
        features = l1_normalize(features)
    return Graph.from_edges(n, pairs, features, labels, flags, num_classes)


def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        path = os.path.join(directory, name)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(os.path.join(directory, stem))


def load_graph_dir(directory, normalize: bool = True) -> Graph:
    flag_path = os.path.join(directory, "flags.txt")
    return load_graph(_find(directory, "edges.txt"), _find(directory, "features.txt"),
                      _find(directory, "labels.txt"),
                      flag_path if os.path.exists(flag_path) else None, normalize=normalize)


def save_graph(g: Graph, directory) -> None:
    """Write ``g`` in the format read by :func:`load_graph_dir` (features written at full precision)."""
    os.makedirs(directory, exist_ok=True)
    np.savetxt(os.path.join(directory, "edges.txt"), g.edges, fmt="%d")
    np.savetxt(os.path.join(directory, "features.txt"), g.features, fmt="%.17g")
    np.savetxt(os.path.join(directory, "labels.txt"), g.labels, fmt="%d")
    flag_path = os.path.join(directory, "flags.txt")
    if not g.pseudo_flags.all():
        np.savetxt(flag_path, g.pseudo_flags.astype(int), fmt="%d")
    elif os.path.exists(flag_path):
        os.remove(flag_path)


# ---------------------------------------------------------------------------
# synthetic graphs
# ---------------------------------------------------------------------------

def generate_powerlaw(n: int, m: int, d_x: int, num_classes: int, seed: int,
                      homophily: float = 5.0, words_per_node: int = 8,
                      topic_prob: float = 0.7) -> Graph:
    """Preferential-attachment graph with planted communities.

    Starts from a clique on ``m + 1`` nodes; every later node attaches to
    ``m`` distinct existing nodes chosen with probability proportional to
    degree, boosted by ``homophily`` for nodes of the same class.  Features
    are sparse binary bag-of-words vectors biased toward a per-class
    vocabulary block.
    """
    if m < 1 or n <= m + 1:
        # the seed clique uses m + 1 nodes; at least one node must attach to it
        raise GraphError(f"need n > m + 1 and m >= 1, got n={n}, m={m}")
    if d_x < 1 or num_classes < 1:
        raise GraphError("d_x and num_classes must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.integers(num_classes, size=n)
    deg = np.zeros(n, dtype=np.float64)
    edges = []
    for u in range(m + 1):
        for v in range(u + 1, m + 1):
            edges.append((u, v))
    deg[: m + 1] = m
    for new in range(m + 1, n):
        w = deg[:new] * np.where(labels[:new] == labels[new], homophily, 1.0)
        targets = rng.choice(new, size=m, replace=False, p=w / w.sum())
        for t in np.sort(targets):
            edges.append((int(t), new))
        deg[targets] += 1
        deg[new] = m

    block = max(d_x // num_classes, 1)
    feats = np.zeros((n, d_x))
    for i in range(n):
        k = min(words_per_node, d_x)
        on_topic = rng.random(k) < topic_prob
        lo = (labels[i] * block) % d_x
        topic = lo + rng.integers(block, size=k)
        other = rng.integers(d_x, size=k)
        feats[i, np.where(on_topic, topic % d_x, other)] = 1.0
    return Graph.from_edges(n, edges, feats, labels, None, num_classes)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass
class DegreeStats:
    min: int
    max: int
    mean: float
    histogram: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "mean": self.mean,
                "histogram": {str(k): v for k, v in self.histogram.items()}}


def degree_stats(g: Graph) -> DegreeStats:
    deg = g.degrees
    if g.num_nodes == 0:
        return DegreeStats(0, 0, 0.0, {})
    values, counts = np.unique(deg, return_counts=True)
    return DegreeStats(int(deg.min()), int(deg.max()), float(deg.mean()),
                       {int(v): int(c) for v, c in zip(values, counts)})


def small_graph(num_nodes: int, edges: Iterable[Sequence[int]], features=None,
                labels=None, num_classes: int | None = None) -> Graph:
    """Convenience constructor for hand-written fixtures (identity features by default)."""
    if features is None:
        features = np.eye(num_nodes)
    return Graph.from_edges(num_nodes, list(edges), features, labels, None, num_classes)
