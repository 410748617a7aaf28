"""Hub denoising and tail neighbor discovery from pretrained embeddings.

Similarity between nodes i and j is

    <softmax(z_label_i), softmax(z_label_j)> * sigmoid(<z_link_i, z_link_j>)

so both factors lie in (0, 1) and the thresholds L and P are meaningful.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .engine.autograd import sigmoid_np, softmax_np
from .engine.pretrain import EmbeddingPair
from .graph import Graph, GraphDelta, apply_delta, canonical_pairs, pair_keys
from .pagerank import NodePartition

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimilarityScores:
    owner: int
    candidates: np.ndarray
    scores: np.ndarray


@dataclass
class AugmentConfig:
    L: float = 0.1
    strategy: str = "threshold"  # or "topq"
    P: float = 0.8
    Q: int = 8
    chunk_rows: int = 256

    def __post_init__(self):
        if not 0 < self.L < 1:
            raise ValueError(f"L must lie in (0, 1), got {self.L}")
        if self.strategy not in ("threshold", "topq"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "threshold" and not 0 < self.P < 1:
            raise ValueError(f"P must lie in (0, 1), got {self.P}")
        if self.strategy == "topq" and self.Q < 1:
            raise ValueError(f"Q must be >= 1, got {self.Q}")
        if self.chunk_rows < 1:
            raise ValueError("chunk_rows must be >= 1")


@dataclass(frozen=True)
class EdgeEdit:
    op: str  # "add" | "remove"
    u: int
    v: int
    score: float

    def to_dict(self) -> dict:
        return {"op": self.op, "u": self.u, "v": self.v, "score": self.score}


@dataclass
class EdgeEditPlan:
    edits: list = field(default_factory=list)

    @property
    def removals(self) -> list:
        return [e for e in self.edits if e.op == "remove"]

    @property
    def additions(self) -> list:
        return [e for e in self.edits if e.op == "add"]

    def __add__(self, other: "EdgeEditPlan") -> "EdgeEditPlan":
        return EdgeEditPlan(self.edits + other.edits)

    def __len__(self):
        return len(self.edits)

    def to_delta(self) -> GraphDelta:
        return GraphDelta(removed_edges=tuple((e.u, e.v) for e in self.removals),
                          added_edges=tuple((e.u, e.v) for e in self.additions))

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict()) + "\n" for e in self.edits)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "EdgeEditPlan":
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        return cls([EdgeEdit(r["op"], int(r["u"]), int(r["v"]), float(r["score"])) for r in rows])


class _Factors:
    """Cached per-node factors so every score is computed the same way."""

    def __init__(self, emb: EmbeddingPair):
        self.probs = softmax_np(emb.z_label)
        self.z_link = emb.z_link

    def pairs(self, rows, cols) -> np.ndarray:
        label = np.einsum("ij,ij->i", self.probs[rows], self.probs[cols])
        link = np.einsum("ij,ij->i", self.z_link[rows], self.z_link[cols])
        return label * sigmoid_np(link)

    def block(self, rows) -> np.ndarray:
        label = self.probs[rows] @ self.probs.T
        link = self.z_link[rows] @ self.z_link.T
        return label * sigmoid_np(link)


def similarity_matrix(emb: EmbeddingPair, rows=None) -> np.ndarray:
    """Dense score block for ``rows`` against all nodes."""
    f = _Factors(emb)
    rows = np.arange(emb.num_nodes) if rows is None else np.asarray(rows, dtype=np.int64)
    return f.block(rows)


def hub_similarity(emb: EmbeddingPair, g: Graph, hub: int) -> SimilarityScores:
    nb = g.neighbors(hub)
    if len(nb) == 0:
        raise ValueError(f"hub {hub} has no neighbors")
    scores = _Factors(emb).pairs(np.full(len(nb), hub), nb)
    return SimilarityScores(int(hub), nb.copy(), scores)


def _restricted_mask(n: int, restricted) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    if restricted is not None:
        mask[np.asarray(restricted, dtype=np.int64)] = True
    return mask


def denoise_hubs(emb: EmbeddingPair, g: Graph, part: NodePartition, L: float = 0.1,
                 restricted=None) -> EdgeEditPlan:
    """Schedule removal of hub edges scoring below ``L``.

    Each hub keeps its best-scoring edge, and an edge is never removed if
    that would leave either endpoint without neighbors.  Edges with both
    endpoints in ``restricted`` (evaluation nodes) are left alone.
    Candidates are processed from lowest score upward, ties by node ids.
    """
    if not 0 < L < 1:
        raise ValueError(f"L must lie in (0, 1), got {L}")
    f = _Factors(emb)
    blocked = _restricted_mask(g.num_nodes, restricted)
    keep_keys = set()
    flagged = {}
    for hub in part.hubs:
        nb = g.neighbors(hub)
        if len(nb) == 0:
            continue
        s = f.pairs(np.full(len(nb), hub), nb)
        best = np.lexsort((nb, -s))[0]
        keep_keys.add(int(pair_keys([[hub, nb[best]]], g.num_nodes)[0]))
        for j in np.flatnonzero(s < L):
            u, v = sorted((int(hub), int(nb[j])))
            if blocked[u] and blocked[v]:
                continue
            flagged[(u, v)] = float(s[j])
    degree = g.degrees.astype(np.int64).copy()
    edits = []
    for (u, v), score in sorted(flagged.items(), key=lambda kv: (kv[1], kv[0])):
        if u * g.num_nodes + v in keep_keys:
            continue
        if degree[u] <= 1 or degree[v] <= 1:
            continue
        degree[u] -= 1
        degree[v] -= 1
        edits.append(EdgeEdit("remove", u, v, score))
    return EdgeEditPlan(edits)


def tail_similarity_chunked(emb: EmbeddingPair, g: Graph, part: NodePartition,
                            chunk_rows: int = 256, restricted=None) -> Iterator[SimilarityScores]:
    """Yield the candidate scores of each tail, computed ``chunk_rows`` tails at a time.

    Candidates exclude the tail itself, its current neighbors and, when the
    tail is in ``restricted``, every other restricted node.
    """
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")
    f = _Factors(emb)
    blocked = _restricted_mask(g.num_nodes, restricted)
    tails = np.asarray(part.tails, dtype=np.int64)
    all_nodes = np.arange(g.num_nodes)
    for start in range(0, len(tails), chunk_rows):
        rows = tails[start:start + chunk_rows]
        block = f.block(rows)
        for r, tail in enumerate(rows):
            ok = np.ones(g.num_nodes, dtype=bool)
            ok[tail] = False
            ok[g.neighbors(tail)] = False
            if blocked[tail]:
                ok &= ~blocked
            yield SimilarityScores(int(tail), all_nodes[ok], block[r, ok])


def discover_tails(scores, cfg: AugmentConfig) -> EdgeEditPlan:
    """Turn streamed tail scores into edge additions (threshold or top-Q)."""
    seen = set()
    edits = []
    for item in scores:
        cand, s = item.candidates, item.scores
        if cfg.strategy == "threshold":
            pick = np.flatnonzero(s >= cfg.P)
            pick = pick[np.lexsort((cand[pick], -s[pick]))]
        else:
            order = np.lexsort((cand, -s))
            pick = order[:min(cfg.Q, len(cand))]
        for j in pick:
            u, v = sorted((item.owner, int(cand[j])))
            if (u, v) in seen:
                continue
            seen.add((u, v))
            edits.append(EdgeEdit("add", u, v, float(s[j])))
    return EdgeEditPlan(edits)


def augment(g: Graph, emb: EmbeddingPair, part: NodePartition, cfg: AugmentConfig,
            restricted=None, denoise: bool = True, discover: bool = True):
    """Apply hub denoising then tail discovery; returns ``(g_prime, plan)``."""
    if emb.num_nodes != g.num_nodes:
        raise ValueError("embeddings were not computed on this graph")
    plan = EdgeEditPlan()
    if denoise and len(part.hubs):
        plan = plan + denoise_hubs(emb, g, part, cfg.L, restricted)
    if discover and len(part.tails):
        stream = tail_similarity_chunked(emb, g, part, cfg.chunk_rows, restricted)
        plan = plan + discover_tails(stream, cfg)
    if not plan.edits:
        return g, plan
    return apply_delta(g, plan.to_delta()), plan


def random_drop_baseline(g: Graph, rate: float, seed: int) -> Graph:
    """Remove ``floor(rate * |E|)`` uniformly chosen edges."""
    if not 0 <= rate < 1:
        raise ValueError(f"rate must lie in [0, 1), got {rate}")
    k = int(np.floor(rate * g.num_edges))
    if k == 0:
        return g
    rng = np.random.default_rng(seed)
    drop = rng.choice(g.num_edges, size=k, replace=False)
    keep = np.ones(g.num_edges, dtype=bool)
    keep[drop] = False
    return g.with_edges(g.edges[keep])


def random_edit_baseline(g: Graph, plan: EdgeEditPlan, seed: int) -> Graph:
    """Ablation: drop and add as many edges as ``plan`` does, at random nodes."""
    rng = np.random.default_rng(seed)
    n_remove, n_add = len(plan.removals), len(plan.additions)
    edges = g.edges
    if n_remove:
        keep = np.ones(len(edges), dtype=bool)
        keep[rng.choice(len(edges), size=min(n_remove, len(edges)), replace=False)] = False
        edges = edges[keep]
    if n_add:
        keys = set(pair_keys(g.edges, g.num_nodes).tolist())
        new = []
        while len(new) < n_add:
            u, v = rng.integers(g.num_nodes, size=2)
            if u == v:
                continue
            key = int(min(u, v) * g.num_nodes + max(u, v))
            if key in keys:
                continue
            keys.add(key)
            new.append((min(u, v), max(u, v)))
        edges = np.vstack([edges, np.array(new, dtype=np.int64)])
    return g.with_edges(canonical_pairs(edges))
