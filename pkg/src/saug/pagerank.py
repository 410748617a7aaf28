"""PageRank on undirected graphs and the hub/tail partition built on it."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .graph import Graph

log = logging.getLogger(__name__)

DAMPING = 0.85
TOL = 1e-10
MAX_ITER = 200
HUB_FACTOR = 2.0
TAIL_PERCENT = 30.0


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class PageRankVector:
    values: np.ndarray
    damping: float
    iterations_used: int
    residual: float

    @property
    def converged(self) -> bool:
        return self.residual < TOL

    def to_dict(self) -> dict:
        return {"damping": self.damping, "iterations": self.iterations_used,
                "residual": self.residual, "values": self.values.tolist()}


def pagerank(g: Graph, damping: float = DAMPING, tol: float = TOL,
             max_iter: int = MAX_ITER) -> PageRankVector:
    """Power iteration for PageRank with every undirected edge as two arcs.

    Dangling (isolated) nodes spread their mass uniformly, so the result
    sums to one.  Hitting ``max_iter`` only logs a warning; the final L1
    change is kept in ``residual``.
    """
    n = g.num_nodes
    if n == 0:
        raise ValueError("pagerank of an empty graph")
    if not 0.0 < damping < 1.0:
        raise ValueError(f"damping must lie in (0, 1), got {damping}")
    deg = g.degrees.astype(np.float64)
    dangling = deg == 0
    inv_deg = np.divide(1.0, deg, out=np.zeros(n), where=~dangling)
    a = g.adjacency
    pr = np.full(n, 1.0 / n)
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        spread = a @ (pr * inv_deg)
        nxt = damping * (spread + pr[dangling].sum() / n) + (1.0 - damping) / n
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - pr).sum())
        pr = nxt
        if residual < tol:
            break
    else:
        log.warning("pagerank did not converge in %d iterations (residual %.3g)", max_iter, residual)
    return PageRankVector(pr, damping, it, residual)


@dataclass(frozen=True)
class NodePartition:
    hubs: np.ndarray
    tails: np.ndarray
    hub_factor: float
    tail_fraction: float
    pagerank: PageRankVector

    def remainder(self) -> np.ndarray:
        n = len(self.pagerank.values)
        mask = np.ones(n, dtype=bool)
        mask[self.hubs] = False
        mask[self.tails] = False
        return np.flatnonzero(mask)

    def to_dict(self) -> dict:
        return {"hubs": self.hubs.tolist(), "tails": self.tails.tolist(),
                "hub_factor": self.hub_factor, "tail_fraction": self.tail_fraction,
                "pagerank": self.pagerank.to_dict()}


def tail_count(percent: float, available: int) -> int:
    return int(Fraction(percent).limit_denominator(10**6) * available // 100)


def partition_nodes(pr: PageRankVector, K: float = HUB_FACTOR, M: float = TAIL_PERCENT,
                    policy: str = "lowest", seed: int | None = None) -> NodePartition:
    """Split nodes into hubs (PR >= K * mean PR) and the M% lowest-PR non-hubs.

    ``policy="lowest"`` picks tails deterministically (ties by node id);
    ``policy="weighted"`` draws them without replacement with probability
    proportional to 1/PR using ``seed``.
    """
    if K < 1:
        raise PartitionError(f"K must be >= 1, got {K}")
    if not 0 < M <= 100:
        raise PartitionError(f"M must lie in (0, 100], got {M}")
    values = pr.values
    n = len(values)
    is_hub = values >= K * values.mean()
    hubs = np.flatnonzero(is_hub)
    if len(hubs) == n:
        raise PartitionError(f"K={K} marks every node as a hub")
    rest = np.flatnonzero(~is_hub)
    k = tail_count(M, len(rest))
    if k == 0:
        raise PartitionError(f"M={M}% of {len(rest)} non-hub nodes selects no tails")
    if policy == "lowest":
        order = np.lexsort((rest, values[rest]))
        tails = np.sort(rest[order[:k]])
    elif policy == "weighted":
        rng = np.random.default_rng(seed)
        w = 1.0 / values[rest]
        tails = np.sort(rng.choice(rest, size=k, replace=False, p=w / w.sum()))
    else:
        raise PartitionError(f"unknown tail policy {policy!r}")
    return NodePartition(hubs, tails, float(K), float(M) / 100.0, pr)


def resample_tails(g_prime: Graph, K: float = HUB_FACTOR, M: float = TAIL_PERCENT,
                   damping: float = DAMPING, **kwargs) -> NodePartition:
    return partition_nodes(pagerank(g_prime, damping), K, M, **kwargs)
