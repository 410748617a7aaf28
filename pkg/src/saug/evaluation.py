"""Experiment splits, label masking and metric reports."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .engine.pretrain import sample_negative_edges
from .graph import Graph, pair_keys
from .metrics import auc_score, f1_scores  # noqa: F401  (re-exported)
from .pagerank import NodePartition

log = logging.getLogger(__name__)

SPLIT_KINDS = ("tail_nc", "overall_nc", "link_pred")


@dataclass
class NodeSplit:
    """A node classification split.

    ``train`` is the pool of training nodes, ``labeled`` the labeled subset
    used when labels are not resampled.  With ``resample_labels`` a fresh
    ``per_class`` draw from the pool is used every epoch (see ``sampler``).
    """

    kind: str
    seed: int
    train: np.ndarray
    labeled: np.ndarray
    val: np.ndarray
    test: np.ndarray
    per_class: int
    resample_labels: bool = False
    pool_by_class: list = field(default_factory=list, repr=False)

    def sampler(self) -> Callable | None:
        if not self.resample_labels:
            return None
        pools, k = self.pool_by_class, self.per_class

        def draw(rng):
            return np.sort(np.concatenate([rng.permutation(p)[:k] for p in pools]))
        return draw

    @property
    def visible(self) -> np.ndarray:
        """Nodes whose labels the method may read at some point of training."""
        return self.train if self.resample_labels else self.labeled

    @property
    def restricted(self) -> np.ndarray:
        return np.union1d(self.val, self.test)

    def check(self, num_nodes: int) -> None:
        sets = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise AssertionError("train/val/test overlap")
        if not set(self.labeled.tolist()) <= sets[0]:
            raise AssertionError("labeled nodes outside the training pool")
        if len(self.restricted) and np.max(self.restricted) >= num_nodes:
            raise AssertionError("split references unknown nodes")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "per_class": self.per_class,
                "resample_labels": self.resample_labels,
                "train": self.train.tolist(), "labeled": self.labeled.tolist(),
                "val": self.val.tolist(), "test": self.test.tolist()}


def _per_class(nodes, labels, num_classes, k, rng, kind):
    pools, picked = [], []
    for c in range(num_classes):
        pool = nodes[labels[nodes] == c]
        if len(pool) < k:
            log.warning("%s split: class %d has only %d training nodes (wanted %d)", kind, c, len(pool), k)
        pools.append(pool)
        picked.append(rng.permutation(pool)[:k])
    return pools, np.sort(np.concatenate(picked)).astype(np.int64)


def make_tail_split(g: Graph, part: NodePartition, seed: int, per_class: int = 10,
                    resample_labels: bool = True) -> NodeSplit:
    """Tails are shuffled into validation and test at 2:1; all other nodes train."""
    tails = np.asarray(part.tails, dtype=np.int64)
    if len(tails) == 0:
        raise ValueError("tail split needs at least one tail")
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(tails)
    n_val = (2 * len(tails)) // 3
    val, test = np.sort(shuffled[:n_val]), np.sort(shuffled[n_val:])
    train = np.setdiff1d(np.arange(g.num_nodes), tails)
    train = train[g.labels[train] >= 0]
    pools, labeled = _per_class(train, g.labels, g.num_classes, per_class, rng, "tail")
    split = NodeSplit("tail_nc", seed, train, labeled, val, test, per_class, resample_labels, pools)
    split.check(g.num_nodes)
    return split


def make_overall_split(g: Graph, seed: int, per_class: int = 20, num_val: int = 500,
                       num_test: int = 1000) -> NodeSplit:
    """Semi-supervised split: ``per_class`` labels per class, then val and test at random."""
    rng = np.random.default_rng(seed)
    nodes = np.flatnonzero(g.labels >= 0)
    pools, labeled = _per_class(nodes, g.labels, g.num_classes, per_class, rng, "overall")
    rest = rng.permutation(np.setdiff1d(nodes, labeled))
    if len(rest) < num_val + num_test:
        raise ValueError(f"only {len(rest)} nodes left for {num_val} val + {num_test} test")
    val, test = np.sort(rest[:num_val]), np.sort(rest[num_val:num_val + num_test])
    split = NodeSplit("overall_nc", seed, labeled, labeled, val, test, per_class, False,
                      [labeled[g.labels[labeled] == c] for c in range(g.num_classes)])
    split.check(g.num_nodes)
    return split


@dataclass
class LinkSplit:
    seed: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    all_keys: np.ndarray  # sorted keys of every positive edge

    def pairs(self, which: str):
        pos, neg = (self.val, self.val_neg) if which == "val" else (self.test, self.test_neg)
        return np.vstack([pos, neg]), np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])

    def to_dict(self) -> dict:
        return {"kind": "link_pred", "seed": self.seed,
                **{k: getattr(self, k).tolist() for k in ("train", "val", "test", "val_neg", "test_neg")}}


def make_link_split(g: Graph, seed: int, ratios=(0.7, 0.1, 0.2)) -> LinkSplit:
    """Shuffle edges 7:1:2; fixed seeded negatives for val and test, never touching any edge."""
    if g.num_edges < 10:
        raise ValueError("link split needs at least 10 edges")
    rng = np.random.default_rng(seed)
    edges = g.edges[rng.permutation(g.num_edges)]
    n_train = int(round(ratios[0] * len(edges)))
    n_val = int(round(ratios[1] * len(edges)))
    train, val, test = edges[:n_train], edges[n_train:n_train + n_val], edges[n_train + n_val:]
    keys = g.edge_keys
    neg = sample_negative_edges(g.num_nodes, keys, len(val) + len(test), rng)
    # distinct negatives across val and test
    nk = pair_keys(neg, g.num_nodes)
    _, first = np.unique(nk, return_index=True)
    while len(first) < len(neg):
        extra = sample_negative_edges(g.num_nodes, keys, len(neg) - len(first), rng)
        neg = np.vstack([neg[np.sort(first)], extra])
        _, first = np.unique(pair_keys(neg, g.num_nodes), return_index=True)
    return LinkSplit(seed, train, val, test,
                     neg[:len(val)], neg[len(val):], keys)


@dataclass
class MetricsReport:
    macro_f1: float | None = None
    micro_f1: float | None = None
    auc: float | None = None
    per_class_f1: list = field(default_factory=list)
    seed: int = 0
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def classification_report(pred, truth, num_classes: int, seed: int = 0, seconds: float = 0.0) -> MetricsReport:
    macro, micro, per = f1_scores(pred, truth, num_classes)
    return MetricsReport(macro, micro, None, per.tolist(), seed, seconds)


def aggregate(reports) -> dict:
    """Mean and sample standard deviation (0 for a single run) of each metric."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    out = {"n": len(reports)}
    for key in ("macro_f1", "micro_f1", "auc"):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        if vals:
            out[key] = float(np.mean(vals))
            out[key + "_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return out


def run_experiment(g: Graph, cfg, seeds) -> dict:
    """Run the configured pipeline once per seed and aggregate the test metrics.

    Returns ``{"runs": [MetricsReport...], "summary": {...}, "failures": {seed: msg}}``;
    a failing seed is recorded and the others still run.
    """
    from .pipeline import run_seed

    seeds = list(seeds)
    if not seeds:
        raise ValueError("run_experiment needs at least one seed")
    runs, failures = [], {}
    for s in seeds:
        t0 = time.perf_counter()
        try:
            rep = run_seed(g, cfg, s).metrics
        except Exception as exc:  # keep the other seeds
            log.exception("seed %s failed", s)
            failures[s] = f"{type(exc).__name__}: {exc}"
            continue
        rep.seconds = time.perf_counter() - t0
        runs.append(rep)
    summary = aggregate(runs) if runs else {"n": 0}
    return {"runs": runs, "summary": summary, "failures": failures}
