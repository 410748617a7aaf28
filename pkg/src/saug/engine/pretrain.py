"""Training recipes for the link predictor and the label classifier."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..graph import Graph, pair_keys
from . import autograd as ag
from ..metrics import auc_score
from .nn import GnnModel, TrainResult, classifier_loss, link_predictor_loss, train


@dataclass
class EncoderConfig:
    hidden: int = 32
    layers: int = 3
    out_dim: int | None = None  # None -> number of classes
    backbone: str = "gcn"
    epochs: int = 200
    lr: float = 0.01
    weight_decay: float = 5e-4
    reg: float = 1e-4  # lambda for the link predictor, mu for the classifier
    dropout: float = 0.5
    input_dropout: float = 0.0
    patience: int | None = 30
    select: str = "loss"  # early-stopping signal: validation "loss" or "metric" (accuracy / AUC)

    def dims(self, in_dim: int, out_dim: int) -> list:
        if self.layers < 1:
            raise ValueError("an encoder needs at least one layer")
        return [in_dim] + [self.hidden] * (self.layers - 1) + [out_dim]

    def to_dict(self) -> dict:
        return asdict(self)


def lp_defaults(**kw) -> EncoderConfig:
    base = dict(hidden=32, layers=2, out_dim=16, epochs=500, patience=150, select="metric")
    base.update(kw)
    return EncoderConfig(**base)


def nc_defaults(**kw) -> EncoderConfig:
    base = dict(hidden=32, layers=3, out_dim=None, input_dropout=0.5)
    base.update(kw)
    return EncoderConfig(**base)


@dataclass(frozen=True)
class EmbeddingPair:
    z_link: np.ndarray
    z_label: np.ndarray

    def __post_init__(self):
        if self.z_link.shape[0] != self.z_label.shape[0]:
            raise ValueError("z_link and z_label row counts differ")

    @property
    def num_nodes(self) -> int:
        return self.z_link.shape[0]


def sample_negative_edges(num_nodes: int, forbidden_keys: np.ndarray, count: int,
                          rng: np.random.Generator, key_base: int | None = None) -> np.ndarray:
    """Uniform node pairs ``u != v`` below ``num_nodes`` whose canonical key is not in ``forbidden_keys``.

    ``forbidden_keys`` are sorted keys ``u * key_base + v``; ``key_base``
    defaults to ``num_nodes`` and is larger when only a prefix of a bigger
    graph's nodes may be drawn.
    """
    if num_nodes < 2:
        raise ValueError("negative sampling needs at least two nodes")
    base = num_nodes if key_base is None else int(key_base)
    inside = forbidden_keys if base == num_nodes else forbidden_keys[forbidden_keys % base < num_nodes]
    capacity = num_nodes * (num_nodes - 1) // 2 - len(inside)
    if capacity < 1:
        raise ValueError("graph is complete; no non-edges to sample")
    out = np.zeros((0, 2), dtype=np.int64)
    while len(out) < count:
        need = count - len(out)
        cand = rng.integers(num_nodes, size=(int(need * 1.2) + 8, 2))
        cand = cand[cand[:, 0] != cand[:, 1]]
        keys = pair_keys(cand, base)
        if len(forbidden_keys):
            pos = np.minimum(np.searchsorted(forbidden_keys, keys), len(forbidden_keys) - 1)
            cand = cand[forbidden_keys[pos] != keys]
        out = np.vstack([out, cand[:need]])
    return out


def train_link_predictor(g: Graph, cfg: EncoderConfig, seed: int, pos_edges=None,
                         val_pairs=None, val_labels=None, x=None, forbidden_keys=None,
                         neg_nodes: int | None = None) -> TrainResult:
    """Fit a GNN so that sigmoid(z_u . z_v) separates edges from sampled non-edges.

    Negatives are resampled every epoch from pairs outside ``forbidden_keys``
    (sorted canonical keys, default: the edges of ``g``), drawn among the
    first ``neg_nodes`` nodes (default: all of them).  When validation
    pairs are given they drive early stopping (BCE or AUC per ``cfg.select``).
    """
    pos = g.edges if pos_edges is None else np.asarray(pos_edges, dtype=np.int64)
    if len(pos) == 0:
        raise ValueError("link predictor needs at least one observed edge")
    ss = np.random.SeedSequence(seed)
    init_rng = np.random.default_rng(ss.spawn(1)[0])
    loop_seed = int(ss.generate_state(1)[0])
    in_dim = g.num_features if x is None else np.shape(x)[1]
    model = GnnModel.build(cfg.dims(in_dim, cfg.out_dim or 16), cfg.backbone, init_rng,
                           dropout=cfg.dropout, input_dropout=cfg.input_dropout)
    forbidden = g.edge_keys if forbidden_keys is None else np.asarray(forbidden_keys, dtype=np.int64)
    n_neg = g.num_nodes if neg_nodes is None else int(neg_nodes)

    def objective(m, rng, epoch):
        z = m.forward(g, x, training=True, rng=rng)
        neg = sample_negative_edges(n_neg, forbidden, len(pos), rng, g.num_nodes)
        return link_predictor_loss(z, pos, neg, m.weights, cfg.reg)

    validation = None
    if val_pairs is not None:
        val_pairs = np.asarray(val_pairs, dtype=np.int64)
        val_labels = np.asarray(val_labels, dtype=np.float64)

        def validation(m):
            z = m.forward(g, x).data
            logits = np.einsum("ij,ij->i", z[val_pairs[:, 0]], z[val_pairs[:, 1]])
            if cfg.select == "metric":
                return -auc_score(logits, val_labels)
            return float(np.mean(np.logaddexp(0.0, logits) - val_labels * logits))

    return train(model, objective, cfg.epochs, cfg.lr, cfg.weight_decay, loop_seed,
                 validation, cfg.patience if validation is not None else None)


def train_classifier(g: Graph, labels, train_nodes, cfg: EncoderConfig, seed: int,
                     val_nodes=None, x=None, label_sampler=None) -> TrainResult:
    """Fit a GNN classifier with masked cross-entropy.

    ``label_sampler(rng)`` may return a fresh set of supervised nodes each
    epoch; otherwise ``train_nodes`` is used throughout.
    """
    labels = np.asarray(labels, dtype=np.int64)
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    if len(train_nodes) == 0:
        raise ValueError("classifier needs a non-empty training mask")
    ss = np.random.SeedSequence(seed)
    init_rng = np.random.default_rng(ss.spawn(1)[0])
    loop_seed = int(ss.generate_state(1)[0])
    in_dim = g.num_features if x is None else np.shape(x)[1]
    out_dim = cfg.out_dim or g.num_classes
    model = GnnModel.build(cfg.dims(in_dim, out_dim), cfg.backbone, init_rng,
                           dropout=cfg.dropout, input_dropout=cfg.input_dropout)

    def objective(m, rng, epoch):
        z = m.forward(g, x, training=True, rng=rng)
        nodes = train_nodes if label_sampler is None else label_sampler(rng)
        return classifier_loss(z, labels, nodes, m.weights, cfg.reg)

    validation = None
    if val_nodes is not None and len(val_nodes):
        val_nodes = np.asarray(val_nodes, dtype=np.int64)

        def validation(m):
            z = m.forward(g, x).data[val_nodes]
            logp = ag.log_softmax_np(z)
            loss = float(-logp[np.arange(len(val_nodes)), labels[val_nodes]].mean())
            if cfg.select == "metric":
                # accuracy first, loss only breaks ties
                return -float(np.mean(z.argmax(axis=1) == labels[val_nodes])) + 1e-6 * loss
            return loss

    return train(model, objective, cfg.epochs, cfg.lr, cfg.weight_decay, loop_seed,
                 validation, cfg.patience if validation is not None else None)


def pretrain_encoders(g: Graph, train_nodes, lp_config: EncoderConfig | None = None,
                      nc_config: EncoderConfig | None = None, seed: int = 0,
                      labels=None, label_sampler=None) -> EmbeddingPair:
    """Pretrain the link predictor and the label classifier on ``g``.

    Both run to their final epoch (no validation split is used here) and
    the embeddings of every node are computed in inference mode.
    """
    lp_config = lp_config or lp_defaults()
    nc_config = nc_config or nc_defaults()
    labels = g.labels if labels is None else labels
    ss = np.random.SeedSequence(seed)
    lp_seed, nc_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    lp = train_link_predictor(g, _final_epoch(lp_config), lp_seed).model
    nc = train_classifier(g, labels, train_nodes, _final_epoch(nc_config), nc_seed,
                          label_sampler=label_sampler).model
    return EmbeddingPair(lp.forward(g).data.copy(), nc.forward(g).data.copy())


def _final_epoch(cfg: EncoderConfig) -> EncoderConfig:
    return EncoderConfig(**{**cfg.to_dict(), "patience": None})
