"""Pseudo neighbor generation for tail nodes.

A fully connected generator maps a per-tail noise code to a feature row.
It is pulled toward the feature row of the tail's most cosine-similar
neighbor, and it is trained against a two-layer GCN discriminator.  The
discriminator runs on the graph with the pseudo nodes attached and
predicts both the class and whether each node is real.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import autograd as ag
from .engine.autograd import Tensor
from .engine.nn import MLP, Adam, TrainingError, l2_penalty
from .graph import AddedNode, Graph, GraphDelta, apply_delta

log = logging.getLogger(__name__)


@dataclass
class GenConfig:
    noise_dim: int = 32
    gen_hidden: int = 64
    gen_layers: int = 2
    alpha: float = 1e-4
    beta: float = 1e-4
    d_steps_per_g: int = 2
    epochs: int = 300
    seed: int = 0
    adv_weight: float = 1.0
    dis_hidden: int = 32
    lr: float = 0.01

    def __post_init__(self):
        for name in ("noise_dim", "gen_hidden", "gen_layers", "d_steps_per_g", "epochs", "dis_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.alpha < 0 or self.beta < 0 or self.adv_weight < 0:
            raise ValueError("alpha, beta and adv_weight must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimilarTargets:
    pairs: np.ndarray  # (k, 2) rows of (tail, neighbor)
    target_features: np.ndarray
    target_labels: np.ndarray
    skipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    @property
    def tails(self) -> np.ndarray:
        return self.pairs[:, 0]


def select_similar_neighbors(g_prime: Graph, tails, labels=None) -> SimilarTargets:
    """Pick, for each tail, the neighbor whose features have the highest cosine.

    ``labels`` overrides ``g_prime.labels`` as the source of target labels,
    which lets callers substitute predictions for hidden labels.
    """
    labels = g_prime.labels if labels is None else np.asarray(labels, dtype=np.int64)
    x = g_prime.features
    norms = np.linalg.norm(x, axis=1)
    pairs, skipped = [], []
    for t in np.asarray(tails, dtype=np.int64):
        nb = g_prime.neighbors(t)
        if len(nb) == 0:
            skipped.append(int(t))
            continue
        denom = norms[nb] * norms[t]
        cos = np.divide(x[nb] @ x[t], denom, out=np.zeros(len(nb)), where=denom > 0)
        pairs.append((int(t), int(nb[np.argmax(cos)])))  # neighbors are sorted, so ties go to the lower id
    if skipped:
        log.warning("%d isolated tails receive no pseudo neighbor", len(skipped))
    pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return SimilarTargets(pairs, x[pairs[:, 1]].copy(), labels[pairs[:, 1]].copy(), skipped)


@dataclass
class GenerativeModel:
    generator: MLP
    noise: np.ndarray  # one code per target, row-aligned with SimilarTargets.pairs
    feature_min: np.ndarray
    feature_max: np.ndarray
    discriminator: list  # [w1, b1, w2, b2]
    trace: list

    def generate(self, noise=None) -> np.ndarray:
        z = self.noise if noise is None else np.asarray(noise, dtype=np.float64)
        out = self.generator(z).data
        return np.clip(out, self.feature_min, self.feature_max)


def _pseudo_graph(g_prime: Graph, targets: SimilarTargets, placeholder=None) -> Graph:
    width = g_prime.num_features
    feats = np.zeros((len(targets), width)) if placeholder is None else placeholder
    nodes = tuple(AddedNode(feats[i], int(targets.target_labels[i]), real=False) for i in range(len(targets)))
    base = g_prime.num_nodes
    edges = tuple((int(t), base + i) for i, t in enumerate(targets.tails))
    return apply_delta(g_prime, GraphDelta(added_edges=edges, added_nodes=nodes))


def _init_discriminator(in_dim, hidden, out_dim, rng):
    params = []
    for a, b in ((in_dim, hidden), (hidden, out_dim)):
        bound = np.sqrt(6.0 / (a + b))
        params += [Tensor(rng.uniform(-bound, bound, size=(a, b)), True, name="weight"),
                   Tensor(np.zeros(b), True, name="bias")]
    return params


def _discriminate(params, op, real_x, fake: Tensor | np.ndarray, rng=None, dropout=0.5):
    """Two GCN layers over the stacked real and generated features.

    The first product is split so the sparse real block stays sparse.
    """
    w1, b1, w2, b2 = params
    xw = ag.concat([ag.matmul(real_x, w1), ag.matmul(fake, w1)], axis=0)
    h = ag.relu(ag.add(ag.spmm(op, xw), b1))
    h = ag.dropout(h, dropout, rng, rng is not None)
    return ag.add(ag.spmm(op, ag.matmul(h, w2)), b2)


def train_generative(g_prime: Graph, targets: SimilarTargets, cfg: GenConfig,
                     labeled_nodes=None) -> GenerativeModel:
    """Alternate ``d_steps_per_g`` discriminator updates with one generator update.

    The discriminator has ``num_classes + 1`` outputs: class logits and a
    real/pseudo logit.  Its class loss covers ``labeled_nodes`` (real nodes
    whose labels may be used) plus every pseudo node.
    """
    if len(targets) == 0:
        raise ValueError("no targets to generate pseudo neighbors for")
    ss = np.random.SeedSequence(cfg.seed)
    init_rng, noise_rng, loop_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    d_x = g_prime.num_features
    k = len(targets)
    n_real = g_prime.num_nodes
    n_cls = g_prime.num_classes

    gen = MLP([cfg.noise_dim] + [cfg.gen_hidden] * (cfg.gen_layers - 1) + [d_x])
    gen.init_params(init_rng)
    dis = _init_discriminator(d_x, cfg.dis_hidden, n_cls + 1, init_rng)
    noise = noise_rng.standard_normal((k, cfg.noise_dim))
    lo = g_prime.features.min(axis=0)
    hi = g_prime.features.max(axis=0)
    target_x = targets.target_features

    g_tilde = _pseudo_graph(g_prime, targets)
    op = g_tilde.gcn_operator
    real_x = g_prime.sparse_features
    fake_rows = np.arange(n_real, n_real + k)
    if labeled_nodes is None:
        labeled_nodes = np.flatnonzero(g_prime.labels >= 0)
    labeled_real = np.asarray(labeled_nodes, dtype=np.int64)
    cls_rows = np.concatenate([labeled_real, fake_rows])
    cls_targets = np.full(n_real + k, -1, dtype=np.int64)
    cls_targets[labeled_real] = g_prime.labels[labeled_real]
    cls_targets[fake_rows] = targets.target_labels
    use_cls = bool(np.all(targets.target_labels >= 0))

    d_opt = Adam(dis, lr=cfg.lr)
    g_opt = Adam(gen.params, lr=cfg.lr)
    trace = []

    def fake_features():
        return ag.clip(gen(noise), lo, hi)

    for epoch in range(1, cfg.epochs + 1):
        adv = cfg.adv_weight > 0
        d_loss = float("nan")
        if adv:
            fake = fake_features().data  # constant for the discriminator
            for _ in range(cfg.d_steps_per_g):
                d_opt.zero_grad()
                out = _discriminate(dis, op, real_x, fake, loop_rng)
                real_logit = ag.slice_cols(out, n_cls, n_cls + 1)
                loss = ag.add(ag.scale(ag.bce_with_logits(ag.take_rows(real_logit, np.arange(n_real)),
                                                          np.ones((n_real, 1))), 0.5),
                              ag.scale(ag.bce_with_logits(ag.take_rows(real_logit, fake_rows),
                                                          np.zeros((k, 1))), 0.5))
                if use_cls:
                    loss = ag.add(loss, ag.cross_entropy(ag.slice_cols(out, 0, n_cls), cls_targets, cls_rows))
                loss = ag.add(loss, ag.scale(l2_penalty(dis[0::2]), cfg.beta))
                d_loss = float(loss.data)
                if not np.isfinite(d_loss):
                    raise TrainingError(f"non-finite discriminator loss at epoch {epoch}")
                ag.backward(loss)
                d_opt.step()

        g_opt.zero_grad()
        raw = gen(noise)
        fake = ag.clip(raw, lo, hi)
        # matching uses the unclamped output so a row stuck at a bound still gets a gradient
        diff = ag.add(raw, -target_x)
        match = ag.sum_all(ag.mul(diff, diff))
        g_loss = ag.add(match, ag.scale(l2_penalty(gen.weights), cfg.alpha))
        if adv:
            out = _discriminate(dis, op, real_x, fake, loop_rng)
            fooled = ag.bce_with_logits(ag.take_rows(ag.slice_cols(out, n_cls, n_cls + 1), fake_rows),
                                        np.ones((k, 1)))
            adv_loss = fooled
            if use_cls:
                adv_loss = ag.add(adv_loss, ag.cross_entropy(ag.slice_cols(out, 0, n_cls), cls_targets, fake_rows))
            g_loss = ag.add(g_loss, ag.scale(adv_loss, cfg.adv_weight))
        value = float(g_loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite generator loss at epoch {epoch}")
        ag.backward(g_loss)
        g_opt.step()
        trace.append((epoch, value, d_loss, float(match.data)))
    return GenerativeModel(gen, noise, lo, hi, dis, trace)


def discriminator_accuracy(model: GenerativeModel, g_prime: Graph, targets: SimilarTargets,
                           seed: int = 1) -> float:
    """Balanced real/pseudo accuracy of the discriminator on freshly drawn noise."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(model.noise.shape)
    fake = model.generate(noise)
    g_tilde = _pseudo_graph(g_prime, targets)
    out = _discriminate(model.discriminator, g_tilde.gcn_operator, g_prime.sparse_features, fake).data
    logit = out[:, -1]
    n = g_prime.num_nodes
    real_acc = float(np.mean(logit[:n] > 0))
    fake_acc = float(np.mean(logit[n:] <= 0))
    return 0.5 * (real_acc + fake_acc)


def inject_pseudo_nodes(g_prime: Graph, model: GenerativeModel, targets: SimilarTargets):
    """Attach one generated node to each targeted tail; returns ``(g_tilde, manifest)``."""
    if len(targets) == 0:
        return g_prime, []
    feats = model.generate()
    g_tilde = _pseudo_graph(g_prime, targets, feats)
    base = g_prime.num_nodes
    manifest = [{"pseudo_id": base + i, "tail_id": int(t), "source_neighbor_id": int(s),
                 "label": int(targets.target_labels[i])}
                for i, (t, s) in enumerate(targets.pairs)]
    return g_tilde, manifest


def save_manifest(manifest, path) -> None:
    with open(path, "w") as fh:
        for row in manifest:
            fh.write(json.dumps(row) + "\n")


def generator_checkpoint(model: GenerativeModel) -> dict:
    d = model.generator.to_dict()
    d["noise"] = model.noise.tolist()
    return d
