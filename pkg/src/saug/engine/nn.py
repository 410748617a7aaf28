"""GCN / mean-aggregator layers, losses, Adam and the training loop."""
from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor

log = logging.getLogger(__name__)

AGGREGATORS = ("gcn", "sage-mean")
ACTIVATIONS = {"relu": ag.relu, "tanh": ag.tanh, "identity": ag.identity}


class TrainingError(RuntimeError):
    pass


@dataclass
class GnnModel:
    """A stack of message-passing layers.

    ``layer_specs`` is a list of ``(in_dim, out_dim, aggregator)``.  A gcn
    layer owns a weight of shape ``(in, out)``; a sage-mean layer owns
    ``(2 * in, out)`` acting on ``concat(H, mean_neighbors(H))``.
    """

    layer_specs: list
    params: list = field(default_factory=list)
    activation: str = "relu"
    dropout: float = 0.5
    input_dropout: float = 0.0

    def __post_init__(self):
        if not self.layer_specs:
            raise ValueError("a GnnModel needs at least one layer")
        for (_, out_d, agg), (in_d, _, _) in zip(self.layer_specs, self.layer_specs[1:]):
            if out_d != in_d:
                raise ValueError(f"layer dimensions do not chain: {self.layer_specs}")
        for _, _, agg in self.layer_specs:
            if agg not in AGGREGATORS:
                raise ValueError(f"unknown aggregator {agg!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def build(cls, dims, aggregator="gcn", rng=None, activation="relu", dropout=0.5,
              input_dropout=0.0) -> "GnnModel":
        specs = [(int(a), int(b), aggregator) for a, b in zip(dims[:-1], dims[1:])]
        model = cls(specs, activation=activation, dropout=dropout, input_dropout=input_dropout)
        model.init_params(rng if rng is not None else np.random.default_rng(0))
        return model

    def init_params(self, rng: np.random.Generator) -> None:
        """Glorot-uniform weights and zero biases, drawn layer by layer."""
        self.params = []
        for in_d, out_d, agg in self.layer_specs:
            fan_in = 2 * in_d if agg == "sage-mean" else in_d
            bound = np.sqrt(6.0 / (fan_in + out_d))
            w = rng.uniform(-bound, bound, size=(fan_in, out_d))
            self.params += [Tensor(w, True, name="weight"), Tensor(np.zeros(out_d), True, name="bias")]

    @staticmethod
    def param_count(layer_specs) -> int:
        total = 0
        for in_d, out_d, agg in layer_specs:
            total += (2 * in_d if agg == "sage-mean" else in_d) * out_d + out_d
        return total

    @property
    def weights(self) -> list:
        return self.params[0::2]

    def forward(self, g, x=None, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Run every layer on graph ``g``; the last layer has no nonlinearity.

        ``x`` defaults to ``g.features``.  Dropout is applied to the input of
        every layer after the first (``input_dropout`` covers the first), in
        training mode only.
        """
        h = g.sparse_features if x is None else ag.as_input(x)
        n_in = h.shape[1]
        if h.shape[0] != g.num_nodes:
            raise ValueError(f"input has {h.shape[0]} rows for a graph with {g.num_nodes} nodes")
        if n_in != self.layer_specs[0][0]:
            raise ValueError(f"input width {n_in} != model input dim {self.layer_specs[0][0]}")
        act = ACTIVATIONS[self.activation]
        last = len(self.layer_specs) - 1
        for l, (in_d, out_d, agg) in enumerate(self.layer_specs):
            w, b = self.params[2 * l], self.params[2 * l + 1]
            rate = self.dropout if l > 0 else self.input_dropout
            h = ag.dropout(h, rate, rng, training and rng is not None)
            if agg == "gcn":
                h = ag.add(ag.spmm(g.gcn_operator, ag.matmul(h, w)), b)
            else:
                own = ag.matmul(h, ag.slice_rows(w, slice(0, in_d)))
                nbr = ag.spmm(g.mean_operator, ag.matmul(h, ag.slice_rows(w, slice(in_d, 2 * in_d))))
                h = ag.add(ag.add(own, nbr), b)
            if not np.all(np.isfinite(h.data)):
                raise FloatingPointError(f"non-finite activations in layer {l}")
            if l < last:
                h = act(h)
        return h

    __call__ = forward

    # -- state ------------------------------------------------------------
    def state(self) -> list:
        return [p.data.copy() for p in self.params]

    def load_state(self, state) -> None:
        for p, s in zip(self.params, state):
            p.data = np.array(s, dtype=np.float64)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params]) if self.params else np.zeros(0)

    def to_dict(self) -> dict:
        return {"format": "saug-gnn", "version": 1, "layer_specs": [list(s) for s in self.layer_specs],
                "activation": self.activation, "dropout": self.dropout,
                "input_dropout": self.input_dropout, "params": [p.data.ravel().tolist() for p in self.params]}

    @classmethod
    def from_dict(cls, d: dict) -> "GnnModel":
        specs = [tuple(s) for s in d["layer_specs"]]
        model = cls([(int(a), int(b), str(c)) for a, b, c in specs],
                    activation=d["activation"], dropout=d["dropout"],
                    input_dropout=d.get("input_dropout", 0.0))
        model.init_params(np.random.default_rng(0))
        for p, flat in zip(model.params, d["params"]):
            p.data = np.asarray(flat, dtype=np.float64).reshape(p.data.shape)
        return model


@dataclass
class MLP:
    """Fully connected network (used as the pseudo-node generator)."""

    dims: list
    params: list = field(default_factory=list)
    activation: str = "relu"

    def init_params(self, rng: np.random.Generator) -> None:
        self.params = []
        for a, b in zip(self.dims[:-1], self.dims[1:]):
            bound = np.sqrt(6.0 / (a + b))
            self.params += [Tensor(rng.uniform(-bound, bound, size=(a, b)), True, name="weight"),
                            Tensor(np.zeros(b), True, name="bias")]

    @property
    def weights(self) -> list:
        return self.params[0::2]

    def forward(self, z) -> Tensor:
        act = ACTIVATIONS[self.activation]
        h = z
        n = len(self.dims) - 1
        for l in range(n):
            h = ag.add(ag.matmul(h, self.params[2 * l]), self.params[2 * l + 1])
            if l < n - 1:
                h = act(h)
        return h

    __call__ = forward

    def state(self):
        return [p.data.copy() for p in self.params]

    def load_state(self, state):
        for p, s in zip(self.params, state):
            p.data = np.array(s, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"format": "saug-mlp", "version": 1, "dims": list(self.dims), "activation": self.activation,
                "params": [p.data.ravel().tolist() for p in self.params]}

    @classmethod
    def from_dict(cls, d: dict) -> "MLP":
        model = cls(list(d["dims"]), activation=d["activation"])
        model.init_params(np.random.default_rng(0))
        for p, flat in zip(model.params, d["params"]):
            p.data = np.asarray(flat, dtype=np.float64).reshape(p.data.shape)
        return model


def save_checkpoint(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_checkpoint(path):
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format") == "saug-mlp":
        return MLP.from_dict(d)
    return GnnModel.from_dict(d)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def l2_penalty(weights) -> Tensor | float:
    terms = [ag.squared_norm(w) for w in weights]
    if not terms:
        return 0.0
    total = terms[0]
    for t in terms[1:]:
        total = ag.add(total, t)
    return total


def _regularized(loss, weights, coef):
    if coef == 0 or not weights:
        return loss
    return ag.add(loss, ag.scale(l2_penalty(weights), coef))


def link_predictor_loss(z_link: Tensor, pos_edges, neg_edges, weights=(), lam: float = 1e-4) -> Tensor:
    """Mean BCE of sigmoid(z_i . z_j) (1 for positives, 0 for negatives) plus lam * ||W||^2."""
    pos = np.asarray(pos_edges, dtype=np.int64).reshape(-1, 2)
    neg = np.asarray(neg_edges, dtype=np.int64).reshape(-1, 2)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("link_predictor_loss needs non-empty positive and negative edge lists")
    logits = ag.pair_scores(z_link, np.vstack([pos, neg]))
    targets = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return _regularized(ag.bce_with_logits(logits, targets), list(weights), lam)


def classifier_loss(z_label: Tensor, labels, mask, weights=(), mu: float = 1e-4) -> Tensor:
    """Mean softmax cross-entropy over ``mask`` plus mu * ||W||^2."""
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if len(rows) == 0:
        raise ValueError("classifier_loss: no nodes left after masking")
    return _regularized(ag.cross_entropy(z_label, labels, rows), list(weights), mu)


def predict_labels(z_label) -> np.ndarray:
    """argmax of softmax(logits) per row."""
    z = z_label.data if isinstance(z_label, Tensor) else z_label
    return np.argmax(ag.softmax_np(z), axis=1)


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

class Adam:
    """Adam with L2 weight decay added to the gradient."""

    def __init__(self, params, lr=0.01, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr, self.weight_decay, self.betas, self.eps = lr, weight_decay, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.lr:
                p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    model: object
    trace: list  # rows of (epoch, train_loss, val_metric)
    best_epoch: int

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_metric"])
            for row in self.trace:
                w.writerow(row)


Objective = Callable[[object, np.random.Generator, int], Tensor]


def train(model, objective: Objective, epochs: int = 200, lr: float = 0.01,
          weight_decay: float = 5e-4, seed: int = 0, validation: Callable[[object], float] | None = None,
          patience: int | None = 30) -> TrainResult:
    """Optimize ``model`` with Adam.

    ``objective(model, rng, epoch)`` builds the training loss; it owns the
    rng stream used for dropout and negative sampling.  With a
    ``validation`` closure (lower is better) the best-scoring parameters are
    restored at the end and training stops after ``patience`` epochs
    without improvement.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = np.random.default_rng(seed)
    opt = Adam(model.params, lr=lr, weight_decay=weight_decay)
    trace = []
    best, best_state, best_epoch, stale = np.inf, None, epochs, 0
    for epoch in range(1, epochs + 1):
        opt.zero_grad()
        loss = objective(model, rng, epoch)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite training loss at epoch {epoch}")
        ag.backward(loss)
        opt.step()
        val = float("nan")
        if validation is not None:
            val = float(validation(model))
            if val < best:
                best, best_state, best_epoch, stale = val, model.state(), epoch, 0
            else:
                stale += 1
        trace.append((epoch, value, val))
        if validation is not None and patience is not None and stale >= patience:
            break
    if best_state is not None:
        model.load_state(best_state)
    elif validation is None:
        best_epoch = len(trace)
    return TrainResult(model, trace, best_epoch)


def clone(model):
    return copy.deepcopy(model)
