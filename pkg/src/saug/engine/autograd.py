"""A small reverse-mode differentiation engine over numpy / scipy.sparse.

Only what the GNN layers and losses need is here.  Constants (ndarray or
sparse matrices) can be mixed with :class:`Tensor` operands; gradients only
flow into tensors created with ``requires_grad=True`` and their
descendants.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class GradientError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_released", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self._released = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return slice_rows(self, key)

    def backward(self):
        backward(self)


def _is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def _value(x):
    return x.data if isinstance(x, Tensor) else x


def _tracks(*xs) -> bool:
    return any(isinstance(x, Tensor) and x.requires_grad for x in xs)


def _make(data, parents, backward_fn) -> Tensor:
    parents = tuple(p for p in parents if isinstance(p, Tensor) and p.requires_grad)
    if not parents:
        return Tensor(data)
    return Tensor(data, True, _parents=parents, _backward=backward_fn)


def _accumulate(t, g):
    if not (isinstance(t, Tensor) and t.requires_grad):
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked leaf reachable from the scalar ``loss``."""
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        raise GradientError("backward() on a tensor that is not part of a recorded computation")
    if loss._released:
        raise GradientError("backward() called twice on the same graph; run the forward pass again")
    if loss.data.size != 1:
        raise GradientError(f"backward() needs a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                _accumulate(node, g)
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._released = True


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------
#
# Each backward closure returns one gradient per *tracked* parent, in the
# order produced by ``_make``.

def add(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    out = av + bv
    tracked = [x for x in (a, b) if _tracks(x)]

    def bw(g):
        return [_unbroadcast(g, x.shape) for x in tracked]

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    if not _is_tensor(a):
        return Tensor(-np.asarray(a, dtype=np.float64))
    return _make(-a.data, (a,), lambda g: [-g])


def mul(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    out = av * bv
    grads = []
    if _tracks(a):
        grads.append(lambda g: _unbroadcast(g * bv, np.shape(av)))
    if _tracks(b):
        grads.append(lambda g: _unbroadcast(g * av, np.shape(bv)))
    return _make(out, (a, b), lambda g: [f(g) for f in grads])


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: [g * mask])


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    return _make(s, (a,), lambda g: [g * s * (1.0 - s)])


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: [g * (1.0 - t * t)])


def identity(a):
    return a


def clip(a: Tensor, lo, hi) -> Tensor:
    """Clamp elementwise; gradient passes only where the input is inside the range."""
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(out, (a,), lambda g: [g * inside])


def dropout(a, rate: float, rng: np.random.Generator, training: bool = True):
    if not training or rate <= 0.0:
        return a
    if sp.issparse(a):
        a = a.tocsr(copy=True)
        a.data *= (rng.random(a.nnz) >= rate) / (1.0 - rate)
        return a
    keep = (rng.random(np.shape(_value(a))) >= rate) / (1.0 - rate)
    return mul(a, keep)


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``a @ b`` where either operand may be a constant (dense or sparse)."""
    av, bv = _value(a), _value(b)
    out = av @ bv
    if sp.issparse(out):
        out = out.toarray()
    out = np.asarray(out)
    grads = []
    if _tracks(a):
        grads.append(lambda g: np.asarray(g @ bv.T))
    if _tracks(b):
        grads.append(lambda g: np.asarray(av.T @ g))
    return _make(out, (a, b), lambda g: [f(g) for f in grads])


def spmm(s: sp.spmatrix, x) -> Tensor:
    """Constant sparse matrix times tensor."""
    xv = _value(x)
    out = np.asarray(s @ xv)
    st = s.T.tocsr()
    return _make(out, (x,), lambda g: [np.asarray(st @ g)])


def concat(tensors, axis: int = 1) -> Tensor:
    vals = [_value(t) for t in tensors]
    vals = [v.toarray() if sp.issparse(v) else v for v in vals]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def bw(g):
        res = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if _tracks(t):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                res.append(g[tuple(idx)])
        return res

    return _make(out, tuple(tensors), bw)


def slice_rows(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def bw(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return [full]

    return _make(out, (a,), bw)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    out = a.data[:, lo:hi]

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        return [full]

    return _make(out, (a,), bw)


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows ``a[idx]`` (indices may repeat)."""
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return [full]

    return _make(out, (a,), bw)


def rowdot(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner product, shape (n,)."""
    av, bv = _value(a), _value(b)
    out = np.einsum("ij,ij->i", av, bv)
    grads = []
    if _tracks(a):
        grads.append(lambda g: g[:, None] * bv)
    if _tracks(b):
        grads.append(lambda g: g[:, None] * av)
    return _make(out, (a, b), lambda g: [f(g) for f in grads])


def pair_scores(z: Tensor, pairs) -> Tensor:
    """Inner products ``z[u] . z[v]`` for each pair, with a single scatter in backward."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    u, v = pairs[:, 0], pairs[:, 1]
    zu, zv = z.data[u], z.data[v]
    out = np.einsum("ij,ij->i", zu, zv)
    n = z.data.shape[0]

    def bw(g):
        gu = g[:, None] * zv
        gv = g[:, None] * zu
        rows = np.concatenate([u, v])
        scatter = sp.csr_matrix((np.ones(len(rows)), (rows, np.arange(len(rows)))),
                                shape=(n, len(rows)))
        return [np.asarray(scatter @ np.vstack([gu, gv]))]

    return _make(out, (z,), bw)


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    return _make(np.array(a.data.sum()), (a,), lambda g: [np.full_like(a.data, float(g))])


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.array(a.data.mean()), (a,), lambda g: [np.full_like(a.data, float(g) / n)])


def squared_norm(a: Tensor) -> Tensor:
    return _make(np.array(np.sum(a.data * a.data)), (a,), lambda g: [2.0 * float(g) * a.data])


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: [g * c])


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid_np(x) -> np.ndarray:
    return _stable_sigmoid(np.asarray(x, dtype=np.float64))


def cross_entropy(logits: Tensor, targets, rows=None) -> Tensor:
    """Mean softmax cross-entropy over ``rows`` (all rows when None).

    Uses log-sum-exp, so the value is finite for any finite logits.
    """
    targets = np.asarray(targets, dtype=np.int64)
    rows = np.arange(logits.shape[0]) if rows is None else np.asarray(rows, dtype=np.int64)
    if len(rows) == 0:
        raise ValueError("cross_entropy over an empty node set")
    sub = logits.data[rows]
    logp = log_softmax_np(sub)
    t = targets[rows] if len(targets) == logits.shape[0] else targets
    if np.any(t < 0):
        raise ValueError("cross_entropy target contains the unlabeled sentinel")
    loss = -logp[np.arange(len(rows)), t].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(len(rows)), t] -= 1.0
        full = np.zeros_like(logits.data)
        np.add.at(full, rows, p * (float(g) / len(rows)))
        return [full]

    return _make(np.array(loss), (logits,), bw)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets."""
    x = logits.data
    y = np.asarray(targets, dtype=np.float64)
    if x.size == 0:
        raise ValueError("bce over an empty set")
    # softplus(x) - y*x == -[y log s + (1-y) log(1-s)]
    loss = np.mean(np.logaddexp(0.0, x) - y * x)
    n = x.size

    def bw(g):
        return [(_stable_sigmoid(x) - y) * (float(g) / n)]

    return _make(np.array(loss), (logits,), bw)


def as_input(x):
    """Wrap a feature matrix as a constant operand, sparsifying when it is mostly zeros."""
    if isinstance(x, Tensor) or sp.issparse(x):
        return x
    x = np.asarray(x, dtype=np.float64)
    if x.size and np.count_nonzero(x) < 0.1 * x.size:
        return sp.csr_matrix(x)
    return x
