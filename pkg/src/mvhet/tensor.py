"""Dense 2-D float64 tensors with reverse-mode autodiff, sparse mean
aggregation and the Adam optimizer.

Every tensor is a matrix. Operations build the computation graph eagerly;
``backward`` topologically orders the graph reachable from a scalar loss
and runs each recorded backward rule exactly once, in reverse.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyMask, InvalidProbability, NotScalarLoss, ShapeMismatch

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate operations without recording backward rules."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_matrix(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeMismatch(f"tensors are 2-D, got ndim={arr.ndim}")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_matrix(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    __array_priority__ = 100

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(self, _lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], rule) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = rule
    else:
        out._parents = ()
        out._backward = None
    return out


def _tape(loss: Tensor) -> list[Tensor]:
    """Topological order of the graph feeding ``loss`` (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every requires_grad tensor feeding ``loss``."""
    if loss.shape != (1, 1):
        raise NotScalarLoss(f"loss must be 1x1, got {loss.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones((1, 1))
    for node in reversed(_tape(loss)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i in range(2) if shape[i] == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for x, y in zip(a.shape, b.shape):
        if x != y and x != 1 and y != 1:
            raise ShapeMismatch(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- dense algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def rule(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def rule(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")

    def rule(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(-_unbroadcast(g, b.shape))

    return _result(a.data - b.data, (a, b), rule)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "hadamard")

    def rule(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), rule)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: a._accumulate(g * c))


def divide(a: Tensor, c: float) -> Tensor:
    """a / c by true division (bitwise equal to numpy's ``a / c``)."""
    c = float(c)
    return _result(a.data / c, (a,), lambda g: a._accumulate(g / c))


def transpose(a: Tensor) -> Tensor:
    return _result(a.data.T.copy(), (a,), lambda g: a._accumulate(g.T))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat_cols of nothing")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ShapeMismatch(f"concat_cols: row counts {[p.shape[0] for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def rule(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            p._accumulate(g[:, lo:hi])

    return _result(np.hstack([p.data for p in parts]), parts, rule)


def take_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def rule(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        a._accumulate(full)

    return _result(a.data[:, start:stop].copy(), (a,), rule)


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _result(a.data[idx], (a,), rule)


def row_sums(a: Tensor) -> Tensor:
    """n x d -> n x 1."""
    return _result(a.data.sum(axis=1, keepdims=True), (a,),
                   lambda g: a._accumulate(np.broadcast_to(g, a.shape)))


def mean_rows(a: Tensor) -> Tensor:
    """n x d -> 1 x d column means."""
    n = a.shape[0]
    return _result(a.data.mean(axis=0, keepdims=True), (a,),
                   lambda g: a._accumulate(np.broadcast_to(g / n, a.shape)))


def total(a: Tensor) -> Tensor:
    return _result(np.array([[a.data.sum()]]), (a,),
                   lambda g: a._accumulate(np.full(a.shape, g[0, 0])))


def softmax_row(a: Tensor) -> Tensor:
    """Softmax along columns of a 1 x k tensor."""
    if a.shape[0] != 1:
        raise ShapeMismatch(f"softmax_row expects 1 x k, got {a.shape}")
    z = a.data - a.data.max()
    e = np.exp(z)
    s = e / e.sum()

    def rule(g):
        a._accumulate(s * (g - (g * s).sum()))

    return _result(s, (a,), rule)


# ----------------------------------------------------------------- activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: x._accumulate(g * mask))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _result(s, (x,), lambda g: x._accumulate(g * s * (1.0 - s)))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _result(t, (x,), lambda g: x._accumulate(g * (1.0 - t * t)))


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept entries are scaled by 1/(1-p) while training."""
    if not 0.0 <= p < 1.0:
        raise InvalidProbability(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * mask, (x,), lambda g: x._accumulate(g * mask))


def keyed_rng(*key: int) -> np.random.Generator:
    """Independent generator for a (seed, epoch, layer, ...) key."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


# ---------------------------------------------------------------------- sparse


def as_csr(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m, dtype=np.float64)
    m.sum_duplicates()
    m.sort_indices()
    return m


def spmm_mean(adj: sp.csr_matrix, x: Tensor, norms: np.ndarray) -> Tensor:
    """Row i of the result is the mean of x over the columns stored in row i
    of ``adj`` (divided by ``norms[i]``); rows with zero norm are zero.
    Differentiable with respect to ``x`` only."""
    if adj.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"spmm_mean: adjacency {adj.shape} vs features {x.shape}")
    norms = np.asarray(norms, dtype=np.float64).reshape(-1)
    if norms.shape[0] != adj.shape[0]:
        raise ShapeMismatch(f"spmm_mean: {norms.shape[0]} norms for {adj.shape[0]} rows")
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)[:, None]
    out = np.asarray(adj @ x.data) * inv
    adj_t = adj.T.tocsr()

    def rule(g):
        x._accumulate(np.asarray(adj_t @ (g * inv)))

    return _result(out, (x,), rule)


# ---------------------------------------------------------------------- losses


def frobenius_sq(x: Tensor) -> Tensor:
    """Squared Frobenius norm (no 1/2 factor)."""
    return _result(np.array([[np.sum(x.data * x.data)]]), (x,),
                   lambda g: x._accumulate(2.0 * g[0, 0] * x.data))


def l1_offdiag_gram(w: Tensor) -> Tensor:
    """Sum of |(W^T W)_ij| over i != j."""
    if w.shape[1] < 1:
        raise ShapeMismatch("l1_offdiag_gram needs at least one column")
    gram = w.data.T @ w.data
    off = 1.0 - np.eye(gram.shape[0])
    sign = np.sign(gram) * off

    def rule(g):
        # gram is symmetric so d/dW sum|G_ij| = W (S + S^T) = 2 W S
        w._accumulate(2.0 * g[0, 0] * (w.data @ sign))

    return _result(np.array([[np.sum(np.abs(gram) * off)]]), (w,), rule)


def _select_rows(n: int, mask) -> np.ndarray:
    if mask is None:
        rows = np.arange(n)
    else:
        m = np.asarray(mask)
        rows = np.flatnonzero(m) if m.dtype == bool else m.astype(np.int64).reshape(-1)
    if rows.size == 0:
        raise EmptyMask("no rows selected")
    return rows


def softmax_cross_entropy(logits: Tensor, targets, mask=None, reduction: str = "mean") -> Tensor:
    """Cross entropy of a row-wise softmax.

    ``targets`` is either an n x C one-hot matrix or an integer class vector;
    ``mask`` is a boolean vector or index array selecting the rows scored.
    """
    n, c = logits.shape
    rows = _select_rows(n, mask)
    t = np.asarray(targets)
    if t.ndim == 1:
        y = np.zeros((n, c))
        y[np.arange(n), t.astype(np.int64)] = 1.0
    else:
        y = t.astype(np.float64)
        if y.shape != (n, c):
            raise ShapeMismatch(f"targets {y.shape} vs logits {logits.shape}")
    z = logits.data[rows]
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    per_row = -(y[rows] * (z - lse)).sum(axis=1)
    denom = rows.size if reduction == "mean" else 1.0
    probs = np.exp(z - lse)

    def rule(g):
        full = np.zeros_like(logits.data)
        yr = y[rows]
        np.add.at(full, rows, (probs * yr.sum(axis=1, keepdims=True) - yr) / denom)
        logits._accumulate(g[0, 0] * full)

    return _result(np.array([[per_row.sum() / denom]]), (logits,), rule)


def bce_with_logits(scores: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Binary cross entropy on logits, -[t log s(z) + (1-t) log(1 - s(z))]."""
    z = scores.data
    t = np.asarray(targets, dtype=np.float64)
    t = np.broadcast_to(t if t.size == 1 else t.reshape(z.shape), z.shape)
    per = np.maximum(z, 0.0) - t * z + np.log1p(np.exp(-np.abs(z)))
    denom = z.size if reduction == "mean" else 1.0
    s = _sigmoid(z)
    return _result(np.array([[per.sum() / denom]]), (scores,),
                   lambda g: scores._accumulate(g[0, 0] * (s - t) / denom))


# ----------------------------------------------------------------------- adam


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray | None], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Missing grads count as zero."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        if m.shape != p.data.shape:
            raise ShapeMismatch(f"adam moments for {name}: {m.shape} vs {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
