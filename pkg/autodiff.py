"""Reverse-mode automatic differentiation over dense 2-D matrices.

A :class:`Tape` records every op executed while it is active and at least
one input requires a gradient. :func:`backward` walks the record in reverse
execution order, accumulates gradients into the leaves and clears the tape.

    with Tape():
        loss = sum_all(relu(matmul(x, w)))
        backward(loss)
    w.grad  # dL/dw

Ops run outside a tape compute values only. Data is float32 unless a leaf is
created with float64 data; reductions accumulate in float64.
"""
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from exceptions import EmptyMask, GradNotComputed, NotScalar, NumericError, ShapeError, TapeError, ZeroDegree

logger = logging.getLogger(__name__)

_local = threading.local()


def _tape_stack() -> list:
    if not hasattr(_local, 'stack'):
        _local.stack = []
    return _local.stack


class Tensor:
    """Dense matrix that may take part in differentiation."""

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = np.float64 if getattr(data, 'dtype', None) == np.float64 else np.float32
        arr = np.array(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional['Tape'] = None
        self._generation = -1

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise NotScalar(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> 'Tensor':
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        flag = ', requires_grad=True' if self.requires_grad else ''
        return f"Tensor(shape={self.shape}{flag})"


@dataclass
class _Record:
    out: Tensor
    inputs: Tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    name: str


@dataclass
class Tape:
    """Ordered record of the ops executed while active."""
    records: List[_Record] = field(default_factory=list)
    generation: int = 0

    def __enter__(self) -> 'Tape':
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def clear(self):
        self.records = []
        self.generation += 1


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _result(data: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn, name: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {name}")
    out = Tensor(data, dtype=data.dtype)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        out._generation = tape.generation
        tape.records.append(_Record(out, inputs, backward_fn, name))
    return out


def _dtype(*tensors: Tensor):
    return np.result_type(*(t.data.dtype for t in tensors))


def backward(loss: Tensor):
    """Populate ``grad`` of every leaf that requires one, then clear the tape."""
    if loss.shape != (1, 1):
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
            return
        raise TapeError("loss was not recorded on a tape")
    if loss._generation != tape.generation:
        raise TapeError("tape already consumed by a previous backward; run the forward again")

    grads = {id(loss): np.ones_like(loss.data)}
    for record in reversed(tape.records):
        g = grads.pop(id(record.out), None)
        if g is None:
            continue
        for inp, ig in zip(record.inputs, record.backward(g)):
            if ig is None or not inp.requires_grad:
                continue
            ig = np.asarray(ig, dtype=inp.data.dtype)
            if inp._tape is tape:
                key = id(inp)
                grads[key] = grads[key] + ig if key in grads else ig
            elif inp.is_leaf:
                inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
    tape.clear()


# ---------------------------------------------------------------- dense ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not chain")
    dtype = _dtype(a, b)
    A, B = a.data.astype(dtype, copy=False), b.data.astype(dtype, copy=False)
    return _result(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g), 'matmul')


def spmm(s, d: Tensor) -> Tensor:
    """Sparse operator times dense tensor. No gradient flows to the operator."""
    if not sp.issparse(s):
        s = s.to_scipy()
    if s.shape[1] != d.rows:
        raise ShapeError(f"spmm shapes {s.shape} and {d.shape} do not chain")
    s = s.astype(d.data.dtype, copy=False)
    out = np.asarray(s @ d.data)
    return _result(out, (d,), lambda g: (np.asarray(s.T @ g),), 'spmm')


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    return _result(np.where(positive, a.data, 0).astype(a.data.dtype), (a,),
                   lambda g: (g * positive,), 'relu')


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data).astype(a.data.dtype)
    return _result(y, (a,), lambda g: (g * y * (1 - y),), 'sigmoid')


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), 'add')


def scale(a: Tensor, factor: float) -> Tensor:
    return _result((a.data * factor).astype(a.data.dtype), (a,), lambda g: (g * factor,), 'scale')


def add_bias(a: Tensor, b_row: Tensor) -> Tensor:
    if b_row.rows != 1 or b_row.cols != a.cols:
        raise ShapeError(f"bias shape {b_row.shape} does not match {a.shape}")

    def grad(g):
        return g, g.sum(axis=0, keepdims=True, dtype=np.float64)

    return _result(a.data + b_row.data, (a, b_row), grad, 'add_bias')


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.rows != b.rows:
        raise ShapeError(f"concat_cols row counts {a.rows} and {b.rows} differ")
    k = a.cols
    return _result(np.concatenate([a.data, b.data], axis=1), (a, b),
                   lambda g: (g[:, :k], g[:, k:]), 'concat_cols')


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def grad(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return _result(a.data[idx], (a,), grad, 'take_rows')


def masked_row_mean(a: Tensor, idx) -> Tensor:
    """Mean of the rows in ``idx`` as a 1 x cols tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise EmptyMask("masked_row_mean over an empty index set")
    mean = a.data[idx].mean(axis=0, keepdims=True, dtype=np.float64).astype(a.data.dtype)

    def grad(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g / idx.size)
        return (z,)

    return _result(mean, (a,), grad, 'masked_row_mean')


def sq_l2_diff(a: Tensor, b: Tensor) -> Tensor:
    """Squared Euclidean distance between two row vectors."""
    if a.shape != b.shape or a.rows != 1:
        raise ShapeError(f"sq_l2_diff needs equal 1 x k shapes, got {a.shape} and {b.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    value = np.array([[np.dot(diff[0], diff[0])]]).astype(_dtype(a, b))
    return _result(value, (a, b), lambda g: (2 * diff * g, -2 * diff * g), 'sq_l2_diff')


def sum_all(a: Tensor) -> Tensor:
    value = np.array([[a.data.sum(dtype=np.float64)]]).astype(a.data.dtype)
    return _result(value, (a,), lambda g: (np.full_like(a.data, g[0, 0]),), 'sum_all')


def softmax_cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean cross-entropy over the rows in ``mask``."""
    idx = np.asarray(mask, dtype=np.int64)
    if idx.size == 0:
        raise EmptyMask("cross-entropy over an empty mask")
    y = np.asarray(getattr(labels, 'labels', labels), dtype=np.int64)
    if len(y) != logits.rows:
        raise ShapeError(f"{len(y)} labels for {logits.rows} logit rows")
    z = logits.data[idx].astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    targets = y[idx]
    value = -log_probs[np.arange(idx.size), targets].mean()

    def grad(g):
        probs = np.exp(log_probs)
        probs[np.arange(idx.size), targets] -= 1
        z_grad = np.zeros(logits.shape)
        np.add.at(z_grad, idx, probs * (g[0, 0] / idx.size))
        return (z_grad,)

    return _result(np.array([[value]], dtype=logits.data.dtype), (logits,), grad, 'softmax_cross_entropy')


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    if p <= 0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1 - p)
    return _result(a.data * keep, (a,), lambda g: (g * keep,), 'dropout')


# ------------------------------------------------------ adjacency-shaped ops

def _check_square(a: Tensor, name: str):
    if a.rows != a.cols:
        raise ShapeError(f"{name} needs a square tensor, got {a.shape}")


def symmetrize(a: Tensor) -> Tensor:
    """(M + M^T) / 2."""
    _check_square(a, 'symmetrize')
    return _result((a.data + a.data.T) / 2, (a,), lambda g: ((g + g.T) / 2,), 'symmetrize')


def fill_diagonal(a: Tensor, value: float) -> Tensor:
    _check_square(a, 'fill_diagonal')
    out = a.data.copy()
    np.fill_diagonal(out, value)

    def grad(g):
        g = g.copy()
        np.fill_diagonal(g, 0)
        return (g,)

    return _result(out, (a,), grad, 'fill_diagonal')


def normalize_dense(a: Tensor) -> Tensor:
    """D^-1/2 A D^-1/2 with D the row sums of A (self-loops already in A)."""
    _check_square(a, 'normalize_dense')
    A = a.data.astype(np.float64)
    degrees = A.sum(axis=1)
    bad = np.flatnonzero(degrees <= 0)
    if bad.size:
        raise ZeroDegree(int(bad[0]))
    r = 1.0 / np.sqrt(degrees)
    outer = np.outer(r, r)

    def grad(g):
        ga = g * A
        d_r = ga @ r + ga.T @ r
        d_deg = d_r * (-0.5) * r ** 3
        return (g * outer + d_deg[:, None],)

    return _result((A * outer).astype(a.data.dtype), (a,), grad, 'normalize_dense')


def row_normalize_dense(a: Tensor) -> Tensor:
    """Row-stochastic A / rowsum(A); all-zero rows stay zero."""
    _check_square(a, 'row_normalize_dense')
    A = a.data.astype(np.float64)
    sums = A.sum(axis=1)
    inv = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)

    def grad(g):
        weighted = (g * A).sum(axis=1)
        return (g * inv[:, None] - (weighted * inv ** 2)[:, None],)

    return _result((A * inv[:, None]).astype(a.data.dtype), (a,), grad, 'row_normalize_dense')


def pairwise_mlp(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """out_ij = relu([x_i; x_j] W1 + b1) w2 + b2 for every node pair.

    ``w1`` is (2d x h); its halves act on x_i and x_j, so the N x N x h hidden
    tensor is built without materializing the N^2 concatenated inputs.
    """
    n, d = x.shape
    if w1.rows != 2 * d or b1.shape != (1, w1.cols) or w2.shape != (w1.cols, 1) or b2.shape != (1, 1):
        raise ShapeError("pairwise_mlp parameter shapes do not match the input width")
    dtype = _dtype(x, w1, b1, w2, b2)
    X = x.data.astype(dtype, copy=False)
    W1a, W1b = w1.data[:d].astype(dtype, copy=False), w1.data[d:].astype(dtype, copy=False)
    P, Q = X @ W1a, X @ W1b
    pre = P[:, None, :] + Q[None, :, :] + b1.data[0]
    hidden = np.maximum(pre, 0)
    w2v = w2.data[:, 0].astype(dtype, copy=False)
    out = hidden @ w2v + b2.data[0, 0]

    def grad(g):
        d_hidden = g[:, :, None] * w2v[None, None, :]
        d_pre = d_hidden * (pre > 0)
        dP = d_pre.sum(axis=1)
        dQ = d_pre.sum(axis=0)
        dX = dP @ W1a.T + dQ @ W1b.T
        dW1 = np.concatenate([X.T @ dP, X.T @ dQ], axis=0)
        db1 = d_pre.sum(axis=(0, 1), dtype=np.float64)[None, :]
        dw2 = np.tensordot(hidden, g, axes=([0, 1], [0, 1]))[:, None]
        db2 = np.array([[g.sum(dtype=np.float64)]])
        return dX, dW1, db1, dw2, db2

    return _result(out.astype(dtype), (x, w1, b1, w2, b2), grad, 'pairwise_mlp')


# ---------------------------------------------------------------- optimizers

@dataclass
class OptimizerState:
    lr: float
    weight_decay: float = 0.0
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)


class Optimizer:
    """Shared step logic. ``mode='ascend'`` maximizes the loss instead."""

    def __init__(self, params: Sequence[Tensor], lr: float, weight_decay: float = 0.0):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, weight_decay=weight_decay)

    def step(self, mode: str = 'descend'):
        if mode not in ('descend', 'ascend'):
            raise ValueError(f"unknown step mode {mode!r}")
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise GradNotComputed(f"parameters {missing} have no gradient; call backward first")
        self.state.step_count += 1
        sign = 1.0 if mode == 'descend' else -1.0
        for i, p in enumerate(self.params):
            # ascending L is descending -L; weight decay always pulls toward zero
            g = sign * p.grad.astype(np.float64) + self.state.weight_decay * p.data
            p.data = (p.data - self._update(i, g)).astype(p.data.dtype)
        self.zero_grad()

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def _update(self, i: int, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SGD(Optimizer):
    def _update(self, i, g):
        return self.state.lr * g


class Adam(Optimizer):
    def __init__(self, params, lr: float, weight_decay: float = 0.0,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr, weight_decay)
        self.state.betas = betas
        self.state.eps = eps
        self.state.first_moments = [np.zeros(p.shape) for p in self.params]
        self.state.second_moments = [np.zeros(p.shape) for p in self.params]

    def _update(self, i, g):
        s = self.state
        beta1, beta2 = s.betas
        m = s.first_moments[i] = beta1 * s.first_moments[i] + (1 - beta1) * g
        v = s.second_moments[i] = beta2 * s.second_moments[i] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** s.step_count)
        v_hat = v / (1 - beta2 ** s.step_count)
        return s.lr * m_hat / (np.sqrt(v_hat) + s.eps)


def set_requires_grad(params: Sequence[Tensor], flag: bool):
    for p in params:
        p.requires_grad = flag
        if not flag:
            p.grad = None


def numerical_gradient(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of the scalar ``fn()`` with respect to ``t``."""
    grad = np.zeros(t.shape, dtype=np.float64)
    for index in np.ndindex(*t.shape):
        original = t.data[index]
        t.data[index] = original + h
        plus = fn().item()
        t.data[index] = original - h
        minus = fn().item()
        t.data[index] = original
        grad[index] = (plus - minus) / (2 * h)
    return grad
