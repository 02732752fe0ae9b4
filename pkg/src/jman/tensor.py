"""Dense float64 tensors with a reverse-mode gradient tape and Adam.

Only rank 0, 1 and 2 arrays are supported.  Binary elementwise ops accept
equal shapes, or a rank-2 operand paired with a rank-1 vector that is
broadcast across rows (``(m, n) op (n,)``).  Anything else is a
:class:`DimensionError`.

Every op output remembers its parents and a closure mapping the output
gradient to parent gradients.  Outputs carry a global creation counter, so
sorting the reachable graph by that counter in descending order replays the
tape in reverse execution order.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, DimensionError, ParameterError, UsageError

_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise DimensionError(f"rank {arr.ndim} tensors are not supported (shape {arr.shape})")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_counter)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() on a tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    """Wrap an op result; record it on the tape when any parent needs grads."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_counter)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


# -- tape replay ---------------------------------------------------------


class Tape:
    """The recorded subgraph behind one output, in execution order."""

    def __init__(self, root: Tensor):
        seen = {id(root)}
        stack = [root]
        nodes = []
        while stack:
            node = stack.pop()
            nodes.append(node)
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda n: n._seq)
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self, root: Tensor, seed: np.ndarray) -> None:
        grads = {id(root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Tape(loss).replay(loss, np.ones_like(loss.data))


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# -- linear algebra -------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    A, B = a.data, b.data
    if A.ndim == 0 or B.ndim == 0 or A.shape[-1] != B.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {A.shape} @ {B.shape}")
    out = A @ B

    if A.ndim == 2 and B.ndim == 2:
        def bw(g):
            return g @ B.T, A.T @ g
    elif A.ndim == 2:
        def bw(g):
            return np.outer(g, B), A.T @ g
    elif B.ndim == 2:
        def bw(g):
            return B @ g, np.outer(A, g)
    else:
        def bw(g):
            return g * B, g * A
    return _make(out, (a, b), bw)


def transpose(x: Tensor) -> Tensor:
    if x.ndim < 2:
        return x
    return _make(x.data.T, (x,), lambda g: (g.T,))


# -- elementwise ----------------------------------------------------------


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    A, B = a.data, b.data
    _check_broadcast(A, B, "mul")
    return _make(A * B, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form never overflows for large |v|
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def rowscale(x: Tensor, w: Tensor) -> Tensor:
    """Scale row ``t`` of a (T, d) tensor by ``w[t]``."""
    X, W = x.data, w.data
    if X.ndim != 2 or W.shape != (X.shape[0],):
        raise DimensionError(f"rowscale: need (T, d) and (T,), got {X.shape} and {W.shape}")
    Wc = W[:, None]
    return _make(X * Wc, (x, w), lambda g: (g * Wc, (g * X).sum(axis=1)))


def broadcast_rows(v: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of a vector into an (n, d) tensor."""
    if v.ndim != 1:
        raise DimensionError(f"broadcast_rows expects a vector, got {v.shape}")
    return _make(np.tile(v.data, (n, 1)), (v,), lambda g: (g.sum(axis=0),))


# -- reductions and normalisation ----------------------------------------


def _check_axis(x: np.ndarray, axis: int | None, op: str) -> None:
    if axis is not None and not (-x.ndim <= axis < x.ndim):
        raise DimensionError(f"{op}: axis {axis} invalid for shape {x.shape}")


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    X = x.data
    _check_axis(X, axis, "sum")
    out = X.sum(axis=axis)
    if axis is None:
        return _make(np.asarray(out), (x,), lambda g: (np.broadcast_to(g, X.shape).copy(),))
    return _make(out, (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), X.shape).copy(),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    X = x.data
    _check_axis(X, axis, "mean")
    n = X.size if axis is None else X.shape[axis]
    return scale(sum(x, axis), 1.0 / n)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    X = x.data
    _check_axis(X, axis, "softmax")
    if X.ndim == 0 or X.shape[axis] == 0:
        raise DimensionError(f"softmax over an empty axis (shape {X.shape})")
    e = np.exp(X - X.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw)


# -- structural ------------------------------------------------------------


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DimensionError("concat of an empty list")
    arrays = [p.data for p in parts]
    ndim = arrays[0].ndim
    for a in arrays:
        if a.ndim != ndim:
            raise DimensionError(f"concat: mixed ranks {[x.shape for x in arrays]}")
        if ndim == 2:
            other = 1 - axis % 2
            if a.shape[other] != arrays[0].shape[other]:
                raise DimensionError(f"concat: off-axis dims differ {[x.shape for x in arrays]}")
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(parts), bw)


def take(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    X = x.data
    _check_axis(X, axis, "take")
    idx = [slice(None)] * X.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bw(g):
        full = np.zeros_like(X)
        full[idx] = g
        return (full,)

    return _make(X[idx], (x,), bw)


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    if int(np.sum(sizes)) != x.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover axis of length {x.shape[axis]}")
    out, start = [], 0
    for n in sizes:
        out.append(take(x, start, start + n, axis))
        start += n
    return out


def gather_rows(table: Tensor, index: Sequence[int], skip_index: int | None = None) -> Tensor:
    """Row lookup ``table[index]``; rows equal to ``skip_index`` receive no gradient."""
    T = table.data
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= T.shape[0]):
        raise DataError(f"row index out of range [0, {T.shape[0]}): {idx.tolist()}")

    def bw(g):
        full = np.zeros_like(T)
        np.add.at(full, idx, g)
        if skip_index is not None:
            full[skip_index] = 0.0
        return (full,)

    return _make(T[idx], (table,), bw)


# -- stochastic and loss ops ----------------------------------------------


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise UsageError("training-mode dropout needs a seeded generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def cross_entropy(logits: Tensor, targets: Sequence[int], ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``.

    ``logits`` is (batch, V) or a single (V,) row.  Positions whose target
    equals ``ignore_index`` are excluded from the mean.
    """
    L = logits.data
    squeeze = L.ndim == 1
    L2 = L[None, :] if squeeze else L
    tgt = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if L2.ndim != 2 or tgt.shape != (L2.shape[0],):
        raise DimensionError(f"cross_entropy: logits {L.shape} vs targets {tgt.shape}")
    V = L2.shape[1]
    keep = np.ones_like(tgt, dtype=bool) if ignore_index is None else tgt != ignore_index
    bad = (tgt[keep] < 0) | (tgt[keep] >= V)
    if bad.any():
        raise DataError(f"target index out of range [0, {V}): {tgt[keep][bad].tolist()}")
    n = int(keep.sum())
    if n == 0:
        raise DataError("cross_entropy: every position is masked")
    shifted = L2 - L2.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.nonzero(keep)[0]
    nll = logz[rows] - shifted[rows, tgt[rows]]
    loss = nll.sum() / n

    def bw(g):
        p = np.exp(shifted - logz[:, None])
        p[rows, tgt[rows]] -= 1.0
        p[~keep] = 0.0
        p *= g / n
        return (p[0] if squeeze else p,)

    return _make(np.asarray(loss), (logits,), bw)


# -- optimisation ---------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, mutating ``params`` in place."""
    if len(params) != len(grads):
        raise UsageError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise UsageError("adam_step: optimizer state was built for a different parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise UsageError(f"adam_step: shape mismatch param {p.shape} grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 0.001, **kw):
        self.params = list(params)
        self.state = AdamState(lr=lr, **kw)

    def zero_grad(self) -> None:
        zero_grads(self.params)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)


# -- finite differences ---------------------------------------------------


def numerical_grad(f: Callable[[], float], x: Tensor, index: tuple, h: float = 1e-5) -> float:
    """Central difference of the scalar ``f()`` w.r.t. ``x.data[index]``."""
    orig = x.data[index]
    x.data[index] = orig + h
    fp = f()
    x.data[index] = orig - h
    fm = f()
    x.data[index] = orig
    return (fp - fm) / (2.0 * h)


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    samples: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between tape and central-difference gradients.

    ``loss_fn`` must be deterministic (reseed any dropout generator inside it).
    With ``samples`` set, that many random coordinates per parameter are
    checked instead of all of them.
    """
    zero_grads(params)
    backward(loss_fn())
    analytic = [p.grad.copy() for p in params]

    def f():
        with no_grad():
            return float(loss_fn().data)

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p, ga in zip(params, analytic):
        coords = list(np.ndindex(*p.shape)) if p.ndim else [()]
        if samples is not None and len(coords) > samples:
            pick = rng.choice(len(coords), size=samples, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for idx in coords:
            num = numerical_grad(f, p, idx, h)
            worst = max(worst, relative_error(float(ga[idx]), num, floor))
    return worst
