"""Small reverse-mode automatic differentiation over dense float64 arrays.

Each :class:`Tensor` produced by an op keeps references to its parents and
a closure mapping the output gradient to parent gradients; :func:`backward`
walks that graph in reverse topological order. Only the ops the encoder and
the training losses need are provided.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NonScalarLoss, ShapeMismatch

_ST_ENABLED = [True]


@contextlib.contextmanager
def straight_through(enabled: bool):
    """Toggle the identity backward of the discrete sampling ops.

    With ``enabled=False`` the samplers have zero Jacobian, which is the true
    derivative almost everywhere; finite-difference checks use this mode.
    """
    _ST_ENABLED.append(bool(enabled))
    try:
        yield
    finally:
        _ST_ENABLED.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _backward=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    __array_priority__ = 100

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __matmul__(self, o): return matmul(self, o)
    def __neg__(self): return neg(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward_fn, op)
    return Tensor(data, False, (), None, op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


elementwise_mul = mul


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def broadcast_add_row(a, row) -> Tensor:
    """``a`` (n, k) plus a length-k row added to every row."""
    a, row = as_tensor(a), as_tensor(row)
    if a.ndim != 2 or row.shape != (a.shape[1],):
        raise ShapeMismatch(f"broadcast_add_row: {a.shape} and {row.shape}")
    return add(a, row)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


# ---------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------- elementwise

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _make(_softplus(a.data), (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------- shape ops

def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in ts]} along axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def slice(a, start: int, stop: int, axis: int = -1) -> Tensor:  # noqa: A001
    """Contiguous sub-range ``[start, stop)`` along ``axis``."""
    a = as_tensor(a)
    key = [np.s_[:]] * a.ndim
    key[axis] = np.s_[start:stop]
    key = tuple(key)

    def bw(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _make(a.data[key], (a,), bw, "slice")


def take(a, idx) -> Tensor:
    """Gather along axis 0 with repeats allowed (``a[idx]``)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        if a.ndim == 1:
            return (np.bincount(idx, weights=g, minlength=a.shape[0]),)
        scatter = sp.csr_matrix(
            (np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(a.shape[0], len(idx))
        )
        return (np.asarray(scatter @ g.reshape(len(idx), -1)).reshape(a.shape),)

    return _make(a.data[idx], (a,), bw, "take")


# ---------------------------------------------------------------- graph ops

class EdgeIndex:
    """Directed message list ``src[e] -> dst[e]`` on ``n`` nodes.

    Messages are kept in a CSR layout (row = dst, column = src) so weighted
    aggregation is a single sparse-dense product.
    """

    __slots__ = ("src", "dst", "n", "order", "indptr", "indices", "dst_sorted")

    def __init__(self, src, dst, n: int):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.n = int(n)
        self.order = np.argsort(self.dst, kind="stable")
        self.indices = self.src[self.order].astype(np.int32)
        self.dst_sorted = self.dst[self.order]
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(self.dst, minlength=self.n))]).astype(np.int32)

    def __len__(self) -> int:
        return len(self.src)

    def matrix(self, values: np.ndarray) -> sp.csr_matrix:
        """n x n sparse matrix with ``values[e]`` at (dst[e], src[e]); repeated pairs add up."""
        return sp.csr_matrix((values[self.order], self.indices, self.indptr), shape=(self.n, self.n))

    def incoming_total(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.dst, weights=values, minlength=self.n)


def neighbor_mean(weights, x, index: EdgeIndex) -> Tensor:
    """Weighted mean of ``x[src]`` over incoming messages at each ``dst``.

    Nodes with zero total incoming weight get a zero row.
    """
    w, x = as_tensor(weights), as_tensor(x)
    if w.shape != (len(index),) or x.ndim != 2 or x.shape[0] != index.n:
        raise ShapeMismatch(f"neighbor_mean: weights {w.shape}, x {x.shape}, {len(index)} messages on {index.n} nodes")
    total = index.incoming_total(w.data)
    inv = np.divide(1.0, total, out=np.zeros_like(total), where=total > 0)
    norm = index.matrix(w.data * inv[index.dst])
    out = norm @ x.data

    def bw(g):
        gx = norm.T @ g if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gs = g * inv[:, None]
            # d out_i / d w_e = (x_src - out_i) / total_i for messages e into i
            gw = np.einsum("ef,ef->e", gs[index.dst], x.data[index.src]) - np.einsum("if,if->i", gs, out)[index.dst]
        return gw, gx

    return _make(out, (w, x), bw, "neighbor_mean")


# ---------------------------------------------------------------- discrete samplers

def bernoulli_st(p, uniforms) -> Tensor:
    """Hard Bernoulli sample ``1[u < p]`` with straight-through (identity) backward."""
    p = as_tensor(p)
    u = np.asarray(uniforms, dtype=np.float64)
    if u.shape != p.shape:
        raise ShapeMismatch(f"bernoulli_st: uniforms {u.shape} vs p {p.shape}")
    st = _ST_ENABLED[-1]
    return _make((u < p.data).astype(np.float64), (p,),
                 lambda g: (g if st else np.zeros_like(g),), "bernoulli_st")


def threshold_st(p, threshold: float = 0.5) -> Tensor:
    """Hard ``1[p >= threshold]`` with straight-through backward."""
    p = as_tensor(p)
    st = _ST_ENABLED[-1]
    return _make((p.data >= threshold).astype(np.float64), (p,),
                 lambda g: (g if st else np.zeros_like(g),), "threshold_st")


# ---------------------------------------------------------------- backward pass

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor upstream of the scalar ``loss``.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    """
    if loss.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents:
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        else:
            node.grad = g if node.grad is None else node.grad + g


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    floor: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative disagreement between tape and central-difference gradients.

    ``f`` must be deterministic. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    ``max_coords`` limits the check to a random subset of coordinates per tensor.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            num = (up - down) / (2.0 * h)
            ana = a.reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return worst
