"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Every forward op records its inputs and a gradient closure on the result
node; ``backward`` walks the graph in reverse topological order and
accumulates gradients into every tensor that requires them. The tape is
the graph itself, so dropping the loss tensor releases it.

Design constraints: 64-bit precision throughout, deterministic forward
values for identical inputs, and analytic gradients that hold up against
central finite differences at 1e-4 relative error.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense float64 array plus an optional gradient tape node."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], Sequence[np.ndarray]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays are promoted to constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(values)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


def _reduce_to_shape(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = a.values + b.values

    def grad_fn(g):
        return _reduce_to_shape(g, a.shape), _reduce_to_shape(g, b.shape)

    return _make(out, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = a.values - b.values

    def grad_fn(g):
        return _reduce_to_shape(g, a.shape), _reduce_to_shape(-g, b.shape)

    return _make(out, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = a.values * b.values
    av, bv = a.values, b.values

    def grad_fn(g):
        return _reduce_to_shape(g * bv, a.shape), _reduce_to_shape(g * av, b.shape)

    return _make(out, (a, b), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; leading axes broadcast, both operands 2-D+."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.values, b.values)
    av, bv = a.values, b.values

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _reduce_to_shape(ga, a.shape), _reduce_to_shape(gb, b.shape)

    return _make(out, (a, b), grad_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ContractError("concat of zero tensors")
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), grad_fn)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.values.reshape(shape)
    orig = a.shape

    def grad_fn(g):
        return (g.reshape(orig),)

    return _make(out, (a,), grad_fn)


def transpose_last2(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError(f"transpose_last2 needs 2-D+, got {a.shape}")
    out = np.swapaxes(a.values, -1, -2)

    def grad_fn(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(out, (a,), grad_fn)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.values, 0.0)
    pos = a.values > 0.0

    def grad_fn(g):
        return (g * pos,)

    return _make(out, (a,), grad_fn)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(a.values >= 0.0, a.values, slope * a.values)
    factor = np.where(a.values >= 0.0, 1.0, slope)

    def grad_fn(g):
        return (g * factor,)

    return _make(out, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), grad_fn)


def softmax_masked(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise softmax over the last axis restricted to ``mask``.

    Masked-out entries get weight exactly 0; every row must keep at least
    one admissible entry (callers guarantee this via self-inclusion).
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
    if not m.any(axis=-1).all():
        raise ContractError("softmax_masked: a row has an empty neighborhood")
    neg = np.where(m, scores.values, -np.inf)
    shifted = neg - neg.max(axis=-1, keepdims=True)
    expv = np.where(m, np.exp(shifted), 0.0)
    out = expv / expv.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (scores,), grad_fn)


def reduce_sum(a: Tensor, axis: int | tuple[int, ...] | None = None,
               keepdims: bool = False) -> Tensor:
    out = a.values.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def grad_fn(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(out, (a,), grad_fn)


def reduce_mean(a: Tensor, axis: int | tuple[int, ...] | None = None,
                keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def shift_time(a: Tensor) -> Tensor:
    """Shift axis 1 (time) one step forward; step 0 repeats itself.

    out[:, 0] = a[:, 0] and out[:, t] = a[:, t-1], the boundary rule for
    temporal attention where the first frame is its own predecessor.
    """
    if a.ndim < 2:
        raise ShapeError(f"shift_time needs a time axis at dim 1, got {a.shape}")
    out = np.concatenate([a.values[:, :1], a.values[:, :-1]], axis=1)

    def grad_fn(g):
        gi = np.zeros(a.shape)
        gi[:, :-1] += g[:, 1:]
        gi[:, 0] += g[:, 0]
        return (gi,)

    return _make(out, (a,), grad_fn)


def tile_time(a: Tensor, steps: int) -> Tensor:
    """Insert a time axis at dim 1 and repeat ``steps`` times."""
    out = np.broadcast_to(a.values[:, None], (a.shape[0], steps) + a.shape[1:]).copy()

    def grad_fn(g):
        return (g.sum(axis=1),)

    return _make(out, (a,), grad_fn)


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows along axis -2 (``out[..., k, :] = a[..., index[k], :]``)."""
    idx = np.asarray(index, dtype=np.intp)
    sel = np.zeros((idx.shape[0], a.shape[-2]))
    sel[np.arange(idx.shape[0]), idx] = 1.0
    return matmul(Tensor(sel), a)


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Accumulate d loss / d t into ``t.grad`` for every requires_grad tensor.

    Returns the gradient map keyed by ``id(tensor)`` for callers that want
    gradients of non-parameter intermediates.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any requires_grad tensor")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node._grad_fn is None:
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg

    for node in topo:
        if node.requires_grad and id(node) in grads:
            g = grads[id(node)]
            node.grad = g if node.grad is None else node.grad + g
    return grads


def finite_difference(fn: Callable[[np.ndarray], float], x: np.ndarray,
                      step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, the gradient oracle."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        hi = fn(x)
        xf[i] = orig - step
        lo = fn(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad
