"""Dense tensors with reverse-mode automatic differentiation.

A minimal tape: every operation produces a new :class:`Tensor` holding the
forward value, links to its parent tensors, and a closure that maps the
output gradient to parent gradients.  ``backward`` walks the implicit graph
once in reverse topological order and accumulates gradients on every node
that requires them.

Values are float64 by default (float32 available via ``set_default_dtype``
for speed; gradient checking assumes float64).  Every op validates its
output for NaN/Inf so a poisoned training step fails immediately instead of
propagating garbage.  Nothing here is fused: softmax/log_softmax are the
only compound primitives and both use max-subtraction for stability.

Graph construction and backward are single-threaded; tensors are immutable
values once created (optimizers update parameter ``data`` in place between
graph builds, never inside one).
"""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

_DTYPE = np.float64
_GRAD_ENABLED = True


class NumericError(RuntimeError):
    """Non-finite forward value or structural misuse of the graph."""


def set_default_dtype(dtype) -> None:
    """Set dtype for newly created tensors (float32 or float64)."""
    global _DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be numpy float32 or float64")
    _DTYPE = dtype


def default_dtype():
    return _DTYPE


class no_grad:
    """Context manager: ops inside build no graph (pure forward)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A dense array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NumericError(
                f"non-finite value in tensor{' ' + name if name else ''} "
                f"(shape {arr.shape})"
            )
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        head = f"Tensor(shape={self.shape}"
        if self.name:
            head += f", name={self.name!r}"
        return head + ")"

    # operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)


def tensor(data) -> Tensor:
    """A constant (no gradient) tensor."""
    return Tensor(data)


def parameter(data, name=None) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    if not _GRAD_ENABLED:
        return Tensor(data)
    if any(p.requires_grad or p._backward is not None for p in parents):
        return Tensor(data, _parents=tuple(parents), _backward=backward_fn)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient down to `shape`, reversing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise NumericError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise NumericError("transpose expects a 2-D tensor")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis=0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise NumericError("concat of no tensors")
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bw)


def stack_rows(vectors) -> Tensor:
    """Stack 1-D tensors of equal length into a 2-D tensor."""
    rows = [reshape(v, (1, v.size)) for v in vectors]
    return concat(rows, axis=0)


def tslice(a: Tensor, key) -> Tensor:
    """Basic (int/slice/tuple-of-those) indexing with gradient scatter."""
    if isinstance(key, (list, np.ndarray)):
        raise NumericError("fancy indexing not supported; use gather_rows")
    out = a.data[key]
    shape = a.shape

    def bw(g):
        buf = np.zeros(shape, dtype=a.data.dtype)
        buf[key] = g
        return (buf,)

    return _make(np.array(out, copy=True), (a,), bw)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows (axis 0) by integer indices; duplicates accumulate on backward."""
    idx = np.asarray(indices, dtype=np.intp)
    shape = a.shape

    def bw(g):
        buf = np.zeros(shape, dtype=a.data.dtype)
        np.add.at(buf, idx, g)
        return (buf,)

    return _make(a.data[idx].copy(), (a,), bw)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _make(out, (a,), lambda g: (g * (a.data > 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def softmax(a: Tensor, axis=-1) -> Tensor:
    """Probability simplex along `axis`, computed with max-subtraction."""
    if a.size == 0:
        raise NumericError("softmax of empty tensor")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), bw)


def log_softmax(a: Tensor, axis=-1) -> Tensor:
    if a.size == 0:
        raise NumericError("log_softmax of empty tensor")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), bw)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _topo_order(root: Tensor):
    """Iterative post-order over parent links; each node visited once."""
    order, seen, stack = [], set(), [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None, debug=False):
    """Reverse-mode pass from a scalar `loss`.

    Accumulates into ``.grad`` of every tensor that requires a gradient.
    When `params` (iterable of tensors) is given, returns their gradients
    as a list aligned with the input; parameters disconnected from the
    loss get zeros (and a debug log entry when `debug` is set).
    """
    if loss.size != 1:
        raise NumericError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not (p.requires_grad or p._backward is not None):
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    if params is None:
        return None
    out = []
    for p in params:
        if p.grad is None:
            if debug:
                logger.debug("parameter %s disconnected from loss; gradient is zero",
                             p.name or "<unnamed>")
            out.append(np.zeros_like(p.data))
        else:
            out.append(p.grad)
    return out


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
