"""Dense float tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a row-major numpy array of float32 or float64.
Every public op returns a new tensor, checks the result for NaN/Inf, and
(when gradients are enabled and any input requires them) attaches a
:class:`Node` recording the parents and a closed-form backward rule.
Calling :meth:`Tensor.backward` or :func:`grad` walks that graph once in
reverse topological order.

Live tensor payload bytes are tracked by :data:`memory`, which is what the
benchmarks report as ``peak_bytes``.
"""

from __future__ import annotations

import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import fft
from .errors import ConfigError, ContractError, DimensionError, NonFiniteError, OutOfMemoryError

DTYPES = {"f32": np.float32, "f64": np.float64}


def resolve_dtype(name) -> type:
    if name in (np.float32, np.float64):
        return name
    try:
        return DTYPES[str(name)]
    except KeyError:
        raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got {name!r}") from None


def default_dtype() -> type:
    """Working precision for tests and self-checks (``HRRFORMER_DTYPE``, default f64)."""
    return resolve_dtype(os.environ.get("HRRFORMER_DTYPE", "f64"))


class MemoryTracker:
    """Counts bytes held by live tensors and remembers the high-water mark."""

    def __init__(self):
        self._lock = threading.Lock()
        self.live = 0
        self.peak = 0
        self.limit: Optional[int] = None

    def alloc(self, nbytes: int) -> None:
        with self._lock:
            if self.limit is not None and self.live + nbytes > self.limit:
                raise OutOfMemoryError(
                    f"allocating {nbytes} bytes would exceed the {self.limit}-byte budget "
                    f"({self.live} live)"
                )
            self.live += nbytes
            if self.live > self.peak:
                self.peak = self.live

    def free(self, nbytes: int) -> None:
        with self._lock:
            self.live -= nbytes

    def reset_peak(self) -> None:
        with self._lock:
            self.peak = self.live

    @contextmanager
    def budget(self, limit: Optional[int]):
        old, self.limit = self.limit, limit
        try:
            yield self
        finally:
            self.limit = old


memory = MemoryTracker()

_grad_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


@dataclass(eq=False)
class Node:
    """One recorded operation: its name, inputs and backward rule.

    ``backward`` maps the upstream gradient (an ndarray shaped like the
    output) to one gradient per parent, ``None`` for parents that need none.
    """

    op: str
    parents: tuple
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "_nbytes", "__weakref__")

    def __init__(self, data, dtype=None, requires_grad: bool = False, *, _op: str = "tensor"):
        self._nbytes = 0
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(resolve_dtype(dtype), copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{_op} produced non-finite values")
        memory.alloc(arr.nbytes)
        self._nbytes = arr.nbytes
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[Tensor] = None
        self.node: Optional[Node] = None

    def __del__(self):
        if self._nbytes:
            memory.free(self._nbytes)

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        for leaf, g in _backprop(self).items():
            if leaf.grad is None:
                leaf.grad = Tensor(g, dtype=leaf.dtype, _op="grad")
            else:
                leaf.grad = Tensor(leaf.grad.data + g, _op="grad")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_op(data: np.ndarray, op: str, parents: Iterable[Tensor], backward) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it on the tape if needed.

    Extension point for fused operations defined outside this module.
    """
    parents = tuple(parents)
    out = Tensor(data, _op=op)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(op, parents, backward)
    return out


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def _backprop(loss: Tensor) -> dict:
    if loss.size != 1:
        raise ContractError(f"gradient requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on the tape (no input requires grad)")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for t in reversed(_topological(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            leaves[t] = g
            continue
        for p, pg in zip(t.node.parents, t.node.backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise DimensionError(f"{t.node.op}: gradient shape {pg.shape} != input shape {p.shape}")
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    return leaves


def grad(loss: Tensor, params: Sequence[Tensor]) -> list:
    """Gradients of a scalar ``loss`` with respect to each of ``params``.

    Parameters the loss does not depend on get a zero gradient.
    """
    leaves = {id(k): v for k, v in _backprop(loss).items()}
    return [Tensor(leaves.get(id(p), np.zeros_like(p.data)), _op="grad") for p in params]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a} and {b} do not broadcast") from None


# -- elementwise ---------------------------------------------------------------

def _pair(a, b) -> tuple:
    # plain numbers/arrays adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, "add", (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, "sub", (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return make_op(ad * bd, "mul", (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return make_op(x.data * x.dtype.type(c), "scale", (x,), lambda g: (g * c,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return make_op(np.where(on, x.data, 0).astype(x.dtype), "relu", (x,), lambda g: (g * on,))


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; the identity when ``rate == 0`` or ``rng`` is None."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return make_op(x.data * keep, "dropout", (x,), lambda g: (g * keep,))


# -- shape ---------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {old} into {tuple(shape)}") from None
    return make_op(data, "reshape", (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for {x.ndim}-d tensor")
    inv = tuple(np.argsort(axes))
    return make_op(np.ascontiguousarray(x.data.transpose(axes)), "transpose", (x,),
                   lambda g: (g.transpose(inv),))


# -- reductions ----------------------------------------------------------------

def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_op(np.asarray(out, dtype=x.dtype), "reduce_sum", (x,), backward)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(reduce_sum(x, axis, keepdims), 1.0 / n)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes.

    ``b`` may be a plain 2-D weight shared across ``a``'s leading axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return _unbroadcast(ga, ad.shape), gb

    return make_op(ad @ bd, "matmul", (a, b), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` (V, E) at integer ``ids``; output ``ids.shape + (E,)``."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError(f"embedding ids must be integers, got {ids.dtype}")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"embedding id out of range [0, {vocab}): min {ids.min()}, max {ids.max()}")
    tdata = table.data

    def backward(g):
        gt = np.zeros_like(tdata)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, tdata.shape[-1]))
        return (gt,)

    return make_op(tdata[ids], "embedding_lookup", (table,), backward)


# -- normalization and losses --------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    """Max-shifted, exp-normalized along ``axis``."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for {x.ndim}-d tensor")
    y = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op(y, "softmax", (x,), backward)


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"expected logits (B, C) and labels (B,), got {logits.shape}, {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, labels])

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return make_op(np.asarray(loss, dtype=logits.dtype), "cross_entropy", (logits,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm params must have shape ({x.shape[-1]},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_op(xhat * gd + bias.data, "layer_norm", (x, gain, bias), backward)


# -- circular convolution ------------------------------------------------------

def _conv_backward(g: np.ndarray, xs: np.ndarray, ys: np.ndarray, n: int):
    """Gradients of ``irfft(xs * ys)``: circular correlation with the other operand."""
    gs = fft.rfft(g)
    return fft.irfft(gs * np.conj(ys), n), fft.irfft(gs * np.conj(xs), n)


def rfft_circular_conv(x, y) -> Tensor:
    """Circular convolution along the last axis via the real FFT.

    Leading axes broadcast.  An operand with fewer leading rows is only
    transformed once per row, so a broadcast operand costs fewer transforms.
    """
    x, y = as_tensor(x), as_tensor(y)
    n = x.shape[-1]
    if y.shape[-1] != n:
        raise DimensionError(f"circular convolution needs equal trailing extents, got {x.shape} and {y.shape}")
    _broadcast_shape(x.shape[:-1], y.shape[:-1], "rfft_circular_conv")
    xs, ys = fft.rfft(x.data), fft.rfft(y.data)
    sx, sy = x.shape, y.shape

    def backward(g):
        gx, gy = _conv_backward(g, xs, ys, n)
        return _unbroadcast(gx, sx), _unbroadcast(gy, sy)

    return make_op(fft.irfft(xs * ys, n), "rfft_circular_conv", (x, y), backward)
