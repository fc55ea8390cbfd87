"""Dense tensors with a reverse-mode gradient tape.

Every differentiable operation produces a new :class:`Tensor` holding a
reference to its inputs and a closure mapping the upstream gradient to one
gradient per input. :meth:`Tensor.backward` orders the recorded graph with a
:class:`GradTape` and replays it in reverse.

Elementwise binary operations require identical shapes. The only implicit
broadcast is against non-differentiable constants (Python scalars or numpy
arrays); differentiable broadcasting goes through :func:`expand` or
:func:`bias_add`, whose adjoints are explicit reductions.
"""

from __future__ import annotations

import contextlib
import os
import threading
from collections import Counter

import numpy as np

from ..errors import DimensionError

_local = threading.local()


def _verify_from_env():
    return os.environ.get("DEPTHCRF_VERIFY", "") not in ("", "0")


def default_dtype():
    """Float dtype used for new tensors: float32, or float64 in verification mode."""
    dt = getattr(_local, "dtype", None)
    if dt is None:
        dt = np.float64 if _verify_from_env() else np.float32
        _local.dtype = dt
    return dt


@contextlib.contextmanager
def verification_mode(enabled=True):
    """Create tensors in 64-bit precision inside the block."""
    prev = default_dtype()
    _local.dtype = np.float64 if enabled else np.float32
    try:
        yield
    finally:
        _local.dtype = prev


def is_grad_enabled():
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


# --- multiply-accumulate instrumentation -----------------------------------


class MacCounter:
    """Accumulates multiply-accumulate counts per scope tag."""

    def __init__(self):
        self.by_tag = Counter()
        self.total = 0
        self.events = []  # (kind, info) pairs noted by layers while counting

    def add(self, n):
        n = int(n)
        self.total += n
        for tag in getattr(_local, "scopes", ()):
            self.by_tag[tag] += n


@contextlib.contextmanager
def count_macs():
    counter = MacCounter()
    prev = getattr(_local, "macs", None)
    _local.macs = counter
    try:
        yield counter
    finally:
        _local.macs = prev


@contextlib.contextmanager
def mac_scope(tag):
    """Attribute MACs recorded inside the block to ``tag`` as well."""
    prev = getattr(_local, "scopes", ())
    _local.scopes = prev + (tag,)
    try:
        yield
    finally:
        _local.scopes = prev


def record_macs(n):
    counter = getattr(_local, "macs", None)
    if counter is not None:
        counter.add(n)


def record_event(kind, **info):
    """Note a structural fact (e.g. an attention layer's token count) while counting."""
    counter = getattr(_local, "macs", None)
    if counter is not None:
        counter.events.append((kind, info))


# --- tensor ------------------------------------------------------------------


class Tensor:
    """N-dimensional float array participating in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = np.array(data, dtype=dtype or default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def _wrap(cls, data):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._backward = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def __len__(self):
        return self.shape[0]

    def backward(self, grad=None):
        """Populate ``.grad`` on every differentiable tensor reachable from ``self``."""
        if self.size != 1 and grad is None:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if grad is None:
            grad = np.ones_like(self.data)
        GradTape(self).replay(np.asarray(grad, dtype=self.dtype))

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(self, o)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return add(neg(self), o)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(self, o)

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        from .functional import matmul

        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _result(data, parents, backward):
    out = Tensor._wrap(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


class GradTape:
    """Topologically ordered record of the operations that produced ``root``.

    ``nodes`` lists each differentiable tensor once, inputs before outputs.
    """

    def __init__(self, root):
        self.root = root
        self.nodes = self._order(root)

    @staticmethod
    def _order(root):
        if not root.requires_grad:
            return []
        order, seen = [], {id(root)}
        stack = [(root, iter(root._parents))]
        while stack:
            node, it = stack[-1]
            for p in it:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append((p, iter(p._parents)))
                    break
            else:
                stack.pop()
                order.append(node)
        return order

    def replay(self, seed):
        grads = {id(self.root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


# --- elementwise ------------------------------------------------------------


def _const(o, like):
    """Return ``o`` as a constant array, checking it broadcasts to ``like``'s shape."""
    arr = np.asarray(o, dtype=like.dtype)
    if arr.ndim and np.broadcast_shapes(arr.shape, like.shape) != like.shape:
        raise DimensionError(f"constant of shape {arr.shape} does not broadcast to {like.shape}")
    return arr


def _same_shape(a, b, op):
    if a.shape != b.shape:
        bad = [i for i, (x, y) in enumerate(zip(a.shape, b.shape)) if x != y]
        if a.ndim != b.ndim:
            msg = f"rank {a.ndim} vs {b.ndim}"
        else:
            msg = "axes " + ", ".join(f"{i} ({a.shape[i]} vs {b.shape[i]})" for i in bad)
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}: {msg}")


def add(a, b):
    if not isinstance(b, Tensor):
        c = _const(b, a)
        return _result(a.data + c, (a,), lambda g: (g,))
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    if not isinstance(b, Tensor):
        c = _const(b, a)
        return _result(a.data - c, (a,), lambda g: (g,))
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    if not isinstance(b, Tensor):
        c = _const(b, a)
        return _result(a.data * c, (a,), lambda g: (g * c,))
    _same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    if not isinstance(b, Tensor):
        c = _const(b, a)
        return _result(a.data / c, (a,), lambda g: (g / c,))
    _same_shape(a, b, "div")
    out = a.data / b.data
    return _result(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def power(a, p):
    p = float(p)
    return _result(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    """Square root; the gradient at exactly zero is taken as zero."""
    out = np.sqrt(a.data)

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, g / (2 * out), 0.0)
        return (d.astype(a.dtype, copy=False),)

    return _result(out, (a,), back)


def clamp_min(a, lo):
    """``max(a, lo)`` with the gradient routed only where ``a > lo``."""
    keep = a.data > lo
    return _result(np.where(keep, a.data, lo).astype(a.dtype), (a,), lambda g: (g * keep,))


def abs_(a):
    s = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * s,))


# --- reductions -------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), back)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _result(np.asarray(out, dtype=a.dtype), (a,), back)


# --- shape manipulation -----------------------------------------------------


def reshape(a, shape):
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def permute(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def expand(a, shape):
    """Broadcast ``a`` to ``shape``; the adjoint sums over the broadcast axes."""
    shape = tuple(shape)
    if a.ndim != len(shape):
        raise DimensionError(f"expand: rank {a.ndim} vs target rank {len(shape)}")
    axes = []
    for i, (s, t) in enumerate(zip(a.shape, shape)):
        if s != t:
            if s != 1:
                raise DimensionError(f"expand: axis {i} has size {s}, cannot expand to {t}")
            axes.append(i)
    axes = tuple(axes)
    return _result(np.broadcast_to(a.data, shape), (a,), lambda g: (g.sum(axis=axes, keepdims=True),))


def bias_add(x, b, axis=1):
    """Add a 1-D bias along ``axis`` of ``x`` (the per-channel bias broadcast)."""
    axis = axis % x.ndim
    if b.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise DimensionError(f"bias_add: bias shape {b.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    other = tuple(i for i in range(x.ndim) if i != axis)
    return _result(x.data + b.data.reshape(view), (x, b), lambda g: (g, g.sum(axis=other)))


def getitem(a, idx):
    def back(g):
        out = np.zeros_like(a.data)
        if _advanced(idx):
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return _result(np.asarray(a.data[idx]), (a,), back)


def _advanced(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def take(a, indices, axis=0):
    """Gather entries of ``a`` along ``axis`` at integer ``indices`` (any shape)."""
    indices = np.asarray(indices)
    axis = axis % a.ndim

    def back(g):
        out = np.zeros_like(a.data)
        moved = np.moveaxis(out, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (out,)

    return _result(np.take(a.data, indices, axis=axis), (a,), back)


def concat(tensors, axis=0):
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != axis
        ):
            raise DimensionError(f"concat along axis {axis}: {tensors[0].shape} vs {t.shape}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


def pad(a, widths):
    """Zero-pad; ``widths`` is a per-axis sequence of (before, after)."""
    widths = tuple(tuple(w) for w in widths)
    sl = tuple(slice(lo, a.shape[i] + lo) for i, (lo, _) in enumerate(widths))
    return _result(np.pad(a.data, widths), (a,), lambda g: (g[sl],))


def roll(a, shifts, axes):
    shifts, axes = tuple(shifts), tuple(axes)
    back_shift = tuple(-s for s in shifts)
    return _result(np.roll(a.data, shifts, axes), (a,), lambda g: (np.roll(g, back_shift, axes),))
