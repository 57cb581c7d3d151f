"""Dense arrays with reverse-mode automatic differentiation.

Every op builds a node on a dynamic tape when at least one input requires a
gradient and grad mode is on.  ``Tensor.backward`` walks the tape in reverse
topological order and accumulates gradients on leaf tensors (and on any
intermediate that called ``retain_grad``).

Storage is a numpy array; the default dtype is float32 and can be switched to
float64 with :func:`default_dtype` for finite-difference checks.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor", "ShapeError", "tensor", "zeros", "ones",
    "no_grad", "is_grad_enabled", "checked", "default_dtype", "get_default_dtype",
    "add", "sub", "mul", "div", "neg", "matmul", "exp", "log", "sqrt", "abs",
    "relu", "softplus", "sigmoid", "tanh", "sin", "cos", "power",
    "sum", "mean", "softmax", "cumsum", "norm", "clip",
    "conv2d", "avg_pool2d", "upsample_nearest2d", "broadcast_to", "reshape",
    "transpose", "gather", "concat", "stack", "sort_by_key", "grid_sample2d",
]


class ShapeError(ValueError):
    pass


class _State(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.checked = False
        self.dtype = np.float32


_state = _State()


def get_default_dtype():
    return _state.dtype


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _state.dtype
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def is_grad_enabled():
    return _state.grad_enabled


@contextlib.contextmanager
def checked(enabled=True):
    """Raise ``FloatingPointError`` as soon as an op produces a NaN."""
    prev = _state.checked
    _state.checked = enabled
    try:
        yield
    finally:
        _state.checked = prev


def _as_array(x, dtype=None):
    if isinstance(x, Tensor):
        return x.data
    arr = np.asarray(x)
    if dtype is None:
        dtype = _state.dtype
    if arr.dtype.kind in "fiub" and arr.dtype != dtype:
        arr = arr.astype(dtype)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward",
                 "_op", "_retain", "name", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        target = np.dtype(dtype).type if dtype is not None else _state.dtype
        if arr.dtype != target:
            arr = arr.astype(target)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = None
        self._retain = False
        self.name = name

    # -- basic properties -------------------------------------------------
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

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def retain_grad(self):
        self._retain = True
        return self

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}{op})"

    def __len__(self):
        return len(self.data)

    # -- autodiff ----------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward: loss must be a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = _as_array(grad, self.data.dtype)
            if grad.shape != self.shape:
                raise ShapeError(
                    f"backward: seed grad shape {grad.shape} != {self.shape}")
        order = _topo_order(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None or node._retain:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return _getitem(self, index)

    # -- method forms ------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return abs(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad=False, dtype=None, name=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def zeros(shape, requires_grad=False, dtype=None):
    return Tensor(np.zeros(shape, dtype or _state.dtype), requires_grad, dtype)


def ones(shape, requires_grad=False, dtype=None):
    return Tensor(np.ones(shape, dtype or _state.dtype), requires_grad, dtype)


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if isinstance(like, Tensor) else None
    return Tensor(_as_array(x, dtype), dtype=dtype)


def _make(op, out, parents, backward):
    """Wrap ``out`` as a Tensor and record it on the tape if needed."""
    if _state.checked and out.dtype.kind == "f" and np.isnan(out).any():
        raise FloatingPointError(f"{op}: produced NaN")
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t._op = op
    t._retain = False
    t.name = None
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return t


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise binary -----------------------------------------------------
def add(a, b):
    a, b = _lift(a, b), _lift(b, a)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _lift(a, b), _lift(b, a)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _lift(a, b), _lift(b, a)
    _broadcast_shape("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make("mul", a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = _lift(a, b), _lift(b, a)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make("div", out, (a, b), backward)


def neg(a):
    a = _lift(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    a = _lift(a)
    p = float(exponent)

    def backward(g):
        return (g * p * a.data ** (p - 1),)

    return _make("power", a.data ** p, (a,), backward)


def matmul(a, b):
    a, b = _lift(a, b), _lift(b, a)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul: both operands need >= 2 dims, got {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make("matmul", out, (a, b), backward)


# -- elementwise unary ------------------------------------------------------
def exp(a):
    a = _lift(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = _lift(a)
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = _lift(a)
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def abs(a):  # noqa: A001 - mirrors numpy naming
    a = _lift(a)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    a = _lift(a)
    out = np.maximum(a.data, 0)
    return _make("relu", out, (a,), lambda g: (g * (a.data > 0),))


def _sigmoid(x):
    return np.exp(-np.logaddexp(0, -x)).astype(x.dtype, copy=False)


def softplus(a):
    a = _lift(a)
    out = np.logaddexp(0, a.data).astype(a.data.dtype, copy=False)
    return _make("softplus", out, (a,), lambda g: (g * _sigmoid(a.data),))


def sigmoid(a):
    a = _lift(a)
    out = _sigmoid(a.data)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1 - out),))


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1 - out * out),))


def sin(a):
    a = _lift(a)
    return _make("sin", np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    a = _lift(a)
    return _make("cos", np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def clip(a, lo=None, hi=None):
    """Clamp values; the gradient passes only where no clamping happened."""
    a = _lift(a)
    out = np.clip(a.data, lo, hi)

    def backward(g):
        keep = np.ones(a.shape, bool)
        if lo is not None:
            keep &= a.data >= lo
        if hi is not None:
            keep &= a.data <= hi
        return (g * keep,)

    return _make("clip", out, (a,), backward)


# -- reductions ---------------------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = _lift(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    axes = _norm_axes(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make("sum", np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = _lift(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = np.mean(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return _make("mean", np.asarray(out, dtype=a.dtype), (a,), backward)


def softmax(a, axis=-1):
    a = _lift(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (a,), backward)


def cumsum(a, axis=-1, exclusive=False):
    """Running sum along ``axis``; ``exclusive`` drops the current element."""
    a = _lift(a)
    ax = axis % a.ndim
    out = np.cumsum(a.data, axis=ax)
    if exclusive:
        out = np.roll(out, 1, axis=ax)
        idx = [slice(None)] * a.ndim
        idx[ax] = 0
        out[tuple(idx)] = 0

    def backward(g):
        r = np.flip(np.cumsum(np.flip(g, ax), axis=ax), ax)
        if exclusive:
            r = np.roll(r, -1, axis=ax)
            idx = [slice(None)] * a.ndim
            idx[ax] = -1
            r[tuple(idx)] = 0
        return (r,)

    return _make("cumsum", out, (a,), backward)


def norm(a, axis=-1, keepdims=False):
    """Euclidean norm along ``axis``; the subgradient at the origin is zero."""
    a = _lift(a)
    out = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1)
        return (g * np.where(out > 0, a.data / safe, 0),)

    res = out if keepdims else np.squeeze(out, axis=axis)
    return _make("norm", res, (a,), backward)


# -- shape manipulation -------------------------------------------------------------
def reshape(a, shape):
    a = _lift(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = _lift(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make("transpose", out, (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a, shape):
    a = _lift(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}") from None
    return _make("broadcast_to", out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors, axis=0):
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty input")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in ts]} along axis {axis}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make("concat", out, ts, backward)


def stack(tensors, axis=0):
    ts = [_lift(t) for t in tensors]
    ax = axis if axis >= 0 else axis + ts[0].ndim + 1
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts]
    return concat(expanded, axis=ax)


def _getitem(a, index):
    out = a.data[index]
    if isinstance(index, Tensor):
        raise TypeError("index with a numpy array, not a Tensor")

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return _make("getitem", np.array(out, copy=True), (a,), backward)


def gather(a, index, axis=0):
    """Select slices of ``a`` along ``axis`` with an integer index array.

    The output shape is ``a.shape[:axis] + index.shape + a.shape[axis+1:]``.
    Repeated indices accumulate in the adjoint.
    """
    a = _lift(a)
    index = np.asarray(index)
    if index.dtype.kind not in "iu":
        raise TypeError(f"gather: index must be integer, got {index.dtype}")
    ax = axis % a.ndim
    n = a.shape[ax]
    if index.size and (index.min() < -n or index.max() >= n):
        raise IndexError(f"gather: index out of range for axis of size {n}")
    out = np.take(a.data, index, axis=ax)

    def backward(g):
        moved = np.moveaxis(a.data, ax, 0)
        rest = moved.shape[1:]
        flat_idx = np.mod(index.ravel(), n)
        gm = np.moveaxis(g.reshape(a.shape[:ax] + (index.size,) + a.shape[ax + 1:]), ax, 0)
        gm = gm.reshape(index.size, -1)
        scatter = sp.csr_matrix(
            (np.ones(index.size, dtype=g.dtype), (flat_idx, np.arange(index.size))),
            shape=(n, index.size))
        full = np.asarray(scatter @ gm).reshape((n,) + rest)
        return (np.moveaxis(full, 0, ax),)

    return _make("gather", out, (a,), backward)


def sort_by_key(keys, axis=-1):
    """Stable ascending permutation of ``keys`` along ``axis``.

    Returns plain integer indices; the ordering itself carries no gradient, so
    reordered values keep theirs via :func:`gather`.
    """
    k = keys.data if isinstance(keys, Tensor) else np.asarray(keys)
    return np.argsort(k, axis=axis, kind="stable")


# -- images (N, H, W, C layout) ----------------------------------------------
def _im2col(x, kh, kw):
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    n, ho, wo, c = win.shape[:4]
    return win.reshape(n * ho * wo, c * kh * kw), (n, ho, wo)


def conv2d(x, weight, bias=None, padding=0):
    """Stride-1 2D correlation.

    ``x`` is (N, H, W, Cin), ``weight`` is (kh, kw, Cin, Cout) and ``bias``
    (Cout,).  ``padding`` zero-pads both spatial borders.
    """
    x, weight = _lift(x), _lift(weight)
    parents = [x, weight]
    if bias is not None:
        bias = _lift(bias)
        parents.append(bias)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[3] != weight.shape[2]:
        raise ShapeError(
            f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    kh, kw, cin, cout = weight.shape
    p = int(padding)
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ShapeError(f"conv2d: kernel {weight.shape[:2]} larger than padded input {xp.shape[1:3]}")
    cols, (n, ho, wo) = _im2col(xp, kh, kw)
    wmat = weight.data.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, cin, kh, kw)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + ho, j:j + wo, :] += dcols[..., i, j]
            gx = gxp[:, p:p + x.shape[1], p:p + x.shape[2], :] if p else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return _make("conv2d", out, parents, backward)


def avg_pool2d(x, k=2):
    x = _lift(x)
    n, h, w, c = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: spatial dims {(h, w)} not divisible by {k}")
    out = x.data.reshape(n, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def backward(g):
        gg = np.broadcast_to(g[:, :, None, :, None, :] / (k * k),
                             (n, h // k, k, w // k, k, c))
        return (gg.reshape(x.shape),)

    return _make("avg_pool2d", out.astype(x.dtype, copy=False), (x,), backward)


def upsample_nearest2d(x, k=2):
    x = _lift(x)
    n, h, w, c = x.shape
    out = np.broadcast_to(x.data[:, :, None, :, None, :], (n, h, k, w, k, c))
    out = out.reshape(n, h * k, w * k, c)

    def backward(g):
        return (g.reshape(n, h, k, w, k, c).sum(axis=(2, 4)),)

    return _make("upsample_nearest2d", out, (x,), backward)


def grid_sample2d(plane, coords):
    """Bilinear lookup of a (H, W, C) grid at continuous node coordinates.

    ``coords`` is (M, 2) in index units: (0, 0) is the first node and
    (H - 1, W - 1) the last.  Coordinates are clamped to the grid; the
    coordinate gradient is zero where clamping was active.  Differentiable
    in both the grid values and the coordinates.
    """
    plane, coords = _lift(plane), _lift(coords, plane)
    if plane.ndim != 3 or coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(
            f"grid_sample2d: expected plane (H, W, C) and coords (M, 2), got {plane.shape} and {coords.shape}")
    h, w, c = plane.shape
    dt = plane.dtype
    u = np.clip(coords.data[:, 0], 0, h - 1)
    v = np.clip(coords.data[:, 1], 0, w - 1)
    u0 = np.minimum(np.floor(u), max(h - 2, 0)).astype(np.int64)
    v0 = np.minimum(np.floor(v), max(w - 2, 0)).astype(np.int64)
    u1 = np.minimum(u0 + 1, h - 1)
    v1 = np.minimum(v0 + 1, w - 1)
    fu = (u - u0).astype(dt)[:, None]
    fv = (v - v0).astype(dt)[:, None]
    flat = plane.data.reshape(h * w, c)
    i00, i01, i10, i11 = u0 * w + v0, u0 * w + v1, u1 * w + v0, u1 * w + v1
    p00, p01, p10, p11 = flat[i00], flat[i01], flat[i10], flat[i11]
    top = p00 + (p01 - p00) * fv
    bot = p10 + (p11 - p10) * fv
    out = top + (bot - top) * fu

    def backward(g):
        gp = gc = None
        if plane.requires_grad:
            m = len(u)
            w00 = (1 - fu) * (1 - fv)
            w01 = (1 - fu) * fv
            w10 = fu * (1 - fv)
            w11 = fu * fv
            rows = np.concatenate([i00, i01, i10, i11])
            vals = np.concatenate([w00, w01, w10, w11]).ravel()
            cols = np.tile(np.arange(m), 4)
            scatter = sp.csr_matrix((vals, (rows, cols)), shape=(h * w, m))
            gp = np.asarray(scatter @ g).reshape(h, w, c).astype(dt, copy=False)
        if coords.requires_grad:
            du = ((bot - top) * g).sum(axis=1)
            dv = (((p01 - p00) * (1 - fu) + (p11 - p10) * fu) * g).sum(axis=1)
            du *= (coords.data[:, 0] >= 0) & (coords.data[:, 0] <= h - 1) & (h > 1)
            dv *= (coords.data[:, 1] >= 0) & (coords.data[:, 1] <= w - 1) & (w > 1)
            gc = np.stack([du, dv], axis=1).astype(coords.dtype, copy=False)
        return gp, gc

    return _make("grid_sample2d", out, (plane, coords), backward)
