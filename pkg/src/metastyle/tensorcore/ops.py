"""Differentiable operations over :class:`Tensor`.

Broadcasting is limited to scalar-tensor combinations; every other shape
alignment (channel biases, tiling) goes through an explicit op.
Matmul and reductions accumulate in float64 and store the result in the
input dtype; convolution runs in the input dtype (float64 under
``precision(np.float64)``, which the gradient checker uses).
"""

from __future__ import annotations

import numbers

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateInputError, DimensionError, UsageError
from .tensor import Tensor, as_tensor, record

_F64 = np.float64


def _is_scalar(x):
    return isinstance(x, numbers.Real) or (isinstance(x, Tensor) and x.ndim == 0)


def _unbroadcast_scalar(g, t):
    # gradient for an operand that was broadcast as a scalar
    return np.asarray(g.sum(dtype=_F64), dtype=t.data.dtype).reshape(t.data.shape)


def _binary(a, b, name):
    if isinstance(a, numbers.Real) and isinstance(b, numbers.Real):
        raise UsageError(f"{name}: at least one operand must be a Tensor")
    if isinstance(a, numbers.Real):
        a = Tensor(a)
    if isinstance(b, numbers.Real):
        b = Tensor(b)
    if a.shape != b.shape and not (a.ndim == 0 or b.ndim == 0):
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")
    return a, b


def _match(g, t):
    return g if g.shape == t.data.shape else _unbroadcast_scalar(g, t)


# ----------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _binary(a, b, "add")
    return record(a.data + b.data, (a, b), lambda g: (_match(g, a), _match(g, b)))


def sub(a, b):
    a, b = _binary(a, b, "sub")
    return record(a.data - b.data, (a, b), lambda g: (_match(g, a), _match(-g, b)))


def mul(a, b):
    a, b = _binary(a, b, "mul")
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (_match(g * bd, a), _match(g * ad, b)))


def scale(t, c):
    """Multiply by a Python constant."""
    c = float(c)
    dt = t.data.dtype.type
    return record(t.data * dt(c), (t,), lambda g: (g * dt(c),))


def relu(t):
    mask = t.data > 0  # subgradient 0 at 0
    return record(np.where(mask, t.data, 0).astype(t.data.dtype), (t,), lambda g: (g * mask,))


def tanh(t):
    y = np.tanh(t.data)
    return record(y, (t,), lambda g: (g * (1 - y * y),))


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1)


def sigmoid(t):
    y = _sigmoid(t.data)
    return record(y, (t,), lambda g: (g * y * (1 - y),))


def softplus(t):
    x = t.data
    y = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(x)
    return record(y.astype(x.dtype), (t,), lambda g: (g * s,))


def exp(t):
    y = np.exp(t.data)
    return record(y, (t,), lambda g: (g * y,))


def square(t):
    x = t.data
    return record(x * x, (t,), lambda g: (2 * g * x,))


ELEMENTWISE = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "exp": exp,
    "square": square,
    "add": add,
    "mul": mul,
    "sub": sub,
    "scale": scale,
}


def elementwise(op, *args):
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise UsageError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ------------------------------------------------------------------ reductions

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for ndim {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise DimensionError(f"repeated axes {axes}")
    return tuple(sorted(out))


def sum(t, axes=None):  # noqa: A001 - mirrors numpy naming
    axes = _norm_axes(axes, t.ndim)
    y = t.data.sum(axis=axes, dtype=_F64).astype(t.data.dtype)
    shape = t.shape
    kept = tuple(1 if i in axes else d for i, d in enumerate(shape))

    def vjp(g):
        return (np.broadcast_to(g.reshape(kept), shape).copy(),)

    return record(y, (t,), vjp)


def mean(t, axes=None):
    axes = _norm_axes(axes, t.ndim)
    n = int(np.prod([t.shape[a] for a in axes])) if axes else 1
    y = t.data.mean(axis=axes, dtype=_F64).astype(t.data.dtype)
    shape = t.shape
    kept = tuple(1 if i in axes else d for i, d in enumerate(shape))
    dt = t.data.dtype

    def vjp(g):
        return ((np.broadcast_to(g.reshape(kept), shape) / _F64(n)).astype(dt),)

    return record(y, (t,), vjp)


def reduce(op, t, axes=None):
    if op == "sum":
        return sum(t, axes)
    if op == "mean":
        return mean(t, axes)
    raise UsageError(f"unknown reduction {op!r}")


# ------------------------------------------------------------------ structural

def reshape(t, shape):
    shape = tuple(shape)
    old = t.shape
    try:
        y = t.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return record(y, (t,), lambda g: (g.reshape(old),))


def transpose(t, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(t.ndim)):
        raise DimensionError(f"invalid permutation {axes} for ndim {t.ndim}")
    inv = np.argsort(axes)
    return record(np.ascontiguousarray(t.data.transpose(axes)), (t,),
                  lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def index(t, idx):
    """Basic (non-fancy) indexing."""
    if not isinstance(idx, tuple):
        idx = (idx,)
    for i in idx:
        if not isinstance(i, (int, np.integer, slice)) and i is not Ellipsis:
            raise UsageError("only integer/slice indexing is differentiable")
    y = np.array(t.data[idx])
    shape, dt = t.shape, t.data.dtype

    def vjp(g):
        out = np.zeros(shape, dtype=dt)
        out[idx] = g
        return (out,)

    return record(y, (t,), vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise UsageError("concat needs at least one tensor")
    nd = tensors[0].ndim
    axis = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != axis):
            raise DimensionError("concat: shapes differ outside the concat axis")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    y = np.concatenate([t.data for t in tensors], axis=axis)

    def vjp(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * nd
            sl[axis] = slice(lo, hi)
            out.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(out)

    return record(y, tensors, vjp)


def expand(t, n, axis=0):
    """Repeat ``t`` ``n`` times along a new axis (explicit broadcast)."""
    y = np.repeat(np.expand_dims(t.data, axis), n, axis=axis)
    return record(y, (t,), lambda g: (g.sum(axis=axis, dtype=_F64).astype(t.data.dtype),))


def bias_add(x, b, axis=-3):
    """Add a per-channel bias ``b`` along ``axis`` of ``x``.

    ``axis=-3`` matches ``c×h×w`` and ``n×c×h×w`` layouts; use ``axis=0``
    for ``rows×cols`` matrices with one bias per row.
    """
    axis = axis % x.ndim
    if b.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise DimensionError(f"bias of shape {b.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.ndim
    view[axis] = -1
    other = tuple(i for i in range(x.ndim) if i != axis)
    bd = b.data.reshape(view)
    return record(x.data + bd, (x, b),
                  lambda g: (g, g.sum(axis=other, dtype=_F64).astype(b.data.dtype)))


def upsample2(t):
    """Nearest-neighbour ×2 upsampling of the last two axes."""
    y = t.data.repeat(2, axis=-2).repeat(2, axis=-1)
    h, w = t.shape[-2:]

    def vjp(g):
        gr = g.reshape(g.shape[:-2] + (h, 2, w, 2))
        return (gr.sum(axis=(-3, -1), dtype=_F64).astype(g.dtype),)

    return record(y, (t,), vjp)


def avgpool(t, k=2):
    """Mean pooling with window and stride ``k`` over the last two axes."""
    h, w = t.shape[-2:]
    if h % k or w % k:
        raise DimensionError(f"spatial dims {(h, w)} not divisible by {k}")
    lead = t.shape[:-2]
    y = t.data.reshape(lead + (h // k, k, w // k, k)).mean(axis=(-3, -1), dtype=_F64)

    def vjp(g):
        gg = np.repeat(np.repeat(g, k, axis=-2), k, axis=-1) / _F64(k * k)
        return (gg.astype(t.data.dtype),)

    return record(y.astype(t.data.dtype), (t,), vjp)


# ----------------------------------------------------------------- linear algebra

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    dt = ad.dtype
    y = (ad.astype(_F64) @ bd.astype(_F64)).astype(dt)

    def vjp(g):
        g64 = g.astype(_F64)
        ga = (g64 @ bd.T.astype(_F64)).astype(dt) if a.requires_grad else None
        gb = (ad.T.astype(_F64) @ g64).astype(dt) if b.requires_grad else None
        return ga, gb

    return record(y, (a, b), vjp)


def conv2d(x, kernel, stride=1, padding="zeros"):
    """3×3 cross-correlation with one pixel of padding.

    ``x`` is ``c_in×h×w`` or ``n×c_in×h×w``; ``kernel`` is ``c_out×c_in×3×3``.
    With stride 1 the output keeps the input's spatial size. ``padding`` is
    ``"zeros"`` or ``"edge"`` (border replication).
    """
    if padding not in ("zeros", "edge"):
        raise UsageError(f"conv2d padding must be 'zeros' or 'edge', got {padding!r}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be 3-D or 4-D, got {x.shape}")
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d kernel must be c_out×c_in×3×3, got {kernel.shape}")
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    co, ci = kernel.shape[:2]
    if ci != c:
        raise DimensionError(f"conv2d channel mismatch: input {c}, kernel {ci}")
    s = int(stride)
    ho, wo = (h - 1) // s + 1, (w - 1) // s + 1
    dt = xd.dtype
    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="constant" if padding == "zeros" else "edge")
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::s, ::s]
    # channel-major im2col: rows (c, ki, kj), columns (n, i, j)
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * 9, n * ho * wo)
    kmat = kernel.data.reshape(co, c * 9).astype(dt)
    y = (kmat @ cols).reshape(co, n, ho, wo).transpose(1, 0, 2, 3)
    y = np.ascontiguousarray(y)
    if not batched:
        y = y[0]

    def vjp(g):
        gm = np.ascontiguousarray((g if batched else g[None]).transpose(1, 0, 2, 3)).reshape(co, n * ho * wo)
        gm = gm.astype(dt, copy=False)
        gk = (gm @ cols.T).reshape(kernel.shape).astype(kernel.data.dtype) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (kmat.T @ gm).reshape(c, 3, 3, n, ho, wo)
            gxp = np.zeros((c, n, h + 2, w + 2), dtype=dt)
            for i in range(3):
                for j in range(3):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += gcols[:, i, j]
            if padding == "edge":
                # fold replicated borders back onto the pixels they copy
                gxp[:, :, 1, :] += gxp[:, :, 0, :]
                gxp[:, :, -2, :] += gxp[:, :, -1, :]
                gxp[:, :, :, 1] += gxp[:, :, :, 0]
                gxp[:, :, :, -2] += gxp[:, :, :, -1]
            gx = gxp[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3)
            if not batched:
                gx = gx[0]
            gx = np.ascontiguousarray(gx)
        return gx, gk

    return record(y, (x, kernel), vjp)


def resample(x, rows, cols):
    """Separable linear resampling ``rows[i] @ x[i, c] @ cols[i].T``.

    ``x`` is ``n×c×h×w``; ``rows`` (``n×ho×h``) and ``cols`` (``n×wo×w``)
    are constant interpolation matrices. Used for crops, resizes and flips.
    """
    rows = np.asarray(rows, dtype=_F64)
    cols = np.asarray(cols, dtype=_F64)
    if x.ndim != 4:
        raise DimensionError(f"resample needs n×c×h×w input, got {x.shape}")
    n, c, h, w = x.shape
    if rows.ndim != 3 or cols.ndim != 3 or rows.shape[0] != n or cols.shape[0] != n \
            or rows.shape[2] != h or cols.shape[2] != w:
        raise DimensionError(f"resample matrices {rows.shape}, {cols.shape} do not fit {x.shape}")
    dt = x.data.dtype
    y = (rows[:, None] @ x.data.astype(_F64) @ cols.transpose(0, 2, 1)[:, None]).astype(dt)

    def vjp(g):
        gx = rows.transpose(0, 2, 1)[:, None] @ g.astype(_F64) @ cols[:, None]
        return (gx.astype(dt),)

    return record(y, (x,), vjp)


# --------------------------------------------------------------------- geometry

def l2_normalize(v, axis=-1, eps=1e-8):
    """Scale ``v`` to unit L2 norm along ``axis``."""
    vd = v.data.astype(_F64)
    norm = np.sqrt((vd * vd).sum(axis=axis, keepdims=True))
    if (norm <= eps).any():
        raise DegenerateInputError("l2_normalize: norm below 1e-8")
    u = vd / norm
    dt = v.data.dtype

    def vjp(g):
        g64 = g.astype(_F64)
        return (((g64 - u * (g64 * u).sum(axis=axis, keepdims=True)) / norm).astype(dt),)

    return record(u.astype(dt), (v,), vjp)


def cosine(u, v, eps=1e-8):
    """Cosine similarity of two 1-D tensors (scalar result)."""
    if u.ndim != 1 or u.shape != v.shape:
        raise DimensionError(f"cosine needs equal 1-D shapes, got {u.shape} and {v.shape}")
    a, b = u.data.astype(_F64), v.data.astype(_F64)
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na <= eps or nb <= eps:
        raise DegenerateInputError("cosine: zero vector")
    c = float(np.clip((a @ b) / (na * nb), -1.0, 1.0))
    dt = u.data.dtype

    def vjp(g):
        g = float(g)
        ga = g * (b / (na * nb) - c * a / (na * na))
        gb = g * (a / (na * nb) - c * b / (nb * nb))
        return ga.astype(dt), gb.astype(dt)

    return record(np.asarray(c, dtype=dt), (u, v), vjp)


def frobenius_distance(a, b):
    """``sqrt(sum((a - b)**2))`` with subgradient 0 where ``a == b``."""
    if a.shape != b.shape:
        raise DimensionError(f"frobenius_distance shapes differ: {a.shape} vs {b.shape}")
    diff = a.data.astype(_F64) - b.data.astype(_F64)
    d = float(np.sqrt((diff * diff).sum()))
    dt = a.data.dtype

    def vjp(g):
        if d == 0.0:
            z = np.zeros(a.shape, dtype=dt)
            return z, z.copy()
        ga = (float(g) * diff / d).astype(dt)
        return ga, -ga

    return record(np.asarray(d, dtype=dt), (a, b), vjp)
