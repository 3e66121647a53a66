"""Dense tensors and the reverse-mode tape.

A :class:`Tape` records every differentiable op executed while it is the
active tape. ``tape.backward(loss)`` replays the record in reverse and
writes gradients into the ``grad`` slot of every leaf tensor that
requires them. Tapes are rebuilt for every forward pass.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from .errors import DimensionError, NumericError, UsageError

_state = threading.local()


def _dtype_stack():
    if not hasattr(_state, "dtypes"):
        _state.dtypes = [np.float32]
    return _state.dtypes


def _tape_stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def default_dtype():
    return _dtype_stack()[-1]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the storage dtype of newly created tensors.

    Used by the gradient checker to recompute losses in 64-bit.
    """
    stack = _dtype_stack()
    stack.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        stack.pop()


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """An n-dimensional float array with a gradient slot."""

    __array_priority__ = 100
    __slots__ = ("data", "requires_grad", "grad", "name", "_leaf")

    def __init__(self, data, requires_grad=False, name=None, _check=True):
        arr = np.asarray(data, dtype=default_dtype())
        if _check and not np.isfinite(arr).all():
            raise NumericError(f"non-finite values in tensor {name or ''}".strip())
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise UsageError("item() needs a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy(), _check=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.index(self, index)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of executed differentiable ops.

    Use as a context manager; ops executed inside the ``with`` block are
    appended in execution order, which is a valid topological order.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss):
        """Populate ``grad`` on every leaf that ``loss`` depends on.

        Leaf gradients accumulate into existing ``grad`` arrays.
        Returns the list of leaves that received a gradient.
        """
        if loss.data.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.vjp(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.data.shape:
                    raise DimensionError(
                        f"internal: gradient shape {gi.shape} != tensor shape {t.data.shape}"
                    )
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t._leaf:
                    leaves[key] = t
        if loss._leaf and loss.requires_grad:
            leaves[id(loss)] = loss
        for key, t in leaves.items():
            g = np.asarray(grads[key], dtype=t.data.dtype)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for {t.name or 'tensor'}")
            t.grad = g.copy() if t.grad is None else t.grad + g
        return list(leaves.values())


def record(out_data, inputs, vjp, check=True):
    """Wrap ``out_data`` as a Tensor and register ``vjp`` on the active tape.

    ``vjp(g)`` maps the output cotangent to a tuple of input cotangents
    (``None`` for inputs that need none).
    """
    out = Tensor(out_data, _check=False)
    if check and not np.isfinite(out.data).all():
        raise NumericError("non-finite values produced by an op")
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._leaf = False
        tape.nodes.append(_Node(out, tuple(inputs), vjp))
    return out


def backward(loss, tape, params=None):
    """Run ``tape.backward(loss)``; zero-fill grads of unreached ``params``."""
    tape.backward(loss)
    if params is not None:
        for t in params.tensors():
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)
    return params
