"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, precision


def relative_error(analytic, numeric):
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(f, arrays, which, coords, eps=1e-3):
    """Central differences of scalar ``f(arrays)`` at ``coords`` of ``arrays[which]``.

    ``arrays`` are copied to float64 and ``f`` runs under 64-bit precision.
    """
    arrs = [np.array(a, dtype=np.float64) for a in arrays]
    out = np.empty(len(coords))
    with precision(np.float64):
        for k, c in enumerate(coords):
            x = arrs[which]
            orig = x.flat[c]
            x.flat[c] = orig + eps
            fp = float(f(arrs))
            x.flat[c] = orig - eps
            fm = float(f(arrs))
            x.flat[c] = orig
            out[k] = (fp - fm) / (2 * eps)
    return out


def analytic_grad(fn, arrays):
    """Gradients of scalar ``fn(tensors)`` w.r.t. every input array."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = fn(tensors)
    tape.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def check_gradients(fn, arrays, eps=1e-3, max_coords=None, rng=None):
    """Compare tape gradients against central differences.

    ``fn`` maps a list of Tensors to a scalar Tensor. Returns the worst
    relative error over inputs. With ``max_coords`` set, each input is
    probed on that many randomly chosen coordinates.
    """
    rng = rng or np.random.default_rng(0)
    grads = analytic_grad(fn, arrays)

    def f(arrs):
        return fn([Tensor(a) for a in arrs]).item()

    worst = 0.0
    for i, a in enumerate(arrays):
        size = np.asarray(a).size
        if max_coords is None or max_coords >= size:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_coords, replace=False)
        num = numeric_grad(f, arrays, i, coords, eps)
        worst = max(worst, relative_error(grads[i].ravel()[coords], num))
    return worst
