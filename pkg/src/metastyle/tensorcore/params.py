"""Partitioned parameter store, SGD and the checkpoint container."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError, NumericError, UsageError
from .tensor import Tensor

STYLIZABLE = "stylizable"
FROZEN = "frozen"
PARTITIONS = (STYLIZABLE, FROZEN)

CHECKPOINT_MAGIC = b"MSTYCKPT"
CHECKPOINT_VERSION = 1


class ParamStore:
    """Ordered map ``path -> Tensor`` with a partition label per entry."""

    def __init__(self):
        self._tensors = {}
        self._labels = {}

    def add(self, path, value, partition):
        if path in self._tensors:
            raise UsageError(f"duplicate parameter path {path!r}")
        if partition not in PARTITIONS:
            raise UsageError(f"unknown partition {partition!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = path
        self._tensors[path] = t
        self._labels[path] = partition
        return t

    def __getitem__(self, path):
        return self._tensors[path]

    def __contains__(self, path):
        return path in self._tensors

    def __len__(self):
        return len(self._tensors)

    def paths(self, partition="all"):
        if partition == "all":
            return list(self._tensors)
        return [p for p, lab in self._labels.items() if lab == partition]

    def label(self, path):
        return self._labels[path]

    def tensors(self, partition="all"):
        return [self._tensors[p] for p in self.paths(partition)]

    def items(self, partition="all"):
        return [(p, self._tensors[p]) for p in self.paths(partition)]

    def clone(self):
        out = ParamStore()
        for p, t in self._tensors.items():
            out.add(p, Tensor(t.data.copy(), _check=False), self._labels[p])
        return out

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def set_requires_grad(self, partition):
        """Enable gradients only for ``partition`` ("all" enables every entry)."""
        for p, t in self._tensors.items():
            t.requires_grad = partition == "all" or self._labels[p] == partition

    def arrays(self, partition="all"):
        return {p: self._tensors[p].data for p in self.paths(partition)}

    def load_arrays(self, arrays):
        for p, arr in arrays.items():
            t = self._tensors[p]
            arr = np.asarray(arr, dtype=t.data.dtype)
            if arr.shape != t.shape:
                raise DimensionError(f"{p}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    def flat(self, partition="all"):
        return np.concatenate([t.data.ravel() for t in self.tensors(partition)])

    def digest(self, partition="all"):
        h = hashlib.sha256()
        for p in self.paths(partition):
            h.update(p.encode())
            h.update(np.ascontiguousarray(self._tensors[p].data).tobytes())
        return h.hexdigest()

    def num_params(self, partition="all"):
        return int(sum(t.size for t in self.tensors(partition)))


def apply_update(data, coeff, direction):
    """``data - coeff * direction`` evaluated in float64, stored in ``data``'s dtype.

    Shared by SGD and the meta update so equal inputs give equal bits.
    """
    new = (data.astype(np.float64) - coeff * np.asarray(direction, dtype=np.float64)).astype(data.dtype)
    if not np.isfinite(new).all():
        raise NumericError("non-finite parameter after update")
    return new


def sgd_step(params, lr, partition=STYLIZABLE):
    """``p <- p - lr * grad`` over ``partition``; clears every grad afterwards."""
    if not lr >= 0:
        raise UsageError(f"learning rate must be non-negative, got {lr}")
    selected = params.items(partition)
    missing = [p for p, t in selected if t.grad is None]
    if missing:
        raise UsageError(f"missing gradients for {missing[:3]}")
    for p, t in selected:
        try:
            t.data = apply_update(t.data, lr, t.grad)
        except NumericError:
            raise NumericError(f"non-finite parameter after update: {p}") from None
    params.zero_grad()
    return params


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(params, path, meta=None):
    """Write ``params`` to ``path``.

    Layout: 8-byte magic, little-endian u64 header length, UTF-8 JSON
    header (sorted keys), then raw little-endian float data in header order.
    Output bytes depend only on the contents, so re-saving is bit-identical.
    """
    entries = []
    blobs = []
    offset = 0
    for p in params.paths():
        arr = np.ascontiguousarray(params[p].data)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes()
        entries.append({
            "path": p,
            "shape": list(arr.shape),
            "dtype": arr.dtype.name,
            "partition": params.label(p),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = {"format_version": CHECKPOINT_VERSION, "entries": entries, "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(ParamStore, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise UsageError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise UsageError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    base = 16 + hlen
    store = ParamStore()
    for e in header["entries"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        buf = raw[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        arr = np.frombuffer(buf, dtype=dt).astype(np.dtype(e["dtype"]).newbyteorder("="))
        arr = arr.reshape(e["shape"])
        store.add(e["path"], Tensor(arr, _check=False), e["partition"])
    return store, header.get("meta", {})
