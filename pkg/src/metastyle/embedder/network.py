"""Image and text embedders sharing a unit-sphere space.

The built-in ``random_features`` backend is a fixed, seeded convolutional
tower whose weights are never trained. Global embeddings come from the
average-pooled last layer followed by a fixed affine map (centred and
whitened on shared reference images); spatial tokens come from the same
deepest map pooled to a small grid, offset by a fixed shared direction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..tensorcore import (
    DimensionError,
    Tensor,
    UsageError,
    add,
    avgpool,
    bias_add,
    conv2d,
    l2_normalize,
    matmul,
    mean,
    record,
    relu,
    reshape,
    transpose,
)
from . import text as textmod

KINDS = ("random_features", "external")
TOWER_CHANNELS = (8, 16, 32)


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str = "random_features"
    seed: int = 0
    dim: int = 64
    token_grid: int = 4
    token_dim: int | None = None
    token_anisotropy: float = 4.0
    style_axis: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown embedder kind {self.kind!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise UsageError("embedder seed must be a 64-bit unsigned integer")
        if self.dim < 1 or self.token_grid < 1:
            raise UsageError("dim and token_grid must be positive")
        if not self.token_anisotropy >= 0:
            raise UsageError("token_anisotropy must be non-negative")
        if not self.style_axis >= 0:
            raise UsageError("style_axis must be non-negative")
        if self.token_dim is not None and self.token_dim != self.dim:
            raise UsageError("token_dim must equal dim for the random-features backend")

    @property
    def n_tokens(self):
        return self.token_grid * self.token_grid


class RandomFeaturesEmbedder:
    """Fixed random conv tower: 4 stride-2 layers, GAP, affine map, normalize."""

    def __init__(self, spec):
        self.spec = spec
        rng = np.random.default_rng(int(spec.seed))
        chans = (3,) + TOWER_CHANNELS + (spec.dim,)
        self.convs = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            w = rng.normal(0.0, np.sqrt(2.0 / (9 * cin)), (cout, cin, 3, 3))
            b = rng.normal(0.0, 0.1, cout)
            self.convs.append((Tensor(w), Tensor(b)))
        mix = np.linalg.qr(rng.normal(0.0, 1.0, (spec.dim, spec.dim)))[0]
        self.proj, self.shift = self._calibrate(mix)
        for t in self.tensors():
            t.data.setflags(write=False)
        self._text_cache = {}

    def _calibrate(self, mix):
        """Centre and whiten pooled features on the shared reference images.

        Without this every embedding shares a large positive common mode
        (pooled ReLU features) and all cosines crowd near 1. Centring
        alone goes too far: stylized prototypes would then share nothing.
        A shared offset pointing away from plain, untextured faces puts
        back a common "stylized" axis of strength ``spec.style_axis``.
        """
        from ..tensorcore import precision
        with precision(np.float64):
            h = self._tower(Tensor(textmod.reference_images()))
            f = mean(h, axes=(2, 3)).data
        g = self.spec.token_grid
        side = h.shape[-1]
        cells = h.data.reshape(h.shape[0], h.shape[1], g, side // g, g, side // g).mean(axis=(3, 5))
        self.token_center = cells.mean(axis=(0, 2, 3))
        mu = f.mean(axis=0)
        cov = np.cov(f - mu, rowvar=False)
        vals, vecs = np.linalg.eigh(cov)
        vals = np.clip(vals, 0.0, None) + 0.05 * vals.mean()
        whiten = (vecs / np.sqrt(vals)) @ vecs.T
        proj = whiten @ mix
        shift = -(mu @ proj)
        if self.spec.style_axis:
            with precision(np.float64):
                fp = mean(self._tower(Tensor(textmod.plain_faces())), axes=(2, 3)).data
            zp = fp.mean(axis=0) @ proj + shift
            scale_ref = np.linalg.norm((f - mu) @ proj, axis=1).mean()
            shift = shift - self.spec.style_axis * scale_ref * zp / np.linalg.norm(zp)
        return Tensor(proj), Tensor(shift)

    def tensors(self):
        out = []
        for w, b in self.convs:
            out += [w, b]
        return out + [self.proj, self.shift]

    def weight_digest(self):
        h = hashlib.sha256()
        for t in self.tensors():
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------------ images

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"expected images n×3×H×W, got {x.shape}")
        h, w = x.shape[2:]
        step = 16 * self.spec.token_grid
        if h != w or h % step:
            raise DimensionError(f"image side must be square and a multiple of {step}, got {h}×{w}")

    def _tower(self, x):
        h = x * 2.0 - 1.0
        for w, b in self.convs:
            h = relu(bias_add(conv2d(h, w, stride=2, padding="edge"), b))
        return h

    def encode(self, images, tokens=True):
        """Embeddings ``n×d`` and (optionally) tokens ``n×N×d`` for a batch."""
        self._check(images)
        h = self._tower(images)
        n, d = images.shape[0], self.spec.dim
        pooled = mean(h, axes=(2, 3))
        emb = l2_normalize(bias_add(matmul(pooled, self.proj), self.shift, axis=-1), axis=-1)
        if not tokens:
            return emb, None
        g = self.spec.token_grid
        side = h.shape[-1]
        cells = avgpool(h, side // g) if side != g else h
        tok = transpose(reshape(cells, (n, d, g * g)), (0, 2, 1))
        if self.spec.token_anisotropy:
            # shared offset compresses token cosines, as in real ViT tokens
            off = np.broadcast_to(self.spec.token_anisotropy * self.token_center, tok.shape)
            tok = add(tok, Tensor(np.ascontiguousarray(off)))
        return emb, l2_normalize(tok, axis=-1)

    def embed_images(self, images):
        return self.encode(images, tokens=False)[0]

    def embed_image(self, img):
        """Embedding ``d`` of one image ``3×H×W``."""
        if img.ndim != 3:
            raise DimensionError(f"expected one image 3×H×W, got {img.shape}")
        return reshape(self.embed_images(reshape(img, (1,) + img.shape)), (self.spec.dim,))

    def image_tokens(self, img):
        """Unit tokens ``N×d`` of one image."""
        if img.ndim != 3:
            raise DimensionError(f"expected one image 3×H×W, got {img.shape}")
        _, tok = self.encode(reshape(img, (1,) + img.shape))
        return reshape(tok, (self.spec.n_tokens, self.spec.dim))

    # -------------------------------------------------------------------- text

    def embed_text(self, text):
        """Constant unit embedding of a prompt (never on the tape)."""
        if not isinstance(text, str) or not text.strip():
            raise UsageError("text prompt must be non-empty")
        key = " ".join(textmod.tokenize(text))
        if not key:
            raise UsageError("text prompt has no word tokens")
        if key not in self._text_cache:
            proto = textmod.prototype_image(textmod.concept(key))
            self._text_cache[key] = self._embed_constant(proto)
        return self._text_cache[key].copy()

    def embed_texts(self, texts):
        return np.stack([self.embed_text(t) for t in texts])

    def _embed_constant(self, img):
        from ..tensorcore import precision
        with precision(np.float64):
            emb = self.embed_images(Tensor(np.asarray(img)[None]))
        return emb.data[0].astype(np.float64)

    def embed_array(self, img):
        """Off-tape float64 embedding of a numpy image ``3×H×W``."""
        return self._embed_constant(img)


class ExternalEmbedder:
    """Extension point: wrap an external network evaluated off the tape.

    ``fn(images: n×3×H×W array) -> (embeddings n×d, tokens n×N×d)``. Input
    gradients come from ``grad_fn(images, g_emb, g_tok)`` when given,
    otherwise from central differences (slow; for small images only).
    Text embeddings come from ``text_fn(str) -> d`` when given.
    """

    def __init__(self, spec, fn, grad_fn=None, text_fn=None, eps=1e-3):
        if spec.kind != "external":
            raise UsageError("ExternalEmbedder needs an 'external' spec")
        self.spec, self.fn, self.grad_fn, self.text_fn, self.eps = spec, fn, grad_fn, text_fn, eps

    @classmethod
    def from_onnx(cls, spec, path):
        try:
            import onnxruntime  # noqa: F401 - optional dependency
        except ImportError as exc:
            raise UsageError("external ONNX models need the optional 'onnxruntime' package") from exc
        sess = onnxruntime.InferenceSession(str(path))
        name = sess.get_inputs()[0].name

        def fn(x):
            emb, tok = sess.run(None, {name: x.astype(np.float32)})
            return emb, tok

        return cls(spec, fn)

    def weight_digest(self):
        return f"external:{id(self.fn):x}"

    def _numeric(self, x, g_emb, g_tok):
        flat = x.reshape(-1).astype(np.float64)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            old = flat[i]
            vals = []
            for s in (1.0, -1.0):
                flat[i] = old + s * self.eps
                e, t = self.fn(flat.reshape(x.shape))
                vals.append((np.asarray(e) * g_emb).sum() + (np.asarray(t) * g_tok).sum())
            flat[i] = old
            grad[i] = (vals[0] - vals[1]) / (2 * self.eps)
        return grad.reshape(x.shape)

    def encode(self, images, tokens=True):
        x = images.data.astype(np.float64)
        emb, tok = (np.asarray(a, dtype=np.float64) for a in self.fn(x))
        emb = emb / np.linalg.norm(emb, axis=-1, keepdims=True)
        tok = tok / np.linalg.norm(tok, axis=-1, keepdims=True)
        both = np.concatenate([emb.reshape(-1), tok.reshape(-1)])
        ne = emb.size

        def vjp(g):
            g_emb, g_tok = g[:ne].reshape(emb.shape), g[ne:].reshape(tok.shape)
            if self.grad_fn is not None:
                gx = self.grad_fn(x, g_emb, g_tok)
            else:
                gx = self._numeric(x, g_emb, g_tok)
            return (np.asarray(gx, dtype=images.data.dtype),)

        out = record(both.astype(images.data.dtype), (images,), vjp)
        from ..tensorcore import index
        e = reshape(index(out, slice(0, ne)), emb.shape)
        t = reshape(index(out, slice(ne, None)), tok.shape)
        return e, (t if tokens else None)

    def embed_images(self, images):
        return self.encode(images, tokens=False)[0]

    def embed_image(self, img):
        return reshape(self.embed_images(reshape(img, (1,) + img.shape)), (img_dim(self),))

    def image_tokens(self, img):
        _, tok = self.encode(reshape(img, (1,) + img.shape))
        return reshape(tok, tok.shape[1:])

    def embed_text(self, text):
        if self.text_fn is None:
            raise UsageError("this external embedder has no text tower")
        if not isinstance(text, str) or not text.strip():
            raise UsageError("text prompt must be non-empty")
        v = np.asarray(self.text_fn(text), dtype=np.float64)
        return v / np.linalg.norm(v)

    def embed_array(self, img):
        e, _ = self.fn(np.asarray(img, dtype=np.float64)[None])
        e = np.asarray(e, dtype=np.float64)[0]
        return e / np.linalg.norm(e)


def img_dim(embedder):
    return embedder.spec.dim


@lru_cache(maxsize=16)
def build_embedder(spec):
    """Shared immutable embedder for a random-features spec."""
    if spec.kind != "random_features":
        raise UsageError("external embedders are constructed with ExternalEmbedder(...)")
    return RandomFeaturesEmbedder(spec)


def _resolve(spec_or_embedder):
    if isinstance(spec_or_embedder, EmbedderSpec):
        return build_embedder(spec_or_embedder)
    return spec_or_embedder


def embed_image(spec, img):
    """Unit embedding of an image ``3×H×W`` (differentiable)."""
    return _resolve(spec).embed_image(img)


def image_tokens(spec, img):
    """Unit spatial tokens ``N×d`` of an image (differentiable)."""
    return _resolve(spec).image_tokens(img)


def embed_text(spec, text):
    """Unit embedding of a prompt as a constant float64 array."""
    return _resolve(spec).embed_text(text)


def text_target(spec, text, templates=textmod.DEFAULT_TEMPLATES):
    """Template-averaged, renormalized text embedding of a style prompt."""
    emb = _resolve(spec)
    prompts = textmod.augment_text(text, templates)
    v = np.mean([emb.embed_text(p) for p in prompts], axis=0)
    return v / np.linalg.norm(v)


def mix_targets(text_emb=None, img_emb=None, w=None):
    """Renormalized blend ``w·text + (1-w)·image``; one input passes through."""
    if text_emb is None and img_emb is None:
        raise UsageError("mix_targets needs a text or an image embedding")
    if text_emb is None or img_emb is None:
        v = np.asarray(text_emb if img_emb is None else img_emb, dtype=np.float64)
        return v.copy()
    if w is None or not 0.0 <= w <= 1.0:
        raise UsageError("mix weight must be given in [0, 1] when both targets are present")
    if w == 1.0:
        return np.asarray(text_emb, dtype=np.float64).copy()
    if w == 0.0:
        return np.asarray(img_emb, dtype=np.float64).copy()
    v = w * np.asarray(text_emb, dtype=np.float64) + (1 - w) * np.asarray(img_emb, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= 1e-8:
        raise UsageError("text and image targets cancel out at this mix weight")
    return v / n
