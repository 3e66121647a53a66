"""Loss terms that drive stylization.

``clip_loss`` pulls augmented renders toward a target embedding,
``identity_loss`` keeps the token self-similarity structure of the
original render, and ``style_loss`` blends the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..embedder import AugmentationConfig, augment_batch, mix_targets, text_target
from ..tensorcore import (
    DimensionError,
    Tensor,
    UsageError,
    add,
    concat,
    frobenius_distance,
    index,
    matmul,
    mul,
    mean,
    reshape,
    scale,
    sub,
    transpose,
)


@dataclass(frozen=True)
class LossWeights:
    lambda_clip: float = 1.0
    lambda_id: float = 1.0

    def __post_init__(self):
        for name in ("lambda_clip", "lambda_id"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise UsageError(f"{name} must be finite and non-negative, got {v}")


@dataclass
class LossBreakdown:
    clip_term: float
    id_term: float
    total: float
    tensor: Tensor | None = field(default=None, repr=False)


@dataclass
class StyleTarget:
    """A style given by text, a reference image, or a blend of both.

    ``mix_weight`` weights the text embedding when both are present.
    Target vectors are computed per embedder and cached.
    """

    name: str
    text: str | None = None
    image: np.ndarray | None = None
    mix_weight: float | None = None
    templates: tuple | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.text is None and self.image is None:
            raise UsageError(f"style {self.name!r} has neither text nor image")
        if self.text is not None and self.image is not None and self.mix_weight is None:
            raise UsageError(f"style {self.name!r} needs a mix weight for text + image")

    @classmethod
    def from_text(cls, text, templates=None):
        return cls(name=text, text=text, templates=templates)

    def vector(self, embedder):
        key = embedder.weight_digest()
        if key not in self._cache:
            t = i = None
            if self.text is not None:
                t = text_target(embedder, self.text, self.templates) if self.templates else \
                    text_target(embedder, self.text)
            if self.image is not None:
                i = embedder.embed_array(self.image)
            self._cache[key] = mix_targets(t, i, self.mix_weight)
        return self._cache[key]


def _target_vectors(target, embedders):
    if isinstance(target, StyleTarget):
        return [target.vector(e) for e in embedders]
    if isinstance(target, (list, tuple)):
        if len(target) != len(embedders):
            raise UsageError("need one target vector per embedder")
        return [np.asarray(t, dtype=np.float64) for t in target]
    return [np.asarray(target, dtype=np.float64)] * len(embedders)


def stack_images(images):
    """List of ``3×H×W`` tensors -> one ``n×3×H×W`` tensor on the tape."""
    if not images:
        raise UsageError("need at least one image")
    images = [im if isinstance(im, Tensor) else Tensor(im) for im in images]
    shape = images[0].shape
    for im in images:
        if im.shape != shape or im.ndim != 3:
            raise DimensionError("images must share one 3×H×W shape")
    if len(images) == 1:
        return reshape(images[0], (1,) + shape)
    return concat([reshape(im, (1,) + shape) for im in images], axis=0)


def _cos_term(emb, vec):
    # embeddings and targets are unit vectors: 1 - mean cosine
    col = Tensor(np.asarray(vec).reshape(-1, 1))
    return sub(1.0, mean(matmul(emb, col)))


def clip_loss(images, target, embedders, aug_cfg=None, rng=None):
    """Mean ``1 - cos`` over images × augmentations × embedders."""
    if not images:
        raise UsageError("clip_loss needs at least one image")
    aug_cfg = aug_cfg or AugmentationConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    vecs = _target_vectors(target, embedders)
    aug = augment_batch(stack_images(images), aug_cfg, rng)
    terms = [_cos_term(e.embed_images(aug), v) for e, v in zip(embedders, vecs)]
    return _mean_of(terms)


def _mean_of(terms):
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(terms)) if len(terms) > 1 else total


def self_similarity(tokens):
    """``S_ij = 1 - <n_i, n_j>`` for unit tokens ``N×d``."""
    if tokens.ndim != 2:
        raise DimensionError(f"tokens must be N×d, got {tokens.shape}")
    gram = matmul(tokens, transpose(tokens, (1, 0)))
    # S_ii is 1 - 1 for unit tokens; mask it so rounding cannot leak in
    off = 1.0 - np.eye(tokens.shape[0])
    return mul(sub(1.0, gram), Tensor(off))


def _constant_tokens(embedder, img):
    data = img.data if isinstance(img, Tensor) else np.asarray(img)
    _, tok = embedder.encode(Tensor(data.reshape((1,) + data.shape)))
    return tok.data[0]


def source_tokens(embedders, source_images):
    """Off-tape tokens ``n×N×d`` of the source renders, one array per embedder."""
    out = []
    for e in embedders:
        arr = np.stack([im.data if isinstance(im, Tensor) else np.asarray(im) for im in source_images])
        _, tok = e.encode(Tensor(arr))
        out.append(tok.data.copy())
    return out


def identity_loss(styled, source, embedder):
    """Frobenius distance between token self-similarities; ``source`` is constant."""
    src = source.data if isinstance(source, Tensor) else np.asarray(source)
    if styled.shape != src.shape:
        raise DimensionError(f"styled {styled.shape} and source {src.shape} differ")
    s_src = self_similarity(Tensor(_constant_tokens(embedder, src)))
    s_tgt = self_similarity(embedder.image_tokens(styled))
    return frobenius_distance(s_tgt, s_src)


def style_loss(styled_images, source_images, target, weights=None, embedders=(), aug_cfg=None,
               rng=None, src_tokens=None):
    """Weighted sum of the embedding and identity terms.

    Augmented copies and the un-augmented renders go through each embedder
    in one batch. ``src_tokens`` (from :func:`source_tokens`) skips
    re-encoding cached source renders.
    """
    weights = weights or LossWeights()
    if len(styled_images) != len(source_images):
        raise UsageError("styled and source image lists differ in length")
    if not styled_images:
        raise UsageError("style_loss needs at least one image")
    if not embedders:
        raise UsageError("style_loss needs at least one embedder")
    aug_cfg = aug_cfg or AugmentationConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    vecs = _target_vectors(target, embedders)
    if src_tokens is None:
        src_tokens = source_tokens(embedders, source_images)
    n = len(styled_images)
    batch = stack_images(styled_images)
    aug = augment_batch(batch, aug_cfg, rng)
    na = aug.shape[0]
    both = concat([aug, batch], axis=0)
    clip_terms, id_terms = [], []
    for e, v, st in zip(embedders, vecs, src_tokens):
        if st.shape[0] != n:
            raise DimensionError("cached source tokens do not match the image count")
        emb, tok = e.encode(both)
        clip_terms.append(_cos_term(index(emb, slice(0, na)), v))
        for i in range(n):
            s_tgt = self_similarity(index(tok, na + i))
            s_src = self_similarity(Tensor(st[i]))
            id_terms.append(frobenius_distance(s_tgt, s_src))
    clip_t = _mean_of(clip_terms)
    id_t = _mean_of(id_terms)
    total_t = add(scale(clip_t, weights.lambda_clip), scale(id_t, weights.lambda_id))
    c, d = clip_t.item(), id_t.item()
    return LossBreakdown(c, d, weights.lambda_clip * c + weights.lambda_id * d, total_t)
