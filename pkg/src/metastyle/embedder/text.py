"""Text side of the stand-in embedder.

Words are hashed into a shared concept table; the averaged concept is
painted into a small "prototype" image (a generic face rendered with the
concept's palette and brush texture). Every embedder seed then embeds the
prototype with its own image tower, so text and image land in one space
and independent seeds agree on what a prompt looks like.
"""

from __future__ import annotations

import re
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..tensorcore import UsageError

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

# shared "vocabulary": identical for every embedder seed
CONCEPT_SEED = 0x5EED_7E47
TABLE_ROWS = 8192
CONCEPT_DIM = 24
N_GRATINGS = 3

DEFAULT_TEMPLATES = (
    "{}",
    "a rendering in the style of {}",
    "a portrait in the style of {}",
    "a 3d avatar of {}",
    "a face that looks like {}",
    "a picture of {}",
    "a close-up photo of {}",
    "an artwork of {}",
)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def fnv1a64(data):
    """64-bit FNV-1a hash of ``bytes`` (or a str, encoded as UTF-8)."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def tokenize(text):
    """Lowercased word tokens; punctuation and whitespace separate words."""
    return _TOKEN_RE.findall(text.lower())


@lru_cache(maxsize=1)
def _tables():
    rng = np.random.default_rng(CONCEPT_SEED)
    table = rng.normal(0.0, 1.0, (TABLE_ROWS, CONCEPT_DIM))
    k = CONCEPT_DIM
    return {
        "table": table,
        "palette": rng.normal(0.0, 1.0, (3, 3, k)) / np.sqrt(k),
        "theta": rng.normal(0.0, 1.0, (N_GRATINGS, k)) / np.sqrt(k),
        "freq": rng.normal(0.0, 1.0, (N_GRATINGS, k)) / np.sqrt(k),
        "amp": rng.normal(0.0, 1.0, (N_GRATINGS, k)) / np.sqrt(k),
        "phase": rng.uniform(0.0, 2 * np.pi, N_GRATINGS),
        "mix": rng.normal(0.0, 1.0, k) / np.sqrt(k),
    }


def concept(text):
    """Average table row of the prompt's words (first layer of the text map)."""
    words = tokenize(text)
    if not words:
        raise UsageError("text prompt is empty after tokenization")
    t = _tables()["table"]
    rows = [fnv1a64(w) % TABLE_ROWS for w in words]
    return t[rows].mean(axis=0)


def _face_layer(size):
    """Generic frontal face: soft head mask plus a darkening feature map."""
    u = (2.0 * np.arange(size) + 1.0 - size) / size
    X, Y = np.meshgrid(u, -u)
    head = np.clip((1.0 - (X / 0.62) ** 2 - (Y / 0.78) ** 2) / 0.08, 0.0, 1.0)
    feat = np.zeros_like(X)
    for cx, cy, rx, ry, depth in ((-0.3, 0.16, 0.12, 0.06, 0.6), (0.3, 0.16, 0.12, 0.06, 0.6),
                                  (0.0, -0.45, 0.18, 0.05, 0.5), (0.0, 0.62, 0.6, 0.2, 0.5)):
        d = ((X - cx) / rx) ** 2 + ((Y - cy) / ry) ** 2
        feat = np.maximum(feat, depth * np.clip(1.5 - d, 0.0, 1.0))
    shade = 0.75 + 0.25 * np.clip(1.0 - X**2 - Y**2, 0.0, 1.0)
    return head, (1.0 - feat) * shade, X, Y


def prototype_image(c, size=64, background=0.5):
    """Paint concept ``c`` as a stylized generic face, ``3×size×size`` in [0, 1].

    The concept picks a three-colour palette and three oriented gratings
    (second layer of the text map, before the image tower).
    """
    tb = _tables()
    c = np.asarray(c, dtype=np.float64)
    g = 3.0 * c / max(np.linalg.norm(c), 1e-12)
    palette = 1.0 / (1.0 + np.exp(-2.5 * (tb["palette"] @ g)))           # 3 colours × rgb
    theta = np.pi * np.tanh(tb["theta"] @ g)
    freq = 1.5 + 7.0 / (1.0 + np.exp(-(tb["freq"] @ g)))
    amp = 1.0 / (1.0 + np.exp(-(tb["amp"] @ g)))
    rho = 0.45 + 0.35 / (1.0 + np.exp(-(tb["mix"] @ g)))
    head, luma, X, Y = _face_layer(size)
    waves = [0.5 + 0.5 * np.sin(np.pi * f * (X * np.cos(t) + Y * np.sin(t)) + p)
             for t, f, p in zip(theta, freq, tb["phase"])]
    w1 = amp[1] * waves[1]
    w2 = amp[2] * waves[2] * (1.0 - 0.5 * w1)
    texture = (palette[0][:, None, None] * (1 - w1 - w2)
               + palette[1][:, None, None] * w1
               + palette[2][:, None, None] * w2)
    texture = texture * (1.0 - 0.35 * amp[0] * waves[0])
    face = rho * texture + (1 - rho) * luma * palette[0][:, None, None]
    face = face * (0.55 + 0.45 * luma)
    img = head * face + (1 - head) * background
    return np.clip(img, 0.0, 1.0)


@lru_cache(maxsize=2)
def reference_images(count=128, size=64):
    """Prototypes of random concepts; the embedders calibrate on these."""
    rng = np.random.default_rng(CONCEPT_SEED + 1)
    return np.stack([prototype_image(rng.normal(0.0, 1.0, CONCEPT_DIM), size) for _ in range(count)])


@lru_cache(maxsize=2)
def plain_faces(count=64, size=64):
    """Untextured faces in natural skin tones: the "not stylized" anchor."""
    rng = np.random.default_rng(CONCEPT_SEED + 2)
    head, luma, _, _ = _face_layer(size)
    skins = rng.uniform((0.45, 0.30, 0.20), (0.95, 0.80, 0.70), (count, 3))
    return np.stack([head * luma * s[:, None, None] + (1 - head) * 0.5 for s in skins])


def check_template(template):
    if not isinstance(template, str) or template.count("{}") != 1:
        raise UsageError(f"template must contain exactly one '{{}}' placeholder: {template!r}")
    rest = template.replace("{}", "")
    if "{" in rest or "}" in rest:
        raise UsageError(f"template has stray braces: {template!r}")
    return template


def augment_text(text, templates, rng=None, n=None):
    """Instantiate prompt templates with ``text``.

    All templates are used in order unless ``n`` is given, in which case
    ``rng`` picks ``n`` of them without replacement.
    """
    templates = [check_template(t) for t in templates]
    if not templates:
        raise UsageError("need at least one template")
    if n is not None:
        if rng is None:
            raise UsageError("sampling templates needs an rng")
        idx = rng.choice(len(templates), size=min(n, len(templates)), replace=False)
        templates = [templates[i] for i in sorted(idx)]
    return [t.replace("{}", text) for t in templates]


def load_lines(path):
    """Non-empty, non-comment lines of a UTF-8 list file."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(line)
    return out


def load_templates(path):
    return [check_template(t) for t in load_lines(path)]
