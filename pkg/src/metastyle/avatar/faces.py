"""Procedural "photoreal" faces used as pretraining targets.

A head is an ellipsoid with painted features (eyes, brows, mouth, hair)
whose placement reacts to an expression vector. Images are ray-cast
analytically with the same orthographic camera as the avatar renderer,
so targets are view-consistent by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import pixel_centers, rotation

EXPRESSION_DIM = 8

# smile, mouth_open, brow_raise, eye_close, jaw_drop, cheek, squint, pout
EXPRESSIONS = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],   # neutral
    [1.0, 0.2, 0.0, 0.0, 0.0, 0.5, 0.3, 0.0],   # smile
    [0.0, 1.0, 0.3, 0.0, 1.0, 0.0, 0.0, 0.0],   # open mouth
    [0.0, 0.6, 1.0, 0.0, 0.4, 0.0, 0.0, 0.5],   # surprised
    [0.2, 0.0, -0.4, 1.0, 0.0, 0.0, 1.0, 0.0],  # eyes closed
], dtype=np.float64)

YAWS = (-0.5, -0.25, 0.0, 0.25, 0.5)


@dataclass(frozen=True)
class FaceIdentity:
    radii: tuple = (0.62, 0.78, 0.55)
    skin: tuple = (0.87, 0.68, 0.56)
    hair: tuple = (0.25, 0.16, 0.10)
    lips: tuple = (0.72, 0.30, 0.32)
    iris: tuple = (0.20, 0.30, 0.45)
    eye_x: float = 0.34
    eye_y: float = 0.16
    mouth_y: float = -0.45
    hairline: float = 0.55
    # right-eye vertical shift; zero keeps the face mirror-symmetric
    asym: float = 0.0
    light: tuple = field(default=(0.0, 0.45, 0.89))


IDENTITIES = (
    FaceIdentity(),
    FaceIdentity(
        radii=(0.58, 0.82, 0.52),
        skin=(0.55, 0.38, 0.28),
        hair=(0.08, 0.07, 0.07),
        lips=(0.48, 0.22, 0.22),
        iris=(0.28, 0.18, 0.10),
        eye_x=0.31,
        eye_y=0.12,
        mouth_y=-0.48,
        hairline=0.62,
        asym=0.04,
    ),
)


def _soft(d, width=0.06):
    """Smooth indicator of ``d < 0`` with a linear ramp of the given width."""
    return np.clip(0.5 - d / width, 0.0, 1.0)


def surface_color(ident, q, e):
    """Albedo times shading at object-space surface points ``q`` (..., 3)."""
    e = np.asarray(e, dtype=np.float64)
    smile, mouth_open, brow, eye_close, jaw, cheek, squint, pout = e[:EXPRESSION_DIM]
    rx, ry, rz = ident.radii
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    ax = np.abs(x)
    col = np.broadcast_to(np.asarray(ident.skin), q.shape).copy()

    # cheeks
    cheek_d = np.sqrt((ax - 0.36) ** 2 + ((y + 0.18) / 0.8) ** 2) - (0.12 + 0.04 * cheek)
    blush = 0.35 * _soft(cheek_d, 0.12)[..., None] * (0.4 + cheek)
    col = col * (1 - blush) + blush * np.asarray([0.9, 0.45, 0.45])

    # eyes: right eye (x > 0) may sit slightly higher
    ey = ident.eye_y + np.where(x > 0, ident.asym, 0.0)
    open_h = 0.075 * (1.0 - 0.85 * eye_close) * (1.0 - 0.35 * squint)
    eye_d = np.sqrt(((ax - ident.eye_x) / 0.12) ** 2 + ((y - ey) / max(open_h, 1e-3)) ** 2) - 1.0
    sclera = _soft(eye_d, 0.5)[..., None]
    col = col * (1 - sclera) + sclera * np.asarray([0.95, 0.95, 0.93])
    iris_d = np.sqrt((ax - ident.eye_x) ** 2 + (y - ey) ** 2) - min(0.055, open_h)
    iris = (_soft(iris_d, 0.03) * _soft(eye_d, 0.5))[..., None]
    col = col * (1 - iris) + iris * np.asarray(ident.iris)

    # brows
    brow_y = ey + 0.13 + 0.07 * brow
    brow_d = np.maximum(np.abs(ax - ident.eye_x) - 0.13, np.abs(y - brow_y - 0.05 * (ax - ident.eye_x)) - 0.025)
    br = 0.85 * _soft(brow_d, 0.03)[..., None]
    col = col * (1 - br) + br * np.asarray(ident.hair)

    # mouth: width grows with smile, height with mouth_open, corners lift with smile
    my = ident.mouth_y - 0.06 * jaw
    mw = 0.17 + 0.07 * smile - 0.05 * pout
    mh = 0.035 + 0.09 * mouth_open + 0.02 * pout
    curve = my + 0.35 * smile * (ax / mw) ** 2 * 0.12
    mouth_d = np.sqrt((ax / mw) ** 2 + ((y - curve) / mh) ** 2) - 1.0
    lip = _soft(mouth_d, 0.35)[..., None]
    col = col * (1 - lip) + lip * np.asarray(ident.lips)
    inner_d = np.sqrt((ax / (0.8 * mw)) ** 2 + ((y - curve) / max(mh - 0.035, 1e-3)) ** 2) - 1.0
    inner = (_soft(inner_d, 0.4) * min(1.0, 3.0 * mouth_open))[..., None]
    col = col * (1 - inner) + inner * np.asarray([0.25, 0.08, 0.08])

    # hair on top and back of the head
    hair_d = ident.hairline - y - 0.12 * (ax / rx) ** 2 + 0.4 * np.minimum(z, 0.0)
    hair = _soft(hair_d, 0.08)[..., None]
    col = col * (1 - hair) + hair * np.asarray(ident.hair)

    # lambert shading with the ellipsoid normal
    n = np.stack([x / rx**2, y / ry**2, z / rz**2], axis=-1)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    shade = 0.55 + 0.45 * np.clip(n @ np.asarray(ident.light), 0.0, 1.0)
    return np.clip(col * shade[..., None], 0.0, 1.0)


def _radii(ident, e):
    rx, ry, rz = ident.radii
    jaw = float(np.asarray(e)[4])
    return rx, ry * (1.0 + 0.08 * jaw), rz


def render_face(ident, e, yaw, pitch=0.0, size=64, background=0.5):
    """Ray-cast the procedural head; returns a float image ``3×size×size``."""
    rot = rotation(yaw, pitch)
    A = rot.T[:, :2]
    r2 = rot[2, :]
    xs = pixel_centers(size)
    ys = -pixel_centers(size)
    X, Y = np.meshgrid(xs, ys)
    base = X[..., None] * A[:, 0] + Y[..., None] * A[:, 1]
    rx, ry, rz = _radii(ident, e)
    D = np.asarray([1 / rx**2, 1 / ry**2, 1 / rz**2])
    a = r2 @ (D * r2)
    b = 2 * (base * (D * r2)).sum(-1)
    c = (base * base * D).sum(-1) - 1.0
    disc = b * b - 4 * a * c
    hit = disc > 0
    t = (-b + np.sqrt(np.where(hit, disc, 0.0))) / (2 * a)
    q = base + t[..., None] * r2
    col = surface_color(ident, q, e)
    # soft silhouette from the discriminant keeps edges anti-aliased
    cover = np.clip(disc / (4 * a) / 0.02, 0.0, 1.0)[..., None]
    img = col * cover + background * (1 - cover)
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def identity_maps(ident, size=16):
    """Position and texture maps of the neutral face on a ``size×size`` grid.

    Positions cover the front of the ellipsoid, normalized to [-1, 1];
    texture is the neutral-expression albedo at those points.
    """
    rx, ry, rz = ident.radii
    u = pixel_centers(size) * 1.05
    v = -pixel_centers(size) * 1.05
    U, V = np.meshgrid(u, v)
    x, y = U * rx, V * ry
    inside = np.clip(1 - U**2 - V**2, 0.0, None)
    z = rz * np.sqrt(inside)
    pos = np.stack([x, y, z], axis=0)
    tex = surface_color(ident, np.stack([x, y, np.maximum(z, 1e-3)], -1), np.zeros(EXPRESSION_DIM))
    return np.clip(pos, -1, 1), tex.transpose(2, 0, 1)


def dataset_grid(yaws=YAWS, expressions=EXPRESSIONS, identities=IDENTITIES, size=64, background=0.5):
    """All (identity, yaw, expression) target images.

    Returns ``images`` (N×3×H×W) and a list of ``(identity, yaw_index,
    expression_index)`` records in the same order.
    """
    images, index = [], []
    for i, ident in enumerate(identities):
        for yi, yaw in enumerate(yaws):
            for ei, e in enumerate(expressions):
                images.append(render_face(ident, e, yaw, size=size, background=background))
                index.append((i, yi, ei))
    return np.stack(images), index
