"""Desk-scale dynamic avatar: identity encoder, expression encoder, slab decoder.

The identity encoder turns position/texture maps into multi-scale bias
maps; its bias-mapper blocks are the only stylizable parameters. The
decoder starts from a learned seed map concatenated with the expression
code, adds a bias map at every scale while upsampling, and emits a grid
of volumetric primitives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensorcore import (
    FROZEN,
    STYLIZABLE,
    DimensionError,
    ParamStore,
    Tensor,
    UsageError,
    add,
    bias_add,
    concat,
    conv2d,
    expand,
    matmul,
    ops,
    relu,
    reshape,
    scale,
    sigmoid,
    softplus,
    tanh,
    transpose,
    upsample2,
)
from .geometry import ViewSpec, pixel_centers
from .render import PrimitiveSlab, render


@dataclass(frozen=True)
class AvatarConfig:
    map_size: int = 16
    grid: int = 8
    voxels: int = 2
    image_size: int = 64
    n_bias_maps: int = 3
    expr_dim: int = 8
    code_dim: int = 16
    channels: int = 16
    seed_channels: int = 8
    expr_hidden: int = 32
    background: float = 0.5
    offset_scale: float = 0.15
    scale_unit: float = 0.1
    init_scale: float = 0.16
    bias_gain: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.map_size != 2 * self.grid:
            raise UsageError("map_size must be twice the primitive grid")
        if self.map_size % (2 ** (self.n_bias_maps - 1)):
            raise UsageError("map_size must be divisible by 2**(n_bias_maps-1)")
        if self.voxels < 2 or self.n_bias_maps < 1:
            raise UsageError("need voxels >= 2 and n_bias_maps >= 1")

    @property
    def scales(self):
        """Bias-map resolutions, coarse to fine."""
        return [self.map_size // 2 ** k for k in range(self.n_bias_maps - 1, -1, -1)]

    @property
    def head_dim(self):
        return 4 + 4 * self.voxels ** 3


@dataclass
class IdentityInput:
    position_map: Tensor
    texture_map: Tensor

    def validate(self, cfg):
        shape = (3, cfg.map_size, cfg.map_size)
        if self.position_map.shape != shape or self.texture_map.shape != shape:
            raise DimensionError(f"identity maps must be {shape}")
        if np.abs(self.position_map.data).max() > 1.0 + 1e-6:
            raise UsageError("position map must lie in [-1, 1]")
        tex = self.texture_map.data
        if tex.min() < -1e-6 or tex.max() > 1.0 + 1e-6:
            raise UsageError("texture map must lie in [0, 1]")

    @classmethod
    def from_arrays(cls, position_map, texture_map):
        return cls(Tensor(position_map), Tensor(texture_map))


def _he(rng, shape, fan_in, gain=1.0):
    return rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=shape)


def template_centers(grid):
    """Primitive rest positions on a generic ellipsoidal face."""
    u = pixel_centers(grid) * 0.9
    U, V = np.meshgrid(u, -u)
    z = 0.55 * np.sqrt(np.clip(1 - U**2 - V**2, 0.0, None))
    return np.stack([U * 0.62, V * 0.78, z], axis=-1)


def init_params(cfg=None):
    """Freshly initialized parameters, deterministic in ``cfg.seed``."""
    cfg = cfg or AvatarConfig()
    rng = np.random.default_rng(cfg.seed)
    C, Z, E = cfg.channels, cfg.code_dim, cfg.expr_dim
    ps = ParamStore()
    for k in range(cfg.n_bias_maps):
        cin = 6 if k == 0 else C
        ps.add(f"identity.trunk{k}.w", _he(rng, (C, cin, 3, 3), cin * 9), FROZEN)
        ps.add(f"identity.trunk{k}.b", np.zeros(C), FROZEN)
    for k in range(cfg.n_bias_maps):
        ps.add(f"identity.bias_mapper{k}.conv1.w", _he(rng, (C, C, 3, 3), C * 9), STYLIZABLE)
        ps.add(f"identity.bias_mapper{k}.conv1.b", np.zeros(C), STYLIZABLE)
        ps.add(f"identity.bias_mapper{k}.conv2.w", _he(rng, (C, C, 3, 3), C * 9, 0.5), STYLIZABLE)
    ps.add("expression.fc1.w", _he(rng, (cfg.expr_hidden, E), E), FROZEN)
    ps.add("expression.fc1.b", np.zeros(cfg.expr_hidden), FROZEN)
    ps.add("expression.fc2.w", _he(rng, (Z, cfg.expr_hidden), cfg.expr_hidden, 0.5), FROZEN)
    ps.add("expression.fc2.b", np.zeros(Z), FROZEN)
    s0 = cfg.scales[0]
    ps.add("decoder.seed", rng.normal(0.0, 1.0, (cfg.seed_channels, s0, s0)), FROZEN)
    for k in range(cfg.n_bias_maps):
        cin = cfg.seed_channels + Z if k == 0 else C
        ps.add(f"decoder.conv{k}.w", _he(rng, (C, cin, 3, 3), cin * 9), FROZEN)
        ps.add(f"decoder.conv{k}.b", np.zeros(C), FROZEN)
    head_b = np.zeros(cfg.head_dim)
    head_b[3] = np.log(np.expm1(cfg.init_scale / cfg.scale_unit))
    nv = cfg.voxels ** 3
    head_b[4 + 3 * nv: 4 + 4 * nv] = 2.0   # alpha logits: start mostly opaque
    ps.add("decoder.head.w", rng.normal(0.0, 0.05 / np.sqrt(4 * C), (4 * C, cfg.head_dim)), FROZEN)
    ps.add("decoder.head.b", head_b, FROZEN)
    ps.add("decoder.base", template_centers(cfg.grid), FROZEN)
    return ps


def identity_encode(params, cfg, id_in):
    """Bias maps ``C×s×s`` for every decoder scale, coarse to fine."""
    id_in.validate(cfg)
    x = concat([id_in.position_map, id_in.texture_map], axis=0)
    feats = []
    for k in range(cfg.n_bias_maps):
        x = relu(bias_add(conv2d(x, params[f"identity.trunk{k}.w"]), params[f"identity.trunk{k}.b"]))
        feats.append(x)
        if k + 1 < cfg.n_bias_maps:
            x = ops.avgpool(x, 2)
    maps = []
    # feats run fine to coarse; bias mapper k serves scale cfg.scales[k]
    for k, f in enumerate(reversed(feats)):
        h = relu(bias_add(conv2d(f, params[f"identity.bias_mapper{k}.conv1.w"]),
                          params[f"identity.bias_mapper{k}.conv1.b"]))
        h = conv2d(h, params[f"identity.bias_mapper{k}.conv2.w"])
        maps.append(scale(h, cfg.bias_gain) if cfg.bias_gain != 1.0 else h)
    return maps


def expression_encode(params, cfg, e):
    """Expression code(s): ``E -> Z`` or ``n×E -> n×Z``."""
    e = e if isinstance(e, Tensor) else Tensor(e)
    single = e.ndim == 1
    if e.shape[-1] != cfg.expr_dim or e.ndim not in (1, 2):
        raise DimensionError(f"expression must have length {cfg.expr_dim}, got shape {e.shape}")
    cols = reshape(e, (cfg.expr_dim, 1)) if single else transpose(e, (1, 0))
    h = relu(bias_add(matmul(params["expression.fc1.w"], cols), params["expression.fc1.b"], axis=0))
    z = tanh(bias_add(matmul(params["expression.fc2.w"], h), params["expression.fc2.b"], axis=0))
    return reshape(z, (cfg.code_dim,)) if single else transpose(z, (1, 0))


def decode(params, cfg, bias_maps, z):
    """Primitive slab(s) from bias maps and expression code(s).

    ``z`` of shape ``Z`` gives one slab, ``n×Z`` gives a list of ``n``.
    """
    single = z.ndim == 1
    zb = reshape(z, (1, cfg.code_dim)) if single else z
    n = zb.shape[0]
    if len(bias_maps) != cfg.n_bias_maps:
        raise DimensionError(f"expected {cfg.n_bias_maps} bias maps, got {len(bias_maps)}")
    for bm, s in zip(bias_maps, cfg.scales):
        if bm.shape != (cfg.channels, s, s):
            raise DimensionError(f"bias map {bm.shape} does not match scale {s}")
    C, Z, G, s0 = cfg.channels, cfg.code_dim, cfg.grid, cfg.scales[0]

    seed = expand(params["decoder.seed"], n)
    ones = Tensor(np.ones((1, s0 * s0)))
    zmap = reshape(matmul(reshape(zb, (n * Z, 1)), ones), (n, Z, s0, s0))
    h = concat([seed, zmap], axis=1)
    for k in range(cfg.n_bias_maps):
        if k:
            h = upsample2(h)
        h = bias_add(conv2d(h, params[f"decoder.conv{k}.w"]), params[f"decoder.conv{k}.b"])
        h = relu(add(h, expand(bias_maps[k], n)))

    # space-to-depth: each primitive reads a 2x2 block of the finest map
    h = reshape(h, (n, C, G, 2, G, 2))
    h = reshape(transpose(h, (0, 2, 4, 1, 3, 5)), (n * G * G, 4 * C))
    out = bias_add(matmul(h, params["decoder.head.w"]), params["decoder.head.b"], axis=-1)
    out = reshape(out, (n, G, G, cfg.head_dim))
    v = cfg.voxels
    centers = add(expand(params["decoder.base"], n),
                  scale(tanh(out[:, :, :, 0:3]), cfg.offset_scale))
    scales = scale(softplus(out[:, :, :, 3]), cfg.scale_unit)
    payload = sigmoid(reshape(out[:, :, :, 4:], (n, G, G, 4, v, v, v)))
    slabs = [PrimitiveSlab(centers[i], scales[i], payload[i]) for i in range(n)]
    return slabs[0] if single else slabs


def forward(params, cfg, id_in, e, view):
    """Rendered image ``3×H×W`` of the avatar with expression ``e`` from ``view``."""
    maps = identity_encode(params, cfg, id_in)
    z = expression_encode(params, cfg, e)
    slab = decode(params, cfg, maps, z)
    return render(slab, view, cfg.image_size, cfg.background)


def forward_many(params, cfg, id_in, expressions, views):
    """Render one image per (expression, view) pair, sharing the identity pass."""
    if len(expressions) != len(views):
        raise UsageError("need one view per expression")
    maps = identity_encode(params, cfg, id_in)
    z = expression_encode(params, cfg, Tensor(np.asarray(expressions, dtype=np.float64)))
    slabs = decode(params, cfg, maps, z)
    return [render(s, v if isinstance(v, ViewSpec) else ViewSpec(*v), cfg.image_size, cfg.background)
            for s, v in zip(slabs, views)]
