"""Desk-scale dynamic avatar: identity/expression encoders, primitive decoder, renderer."""

from .faces import EXPRESSIONS, IDENTITIES, YAWS, dataset_grid, identity_maps, render_face
from .geometry import ViewSpec
from .model import (
    AvatarConfig,
    IdentityInput,
    decode,
    expression_encode,
    forward,
    forward_many,
    identity_encode,
    init_params,
)
from .pretrain import FaceDataset, build_dataset, default_dataset, pretrain_photoreal, rmse
from .render import PrimitiveSlab, composite, render, render_reference

__all__ = [
    "EXPRESSIONS", "IDENTITIES", "YAWS", "dataset_grid", "identity_maps", "render_face",
    "ViewSpec", "AvatarConfig", "IdentityInput", "decode", "expression_encode", "forward",
    "forward_many", "identity_encode", "init_params", "FaceDataset", "build_dataset",
    "default_dataset", "pretrain_photoreal", "rmse", "PrimitiveSlab", "composite", "render",
    "render_reference",
]
