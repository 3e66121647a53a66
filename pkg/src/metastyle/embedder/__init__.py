"""Stand-in image/text embedders, augmentations and style targets."""

from .augment import AugmentationConfig, augment_batch, augment_images, crop_matrices
from .network import (
    EmbedderSpec,
    ExternalEmbedder,
    RandomFeaturesEmbedder,
    build_embedder,
    embed_image,
    embed_text,
    image_tokens,
    mix_targets,
    text_target,
)
from .text import DEFAULT_TEMPLATES, augment_text, fnv1a64, load_lines, load_templates, tokenize

__all__ = [
    "AugmentationConfig", "augment_batch", "augment_images", "crop_matrices",
    "EmbedderSpec", "ExternalEmbedder", "RandomFeaturesEmbedder", "build_embedder",
    "embed_image", "embed_text", "image_tokens", "mix_targets", "text_target",
    "DEFAULT_TEMPLATES", "augment_text", "fnv1a64", "load_lines", "load_templates", "tokenize",
]
