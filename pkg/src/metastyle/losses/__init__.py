"""Stylization objective: embedding loss, self-similarity identity loss, and their blend."""

from .style import (
    LossBreakdown,
    LossWeights,
    StyleTarget,
    clip_loss,
    identity_loss,
    self_similarity,
    source_tokens,
    stack_images,
    style_loss,
)

__all__ = [
    "LossBreakdown", "LossWeights", "StyleTarget", "clip_loss", "identity_loss",
    "self_similarity", "source_tokens", "stack_images", "style_loss",
]
