"""Inner-loop stylization, Reptile meta-training and the two baselines."""

from .problem import BASE_YAWS, StylizationProblem, ViewDraw, step_rng, style_key
from .records import AdaptConfig, ReptileConfig, StepRecord, StyleDataset, StyleEntry, Trajectory
from .reptile import (
    direct_optimize,
    fast_adapt,
    inner_loop,
    reptile_train,
    sample_styles,
    task_mixing_train,
)

__all__ = [
    "BASE_YAWS", "StylizationProblem", "ViewDraw", "step_rng", "style_key",
    "AdaptConfig", "ReptileConfig", "StepRecord", "StyleDataset", "StyleEntry", "Trajectory",
    "direct_optimize", "fast_adapt", "inner_loop", "reptile_train", "sample_styles",
    "task_mixing_train",
]
