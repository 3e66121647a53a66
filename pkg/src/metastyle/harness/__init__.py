"""Experiment layer: configs, style lists, run steps, reports and the CLI."""

from .audit import AuditRow, audit
from .config import (
    DATA_DIR,
    SCHEMA_VERSION,
    DataSettings,
    EmbedderSettings,
    ExperimentConfig,
    MixingSettings,
    PretrainSettings,
)
from .report import Check, RunReport, slug
from .runs import (
    INITS,
    MissingInput,
    adapt,
    build_problem,
    compare_inits,
    eval_semantic,
    gen_faces,
    load_params,
    meta_train,
    mix_train,
    pretrain,
    render_files,
    render_grid,
    semantic_scores,
    style_target,
)

__all__ = [
    "AuditRow", "audit", "DATA_DIR", "SCHEMA_VERSION", "DataSettings", "EmbedderSettings",
    "ExperimentConfig", "MixingSettings", "PretrainSettings", "Check", "RunReport", "slug",
    "INITS", "MissingInput", "adapt", "build_problem", "compare_inits", "eval_semantic", "gen_faces",
    "load_params", "meta_train", "mix_train", "pretrain", "render_files", "render_grid",
    "semantic_scores", "style_target",
]
