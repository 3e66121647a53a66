"""Recompute reported numbers from stored checkpoints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..losses import StyleTarget
from ..tensorcore import UsageError
from . import runs
from .config import ExperimentConfig
from .report import RunReport


@dataclass
class AuditRow:
    name: str
    stored: float
    recomputed: float

    @property
    def ok(self):
        return self.stored == self.recomputed


def _style_loss(cfg, args):
    source, _ = runs.load_params(args["source"], cfg, "source checkpoint")
    params, _ = runs.load_params(args["checkpoint"], cfg)
    if args.get("image"):
        target = runs.style_target(cfg, args.get("text"), args["image"], args.get("mix_weight"))
    else:
        target = StyleTarget.from_text(args["text"], tuple(runs.augmentation(cfg).templates))
    problem = runs.build_problem(cfg, source, args.get("lambda_id"))
    bd = problem.evaluate(params, target, seed=args["seed"], step=args["step"])
    return getattr(bd, args.get("field", "total"))


def _rmse(cfg, args):
    params, _ = runs.load_params(args["checkpoint"], cfg)
    data = runs.load_faces(cfg)
    from ..avatar.pretrain import rmse
    return rmse(params, cfg.avatar, data, getattr(data, args["split"]))


def _semantic(cfg, args):
    params, _ = runs.load_params(args["checkpoint"], cfg)
    return float(runs.semantic_scores(params, cfg, args["text"], args["eval_seed"]).mean())


RECOMPUTE = {"style_loss": _style_loss, "rmse": _rmse, "semantic": _semantic}


def audit(report_path, count=3, seed=0):
    """Recompute ``count`` randomly chosen checks of a report (all if fewer).

    Uses the config echoed in the report, so the audit is independent of
    the caller's current config.
    """
    rep = RunReport.load(report_path)
    cfg = ExperimentConfig.from_dict(rep.config)
    if not rep.checks:
        raise UsageError(f"{report_path}: report has no recomputable entries")
    rng = np.random.default_rng(seed)
    pick = sorted(rng.choice(len(rep.checks), size=min(count, len(rep.checks)), replace=False))
    rows = []
    for i in pick:
        c = rep.checks[i]
        fn = RECOMPUTE.get(c.kind)
        if fn is None:
            raise UsageError(f"unknown check kind {c.kind!r}")
        rows.append(AuditRow(c.name, c.value, float(fn(cfg, c.args))))
    return rows
