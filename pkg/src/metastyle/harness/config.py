"""Experiment configuration: a versioned JSON document mapped onto dataclasses.

Schema (version 1); every section and key is optional, unknown keys are
rejected::

    {
      "schema_version": 1,
      "seed": 0,
      "workers": 1,
      "output_dir": "runs/default",
      "avatar":   {AvatarConfig fields},
      "embedder": {"train_seeds": [11, 12], "eval_seed": 99, "dim": 64,
                   "token_grid": 4, "token_anisotropy": 4.0, "style_axis": 1.0},
      "loss":     {"lambda_clip": 1.0, "lambda_id": 1.0},
      "augment":  {"n_image_augs": 4, "crop_min": 0.7, "crop_max": 1.0,
                   "flip_prob": 0.5, "templates": null},
      "pretrain": {"steps": 200, "lr": 0.008, "batch_size": 4, "seed": 0},
      "reptile":  {ReptileConfig fields},
      "mixing":   {"iterations": 300, "lr": 0.00024},
      "adapt":    {AdaptConfig fields},
      "data":     {"faces_dir": null, "train_styles": null, "test_styles": null,
                   "templates": null},
      "identity": 0,
      "views_per_step": 4
    }

Relative paths resolve against the config file's directory. ``null``
style lists mean the bundled lists.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..avatar.model import AvatarConfig
from ..embedder import AugmentationConfig, EmbedderSpec
from ..losses import LossWeights
from ..metaopt import AdaptConfig, ReptileConfig
from ..tensorcore import UsageError

SCHEMA_VERSION = 1
DATA_DIR = Path(__file__).resolve().parent / "data"


@dataclass(frozen=True)
class EmbedderSettings:
    train_seeds: tuple = (11, 12)
    eval_seed: int = 99
    dim: int = 64
    token_grid: int = 4
    token_anisotropy: float = 4.0
    style_axis: float = 1.0

    def __post_init__(self):
        seeds = tuple(int(s) for s in self.train_seeds)
        object.__setattr__(self, "train_seeds", seeds)
        if not seeds:
            raise UsageError("need at least one training embedder seed")
        if len(set(seeds)) != len(seeds):
            raise UsageError("training embedder seeds must be distinct")
        if self.eval_seed in seeds:
            raise UsageError(f"evaluation seed {self.eval_seed} collides with a training embedder seed")

    def spec(self, seed, kind="random_features"):
        return EmbedderSpec(kind=kind, seed=int(seed), dim=self.dim, token_grid=self.token_grid,
                            token_anisotropy=self.token_anisotropy, style_axis=self.style_axis)

    def train_specs(self):
        return [self.spec(s) for s in self.train_seeds]

    def eval_spec(self):
        return self.spec(self.eval_seed)


@dataclass(frozen=True)
class PretrainSettings:
    steps: int = 200
    lr: float = 8e-3
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or not self.lr > 0:
            raise UsageError("pretrain needs steps >= 0, batch_size >= 1, lr > 0")


@dataclass(frozen=True)
class MixingSettings:
    """Task-mixing baseline schedule (Reptile with K=1, M=1, beta=1)."""

    iterations: int = 300
    lr: float = 2.4e-4

    def __post_init__(self):
        if self.iterations < 0 or not self.lr > 0:
            raise UsageError("mixing needs iterations >= 0 and lr > 0")


@dataclass(frozen=True)
class DataSettings:
    faces_dir: str | None = None
    train_styles: str | None = None
    test_styles: str | None = None
    templates: str | None = None

    def train_path(self):
        return Path(self.train_styles) if self.train_styles else DATA_DIR / "train_styles.txt"

    def test_path(self):
        return Path(self.test_styles) if self.test_styles else DATA_DIR / "test_styles.txt"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    workers: int = 1
    output_dir: str = "runs/default"
    identity: int = 0
    views_per_step: int = 4
    avatar: AvatarConfig = field(default_factory=AvatarConfig)
    embedder: EmbedderSettings = field(default_factory=EmbedderSettings)
    loss: LossWeights = field(default_factory=LossWeights)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    pretrain: PretrainSettings = field(default_factory=PretrainSettings)
    reptile: ReptileConfig = field(default_factory=ReptileConfig)
    mixing: MixingSettings = field(default_factory=MixingSettings)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    data: DataSettings = field(default_factory=DataSettings)

    def __post_init__(self):
        if self.workers < 1:
            raise UsageError("workers must be >= 1")
        if self.views_per_step < 1:
            raise UsageError("views_per_step must be >= 1")
        if self.identity < 0:
            raise UsageError("identity index must be >= 0")

    @property
    def out(self):
        return Path(self.output_dir)

    def to_dict(self):
        d = asdict(self)
        d["embedder"]["train_seeds"] = list(self.embedder.train_seeds)
        d["augment"]["templates"] = list(self.augment.templates)
        return {"schema_version": SCHEMA_VERSION, **d}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")

    def with_overrides(self, **changes):
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, raw, base_dir=None):
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        raw = dict(raw)
        version = raw.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise UsageError(f"unsupported config schema_version {version!r}")
        sections = {f.name: f for f in fields(cls)}
        _reject_unknown(raw, sections, "config")
        kwargs = {}
        for key, value in raw.items():
            typ = _SECTION_TYPES.get(key)
            if typ is None:
                kwargs[key] = value
                continue
            if not isinstance(value, dict):
                raise UsageError(f"config section {key!r} must be an object")
            _reject_unknown(value, {f.name for f in fields(typ)}, key)
            value = dict(value)
            if key == "augment" and value.get("templates") is None:
                value.pop("templates", None)
            elif key == "augment":
                value["templates"] = tuple(value["templates"])
            if key == "data" and base_dir is not None:
                value = {k: _resolve(v, base_dir) for k, v in value.items()}
            try:
                kwargs[key] = typ(**value)
            except TypeError as exc:
                raise UsageError(f"config section {key!r}: {exc}") from None
        if base_dir is not None and "output_dir" in kwargs:
            kwargs["output_dir"] = _resolve(kwargs["output_dir"], base_dir)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise UsageError(f"config: {exc}") from None

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, base_dir=path.parent)


_SECTION_TYPES = {
    "avatar": AvatarConfig,
    "embedder": EmbedderSettings,
    "loss": LossWeights,
    "augment": AugmentationConfig,
    "pretrain": PretrainSettings,
    "reptile": ReptileConfig,
    "mixing": MixingSettings,
    "adapt": AdaptConfig,
    "data": DataSettings,
}


def _reject_unknown(raw, known, where):
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise UsageError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _resolve(value, base_dir):
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else Path(base_dir) / p)
