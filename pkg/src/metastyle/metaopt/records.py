"""Configs, style datasets and per-step trajectories."""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

from ..embedder import load_lines
from ..losses import StyleTarget
from ..tensorcore import UsageError


@dataclass(frozen=True)
class ReptileConfig:
    T: int = 300
    M: int = 4
    K: int = 10
    alpha: float = 4e-3
    beta: float = 6e-3
    views_per_step: int = 4
    seed: int = 0
    checkpoint_every: int = 0
    workers: int = 1

    def __post_init__(self):
        if min(self.T, self.M, self.K) < 1:
            raise UsageError("T, M and K must be >= 1")
        if not (self.alpha > 0 and self.beta >= 0):
            raise UsageError("alpha must be > 0 and beta >= 0")
        if self.workers < 1 or self.checkpoint_every < 0:
            raise UsageError("workers must be >= 1 and checkpoint_every >= 0")


@dataclass(frozen=True)
class AdaptConfig:
    steps: int = 200
    lr: float = 8e-3
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or not self.lr > 0:
            raise UsageError("steps must be >= 0 and lr > 0")


@dataclass(frozen=True)
class StepRecord:
    step: int
    clip_term: float
    id_term: float
    total: float
    wall_ms: float = 0.0


@dataclass
class Trajectory:
    records: list = field(default_factory=list)

    def append(self, bd, wall_ms=0.0):
        self.records.append(StepRecord(len(self.records), bd.clip_term, bd.id_term, bd.total, wall_ms))

    def __len__(self):
        return len(self.records)

    @property
    def totals(self):
        return [r.total for r in self.records]

    def total_at(self, step):
        return self.records[step].total

    def tail_mean(self, n=10):
        tail = self.totals[-n:]
        return sum(tail) / len(tail)

    def to_csv(self, path=None, with_time=False):
        """Deterministic CSV (wall-clock column only on request)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["step", "clip_term", "id_term", "total"] + (["wall_ms"] if with_time else [])
        w.writerow(head)
        for r in self.records:
            row = [r.step, repr(r.clip_term), repr(r.id_term), repr(r.total)]
            w.writerow(row + ([f"{r.wall_ms:.3f}"] if with_time else []))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


@dataclass(frozen=True)
class StyleEntry:
    name: str
    split: str
    text: str | None = None
    image_path: str | None = None

    def target(self, templates=None):
        if self.image_path is None:
            return StyleTarget(name=self.name, text=self.text, templates=templates)
        from PIL import Image
        import numpy as np
        img = np.asarray(Image.open(self.image_path).convert("RGB").resize((64, 64)), dtype=np.float64)
        return StyleTarget(name=self.name, text=self.text, image=img.transpose(2, 0, 1) / 255.0,
                           mix_weight=0.5 if self.text else None, templates=templates)


@dataclass
class StyleDataset:
    entries: list

    def __post_init__(self):
        train = {e.name.lower() for e in self.entries if e.split == "train"}
        test = {e.name.lower() for e in self.entries if e.split == "test"}
        if train & test:
            raise UsageError(f"styles in both splits: {sorted(train & test)[:3]}")
        bad = {e.split for e in self.entries} - {"train", "test"}
        if bad:
            raise UsageError(f"unknown split labels {sorted(bad)}")

    @classmethod
    def from_files(cls, train_path=None, test_path=None):
        entries = []
        for path, split in ((train_path, "train"), (test_path, "test")):
            if path is not None:
                entries += [StyleEntry(t, split, text=t) for t in load_lines(path)]
        return cls(entries)

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def targets(self, split, templates=None):
        return [e.target(templates) for e in self.split(split)]

    def contains(self, name, split="train"):
        return any(e.name.lower() == name.lower() for e in self.split(split))

    def content_hash(self):
        """Git-style blob hash of the canonical dataset listing."""
        body = "".join(f"{e.split}\t{e.name}\t{e.image_path or ''}\n" for e in self.entries).encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()
