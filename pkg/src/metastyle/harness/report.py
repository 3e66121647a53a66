"""Run reports: JSON summaries whose numbers can be recomputed from checkpoints."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..embedder.text import fnv1a64
from ..tensorcore import UsageError


@dataclass
class Check:
    """One reported number and the recipe that reproduces it.

    ``kind`` selects the recomputation (see ``audit.RECOMPUTE``); ``args``
    holds everything it needs besides the config.
    """

    name: str
    value: float
    kind: str
    args: dict = field(default_factory=dict)


@dataclass
class RunReport:
    command: str
    seed: int
    config: dict
    results: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    def add_check(self, name, value, kind, **args):
        self.checks.append(Check(name, float(value), kind, args))
        return float(value)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path):
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"report not found: {path}") from None
        checks = [Check(**c) for c in raw.pop("checks", [])]
        return cls(checks=checks, **raw)


def slug(text, limit=40):
    """Filesystem-safe, collision-resistant name for a style string."""
    base = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")[:limit] or "style"
    return f"{base}-{fnv1a64(text) & 0xFFFFFF:06x}"
