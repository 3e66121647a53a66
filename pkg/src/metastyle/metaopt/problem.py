"""Everything an inner SGD step needs: avatar, sources, embedders, views."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..avatar.faces import EXPRESSIONS
from ..avatar.geometry import ViewSpec
from ..avatar.model import AvatarConfig, IdentityInput, forward_many
from ..embedder import AugmentationConfig, fnv1a64
from ..losses import LossWeights, source_tokens, style_loss
from ..tensorcore import Tape, Tensor, UsageError, precision

# two side views and two near-frontal views
BASE_YAWS = (-0.5, 0.5, -0.1, 0.1)
YAW_JITTER = (-0.1, -0.05, 0.0, 0.05, 0.1)
PITCH_JITTER = (-0.1, 0.0, 0.1)

STREAM_STYLES = 1
STREAM_STEPS = 2


def step_rng(seed, style_key, step):
    """Independent generator for one SGD step of one style."""
    return np.random.default_rng([int(seed), STREAM_STEPS, int(style_key), int(step)])


def style_key(style):
    return fnv1a64(style.name)


@dataclass(frozen=True)
class ViewDraw:
    base: int
    yaw_j: int
    pitch_j: int
    expr: int

    @property
    def view(self):
        return ViewSpec(BASE_YAWS[self.base] + YAW_JITTER[self.yaw_j], PITCH_JITTER[self.pitch_j])

    @property
    def expression(self):
        return EXPRESSIONS[self.expr]


@dataclass
class StylizationProblem:
    """Fixed ingredients of stylization for one avatar identity.

    ``source_params`` is the photoreal (pre-stylization) avatar: its renders
    at the drawn (view, expression) pairs are the identity-loss sources and
    never change, so they are cached once per pair.
    """

    cfg: AvatarConfig
    source_params: object
    identity: IdentityInput
    embedders: list
    weights: LossWeights = field(default_factory=LossWeights)
    aug: AugmentationConfig = field(default_factory=AugmentationConfig)
    views_per_step: int = 4
    _sources: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.views_per_step < 1:
            raise UsageError("views_per_step must be >= 1")
        if not self.embedders:
            raise UsageError("need at least one training embedder")

    def with_weights(self, weights):
        out = StylizationProblem(self.cfg, self.source_params, self.identity, self.embedders,
                                 weights, self.aug, self.views_per_step)
        out._sources = self._sources
        return out

    def draw(self, rng):
        """``views_per_step`` (view, expression) draws cycling over the base views."""
        out = []
        for v in range(self.views_per_step):
            yj, pj, e = rng.integers(0, (len(YAW_JITTER), len(PITCH_JITTER), len(EXPRESSIONS)))
            out.append(ViewDraw(v % len(BASE_YAWS), int(yj), int(pj), int(e)))
        return out

    def source(self, d):
        """Cached source render and per-embedder tokens for one draw."""
        if d not in self._sources:
            with precision(np.float32):
                img = forward_many(self.source_params, self.cfg, self.identity,
                                   [d.expression], [d.view])[0].data.copy()
            toks = [t[0] for t in source_tokens(self.embedders, [img])]
            self._sources[d] = (img, toks)
        return self._sources[d]

    def render(self, params, draws):
        return forward_many(params, self.cfg, self.identity,
                            [d.expression for d in draws], [d.view for d in draws])

    def loss(self, params, style, rng):
        """Style loss at freshly drawn views; the caller owns the tape."""
        draws = self.draw(rng)
        srcs = [self.source(d) for d in draws]
        styled = self.render(params, draws)
        src_imgs = [s[0] for s in srcs]
        src_tok = [np.stack([s[1][j] for s in srcs]) for j in range(len(self.embedders))]
        return style_loss(styled, src_imgs, style, self.weights, self.embedders, self.aug, rng,
                          src_tokens=src_tok)

    def evaluate(self, params, style, seed=0, step=0):
        """Off-tape loss at the draws of a given (seed, step) stream."""
        return self.loss(params, style, step_rng(seed, style_key(style), step))

    def grad_step(self, params, style, rng):
        """Loss and stylizable gradients at ``params`` (grads left in ``.grad``)."""
        params.set_requires_grad("stylizable")
        params.zero_grad()
        with Tape() as tape:
            bd = self.loss(params, style, rng)
        tape.backward(bd.tensor)
        for t in params.tensors("stylizable"):
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
        return bd


def source_images(problem, draws):
    return [Tensor(problem.source(d)[0]) for d in draws]
