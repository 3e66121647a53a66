"""Photoreal pretraining of every avatar parameter against procedural faces."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..tensorcore import NumericError, Tape, Tensor, ops
from .faces import EXPRESSIONS, IDENTITIES, YAWS, dataset_grid, identity_maps
from .geometry import ViewSpec
from .model import IdentityInput, forward_many

log = logging.getLogger(__name__)


@dataclass
class Sample:
    identity: int
    expression: np.ndarray
    view: ViewSpec
    target: np.ndarray


@dataclass
class FaceDataset:
    identities: list
    train: list
    heldout: list


def heldout_pairs(n_yaws=len(YAWS), n_expr=len(EXPRESSIONS)):
    """(yaw, expression) index pairs kept out of pretraining: one per yaw."""
    return {(y, (y + 2) % n_expr) for y in range(n_yaws)}


def build_dataset(images, index, identity_inputs, yaws=YAWS, expressions=EXPRESSIONS):
    held = heldout_pairs(len(yaws), len(expressions))
    train, test = [], []
    for img, (i, yi, ei) in zip(images, index):
        s = Sample(i, np.asarray(expressions[ei]), ViewSpec(yaws[yi], 0.0), np.asarray(img))
        (test if (yi, ei) in held else train).append(s)
    return FaceDataset(identity_inputs, train, test)


def default_dataset(cfg):
    images, index = dataset_grid(size=cfg.image_size, background=cfg.background)
    ids = [IdentityInput.from_arrays(*identity_maps(f, cfg.map_size)) for f in IDENTITIES]
    return build_dataset(images, index, ids)


def _group_by_identity(samples):
    groups = {}
    for s in samples:
        groups.setdefault(s.identity, []).append(s)
    return groups


def image_loss(params, cfg, dataset, samples):
    """Mean squared pixel error over ``samples``; a Tensor on the active tape."""
    terms = []
    for ident, group in sorted(_group_by_identity(samples).items()):
        imgs = forward_many(params, cfg, dataset.identities[ident],
                            [s.expression for s in group], [s.view for s in group])
        for img, s in zip(imgs, group):
            terms.append(ops.mean(ops.square(ops.sub(img, Tensor(s.target)))))
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.scale(total, 1.0 / len(terms))


def rmse(params, cfg, dataset, samples):
    err = image_loss(params, cfg, dataset, samples).item()
    return float(np.sqrt(err))


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {p: np.zeros_like(t.data, dtype=np.float64) for p, t in params.items()}
        self.v = {p: np.zeros_like(t.data, dtype=np.float64) for p, t in params.items()}
        self.t = 0

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad.astype(np.float64)
            self.m[p] = self.b1 * self.m[p] + (1 - self.b1) * g
            self.v[p] = self.b2 * self.v[p] + (1 - self.b2) * g * g
            upd = lr * (self.m[p] / c1) / (np.sqrt(self.v[p] / c2) + self.eps)
            t.data = (t.data - upd).astype(t.data.dtype)
        self.params.zero_grad()


def pretrain_photoreal(params, cfg, dataset, steps, lr=1e-2, batch_size=4, seed=0,
                       start_step=0, history=None, callback=None):
    """Fit ALL parameters to the training faces with Adam and a cosine-decayed rate.

    Minibatches cycle through a fixed seeded permutation of the training
    set. ``start_step`` resumes numbering and the schedule from a
    checkpoint. Returns the list of per-step losses (appended to
    ``history`` when given).
    """
    history = [] if history is None else history
    if steps <= 0:
        return history
    params.set_requires_grad("all")
    opt = Adam(params, lr)
    n = len(dataset.train)
    perm = np.random.default_rng(seed).permutation(n)
    total = start_step + steps
    for step in range(start_step, total):
        lo = (step * batch_size) % n
        idx = [perm[(lo + j) % n] for j in range(batch_size)]
        batch = [dataset.train[i] for i in idx]
        with Tape() as tape:
            loss = image_loss(params, cfg, dataset, batch)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError("pretraining diverged", step=step)
        tape.backward(loss)
        rate = lr * 0.5 * (1.0 + np.cos(np.pi * step / max(total, 1)))
        opt.step(rate)
        history.append(value)
        if callback is not None:
            callback(step, value)
        elif step % 50 == 0:
            log.info("pretrain step %d loss %.5f", step, value)
    params.set_requires_grad("stylizable")
    return history
