"""Inner-loop SGD, Reptile meta-training, fast adaptation and baselines.

Randomness is keyed, not sequential: the generator for a step is built
from ``(seed, style, global step)`` and the meta-batch for outer
iteration ``t`` from ``(seed, t)``. Runs are therefore independent of
worker count and of the order in which inner loops finish, and
task-mixing on a single style replays direct optimization step for step.
"""

from __future__ import annotations

import json
import logging
import multiprocessing as mp
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..tensorcore import NumericError, STYLIZABLE, UsageError, apply_update, save_checkpoint, sgd_step
from .problem import STREAM_STYLES, step_rng, style_key
from .records import AdaptConfig, ReptileConfig, Trajectory

log = logging.getLogger(__name__)


def _run_steps(params, problem, style, steps, lr, seed, step0=0, final_eval=False, grad_sum=None):
    """``steps`` SGD steps in place on ``params``; returns the Trajectory."""
    traj = Trajectory()
    key = style_key(style)
    for k in range(steps):
        t0 = time.perf_counter()
        try:
            bd = problem.grad_step(params, style, step_rng(seed, key, step0 + k))
        except NumericError as exc:
            raise NumericError(str(exc).split(" (step")[0], step=k) from None
        if not np.isfinite(bd.total):
            raise NumericError("style loss is not finite", step=k)
        if grad_sum is not None:
            for p, t in params.items(STYLIZABLE):
                grad_sum[p] += t.grad.astype(np.float64)
        try:
            sgd_step(params, lr)
        except NumericError as exc:
            raise NumericError(str(exc), step=k) from None
        traj.append(bd, (time.perf_counter() - t0) * 1e3)
    if final_eval:
        t0 = time.perf_counter()
        bd = problem.loss(params, style, step_rng(seed, key, step0 + steps))
        if not np.isfinite(bd.total):
            raise NumericError("style loss is not finite", step=steps)
        traj.append(bd, (time.perf_counter() - t0) * 1e3)
    params.zero_grad()
    return traj


def inner_loop(phi_init, problem, style, K, alpha, seed=0, step0=0, grad_sum=False):
    """K SGD steps from a clone of ``phi_init`` on the stylizable partition.

    Returns ``(phi_K, trajectory)``, plus the float64 sum of the K
    gradients when ``grad_sum`` is set.
    """
    if K < 0:
        raise UsageError("K must be >= 0")
    phi = phi_init.clone()
    gs = {p: np.zeros(t.shape) for p, t in phi.items(STYLIZABLE)} if grad_sum else None
    traj = _run_steps(phi, problem, style, K, alpha, seed, step0, grad_sum=gs)
    return (phi, traj, gs) if grad_sum else (phi, traj)


def fast_adapt(phi_meta, problem, style, cfg=None):
    """Adapt a (meta-learnt) initialization to a new style.

    The trajectory has ``cfg.steps + 1`` records: record ``k`` is the loss
    after ``k`` updates.
    """
    cfg = cfg or AdaptConfig()
    phi = phi_meta.clone()
    traj = _run_steps(phi, problem, style, cfg.steps, cfg.lr, cfg.seed, final_eval=True)
    return phi, traj


def direct_optimize(phi, problem, style, cfg=None):
    """Baseline: adapt straight from the photoreal weights."""
    return fast_adapt(phi, problem, style, cfg)


# ----------------------------------------------------------------------- reptile

def sample_styles(seed, t, n_styles, M):
    """Meta-batch of outer iteration ``t``: M distinct indices, ascending."""
    if M > n_styles:
        raise UsageError(f"meta batch {M} exceeds the {n_styles} training styles")
    rng = np.random.default_rng([int(seed), STREAM_STYLES, int(t)])
    return sorted(int(i) for i in rng.choice(n_styles, size=M, replace=False))


_WORKER = {}


def _worker_init(problem, phi, styles):
    _WORKER.update(problem=problem, phi=phi, styles=styles)


def _inner_task(args):
    arrays, idx, K, alpha, seed, step0 = args
    phi = _WORKER["phi"].clone()
    phi.load_arrays(arrays)
    _, traj, gs = inner_loop(phi, _WORKER["problem"], _WORKER["styles"][idx], K, alpha, seed, step0,
                             grad_sum=True)
    return idx, traj, gs


def _checkpoint(phi, directory, name, meta):
    if directory is None:
        return None
    path = Path(directory) / name
    save_checkpoint(phi, path, meta)
    return path


def reptile_train(phi, problem, styles, cfg=None, checkpoint_dir=None, manifest=None, callback=None):
    """Reptile meta-training of the stylizable partition.

    Per outer iteration: sample M styles, run K inner steps on a clone for
    each, then ``phi_meta <- phi_meta + beta/M * sum(phi_K - phi_meta)``.
    The update is evaluated as ``phi_meta - (alpha*beta/M) * sum(G)``
    with ``G`` the float64 inner-gradient sums (the same quantity, since
    ``phi_K - phi_meta = -alpha*G``), reduced in ascending style-key order
    so the result does not depend on list order or on worker timing.
    Returns ``(phi_meta, history)``; ``history[t]`` holds the mean inner
    loss of iteration ``t``.
    """
    cfg = cfg or ReptileConfig()
    if not styles:
        raise UsageError("reptile_train needs at least one training style")
    phi_meta = phi.clone()
    history = []
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        info = {"config": asdict(cfg), "n_styles": len(styles), **(manifest or {})}
        (Path(checkpoint_dir) / "run_manifest.json").write_text(
            json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    pool = None
    if cfg.workers > 1:
        ctx = mp.get_context("fork")
        pool = ctx.Pool(cfg.workers, initializer=_worker_init, initargs=(problem, phi_meta, styles))
    try:
        for t in range(cfg.T):
            before = phi_meta.digest(STYLIZABLE)
            chosen = sample_styles(cfg.seed, t, len(styles), cfg.M)
            step0 = t * cfg.K
            try:
                if pool is None:
                    results = []
                    for i in chosen:
                        _, traj, gs = inner_loop(phi_meta, problem, styles[i], cfg.K, cfg.alpha,
                                                 cfg.seed, step0, grad_sum=True)
                        results.append((i, traj, gs))
                else:
                    arrays = {p: a.copy() for p, a in phi_meta.arrays(STYLIZABLE).items()}
                    jobs = [(arrays, i, cfg.K, cfg.alpha, cfg.seed, step0) for i in chosen]
                    results = pool.map(_inner_task, jobs)
            except NumericError as exc:
                _checkpoint(phi_meta, checkpoint_dir, "meta_lastgood.ckpt", {"outer_iteration": t})
                raise NumericError(f"outer iteration {t}: {exc}", step=t) from None
            if phi_meta.digest(STYLIZABLE) != before:
                raise RuntimeError("inner loop mutated the meta parameters")
            # reduce in a fixed order keyed by style, not by list position or finish time
            results.sort(key=lambda r: (style_key(styles[r[0]]), r[0]))
            coeff = cfg.alpha * cfg.beta / cfg.M
            for p, tensor in phi_meta.items(STYLIZABLE):
                total = results[0][2][p].copy()
                for r in results[1:]:
                    total += r[2][p]
                tensor.data = apply_update(tensor.data, coeff, total)
            losses = [x for r in results for x in r[1].totals]
            rec = {"t": t, "mean_inner_loss": float(np.mean(losses)), "styles": list(chosen)}
            history.append(rec)
            if callback is not None:
                callback(t, rec, phi_meta)
            elif t % 10 == 0:
                log.info("outer %d mean inner loss %.5f", t, rec["mean_inner_loss"])
            if cfg.checkpoint_every and (t + 1) % cfg.checkpoint_every == 0:
                _checkpoint(phi_meta, checkpoint_dir, f"meta_{t + 1:05d}.ckpt", {"outer_iteration": t + 1})
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return phi_meta, history


def task_mixing_train(phi, problem, styles, iterations, lr, seed=0, workers=1, callback=None):
    """Joint-training baseline: Reptile with K=1, M=1 and beta=1 (plain SGD at ``lr``)."""
    cfg = ReptileConfig(T=iterations, M=1, K=1, alpha=lr, beta=1.0, seed=seed, workers=workers)
    return reptile_train(phi, problem, styles, cfg, callback=callback)
