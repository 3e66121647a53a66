"""Experiment steps behind the CLI subcommands.

Every step is a pure function of the config (and explicit arguments): it
writes its artifacts under ``cfg.output_dir`` and returns a RunReport.
Wall-clock timings go to a separate ``*_timings.json`` so that reports,
checkpoints, CSVs and PNGs are bit-identical across re-runs.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import multiprocessing as mp
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from ..avatar.faces import EXPRESSIONS, IDENTITIES, YAWS, dataset_grid
from ..avatar.faces import identity_maps
from ..avatar.geometry import ViewSpec
from ..avatar.model import IdentityInput, forward_many, init_params
from ..avatar.pretrain import build_dataset, pretrain_photoreal, rmse
from ..embedder import build_embedder, load_templates
from ..losses import StyleTarget
from ..metaopt import (
    StyleDataset,
    StylizationProblem,
    fast_adapt,
    reptile_train,
    task_mixing_train,
)
from ..tensorcore import (
    FROZEN,
    STYLIZABLE,
    UsageError,
    load_checkpoint,
    precision,
    save_checkpoint,
)
from .report import RunReport, slug

log = logging.getLogger(__name__)

TURNTABLE_YAWS = tuple(np.round(np.linspace(-0.6, 0.6, 7), 6))
TURNTABLE_EXPRESSIONS = (0, 1, 2)
INITS = ("direct", "mixing", "meta")


class MissingInput(UsageError):
    """A required file (checkpoint, dataset, style image) does not exist."""


# ------------------------------------------------------------------ plumbing

def paths(cfg):
    out = cfg.out
    return {
        "faces": Path(cfg.data.faces_dir) if cfg.data.faces_dir else out / "faces",
        "pretrained": out / "pretrained.ckpt",
        "meta": out / "meta.ckpt",
        "mix": out / "mix.ckpt",
    }


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def _write_timings(path, **timings):
    return _write_text(path, json.dumps({k: round(v, 3) for k, v in timings.items()}, indent=2,
                                        sort_keys=True) + "\n")


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def to_png(img, path):
    """Save a ``3×H×W`` image in [0, 1] as 8-bit RGB."""
    arr = np.asarray(img, dtype=np.float64)
    px = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(px, mode="RGB").save(path, format="PNG")
    return path


def load_params(path, cfg, what="checkpoint"):
    """Load a checkpoint and check it matches the avatar architecture in ``cfg``."""
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"{what} not found: {path}")
    params, meta = load_checkpoint(path)
    ref = init_params(cfg.avatar)
    if params.paths() != ref.paths():
        raise UsageError(f"{path}: parameter layout does not match the configured avatar")
    for p in ref.paths():
        if params[p].shape != ref[p].shape or params.label(p) != ref.label(p):
            raise UsageError(f"{path}: parameter {p} does not match the configured avatar")
    return params, meta


def identity_input(cfg):
    if cfg.identity >= len(IDENTITIES):
        raise UsageError(f"identity {cfg.identity} out of range (have {len(IDENTITIES)})")
    return IdentityInput.from_arrays(*identity_maps(IDENTITIES[cfg.identity], cfg.avatar.map_size))


def augmentation(cfg):
    if cfg.data.templates:
        p = Path(cfg.data.templates)
        if not p.is_file():
            raise MissingInput(f"template file not found: {p}")
        return replace(cfg.augment, templates=tuple(load_templates(p)))
    return cfg.augment


def build_problem(cfg, source_params, lambda_id=None):
    weights = cfg.loss if lambda_id is None else replace(cfg.loss, lambda_id=float(lambda_id))
    embedders = [build_embedder(s) for s in cfg.embedder.train_specs()]
    return StylizationProblem(cfg.avatar, source_params, identity_input(cfg), embedders,
                              weights, augmentation(cfg), cfg.views_per_step)


def style_dataset(cfg):
    for p in (cfg.data.train_path(), cfg.data.test_path()):
        if not p.is_file():
            raise MissingInput(f"style list not found: {p}")
    return StyleDataset.from_files(cfg.data.train_path(), cfg.data.test_path())


def load_image(path, size):
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"style image not found: {path}")
    try:
        with Image.open(path) as im:
            px = np.asarray(im.convert("RGB").resize((size, size), Image.BILINEAR), dtype=np.float64)
    except OSError as exc:
        raise UsageError(f"cannot read style image {path}: {exc}") from None
    return px.transpose(2, 0, 1) / 255.0


def style_target(cfg, text=None, image=None, mix_weight=None):
    """StyleTarget from a text prompt, an image path, or both."""
    if text is None and image is None:
        raise UsageError("give a style text, a style image, or both")
    if text is not None and not text.strip():
        raise UsageError("style text is empty")
    img = load_image(image, cfg.avatar.image_size) if image is not None else None
    if text is not None and img is not None and mix_weight is None:
        mix_weight = 0.5
    if img is None:
        name = text
    elif text is None:
        name = Path(image).name
    else:
        name = f"{text} + {Path(image).name} (w={mix_weight:g})"
    return StyleTarget(name=name, text=text, image=img, mix_weight=mix_weight,
                       templates=tuple(augmentation(cfg).templates))


def render_grid(params, cfg, yaws, expr_ids):
    """Renders for every (yaw, expression) pair, yaw-major, as float arrays."""
    ident = identity_input(cfg)
    out = []
    with precision(np.float32):
        for y in yaws:
            imgs = forward_many(params, cfg.avatar, ident, [EXPRESSIONS[e] for e in expr_ids],
                                [ViewSpec(float(y), 0.0)] * len(expr_ids))
            out.extend(im.data.copy() for im in imgs)
    return out


def _refuse_train(dataset, texts):
    for t in texts:
        if t is not None and dataset.contains(t, "train"):
            raise UsageError(f"style {t!r} is in the training split")


# ------------------------------------------------------------------ commands

def gen_faces(cfg):
    """Procedural pretraining targets: every identity × yaw × expression."""
    out = paths(cfg)["faces"]
    t0 = time.perf_counter()
    images, index = dataset_grid(size=cfg.avatar.image_size, background=cfg.avatar.background)
    try:
        out.mkdir(parents=True, exist_ok=True)
        np.save(out / "images.npy", images.astype(np.float64))
        _write_text(out / "index.json", json.dumps({"yaws": list(YAWS), "records": index}) + "\n")
        for img, (i, yi, ei) in zip(images, index):
            to_png(img, out / f"face_i{i}_y{yi}_e{ei}.png")
    except OSError as exc:
        raise OSError(f"cannot write faces to {out}: {exc}") from None
    rep = RunReport("gen-faces", cfg.seed, cfg.to_dict(),
                    results={"n_images": len(index), "n_identities": len(IDENTITIES)},
                    artifacts={"faces_dir": str(out)})
    rep.save(out / "report.json")
    _write_timings(out / "timings.json", total_s=time.perf_counter() - t0)
    return rep


def load_faces(cfg):
    d = paths(cfg)["faces"]
    if not (d / "images.npy").is_file() or not (d / "index.json").is_file():
        raise MissingInput(f"face dataset not found in {d} (run gen-faces first)")
    images = np.load(d / "images.npy")
    info = json.loads((d / "index.json").read_text(encoding="utf-8"))
    index = [tuple(r) for r in info["records"]]
    n_ids = 1 + max(r[0] for r in index)
    ids = [IdentityInput.from_arrays(*identity_maps(IDENTITIES[i], cfg.avatar.map_size))
           for i in range(n_ids)]
    return build_dataset(images, index, ids, yaws=tuple(info["yaws"]))


def pretrain(cfg, resume=None):
    """Photoreal pretraining; ``resume`` continues a checkpoint's step count."""
    p = paths(cfg)
    data = load_faces(cfg)
    pc = cfg.pretrain
    if resume is not None:
        params, meta = load_params(resume, cfg, "resume checkpoint")
        start = int(meta.get("pretrain_step", 0))
        history = list(meta.get("history", []))
    else:
        params, start, history = init_params(cfg.avatar), 0, []
    t0 = time.perf_counter()
    remaining = max(pc.steps - start, 0)
    pretrain_photoreal(params, cfg.avatar, data, remaining, lr=pc.lr, batch_size=pc.batch_size,
                       seed=pc.seed, start_step=start, history=history)
    step = start + remaining
    save_checkpoint(params, p["pretrained"], {"pretrain_step": step, "history": history})
    _write_text(cfg.out / "pretrain_loss.csv", _csv([(i, repr(v)) for i, v in enumerate(history)],
                                                     ["step", "loss"]))
    rep = RunReport("pretrain", cfg.seed, cfg.to_dict(), artifacts={"checkpoint": str(p["pretrained"])})
    for split in ("train", "heldout"):
        value = rmse(params, cfg.avatar, data, getattr(data, split))
        rep.results[f"{split}_rmse"] = rep.add_check(f"{split}_rmse", value, "rmse",
                                                     checkpoint=str(p["pretrained"]), split=split)
    rep.results["steps"] = step
    rep.save(cfg.out / "pretrain_report.json")
    _write_timings(cfg.out / "pretrain_timings.json", total_s=time.perf_counter() - t0)
    return rep


def _train_run(cfg, kind, pretrained=None):
    p = paths(cfg)
    phi, _ = load_params(pretrained or p["pretrained"], cfg, "pretrained checkpoint")
    dataset = style_dataset(cfg)
    templates = tuple(augmentation(cfg).templates)
    styles = dataset.targets("train", templates)
    if not styles:
        raise UsageError("the training split is empty")
    problem = build_problem(cfg, phi)
    manifest = {"seed": cfg.seed, "dataset_hash": dataset.content_hash(),
                "embedder_seeds": list(cfg.embedder.train_seeds)}
    t0 = time.perf_counter()
    if kind == "meta":
        rc = replace(cfg.reptile, seed=cfg.seed, workers=cfg.workers)
        ckdir = cfg.out / "meta_ckpts" if rc.checkpoint_every else None
        out, hist = reptile_train(phi, problem, styles, rc, checkpoint_dir=ckdir, manifest=manifest)
        ckpt, csv_name = p["meta"], "meta_train.csv"
    else:
        out, hist = task_mixing_train(phi, problem, styles, cfg.mixing.iterations, cfg.mixing.lr,
                                      seed=cfg.seed, workers=cfg.workers)
        ckpt, csv_name = p["mix"], "mix_train.csv"
    elapsed = time.perf_counter() - t0
    save_checkpoint(out, ckpt, {"kind": kind, **manifest})
    rows = [(h["t"], repr(h["mean_inner_loss"]), " ".join(map(str, h["styles"]))) for h in hist]
    _write_text(cfg.out / csv_name, _csv(rows, ["t", "mean_inner_loss", "styles"]))
    rep = RunReport(f"{kind}-train", cfg.seed, cfg.to_dict(),
                    artifacts={"checkpoint": str(ckpt), "curve": str(cfg.out / csv_name)})
    rep.results["iterations"] = len(hist)
    if hist:
        rep.results["first_mean_inner_loss"] = hist[0]["mean_inner_loss"]
        rep.results["last_mean_inner_loss"] = hist[-1]["mean_inner_loss"]
    probe = styles[0]
    bd = problem.evaluate(out, probe, seed=cfg.seed, step=0)
    rep.results["probe_total"] = rep.add_check(
        "probe_total", bd.total, "style_loss", checkpoint=str(ckpt),
        source=str(pretrained or p["pretrained"]), text=probe.text, seed=cfg.seed, step=0,
        lambda_id=problem.weights.lambda_id, field="total")
    rep.save(cfg.out / f"{kind}_train_report.json")
    _write_timings(cfg.out / f"{kind}_train_timings.json", total_s=elapsed)
    return rep


def meta_train(cfg, pretrained=None):
    return _train_run(cfg, "meta", pretrained)


def mix_train(cfg, pretrained=None):
    return _train_run(cfg, "mix", pretrained)


def adapt(cfg, text=None, image=None, mix_weight=None, lambda_id=None, init=None, steps=None,
          pretrained=None, out_dir=None):
    """Fast adaptation to one style, plus a turntable render set."""
    p = paths(cfg)
    src_path = Path(pretrained or p["pretrained"])
    init_path = Path(init or p["meta"])
    source, _ = load_params(src_path, cfg, "pretrained checkpoint")
    phi0, _ = load_params(init_path, cfg, "initialization checkpoint")
    target = style_target(cfg, text, image, mix_weight)
    lam = cfg.loss.lambda_id if lambda_id is None else float(lambda_id)
    problem = build_problem(cfg, source, lam)
    acfg = replace(cfg.adapt, seed=cfg.seed, steps=cfg.adapt.steps if steps is None else int(steps))
    t0 = time.perf_counter()
    phi, traj = fast_adapt(phi0, problem, target, acfg)
    elapsed = time.perf_counter() - t0
    d = Path(out_dir) if out_dir else cfg.out / "adapt" / f"{slug(target.name)}-lid{lam:g}"
    d.mkdir(parents=True, exist_ok=True)
    save_checkpoint(phi, d / "stylized.ckpt", {"style": target.name, "lambda_id": lam,
                                                "steps": acfg.steps, "seed": cfg.seed})
    _write_text(d / "trajectory.csv", traj.to_csv())
    imgs = render_grid(phi, cfg, TURNTABLE_YAWS, TURNTABLE_EXPRESSIONS)
    k = 0
    for yi in range(len(TURNTABLE_YAWS)):
        for e in TURNTABLE_EXPRESSIONS:
            to_png(imgs[k], d / "turntable" / f"yaw{yi}_expr{e}.png")
            k += 1
    last = traj.records[-1]
    rep = RunReport("adapt", cfg.seed, cfg.to_dict(),
                    artifacts={"checkpoint": str(d / "stylized.ckpt"), "trajectory": str(d / "trajectory.csv"),
                               "turntable": str(d / "turntable")})
    rep.results.update(style=target.name, lambda_id=lam, steps=acfg.steps, init=str(init_path))
    common = dict(checkpoint=str(d / "stylized.ckpt"), source=str(src_path), text=text,
                  image=None if image is None else str(image), mix_weight=target.mix_weight,
                  seed=cfg.seed, step=acfg.steps, lambda_id=lam)
    for f in ("clip_term", "id_term", "total"):
        rep.results[f"final_{f}"] = rep.add_check(f"final_{f}", getattr(last, f), "style_loss",
                                                  field=f, **common)
    rep.save(d / "report.json")
    _write_timings(d / "timings.json", total_s=elapsed,
                   mean_step_ms=float(np.mean([r.wall_ms for r in traj.records])) if traj.records else 0.0)
    return rep, d


# ------------------------------------------------------------ compare inits

_JOB = {}


def _compare_init(problem, inits, styles):
    _JOB.update(problem=problem, inits=inits, styles=styles)


def _compare_task(args):
    si, seed, acfg = args
    style = _JOB["styles"][si]
    trajs = {}
    for name in INITS:
        _, trajs[name] = fast_adapt(_JOB["inits"][name], _JOB["problem"], style, replace(acfg, seed=seed))
    return si, seed, trajs


def compare_inits(cfg, styles=None, seeds=(0, 1, 2), steps=None, mix=None, meta=None, pretrained=None):
    """Adapt every held-out style from the three initializations.

    Writes per-style trajectories, ``curves.csv`` (init, step, mean total
    over styles × seeds) and ``summary.csv`` (losses at steps 10, 50 and
    the last step).
    """
    p = paths(cfg)
    phi, _ = load_params(pretrained or p["pretrained"], cfg, "pretrained checkpoint")
    inits = {"direct": phi,
             "mixing": load_params(mix or p["mix"], cfg, "task-mixing checkpoint")[0],
             "meta": load_params(meta or p["meta"], cfg, "meta checkpoint")[0]}
    dataset = style_dataset(cfg)
    texts = [e.text for e in dataset.split("test")] if styles is None else list(styles)
    if not texts:
        raise UsageError("no held-out styles to compare on")
    _refuse_train(dataset, texts)
    templates = tuple(augmentation(cfg).templates)
    targets = [StyleTarget.from_text(t, templates) for t in texts]
    problem = build_problem(cfg, phi)
    acfg = replace(cfg.adapt, steps=cfg.adapt.steps if steps is None else int(steps))
    jobs = [(si, int(s), acfg) for si in range(len(targets)) for s in seeds]
    t0 = time.perf_counter()
    if cfg.workers > 1:
        # warm the shared caches before forking
        for t in targets:
            for e in problem.embedders:
                t.vector(e)
        with mp.get_context("fork").Pool(cfg.workers, _compare_init, (problem, inits, targets)) as pool:
            results = pool.map(_compare_task, jobs, chunksize=1)
    else:
        _compare_init(problem, inits, targets)
        results = [_compare_task(j) for j in jobs]
    elapsed = time.perf_counter() - t0
    results.sort(key=lambda r: (r[0], r[1]))
    d = cfg.out / "compare"
    totals = {name: [] for name in INITS}
    for si, seed, trajs in results:
        sd = d / "styles" / slug(texts[si])
        for name in INITS:
            _write_text(sd / f"{name}_seed{seed}.csv", trajs[name].to_csv())
            totals[name].append(trajs[name].totals)
    curves = {name: np.mean(np.asarray(v, dtype=np.float64), axis=0) for name, v in totals.items()}
    rows = [(name, k, repr(float(c))) for name in INITS for k, c in enumerate(curves[name])]
    _write_text(d / "curves.csv", _csv(rows, ["init", "step", "mean_total"]))
    marks = sorted({min(10, acfg.steps), min(50, acfg.steps), acfg.steps})
    srows = [(name, *[repr(float(curves[name][m])) for m in marks]) for name in INITS]
    _write_text(d / "summary.csv", _csv(srows, ["init", *[f"step{m}" for m in marks]]))
    per = {name: np.asarray(v, dtype=np.float64) for name, v in totals.items()}
    j = min(50, acfg.steps)
    rep = RunReport("compare-inits", cfg.seed, cfg.to_dict(),
                    artifacts={"curves": str(d / "curves.csv"), "summary": str(d / "summary.csv")})
    rep.results.update(
        styles=texts, seeds=list(seeds), steps=acfg.steps,
        at_step={name: {str(m): float(curves[name][m]) for m in marks} for name in INITS},
        meta_le_direct_fraction=float(np.mean(per["meta"][:, j] <= per["direct"][:, j])),
    )
    si, seed, trajs = results[0]
    for name, ckpt in (("meta", meta or p["meta"]), ("direct", pretrained or p["pretrained"])):
        rep.add_check(f"{name}_step0_total_{slug(texts[si])}_seed{seed}", trajs[name].total_at(0),
                      "style_loss", checkpoint=str(ckpt), source=str(pretrained or p["pretrained"]),
                      text=texts[si], seed=seed, step=0, lambda_id=cfg.loss.lambda_id, field="total")
    rep.save(d / "report.json")
    _write_timings(d / "timings.json", total_s=elapsed)
    return rep


# --------------------------------------------------------------- semantic

EVAL_YAWS = YAWS
EVAL_EXPRESSIONS = tuple(range(len(EXPRESSIONS)))


def semantic_scores(params, cfg, text, eval_seed=None):
    """Cosine of eval-embedder image and text embeddings over the 5×5 grid."""
    seed = cfg.embedder.eval_seed if eval_seed is None else int(eval_seed)
    if seed in cfg.embedder.train_seeds:
        raise UsageError(f"evaluation seed {seed} collides with a training embedder seed")
    emb = build_embedder(cfg.embedder.spec(seed))
    imgs = render_grid(params, cfg, EVAL_YAWS, EVAL_EXPRESSIONS)
    tvec = np.asarray(emb.embed_text(text), dtype=np.float64)
    ivecs = np.stack([emb.embed_array(im) for im in imgs])
    return ivecs @ tvec


def eval_semantic(cfg, stylized, style_text, original=None, eval_seed=None, check_split=True):
    p = paths(cfg)
    if check_split:
        _refuse_train(style_dataset(cfg), [style_text])
    orig_path = Path(original or p["pretrained"])
    out = {}
    rep = RunReport("eval-semantic", cfg.seed, cfg.to_dict())
    seed = cfg.embedder.eval_seed if eval_seed is None else int(eval_seed)
    for name, path in (("original", orig_path), ("stylized", Path(stylized))):
        params, _ = load_params(path, cfg, f"{name} checkpoint")
        s = semantic_scores(params, cfg, style_text, seed)
        out[name] = {"mean": float(s.mean()), "std": float(s.std())}
        rep.add_check(f"{name}_mean", s.mean(), "semantic", checkpoint=str(path), text=style_text,
                      eval_seed=seed)
    out["delta"] = out["stylized"]["mean"] - out["original"]["mean"]
    rep.results.update(style=style_text, eval_seed=seed, **out)
    rep.save(cfg.out / "semantic" / f"{slug(style_text)}.json")
    return rep


# ------------------------------------------------------------------ render

def render_files(checkpoint, cfg, yaws, expr_ids, out_dir):
    params, _ = load_params(checkpoint, cfg)
    for e in expr_ids:
        if not 0 <= e < len(EXPRESSIONS):
            raise UsageError(f"expression index {e} out of range 0..{len(EXPRESSIONS) - 1}")
    imgs = render_grid(params, cfg, yaws, expr_ids)
    files = []
    k = 0
    for yi in range(len(yaws)):
        for e in expr_ids:
            files.append(to_png(imgs[k], Path(out_dir) / f"render_y{yi}_e{e}.png"))
            k += 1
    return files


def frozen_unchanged(a, b):
    """True when the frozen partitions of two stores are bit-identical."""
    return a.digest(FROZEN) == b.digest(FROZEN)


def stylizable_displacement(a, b):
    return float(np.sqrt(sum(np.sum((a[p].data.astype(np.float64) - b[p].data) ** 2)
                             for p in a.paths(STYLIZABLE))))
