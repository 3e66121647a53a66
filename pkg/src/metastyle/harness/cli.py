"""Command-line entry point: ``metastyle <command> [options]``.

Exit codes: 0 success, 2 usage error or missing input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..tensorcore import NumericError, UsageError
from .audit import audit as run_audit
from . import runs
from .config import ExperimentConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

log = logging.getLogger("metastyle")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    ap = argparse.ArgumentParser(prog="metastyle", description="Fast avatar stylization experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (JSON)")
    common.add_argument("--out", help="override output_dir")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--workers", type=int, help="override the worker count")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-faces", parents=[common], help="write procedural pretraining faces")

    p = sub.add_parser("pretrain", parents=[common], help="photoreal pretraining")
    p.add_argument("--resume", type=Path, help="continue from this checkpoint")

    for name in ("meta-train", "mix-train"):
        p = sub.add_parser(name, parents=[common],
                           help="Reptile meta-training" if name == "meta-train" else "task-mixing baseline")
        p.add_argument("--pretrained", type=Path)

    p = sub.add_parser("adapt", parents=[common], help="adapt to one style and render a turntable")
    p.add_argument("--text")
    p.add_argument("--image", type=Path)
    p.add_argument("--mix-weight", type=float, help="text weight when both text and image are given")
    p.add_argument("--lambda-id", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--init", type=Path, help="initialization (default: meta checkpoint)")
    p.add_argument("--pretrained", type=Path)
    p.add_argument("--dest", type=Path, help="output directory for this run")

    p = sub.add_parser("compare-inits", parents=[common], help="direct vs task-mixing vs meta adaptation")
    p.add_argument("--styles", type=Path, help="style list file (default: the held-out split)")
    p.add_argument("--limit", type=int, help="use only the first N styles")
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    p.add_argument("--steps", type=int)
    p.add_argument("--meta", type=Path)
    p.add_argument("--mix", type=Path)
    p.add_argument("--pretrained", type=Path)

    p = sub.add_parser("eval-semantic", parents=[common], help="evaluation-embedder score")
    p.add_argument("--checkpoint", type=Path, required=True, help="stylized checkpoint")
    p.add_argument("--original", type=Path, help="original checkpoint (default: pretrained)")
    p.add_argument("--text", required=True)
    p.add_argument("--eval-seed", type=int)

    p = sub.add_parser("render", parents=[common], help="render a checkpoint to PNGs")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--yaws", type=_floats, default=[-0.5, -0.25, 0.0, 0.25, 0.5])
    p.add_argument("--expressions", type=_ints, default=[0, 1, 2, 3, 4])
    p.add_argument("--dest", type=Path, required=True)

    p = sub.add_parser("audit", parents=[common], help="recompute numbers stored in a run report")
    p.add_argument("report", type=Path)
    p.add_argument("--count", type=int, default=3)

    sub.add_parser("show-config", parents=[common], help="print the effective config")
    return ap


def load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    return replace(cfg, **changes) if changes else cfg


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def dispatch(args):
    cfg = load_config(args)
    cmd = args.command
    if cmd == "show-config":
        print(cfg.to_json(), end="")
    elif cmd == "gen-faces":
        rep = runs.gen_faces(cfg)
        print(f"wrote {rep.results['n_images']} images to {rep.artifacts['faces_dir']}")
    elif cmd == "pretrain":
        rep = runs.pretrain(cfg, resume=args.resume)
        _print(rep.results)
    elif cmd in ("meta-train", "mix-train"):
        fn = runs.meta_train if cmd == "meta-train" else runs.mix_train
        _print(fn(cfg, pretrained=args.pretrained).results)
    elif cmd == "adapt":
        rep, d = runs.adapt(cfg, text=args.text, image=args.image, mix_weight=args.mix_weight,
                            lambda_id=args.lambda_id, init=args.init, steps=args.steps,
                            pretrained=args.pretrained, out_dir=args.dest)
        _print({**rep.results, "output": str(d)})
    elif cmd == "compare-inits":
        styles = None
        if args.styles is not None:
            if not args.styles.is_file():
                raise runs.MissingInput(f"style list not found: {args.styles}")
            from ..embedder import load_lines
            styles = load_lines(args.styles)
        if args.limit is not None:
            if styles is None:
                styles = [e.text for e in runs.style_dataset(cfg).split("test")]
            styles = styles[:args.limit]
        rep = runs.compare_inits(cfg, styles=styles, seeds=args.seeds, steps=args.steps,
                                 mix=args.mix, meta=args.meta, pretrained=args.pretrained)
        _print({"at_step": rep.results["at_step"],
                "meta_le_direct_fraction": rep.results["meta_le_direct_fraction"]})
    elif cmd == "eval-semantic":
        rep = runs.eval_semantic(cfg, args.checkpoint, args.text, original=args.original,
                                 eval_seed=args.eval_seed)
        _print(rep.results)
    elif cmd == "render":
        files = runs.render_files(args.checkpoint, cfg, args.yaws, args.expressions, args.dest)
        print(f"wrote {len(files)} images to {args.dest}")
    elif cmd == "audit":
        rows = run_audit(args.report, count=args.count)
        for r in rows:
            print(f"{'ok  ' if r.ok else 'FAIL'} {r.name}: stored {r.stored!r} recomputed {r.recomputed!r}")
        if not all(r.ok for r in rows):
            return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
