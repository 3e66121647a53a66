"""Adapt one style at several identity-loss weights and tabulate the result.

    python3 scripts/lambda_sweep.py --text "Ukiyo-e woodblock print" --lambdas 0.1,1,10

Needs a finished pretrain and meta-train in the config's output directory.
Each run goes to ``<out>/adapt/<style>-lid<lambda>/``; the table of final
clip and identity terms is printed and written to ``<out>/lambda_sweep.csv``.
"""

import argparse
import csv
import sys

from metastyle.harness import runs
from metastyle.harness.cli import load_config
from metastyle.tensorcore import UsageError


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--text", required=True)
    ap.add_argument("--lambdas", default="0.1,1,10")
    ap.add_argument("--steps", type=int)
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args)
        lams = [float(x) for x in args.lambdas.split(",")]
        rows = []
        for lam in lams:
            rep, _ = runs.adapt(cfg, text=args.text, lambda_id=lam, steps=args.steps)
            rows.append((lam, rep.results["final_clip_term"], rep.results["final_id_term"]))
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    path = cfg.out / "lambda_sweep.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda_id", "final_clip_term", "final_id_term"])
        w.writerows((lam, repr(c), repr(i)) for lam, c, i in rows)
    for lam, c, i in rows:
        print(f"lambda_id {lam:g}: clip {c:.4f} id {i:.5f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
