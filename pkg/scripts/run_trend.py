"""Run the full initialization-comparison pipeline with the default config.

Steps: gen-faces, pretrain, meta-train, mix-train, compare-inits on the
first ``--limit`` held-out styles for three seeds. Wall-clock per stage is
written to ``<out>/trend_timings.json``; the acceptance suite reads the
compare outputs from ``<out>/compare``.

    python3 scripts/run_trend.py --out runs/trend
"""

import argparse
import json
import sys
import time
from pathlib import Path

from metastyle.harness import cli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/trend")
    ap.add_argument("--config", help="optional config JSON (default: built-in defaults)")
    ap.add_argument("--limit", type=int, default=20)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    out = Path(args.out)
    common = ["--out", str(out), "--workers", str(args.workers)]
    if args.config:
        common += ["--config", args.config]
    stages = [
        ["gen-faces"],
        ["pretrain"],
        ["meta-train"],
        ["mix-train"],
        ["compare-inits", "--limit", str(args.limit), "--seeds", args.seeds],
    ]
    timings = {}
    for stage in stages:
        t0 = time.perf_counter()
        code = cli.main([stage[0], *common, *stage[1:]])
        timings[stage[0]] = time.perf_counter() - t0
        print(f"{stage[0]}: exit {code} in {timings[stage[0]]:.1f}s", flush=True)
        if code != 0:
            return code
    timings["total"] = sum(timings.values())
    (out / "trend_timings.json").write_text(json.dumps(timings, indent=2) + "\n", encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
