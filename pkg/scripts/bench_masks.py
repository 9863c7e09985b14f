"""Non-uniform 8:4:2:1 mask vs the conventional uniform mask on the phantom set.

    python3 scripts/bench_masks.py [--train] [--set n_slices=20 ...]

Without ``--train`` only the GRAPPA and zero-filled baselines are compared,
which takes seconds; with it each arm also trains and evaluates the enhancer.
"""
import argparse
import time

from rtrecon.metrics import METRIC_FIELDS
from rtrecon.pipeline import (CONVENTIONAL, NONUNIFORM, PipelineConfig, benchmark_masks,
                              config_from_text, mean_metric, phantom_set)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--train", action="store_true")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    a = ap.parse_args()
    cfg = config_from_text("\n".join(a.set), PipelineConfig())
    t0 = time.perf_counter()
    res = benchmark_masks(phantom_set(cfg), cfg, enhance=a.train)
    methods = sorted({r["method"] for r in res["rows"]})
    print(f"{'method':12s} {'metric':14s} {'non-uniform':>12s} {'conventional':>12s}")
    for m in methods:
        for f in METRIC_FIELDS:
            nu = mean_metric([r for r in res["rows"] if r[f] is not None], m, f, NONUNIFORM)
            cv = mean_metric([r for r in res["rows"] if r[f] is not None], m, f, CONVENTIONAL)
            print(f"{m:12s} {f:14s} {nu:12.4f} {cv:12.4f}")
    print(f"{time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
