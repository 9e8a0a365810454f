"""Sweep the evaluation grid with every localizer and print per-radius mean errors."""

import argparse
import math
from collections import defaultdict

import numpy as np

from crloc.evaluate import grid_eval
from crloc.neural import load_model
from crloc.synthgen import build_eval_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", help="trained model; adds the cnn method")
    ap.add_argument("--stride", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="grid.csv", help="resumable results table")
    args = ap.parse_args()
    methods = ["threshold", "radial_symmetry"]
    model = None
    if args.model:
        model = load_model(args.model)
        methods.append("cnn")
    grid = build_eval_grid(args.stride)
    rows = grid_eval(grid, methods, args.seed, model=model, out_path=args.out, jobs=args.jobs,
                     progress=lambda n, t: print(f"{n}/{t}", flush=True) if n % 100 == 0 else None)
    by = defaultdict(list)
    for r in rows:
        v = float(r["mean_abs_err"])
        if math.isfinite(v):
            by[(r["method"], float(r["r"]))].append(v)
    radii = sorted({k[1] for k in by})
    print("method".ljust(16) + "".join(f"r={r:<7g}" for r in radii))
    for m in methods:
        print(m.ljust(16) + "".join(f"{np.mean(by[(m, r)]):<9.3f}" for r in radii))


if __name__ == "__main__":
    main()
