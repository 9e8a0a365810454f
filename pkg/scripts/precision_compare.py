"""RMS sample-to-sample precision of each localizer on repeated noisy frames of one CR."""

import argparse

import numpy as np

from crloc.evaluate import precision_frames, precision_sweep
from crloc.neural import load_model
from crloc.synthgen import GridPoint


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--frames", type=int, default=200)
    ap.add_argument("--r", type=float, default=8.0)
    ap.add_argument("--amplitude", type=float, default=10000.0)
    ap.add_argument("--sigma-n", type=float, nargs="+", default=[4.0, 10.0])
    args = ap.parse_args()
    model = load_model(args.model) if args.model else None
    methods = ["threshold", "radial_symmetry"] + (["cnn"] if model else [])
    for sn in args.sigma_n:
        point = GridPoint(args.r, args.amplitude, sn, 0.0, 128.0)
        rms = {m: [] for m in methods}
        for seed in range(args.seeds):
            frames = precision_frames(point, args.frames, seed)
            for m in methods:
                rms[m].append(precision_sweep(point, m, frames=frames, model=model).rms_s2s)
        summary = "  ".join(f"{m} {np.mean(v):.4f} +- {np.std(v):.4f}" for m, v in rms.items())
        print(f"sigma_n {sn:g}: {summary}")


if __name__ == "__main__":
    main()
