"""Run the coarse-to-fine pipeline on a synthetic eye clip at full and half resolution."""

import argparse

import numpy as np

from crloc.neural import load_model
from crloc.pipeline import EyeSequenceSpec, PipelineConfig, eye_sequence, process_sequence, signal


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", help="desk (64 px) model; adds the cnn refiner")
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--sigma-n", type=float, default=4.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    model = load_model(args.model) if args.model else None
    refiners = ("radial_symmetry", "cnn") if model else ("radial_symmetry",)
    seq = eye_sequence(EyeSequenceSpec(sigma_n=args.sigma_n), args.frames, args.seed)
    truth = np.array([s.truth for s in seq])
    for ds in (1, 2):
        res = process_sequence([s.image for s in seq],
                               PipelineConfig.desk(refiners=refiners, downsample=ds), model)
        for m in ("threshold",) + refiners:
            err = np.hypot(*(signal(res, m) - truth).T)
            print(f"downsample {ds}  {m:16s} mean {np.nanmean(err):.3f}  max {np.nanmax(err):.3f} px")


if __name__ == "__main__":
    main()
