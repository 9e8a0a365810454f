"""Best achievable centroid error per CR radius and amplitude (noise-free, black background)."""

import argparse

from crloc.evaluate import optimal_benchmark
from crloc.synthgen import EVAL_AMPLITUDES, EVAL_RADII


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=180)
    args = ap.parse_args()
    res = {(r.point.r, r.point.amplitude): r.max_abs for r in optimal_benchmark(size=args.size)}
    print("A \\ r".ljust(8) + "".join(f"{r:<9d}" for r in EVAL_RADII))
    for a in EVAL_AMPLITUDES:
        print(f"{a:<8d}" + "".join(f"{res[(float(r), float(a))]:<9.4f}" for r in EVAL_RADII))


if __name__ == "__main__":
    main()
