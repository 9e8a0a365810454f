"""Sub-pixel sweeps over the evaluation grid for every localizer.

A sweep moves the CR center horizontally through ``steps`` positions
``x0 + delta * k`` (``x0`` half a pixel left of the patch center, ``y`` at the
patch center) and records the signed horizontal error of each method.  All
methods in one call see the same noisy image at each step.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .files import format_row, read_table
from .localize import (LocalizationError, ThresholdParams, intensity_centroid,
                       radial_symmetry_center, threshold_centroid)
from .neural import NetworkState, predict
from .seeding import DOMAIN_EVAL, DOMAIN_PRECISION, derive_seed
from .synthgen import (EVAL_AMPLITUDES, EVAL_RADII, GridPoint, SceneSpec, CrSpec,
                       eval_scene, image_center, render_scene)

log = logging.getLogger(__name__)

EVAL_SIZE = 180
STEPS = 100
DELTA = 0.01
# binarization level for synthetic scenes: above the brightest gray section (153) plus noise
EVAL_THRESHOLD = ThresholdParams(threshold=0.85, min_area=3, min_circularity=0.6)

TABLE_FIELDS = ("r", "A", "sigma_n", "E", "I", "method",
                "mean_abs_err", "max_abs_err", "bias", "fail_count")


@dataclass
class SweepResult:
    point: GridPoint
    method: str
    errors: np.ndarray  # signed x errors per step; nan = localizer failure

    @property
    def valid(self) -> np.ndarray:
        return self.errors[np.isfinite(self.errors)]

    @property
    def mean_abs(self) -> float:
        v = self.valid
        return float(np.mean(np.abs(v))) if len(v) else math.nan

    @property
    def max_abs(self) -> float:
        v = self.valid
        return float(np.max(np.abs(v))) if len(v) else math.nan

    @property
    def bias(self) -> float:
        v = self.valid
        return float(np.mean(v)) if len(v) else math.nan

    @property
    def fail_count(self) -> int:
        return int(np.count_nonzero(~np.isfinite(self.errors)))

    def row(self) -> dict:
        p = self.point
        return {"r": p.r, "A": p.amplitude, "sigma_n": p.sigma_n, "E": p.edge_label,
                "I": p.light, "method": self.method, "mean_abs_err": self.mean_abs,
                "max_abs_err": self.max_abs, "bias": self.bias, "fail_count": self.fail_count}


# --------------------------------------------------------------------------
# localizer dispatch


def crop_center(img: np.ndarray, size: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Central ``size`` x ``size`` patch and its (x, y) origin in ``img``."""
    h, w = img.shape
    x0 = (w - size) // 2
    y0 = (h - size) // 2
    if x0 < 0 or y0 < 0:
        raise ValueError(f"image {w}x{h} smaller than {size}-px crop")
    return img[y0:y0 + size, x0:x0 + size], (x0, y0)


def _try(fn, img) -> tuple[float, float]:
    try:
        return fn(img).center
    except LocalizationError:
        return (math.nan, math.nan)


def locate_batch(method: str, images: Sequence[np.ndarray], model: Optional[NetworkState] = None,
                 threshold: ThresholdParams = EVAL_THRESHOLD) -> np.ndarray:
    """Centers ``(n, 2)`` for a list of images; failures are nan rows."""
    if method == "threshold":
        out = [_try(lambda im: threshold_centroid(im, threshold), im) for im in images]
    elif method == "radial_symmetry":
        out = [_try(radial_symmetry_center, im) for im in images]
    elif method in ("intensity_com", "oracle_com"):
        out = [_try(intensity_centroid, im) for im in images]
    elif method == "cnn":
        if model is None:
            raise ValueError("method 'cnn' needs a model")
        size = model.spec.input_shape[0]
        crops = [crop_center(im, size) for im in images]
        pred = predict(model, np.stack([c for c, _ in crops])).astype(np.float64)
        pred += np.array([o for _, o in crops], dtype=np.float64)
        return pred
    else:
        raise ValueError(f"unknown method {method!r}")
    return np.array(out, dtype=np.float64).reshape(-1, 2)


# --------------------------------------------------------------------------
# sweeps


def sweep_positions(size: int = EVAL_SIZE, steps: int = STEPS, delta: float = DELTA):
    cx, cy = image_center((size, size))
    return [(cx - 0.5 + delta * k, cy) for k in range(steps)]


def step_seed(seed: int, point: GridPoint, step: int) -> int:
    return derive_seed(seed, DOMAIN_EVAL, *point.seed_keys(), step)


def sweep_methods(point: GridPoint, methods: Sequence[str], rng_seed: int = 0,
                  size: int = EVAL_SIZE, model: Optional[NetworkState] = None,
                  threshold: ThresholdParams = EVAL_THRESHOLD, steps: int = STEPS,
                  delta: float = DELTA) -> dict[str, SweepResult]:
    positions = sweep_positions(size, steps, delta)
    truth = np.array([p[0] for p in positions])
    scene_methods = [m for m in methods if m != "oracle_com"]
    results = {}
    if scene_methods:
        images = [render_scene(eval_scene(point, pos, (size, size), step_seed(rng_seed, point, k))).image
                  for k, pos in enumerate(positions)]
        for m in scene_methods:
            est = locate_batch(m, images, model=model, threshold=threshold)
            results[m] = SweepResult(point, m, est[:, 0] - truth)
    if "oracle_com" in methods:
        images = [render_scene(SceneSpec(CrSpec(pos, point.r, point.amplitude), size=(size, size))).image
                  for pos in positions]
        est = locate_batch("oracle_com", images)
        results["oracle_com"] = SweepResult(point, "oracle_com", est[:, 0] - truth)
    return {m: results[m] for m in methods}


def subpixel_sweep(params: GridPoint, method: str, rng_seed: int = 0, **kw) -> SweepResult:
    return sweep_methods(params, [method], rng_seed, **kw)[method]


def optimal_benchmark(size: int = EVAL_SIZE, radii=EVAL_RADII,
                      amplitudes=EVAL_AMPLITUDES) -> list[SweepResult]:
    """Center-of-mass sweeps of noise-free CRs on black, over r x A."""
    out = []
    for a in amplitudes:
        for r in radii:
            p = GridPoint(float(r), float(a), 0.0, None, 0.0)
            out.append(subpixel_sweep(p, "oracle_com", size=size))
    return out


# --------------------------------------------------------------------------
# grid runs


def _row_key(row: dict) -> tuple:
    return (float(row["r"]), float(row["A"]), float(row["sigma_n"]), str(row["E"]),
            float(row["I"]), str(row["method"]))


_WORKER: dict = {}


def _init_worker(kw):
    _WORKER.update(kw)


def _eval_point(point: GridPoint):
    kw = _WORKER
    res = sweep_methods(point, kw["methods"], kw["seed"], size=kw["size"], model=kw["model"],
                        threshold=kw["threshold"])
    return point, res


def grid_eval(grid: Iterable[GridPoint], methods: Sequence[str], seed: int = 0, *,
              size: int = EVAL_SIZE, model: Optional[NetworkState] = None,
              threshold: ThresholdParams = EVAL_THRESHOLD, out_path=None, header: str = "",
              series_path=None, jobs: int = 1,
              progress: Optional[Callable[[int, int], None]] = None) -> list[dict]:
    """Sweep every (grid point x method); rows come out in grid-then-method order.

    With ``out_path`` rows are appended as they finish and rows already present
    (from an interrupted run) are skipped.
    """
    grid = list(grid)
    done: dict[tuple, dict] = {}
    if out_path is not None and Path(out_path).exists():
        for row in read_table(out_path):
            done[_row_key(row)] = row
    pending = [p for p in grid
               if any(_row_key({"r": p.r, "A": p.amplitude, "sigma_n": p.sigma_n, "E": p.edge_label,
                                "I": p.light, "method": m}) not in done for m in methods)]
    fh = None
    writer = None
    if out_path is not None:
        fresh = not Path(out_path).exists()
        fh = open(out_path, "a", newline="")
        if fresh:
            if header:
                fh.write(header)
            csv.writer(fh).writerow(TABLE_FIELDS)
        writer = csv.DictWriter(fh, fieldnames=TABLE_FIELDS)
    sfh = None
    if series_path is not None:
        sfh = open(series_path, "a", newline="")
        if sfh.tell() == 0:
            if header:
                sfh.write(header)
            sfh.write("r,A,sigma_n,E,I,method,step,x_true,error\n")
    kw = dict(methods=list(methods), seed=seed, size=size, model=model, threshold=threshold)
    new_rows: dict[tuple, dict] = {}
    try:
        if jobs > 1 and len(pending) > 1:
            import multiprocessing as mp
            pool = mp.get_context("fork").Pool(jobs, initializer=_init_worker, initargs=(kw,))
            results = pool.imap(_eval_point, pending)
        else:
            pool = None
            _init_worker(kw)
            results = map(_eval_point, pending)
        positions = sweep_positions(size)
        for n, (point, res) in enumerate(results, 1):
            for m in methods:
                row = res[m].row()
                key = _row_key(row)
                if key in done:
                    continue
                new_rows[key] = row
                if writer is not None:
                    writer.writerow(format_row(row))
                if sfh is not None:
                    for k, e in enumerate(res[m].errors):
                        sfh.write(f"{point.r:g},{point.amplitude:g},{point.sigma_n:g},{point.edge_label},"
                                  f"{point.light:g},{m},{k},{positions[k][0]:.10g},{e:.10g}\n")
            if fh is not None:
                fh.flush()
            if progress:
                progress(n, len(pending))
        if pool is not None:
            pool.close()
            pool.join()
    finally:
        if fh is not None:
            fh.close()
        if sfh is not None:
            sfh.close()
    rows = []
    for p in grid:
        for m in methods:
            key = (p.r, p.amplitude, p.sigma_n, p.edge_label, p.light, m)
            rows.append(new_rows.get(key) or done[key])
    return rows


# --------------------------------------------------------------------------
# precision


@dataclass
class PrecisionResult:
    rms_s2s: float
    failures: int
    estimates: np.ndarray


def s2s_rms(est: np.ndarray) -> float:
    """RMS of Euclidean distances between successive estimates."""
    est = np.asarray(est, dtype=np.float64)
    d2 = np.sum(np.diff(est, axis=0) ** 2, axis=1)
    return float(np.sqrt(np.mean(d2)))


def precision_frames(params: GridPoint, n_frames: int, seed: int, size: int = EVAL_SIZE,
                     offset=(0.3, 0.2)) -> list[np.ndarray]:
    cx, cy = image_center((size, size))
    center = (cx + offset[0], cy + offset[1])
    return [render_scene(eval_scene(params, center, (size, size),
                                    derive_seed(seed, DOMAIN_PRECISION, k))).image
            for k in range(n_frames)]


def precision_sweep(params: GridPoint, method: str, n_frames: int = 200, seed: int = 0,
                    size: int = EVAL_SIZE, model: Optional[NetworkState] = None,
                    threshold: ThresholdParams = EVAL_THRESHOLD,
                    frames: Optional[list[np.ndarray]] = None) -> PrecisionResult:
    """Sample-to-sample RMS of a method's output over frames differing only in noise."""
    if n_frames < 2:
        raise ValueError("precision needs at least 2 frames")
    if frames is None:
        frames = precision_frames(params, n_frames, seed, size)
    est = locate_batch(method, frames, model=model, threshold=threshold)
    ok = np.all(np.isfinite(est), axis=1)
    failures = int(np.count_nonzero(~ok))
    if failures:
        log.warning("%s failed on %d of %d frames", method, failures, len(frames))
    kept = est[ok]
    rms = s2s_rms(kept) if len(kept) >= 2 else math.nan
    return PrecisionResult(rms, failures, est)
