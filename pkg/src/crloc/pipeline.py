"""Frame-wise coarse-to-fine CR localization.

Coarse stage: fixed-threshold binarization inside an ROI, hole filling and
blob selection give the pupil (dark blob) and CR (bright blob) centers.
Fine stage: a cutout around the rounded coarse CR center is masked with a
black disk and handed to a refiner (radial symmetry or the CNN).

Every reported coordinate is in full-resolution frame pixels.  With
``downsample=2`` a half-resolution pixel ``x_half`` maps to
``2 * x_half + 0.5`` in the full frame.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .files import frame_files, read_png, write_png

from .localize import (LocalizationError, ThresholdParams, apply_circular_mask,
                       binary_centroid, radial_symmetry_center, select_blob)
from .neural import NetworkState, predict
from .seeding import DOMAIN_FRAMES, derive_seed, rng_for
from .synthgen import CrSpec, EyeFrameSpec, NoiseSpec, quantize, synth_eye_frame

log = logging.getLogger(__name__)

REFINERS = ("none", "radial_symmetry", "cnn")


@dataclass(frozen=True)
class PipelineConfig:
    """Pipeline settings; sizes and ROI are in full-resolution pixels.

    ``cr.threshold`` marks bright pixels (``> threshold``), ``pupil.threshold``
    dark ones (``< threshold``).
    """

    roi: Optional[tuple[int, int, int, int]] = None  # x0, y0, x1, y1 (exclusive)
    cr: ThresholdParams = ThresholdParams(0.85, min_area=3, max_area=5000, min_circularity=0.6)
    pupil: ThresholdParams = ThresholdParams(0.2, min_area=100, max_area=math.inf, min_circularity=0.6)
    cutout_size: int = 180
    mask_radius: float = 48.0
    refiners: tuple[str, ...] = ("cnn",)
    model_path: Optional[str] = None
    downsample: int = 1

    def __post_init__(self):
        for r in self.refiners:
            if r not in REFINERS:
                raise ValueError(f"unknown refiner {r!r}")
        if self.downsample not in (1, 2):
            raise ValueError("downsample must be 1 or 2")
        if not 0 < self.mask_radius < self.cutout_size / 2:
            raise ValueError("mask radius must lie in (0, cutout_size / 2)")
        if self.roi is not None:
            x0, y0, x1, y1 = self.roi
            if not (x1 > x0 and y1 > y0):
                raise ValueError(f"empty ROI {self.roi}")

    @classmethod
    def desk(cls, **kw) -> "PipelineConfig":
        """Cutout matched to the 64-px desk model; mask keeps the 48/180 ratio."""
        return cls(**{"cutout_size": 64, "mask_radius": 24.0, **kw})

    @property
    def cr_threshold(self) -> float:
        return self.cr.threshold

    @property
    def pupil_threshold(self) -> float:
        return self.pupil.threshold

    @property
    def effective_mask_radius(self) -> float:
        return self.mask_radius / self.downsample

    def scaled_blob(self, p: ThresholdParams) -> ThresholdParams:
        a = self.downsample**2
        return replace(p, min_area=p.min_area / a, max_area=p.max_area / a)


@dataclass
class FrameResult:
    index: int
    pupil: Optional[tuple[float, float]]
    cr: dict[str, tuple[float, float]] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)


def downsample2(frame: np.ndarray) -> np.ndarray:
    """2x2 box average, re-quantized; an odd trailing row/column is dropped."""
    h, w = frame.shape
    f = frame[: h - h % 2, : w - w % 2]
    out = f.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return quantize(out)


def to_full_res(pt, factor: int):
    if pt is None:
        return None
    if factor == 1:
        return (float(pt[0]), float(pt[1]))
    return (factor * pt[0] + (factor - 1) / 2.0, factor * pt[1] + (factor - 1) / 2.0)


def _roi_view(frame: np.ndarray, roi, factor: int):
    if roi is None:
        return frame, (0, 0)
    x0, y0, x1, y1 = (int(math.floor(v / factor)) for v in roi)
    h, w = frame.shape
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, w), min(y1, h)
    return frame[y0:y1, x0:x1], (x0, y0)


def coarse_detect(frame: np.ndarray, cfg: PipelineConfig, factor: int = 1):
    """Threshold-based pupil and CR centers in the given frame's pixel units.

    ``factor`` is the downsampling already applied to ``frame`` (it scales the
    ROI and blob areas).  Missing features come back as ``None``.
    """
    cfg_s = replace(cfg, downsample=factor)
    view, (ox, oy) = _roi_view(frame, cfg.roi, factor)
    centers = []
    for binary, params in ((view < cfg.pupil.threshold, cfg_s.scaled_blob(cfg.pupil)),
                           (view > cfg.cr.threshold, cfg_s.scaled_blob(cfg.cr))):
        try:
            mask, _, _ = select_blob(binary, params)
        except LocalizationError:
            centers.append(None)
            continue
        cx, cy = binary_centroid(mask)
        centers.append((cx + ox, cy + oy))
    return centers[0], centers[1]


def cutout(frame: np.ndarray, center, size: int) -> tuple[np.ndarray, tuple[int, int]]:
    """``size`` x ``size`` patch whose center is nearest ``center``; zero-padded."""
    half = (size - 1) / 2.0
    x0 = int(math.floor(center[0] - half + 0.5))
    y0 = int(math.floor(center[1] - half + 0.5))
    h, w = frame.shape
    patch = np.zeros((size, size), dtype=frame.dtype)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
    if sx1 > sx0 and sy1 > sy0:
        patch[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = frame[sy0:sy1, sx0:sx1]
    return patch, (x0, y0)


def masked_cutout(frame: np.ndarray, coarse_cr, cfg: PipelineConfig):
    size = cfg.cutout_size
    patch, origin = cutout(frame, coarse_cr, size)
    c = (size - 1) / 2.0
    return apply_circular_mask(patch, (c, c), cfg.effective_mask_radius), origin


def refine_patch(patch: np.ndarray, refiner: str, model: Optional[NetworkState] = None):
    if refiner == "radial_symmetry":
        return radial_symmetry_center(patch).center
    if refiner == "cnn":
        if model is None:
            raise ValueError("cnn refiner needs a model")
        return tuple(float(v) for v in predict(model, patch[None])[0])
    raise ValueError(f"unknown refiner {refiner!r}")


def refine(frame: np.ndarray, coarse_cr, cfg: PipelineConfig, refiner: str,
           model: Optional[NetworkState] = None):
    """Refined CR center in the frame's pixel units; ``(center, ok)``.

    Falls back to the coarse center (``ok=False``) when the refiner fails.
    """
    if refiner == "none":
        return (float(coarse_cr[0]), float(coarse_cr[1])), True
    if refiner == "cnn" and model is not None and model.spec.input_shape[0] != cfg.cutout_size:
        raise ValueError(f"cutout size {cfg.cutout_size} does not match the model input "
                         f"{model.spec.input_shape[0]}")
    patch, (x0, y0) = masked_cutout(frame, coarse_cr, cfg)
    try:
        x, y = refine_patch(patch, refiner, model)
    except LocalizationError:
        return (float(coarse_cr[0]), float(coarse_cr[1])), False
    if not (math.isfinite(x) and math.isfinite(y)):
        return (float(coarse_cr[0]), float(coarse_cr[1])), False
    return (x + x0, y + y0), True


def process_frame(index: int, frame: np.ndarray, cfg: PipelineConfig,
                  model: Optional[NetworkState] = None) -> FrameResult:
    factor = cfg.downsample
    work = downsample2(frame) if factor == 2 else frame
    pupil, cr = coarse_detect(work, cfg, factor)
    res = FrameResult(index, to_full_res(pupil, factor))
    if pupil is None:
        res.flags.append("no_pupil")
    if cr is None:
        res.flags.append("no_cr")
        return res
    res.cr["threshold"] = to_full_res(cr, factor)
    for name in cfg.refiners:
        if name == "none":
            continue
        center, ok = refine(work, cr, cfg, name, model)
        res.cr[name] = to_full_res(center, factor)
        if not ok:
            res.flags.append(f"{name}_fallback")
    return res


_WORKER: dict = {}


def _init_worker(cfg, model):
    _WORKER.update(cfg=cfg, model=model)


def _work(item):
    i, f = item
    return process_frame(i, f, _WORKER["cfg"], _WORKER["model"])


def process_sequence(frames: Sequence[np.ndarray], cfg: PipelineConfig,
                     model: Optional[NetworkState] = None, jobs: int = 1) -> list[FrameResult]:
    """Process frames independently; results in input order."""
    frames = list(frames)
    if frames:
        shape = np.shape(frames[0])
        if any(np.shape(f) != shape for f in frames):
            raise ValueError("frames differ in size")
    if jobs > 1 and len(frames) > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(jobs, _init_worker, (cfg, model)) as pool:
            return pool.map(_work, enumerate(frames), chunksize=max(1, len(frames) // (4 * jobs)))
    return [process_frame(i, f, cfg, model) for i, f in enumerate(frames)]


def result_fields(methods: Sequence[str]) -> list[str]:
    cols = ["frame", "t", "pupil_x", "pupil_y"]
    for m in methods:
        cols += [f"cr_{m}_x", f"cr_{m}_y"]
    return cols + ["flags"]


def result_rows(results: Sequence[FrameResult], methods: Sequence[str], rate: float = 0.0):
    nan = float("nan")
    for r in results:
        row = {"frame": r.index, "t": r.index / rate if rate else nan,
               "pupil_x": r.pupil[0] if r.pupil else nan,
               "pupil_y": r.pupil[1] if r.pupil else nan}
        for m in methods:
            c = r.cr.get(m)
            row[f"cr_{m}_x"] = c[0] if c else nan
            row[f"cr_{m}_y"] = c[1] if c else nan
        row["flags"] = ";".join(r.flags)
        yield row


def signal(results: Sequence[FrameResult], method: str) -> np.ndarray:
    """``(n, 2)`` CR signal for one method (``'pupil'`` for the pupil); nan where missing."""
    out = np.full((len(results), 2), np.nan)
    for i, r in enumerate(results):
        c = r.pupil if method == "pupil" else r.cr.get(method)
        if c is not None:
            out[i] = c
    return out


def threshold_sweep(frames: Sequence[np.ndarray], cfg: PipelineConfig,
                    thresholds: Sequence[float], feature: str = "cr") -> list[tuple[float, float]]:
    """RMS sample-to-sample precision of the coarse signal per threshold."""
    out = []
    for t in thresholds:
        if feature == "cr":
            c = replace(cfg, cr=replace(cfg.cr, threshold=t), refiners=())
            sig = signal(process_sequence(frames, c), "threshold")
        else:
            c = replace(cfg, pupil=replace(cfg.pupil, threshold=t), refiners=())
            sig = signal(process_sequence(frames, c), "pupil")
        sig = sig[np.all(np.isfinite(sig), axis=1)]
        rms = float(np.sqrt(np.mean(np.sum(np.diff(sig, axis=0) ** 2, axis=1)))) \
            if len(sig) > 1 else math.nan
        out.append((float(t), rms))
    return out


# --------------------------------------------------------------------------
# synthetic eye sequences


@dataclass(frozen=True)
class EyeSequenceSpec:
    """Fixation-like clip: pupil and CR jitter together around fixed anchors."""

    size: tuple[int, int] = (320, 240)
    pupil_center: tuple[float, float] = (160.0, 120.0)
    pupil_radius: float = 40.0  # wide enough that the masked cutout sees only pupil around the CR
    cr_offset: tuple[float, float] = (6.0, -4.0)  # CR center relative to the pupil center
    cr_radius: float = 5.0
    amplitude: float = 1000.0
    sigma_n: float = 4.0
    jitter: float = 0.5  # uniform +-jitter px per frame on both features


def eye_sequence(spec: EyeSequenceSpec, n: int, seed: int) -> list:
    """``n`` labeled eye frames; frame k is a pure function of (spec, seed, k)."""
    out = []
    for k in range(n):
        rng = rng_for(seed, DOMAIN_FRAMES, k)
        dx, dy = rng.uniform(-spec.jitter, spec.jitter, size=2)
        px, py = spec.pupil_center[0] + dx, spec.pupil_center[1] + dy
        cr = CrSpec((px + spec.cr_offset[0], py + spec.cr_offset[1]), spec.cr_radius, spec.amplitude)
        noise = NoiseSpec(spec.sigma_n, derive_seed(seed, DOMAIN_FRAMES, k, 1))
        out.append(synth_eye_frame(EyeFrameSpec(spec.size, (px, py), spec.pupil_radius, cr,
                                                noise=noise)))
    return out


# --------------------------------------------------------------------------
# frame directories


SIDECAR = "frames.json"


def read_frames(directory):
    """Frames of a directory plus its sidecar (``rate_hz``, optional ``roi``)."""
    directory = Path(directory)
    files = frame_files(directory)
    meta = {}
    side = directory / SIDECAR
    if side.exists():
        meta = json.loads(side.read_text())
    return [read_png(p) for p in files], meta


def write_frames(directory, frames: Sequence[np.ndarray], rate_hz: float, roi=None,
                 extra: Optional[dict] = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(len(frames))))
    for k, f in enumerate(frames):
        write_png(directory / f"{k:0{width}d}.png", f)
    meta = {"rate_hz": rate_hz, "roi": list(roi) if roi is not None else None}
    if extra:
        meta.update(extra)
    (directory / SIDECAR).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
