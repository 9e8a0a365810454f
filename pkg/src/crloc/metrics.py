"""Eye-tracking data quality: precision, P-CR calibration and accuracy."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

WINDOW_S = 0.2


@dataclass
class GazeRecord:
    timestamps: np.ndarray  # seconds
    samples: np.ndarray  # (n, 2)
    sampling_rate: float  # Hz

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1, 2)
        if len(self.timestamps) != len(self.samples):
            raise ValueError("timestamps and samples differ in length")
        if len(self.timestamps) > 1:
            dt = np.diff(self.timestamps)
            if np.any(dt <= 0):
                raise ValueError("timestamps must be strictly increasing")
            rate = 1.0 / np.median(dt)
            if abs(rate - self.sampling_rate) > 0.01 * self.sampling_rate:
                raise ValueError(
                    f"sampling rate {self.sampling_rate} Hz inconsistent with timestamps ({rate:.3f} Hz)")

    @classmethod
    def uniform(cls, samples, rate: float, t0: float = 0.0) -> "GazeRecord":
        samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
        return cls(t0 + np.arange(len(samples)) / rate, samples, rate)

    def between(self, t0: float, t1: float) -> np.ndarray:
        sel = (self.timestamps >= t0) & (self.timestamps < t1)
        return self.samples[sel]


@dataclass
class Calibration:
    coefficients: np.ndarray  # (2, 6): rows = output axis, cols = a..f
    residual_rms: float = 0.0


@dataclass(frozen=True)
class FixationTarget:
    position: tuple[float, float]  # degrees
    onset: float
    offset: float

    def __post_init__(self):
        if not self.offset > self.onset:
            raise ValueError("fixation offset must follow onset")


def _window_len(rec: GazeRecord, window_s: float) -> int:
    n = int(round(window_s * rec.sampling_rate))
    if n < 2:
        raise ValueError(f"window of {window_s}s at {rec.sampling_rate} Hz holds fewer than 2 samples")
    if len(rec.samples) < n:
        raise ValueError(f"need at least {n} samples for one {window_s}s window, got {len(rec.samples)}")
    return n


def _windows(values: np.ndarray, n: int) -> np.ndarray:
    # (n_windows, n, ...) view, stride 1 sample
    return np.lib.stride_tricks.sliding_window_view(values, n, axis=0)


def rms_s2s(rec: GazeRecord, window_s: float = WINDOW_S) -> float:
    """Median over moving windows of the RMS sample-to-sample distance."""
    n = _window_len(rec, window_s)
    d2 = np.sum(np.diff(rec.samples, axis=0) ** 2, axis=1)
    # a window of n samples holds n - 1 successive differences
    per_window = np.sqrt(_windows(d2, n - 1).mean(axis=-1))
    return float(np.median(per_window))


def std_precision(rec: GazeRecord, window_s: float = WINDOW_S) -> float:
    """Median over moving windows of sqrt(var x + var y), population variance."""
    n = _window_len(rec, window_s)
    win = _windows(rec.samples, n)  # (n_windows, 2, n)
    var = win.var(axis=-1).sum(axis=-1)
    return float(np.median(np.sqrt(var)))


def design_matrix(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.column_stack([np.ones_like(x), x, y, x * x, y * y, x * y])


def fit_polynomial(points, values) -> Calibration:
    """Least-squares fit of p = a + bx + cy + dx^2 + ey^2 + fxy per output axis."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    values = np.asarray(values, dtype=np.float64).reshape(len(points), -1)
    X = design_matrix(points[:, 0], points[:, 1])
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise np.linalg.LinAlgError(
            f"calibration design matrix is rank deficient: rank {rank} < 6 "
            f"({len(points)} points, {len(np.unique(points, axis=0))} distinct)")
    coef, *_ = np.linalg.lstsq(X, values, rcond=None)
    resid = X @ coef - values
    return Calibration(coef.T.copy(), float(np.sqrt(np.mean(resid**2))))


def fixation_medians(rec: GazeRecord, targets: Sequence[FixationTarget]):
    """Component-wise median per target interval; empty intervals are skipped."""
    medians, kept, skipped = [], [], 0
    for t in targets:
        seg = rec.between(t.onset, t.offset)
        seg = seg[np.all(np.isfinite(seg), axis=1)]
        if len(seg) == 0:
            skipped += 1
            continue
        medians.append(np.median(seg, axis=0))
        kept.append(t)
    return np.array(medians).reshape(-1, 2), kept, skipped


def fit_calibration(pcr: GazeRecord, targets: Sequence[FixationTarget]) -> Calibration:
    """Calibrate P-CR vectors against fixation targets (median vector per target)."""
    medians, kept, skipped = fixation_medians(pcr, targets)
    if skipped:
        log.warning("%d calibration targets had no samples", skipped)
    positions = np.array([t.position for t in kept], dtype=np.float64).reshape(-1, 2)
    return fit_polynomial(medians, positions)


def apply_calibration(cal: Calibration, pcr) -> np.ndarray:
    pcr = np.asarray(pcr, dtype=np.float64).reshape(-1, 2)
    return design_matrix(pcr[:, 0], pcr[:, 1]) @ np.asarray(cal.coefficients).T


def pcr_vectors(pupil, cr) -> np.ndarray:
    """Pupil center minus CR center."""
    return np.asarray(pupil, dtype=np.float64) - np.asarray(cr, dtype=np.float64)


def accuracy(gaze: GazeRecord, targets: Sequence[FixationTarget]) -> float:
    """Mean offset between the per-target median gaze and the target position.

    Repeated presentations of the same target position are averaged first.
    """
    medians, kept, skipped = fixation_medians(gaze, targets)
    if skipped:
        log.warning("%d accuracy targets had no samples", skipped)
    if not kept:
        raise ValueError("no target interval contains samples")
    per_pos: dict[tuple, list[float]] = {}
    for m, t in zip(medians, kept):
        off = float(np.hypot(*(m - np.asarray(t.position))))
        per_pos.setdefault(tuple(t.position), []).append(off)
    return float(np.mean([np.mean(v) for v in per_pos.values()]))
