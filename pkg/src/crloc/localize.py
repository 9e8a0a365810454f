"""Algorithmic CR center localizers.

All localizers take an image in the package convention (``[y, x]`` indexing,
pixel centers at integer coordinates) and return centers as ``(x, y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .synthgen import CrSpec, SceneSpec, render_scene

METHODS = ("threshold", "radial_symmetry", "intensity_com", "cnn", "oracle_com")

_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)


class LocalizationError(ValueError):
    """Raised when a localizer cannot produce a center."""


@dataclass
class LocalizationResult:
    center: tuple[float, float]
    method: str
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ThresholdParams:
    threshold: float = 0.5
    min_area: float = 1.0
    max_area: float = math.inf
    min_circularity: float = 0.6

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.min_area > self.max_area:
            raise ValueError("min_area exceeds max_area")


# --------------------------------------------------------------------------
# blob analysis


def fill_holes(binary: np.ndarray) -> np.ndarray:
    """Set background regions not 4-connected to the border to foreground."""
    binary = np.asarray(binary, dtype=bool)
    labels, n = ndimage.label(~binary, structure=_FOUR)
    if n == 0:
        return binary.copy()
    edge = np.unique(np.concatenate(
        [labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    keep = np.zeros(n + 1, dtype=bool)
    keep[edge] = True
    keep[0] = True
    return binary | ~keep[labels]


def blob_perimeter(mask: np.ndarray) -> float:
    """Boundary length of a binary blob.

    Boundary pixels (foreground with a 4-neighbour in the background) are
    classified by their local configuration; straight runs count 1 per pixel,
    diagonal runs sqrt(2) and corners the mean of the two.
    """
    mask = np.pad(np.asarray(mask, dtype=bool), 1)
    border = mask & ~ndimage.binary_erosion(mask, structure=_FOUR, border_value=0)
    kernel = np.array([[10, 2, 10], [2, 1, 2], [10, 2, 10]])
    codes = ndimage.convolve(border.astype(np.int64), kernel, mode="constant")
    weights = np.zeros(50)
    weights[[5, 7, 15, 17, 25, 27]] = 1.0
    weights[[21, 33]] = math.sqrt(2)
    weights[[13, 23]] = (1 + math.sqrt(2)) / 2
    return float(weights[codes[border]].sum()) if border.any() else 0.0


def circularity(mask: np.ndarray) -> float:
    area = float(np.count_nonzero(mask))
    per = blob_perimeter(mask)
    if per == 0:
        return 0.0
    return min(1.0, 4 * math.pi * area / per**2)


def select_blob(binary: np.ndarray, p: ThresholdParams):
    """Hole-fill, label (8-connected) and keep the largest conforming blob.

    Returns ``(mask, area, circularity)`` or raises ``LocalizationError``.
    """
    filled = fill_holes(binary)
    labels, n = ndimage.label(filled, structure=_EIGHT)
    if n == 0:
        raise LocalizationError("no CR found")
    areas = np.bincount(labels.ravel())[1:]
    order = np.argsort(-areas, kind="stable")
    slices = ndimage.find_objects(labels)
    for k in order:
        area = float(areas[k])
        if area < p.min_area:
            break
        if area > p.max_area:
            continue
        sl = slices[k]
        mask = labels[sl] == k + 1
        circ = circularity(mask)
        if circ < p.min_circularity:
            continue
        full = np.zeros_like(filled)
        full[sl] = mask
        return full, area, circ
    raise LocalizationError("no CR found")


def binary_centroid(mask: np.ndarray) -> tuple[float, float]:
    ys, xs = np.nonzero(mask)
    return float(xs.mean()), float(ys.mean())


def threshold_centroid(img: np.ndarray, p: ThresholdParams = ThresholdParams()) -> LocalizationResult:
    """Unweighted centroid of the largest bright blob above ``p.threshold``."""
    img = np.asarray(img)
    if img.size == 0:
        raise ValueError("empty image")
    mask, area, circ = select_blob(img > p.threshold, p)
    return LocalizationResult(
        binary_centroid(mask), "threshold",
        {"area": area, "circularity": circ, "threshold": p.threshold},
    )


# --------------------------------------------------------------------------
# radial symmetry


def _box3(a: np.ndarray) -> np.ndarray:
    # zero-padded 'same' 3x3 mean
    return ndimage.uniform_filter(a, size=3, mode="constant", cval=0.0)


def radial_symmetry_terms(img: np.ndarray):
    """Per-midpoint line data for the radial-symmetry estimate.

    Returns ``(px, py, nx, ny, w)``: midpoint coordinates, unit normals of the
    lines through each midpoint along the local gradient, and weights.
    """
    I = np.asarray(img, dtype=np.float64)
    if I.ndim != 2 or min(I.shape) < 3:
        raise ValueError("radial symmetry needs an image of at least 3x3")
    h, w = I.shape
    # derivatives along (1, 1) and (-1, 1) at the 2x2 block midpoints
    du = I[1:, 1:] - I[:-1, :-1]
    dv = I[1:, :-1] - I[:-1, 1:]
    du = _box3(du)
    dv = _box3(dv)
    gx = 0.5 * (du - dv)
    gy = 0.5 * (du + dv)
    mag2 = gx * gx + gy * gy
    total = mag2.sum()
    if not total > 0:
        raise LocalizationError("undefined center")
    py, px = np.mgrid[0:h - 1, 0:w - 1].astype(np.float64)
    px += 0.5
    py += 0.5
    cx = (mag2 * px).sum() / total
    cy = (mag2 * py).sum() / total
    dist = np.hypot(px - cx, py - cy)
    wts = np.divide(mag2, dist, out=np.zeros_like(mag2), where=dist > 0)
    mag = np.sqrt(mag2)
    nz = mag > 0
    nx = np.divide(-gy, mag, out=np.zeros_like(mag), where=nz)
    ny = np.divide(gx, mag, out=np.zeros_like(mag), where=nz)
    return px, py, nx, ny, wts


def radial_symmetry_objective(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Weighted sum of squared point-to-line distances at candidate centers."""
    px, py, nx, ny, w = (t.ravel() for t in radial_symmetry_terms(img))
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = (x[..., None] - px) * nx + (y[..., None] - py) * ny
    return (w * d * d).sum(axis=-1)


def radial_symmetry_center(img: np.ndarray) -> LocalizationResult:
    """Point closest, in weighted least squares, to all gradient lines."""
    px, py, nx, ny, w = radial_symmetry_terms(img)
    a = (w * nx * nx).sum()
    b = (w * nx * ny).sum()
    c = (w * ny * ny).sum()
    proj = nx * px + ny * py
    rx = (w * nx * proj).sum()
    ry = (w * ny * proj).sum()
    det = a * c - b * b
    if not abs(det) > 1e-12 * max(a * c, 1e-300):
        raise LocalizationError("undefined center")
    x = (c * rx - b * ry) / det
    y = (a * ry - b * rx) / det
    if not (np.isfinite(x) and np.isfinite(y)):
        raise LocalizationError("undefined center")
    return LocalizationResult((float(x), float(y)), "radial_symmetry", {"det": float(det)})


# --------------------------------------------------------------------------
# center of mass


def intensity_centroid(img: np.ndarray) -> LocalizationResult:
    I = np.asarray(img, dtype=np.float64)
    total = I.sum()
    if not total > 0:
        raise LocalizationError("undefined center")
    h, w = I.shape
    x = float((I.sum(axis=0) * np.arange(w)).sum() / total)
    y = float((I.sum(axis=1) * np.arange(h)).sum() / total)
    return LocalizationResult((x, y), "intensity_com", {"mass": float(total)})


def com_oracle(cr: CrSpec, img_size: tuple[int, int]) -> LocalizationResult:
    """Best center-of-mass estimate: noise-free CR alone on black."""
    sample = render_scene(SceneSpec(cr=cr, size=tuple(img_size)))
    res = intensity_centroid(sample.image)
    return LocalizationResult(res.center, "oracle_com", res.diagnostics)


def apply_circular_mask(img: np.ndarray, center, radius: float) -> np.ndarray:
    """Zero every pixel whose center is farther than ``radius`` from ``center``."""
    if not radius > 0:
        raise ValueError("mask radius must be positive")
    img = np.asarray(img)
    h, w = img.shape
    y, x = np.ogrid[0:h, 0:w]
    outside = (x - center[0]) ** 2 + (y - center[1]) ** 2 > radius * radius
    out = img.copy()
    out[outside] = 0
    return out
