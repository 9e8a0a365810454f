"""Synthetic corneal-reflection images.

Images are 2-D ``float64`` arrays indexed ``[row, col]`` = ``[y, x]`` holding
normalized intensities on the 256-level grid ``k / 255``.  Pixel ``(x, y)`` has
its center at continuous coordinate ``(x, y)``, so a ``W``-pixel-wide image
spans ``[-0.5, W - 0.5]`` and its geometric center is ``((W - 1) / 2, (H - 1) / 2)``.

Rendering works in 8-bit units on a float raster:

1. CR field ``255 * A * exp(-d^2 / (2 sigma_w^2))`` sampled at pixel centers,
2. two-section background with a raised-cosine edge,
3. ``max(CR, background)``,
4. additive i.i.d. Gaussian pixel noise,
5. clamp to ``[0, 255]``,
6. scale to ``[0, 1]`` and round to the 256-level grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from .seeding import DOMAIN_SYNTH, derive_seed

LEVELS = 255.0

EVAL_RADII = (2, 4, 6, 8, 10, 12, 14, 16, 18)
EVAL_AMPLITUDES = (10, 50, 200, 1000, 10000)
EVAL_NOISE = (0, 2, 4, 6, 8, 10, 12, 14, 16, 18)
EVAL_EDGES = (None, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)  # None = no gray background
EVAL_LIGHT = (38, 51, 64, 77, 89, 102, 115, 128, 140, 153)
# dark section level used for evaluation scenes (lowest level the training draws can produce)
EVAL_DARK = 1.0
# line angle putting the gray (light) section on the left of a vertical divider
GRAY_LEFT = math.pi / 2


@dataclass(frozen=True)
class CrSpec:
    center: tuple[float, float]
    radius: float
    amplitude: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"CR radius must be positive, got {self.radius}")
        if not self.amplitude > 1:
            raise ValueError(f"CR amplitude must exceed 1 (saturation), got {self.amplitude}")

    @property
    def sigma(self) -> float:
        return sigma_from_radius(self.radius, self.amplitude)


@dataclass(frozen=True)
class BackgroundSpec:
    """Two-section background divided by a straight line.

    The light section lies on the side the line normal ``(-sin a, cos a)``
    points to, ``a`` being ``line_angle``.
    """

    present: bool = False
    line_point: tuple[float, float] = (0.0, 0.0)
    line_angle: float = 0.0
    dark_intensity: float = EVAL_DARK
    light_intensity: float = 128.0
    edge_width: float = 4.0

    def __post_init__(self):
        if self.present:
            if not 0 < self.dark_intensity <= self.light_intensity <= LEVELS:
                raise ValueError(
                    "background needs 0 < dark <= light <= 255, got "
                    f"dark={self.dark_intensity}, light={self.light_intensity}"
                )
            if self.edge_width < 0:
                raise ValueError("edge_width must be >= 0")


@dataclass(frozen=True)
class NoiseSpec:
    sigma_n: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be >= 0")


@dataclass(frozen=True)
class SceneSpec:
    cr: Optional[CrSpec]
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    size: tuple[int, int] = (180, 180)  # (width, height)

    def __post_init__(self):
        w, h = self.size
        if w <= 0 or h <= 0:
            raise ValueError(f"image size must be positive, got {self.size}")
        if self.cr is not None and not _inside(self.cr.center, self.size):
            raise ValueError(f"CR center {self.cr.center} outside a {w}x{h} image")


@dataclass
class LabeledSample:
    image: np.ndarray
    truth: tuple[float, float]
    scene: object
    pupil: Optional[tuple[float, float]] = None


@dataclass(frozen=True)
class StageDistributions:
    """Parameter distributions for drawing training scenes.

    ``center_halfwidth=None`` draws each center coordinate from
    ``[r, size - r]``; a number draws it from the geometric image center
    plus/minus that half-width.
    """

    size: int = 180
    r_range: tuple[float, float] = (1.0, 30.0)
    amplitude_range: tuple[float, float] = (2.0, 20000.0)
    center_halfwidth: Optional[float] = None
    sigma_n_range: tuple[float, float] = (0.0, 30.0)
    light_range: tuple[float, float] = (32.0, 153.0)
    dark_scale: float = 10.0
    dark_offset: float = 1.0
    line_point_std: float = 1.5  # in CR radii
    line_angle_range: tuple[float, float] = (0.0, 2 * math.pi)
    edge_width: float = 4.0

    @classmethod
    def paper(cls) -> "StageDistributions":
        return cls()

    @classmethod
    def desk(cls) -> "StageDistributions":
        # 64-px patches cannot hold r = 30 CRs with room to move
        return cls(size=64, r_range=(1.0, 20.0))

    def stage2(self) -> "StageDistributions":
        return replace(self, center_halfwidth=0.75)


def sigma_from_radius(r: float, amplitude: float) -> float:
    """Gaussian width whose ``amplitude``-scaled profile equals 1 at distance ``r``."""
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    if not amplitude > 1:
        raise ValueError(f"sigma_w undefined for amplitude {amplitude} <= 1")
    return r / math.sqrt(2.0 * math.log(amplitude))


def gaussian_field(cr: CrSpec, width: int, height: int) -> np.ndarray:
    """Unclamped CR profile (saturation level 1) at pixel centers."""
    x = np.arange(width, dtype=np.float64)
    y = np.arange(height, dtype=np.float64)
    s2 = 2.0 * cr.sigma**2
    # separable: exp(-(dx^2 + dy^2)/2s^2) = exp(-dx^2/2s^2) * exp(-dy^2/2s^2)
    gx = np.exp(-((x - cr.center[0]) ** 2) / s2)
    gy = np.exp(-((y - cr.center[1]) ** 2) / s2)
    return cr.amplitude * np.outer(gy, gx)


def raised_cosine(d: np.ndarray, low: float, high: float, width: float) -> np.ndarray:
    """Blend from ``low`` (d <= -width/2) to ``high`` (d >= width/2)."""
    if width <= 0:
        return np.where(d > 0, high, np.where(d < 0, low, 0.5 * (low + high)))
    t = np.clip(d / width, -0.5, 0.5)
    return low + (high - low) * 0.5 * (1.0 + np.sin(math.pi * t))


def background_field(bg: BackgroundSpec, width: int, height: int) -> np.ndarray:
    """Background raster in 8-bit units."""
    if not bg.present:
        return np.zeros((height, width))
    x = np.arange(width, dtype=np.float64)[None, :]
    y = np.arange(height, dtype=np.float64)[:, None]
    nx, ny = -math.sin(bg.line_angle), math.cos(bg.line_angle)
    d = (x - bg.line_point[0]) * nx + (y - bg.line_point[1]) * ny
    return raised_cosine(d, bg.dark_intensity, bg.light_intensity, bg.edge_width)


def finish(raster: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    """Noise, clamp and quantize an 8-bit-unit raster into an image."""
    out = raster.astype(np.float64, copy=True)
    if noise.sigma_n > 0:
        rng = np.random.Generator(np.random.PCG64(noise.seed))
        out += noise.sigma_n * rng.standard_normal(out.shape)
    np.clip(out, 0.0, LEVELS, out=out)
    return np.rint(out) / LEVELS


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap normalized intensities to the 256-level grid."""
    return np.rint(np.clip(img, 0.0, 1.0) * LEVELS) / LEVELS


def render_scene(spec: SceneSpec) -> LabeledSample:
    w, h = spec.size
    raster = background_field(spec.background, w, h)
    if spec.cr is not None:
        raster = np.maximum(LEVELS * gaussian_field(spec.cr, w, h), raster)
    image = finish(raster, spec.noise)
    truth = spec.cr.center if spec.cr is not None else (float("nan"), float("nan"))
    return LabeledSample(image=image, truth=tuple(truth), scene=spec)


def image_center(size: Sequence[int]) -> tuple[float, float]:
    return ((size[0] - 1) / 2.0, (size[1] - 1) / 2.0)


def _inside(pt, size) -> bool:
    return -0.5 <= pt[0] <= size[0] - 0.5 and -0.5 <= pt[1] <= size[1] - 0.5


# --------------------------------------------------------------------------
# training distributions


def _draw(dist: StageDistributions, seed: int, central: bool) -> SceneSpec:
    rng = np.random.Generator(np.random.PCG64(seed))
    size = dist.size
    r = rng.uniform(*dist.r_range)
    if not central and 2 * r >= size:
        raise ValueError(f"radius range {dist.r_range} too large for {size}-px images")
    amplitude = rng.uniform(*dist.amplitude_range)
    if central:
        c = (size - 1) / 2.0
        hw = dist.center_halfwidth if dist.center_halfwidth is not None else 0.75
        xc, yc = rng.uniform(c - hw, c + hw, size=2)
    else:
        xc, yc = rng.uniform(r, size - r, size=2)
    angle = rng.uniform(*dist.line_angle_range)
    lx, ly = rng.normal((xc, yc), dist.line_point_std * r)
    light = rng.uniform(*dist.light_range)
    cap = min(light, LEVELS)
    dark = dist.dark_offset + rng.exponential(dist.dark_scale)
    while dark > cap:
        dark = dist.dark_offset + rng.exponential(dist.dark_scale)
    sigma_n = rng.uniform(*dist.sigma_n_range)
    noise_seed = int(rng.integers(0, 2**63))
    return SceneSpec(
        cr=CrSpec((float(xc), float(yc)), float(r), float(amplitude)),
        background=BackgroundSpec(
            present=True,
            line_point=(float(lx), float(ly)),
            line_angle=float(angle),
            dark_intensity=float(dark),
            light_intensity=float(light),
            edge_width=dist.edge_width,
        ),
        noise=NoiseSpec(float(sigma_n), noise_seed),
        size=(size, size),
    )


def sample_stage1(dist: StageDistributions, rng_seed: int) -> SceneSpec:
    """Broad draw: CR anywhere in ``[r, size - r]`` on both axes."""
    return _draw(dist, rng_seed, central=False)


def sample_stage2(dist: StageDistributions, rng_seed: int) -> SceneSpec:
    """Fine-tuning draw: CR within a 1.5-px box around the image center."""
    return _draw(dist, rng_seed, central=True)


def sample_scene(stage: int, dist: StageDistributions, rng_seed: int) -> SceneSpec:
    if stage == 1:
        return sample_stage1(dist, rng_seed)
    if stage == 2:
        return sample_stage2(dist, rng_seed)
    raise ValueError(f"stage must be 1 or 2, got {stage}")


# --------------------------------------------------------------------------
# evaluation grid


@dataclass(frozen=True)
class GridPoint:
    r: float
    amplitude: float
    sigma_n: float
    edge: Optional[float]  # background divider offset in CR radii; None = no gray
    light: float

    @property
    def edge_label(self) -> str:
        return "none" if self.edge is None else f"{self.edge:g}"

    def key(self) -> tuple:
        return (self.r, self.amplitude, self.sigma_n, self.edge_label, self.light)

    def seed_keys(self) -> tuple[int, ...]:
        e = 0 if self.edge is None else 1 + int(round((self.edge + 10) * 100))
        return (
            int(round(self.r * 1000)),
            int(round(self.amplitude * 1000)),
            int(round(self.sigma_n * 1000)),
            e,
            int(round(self.light * 1000)),
        )


def _stride(stride) -> tuple[int, ...]:
    if isinstance(stride, int):
        stride = (stride,) * 5
    stride = tuple(int(s) for s in stride)
    if len(stride) != 5 or min(stride) < 1:
        raise ValueError(f"stride needs five entries >= 1, got {stride}")
    return stride


def build_eval_grid(stride=1) -> list[GridPoint]:
    """Cartesian evaluation grid, ordered r, A, sigma_n, E, I (outermost first)."""
    sr, sa, sn, se, si = _stride(stride)
    return [
        GridPoint(float(r), float(a), float(n), None if e is None else float(e), float(i))
        for r in EVAL_RADII[::sr]
        for a in EVAL_AMPLITUDES[::sa]
        for n in EVAL_NOISE[::sn]
        for e in EVAL_EDGES[::se]
        for i in EVAL_LIGHT[::si]
    ]


def eval_scene(point: GridPoint, center: tuple[float, float], size: tuple[int, int],
               noise_seed: int = 0) -> SceneSpec:
    """Scene for one grid point with the CR at ``center``.

    A gray background puts a vertical divider ``E * r`` to the right of the
    CR center with the light section on its left.
    """
    if point.edge is None:
        bg = BackgroundSpec(present=False)
    else:
        bg = BackgroundSpec(
            present=True,
            line_point=(center[0] + point.edge * point.r, center[1]),
            line_angle=GRAY_LEFT,
            dark_intensity=EVAL_DARK,
            light_intensity=point.light,
        )
    return SceneSpec(
        cr=CrSpec(tuple(center), point.r, point.amplitude),
        background=bg,
        noise=NoiseSpec(point.sigma_n, noise_seed),
        size=tuple(size),
    )


# --------------------------------------------------------------------------
# full eye frames


@dataclass(frozen=True)
class EyeFrameSpec:
    size: tuple[int, int]
    pupil_center: tuple[float, float]
    pupil_radius: float
    cr: CrSpec
    pupil_intensity: float = 20.0
    iris_radius: float = 90.0
    iris_intensity: float = 100.0
    sclera_intensity: float = 170.0
    edge_width: float = 2.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)


def synth_eye_frame(spec: EyeFrameSpec) -> LabeledSample:
    """Sclera, iris and pupil layers with a CR on top; same finishing as scenes."""
    w, h = spec.size
    if not _inside(spec.cr.center, spec.size):
        raise ValueError(f"CR center {spec.cr.center} outside the frame")
    if not _inside(spec.pupil_center, spec.size):
        raise ValueError(f"pupil center {spec.pupil_center} outside the frame")
    x = np.arange(w, dtype=np.float64)[None, :]
    y = np.arange(h, dtype=np.float64)[:, None]
    d = np.hypot(x - spec.pupil_center[0], y - spec.pupil_center[1])
    raster = raised_cosine(spec.iris_radius - d, spec.sclera_intensity,
                           spec.iris_intensity, spec.edge_width)
    raster = raised_cosine(spec.pupil_radius - d, raster, spec.pupil_intensity,
                           spec.edge_width)
    raster = np.maximum(raster, LEVELS * gaussian_field(spec.cr, w, h))
    image = finish(raster, spec.noise)
    return LabeledSample(image=image, truth=tuple(spec.cr.center), scene=spec,
                         pupil=tuple(spec.pupil_center))


# --------------------------------------------------------------------------
# batches


def stage_scenes(stage: int, dist: StageDistributions, seed: int, n: int,
                 start: int = 0) -> Iterator[tuple[int, int, SceneSpec]]:
    """Yield ``(index, scene_seed, scene)`` for dataset generation."""
    for i in range(start, start + n):
        s = derive_seed(seed, DOMAIN_SYNTH, stage, i)
        yield i, s, sample_scene(stage, dist, s)


def scene_record(scene: SceneSpec) -> dict:
    """Flat manifest row for a scene (no filename/stage fields)."""
    cr, bg = scene.cr, scene.background
    return {
        "x_c": cr.center[0], "y_c": cr.center[1], "r": cr.radius, "A": cr.amplitude,
        "sigma_n": scene.noise.sigma_n,
        "bg_present": int(bg.present), "line_x": bg.line_point[0], "line_y": bg.line_point[1],
        "line_angle": bg.line_angle, "dark": bg.dark_intensity, "light": bg.light_intensity,
        "edge_width": bg.edge_width, "noise_seed": scene.noise.seed,
    }


def scene_from_record(row: dict, size: tuple[int, int]) -> SceneSpec:
    bg_present = bool(int(row["bg_present"]))
    return SceneSpec(
        cr=CrSpec((float(row["x_c"]), float(row["y_c"])), float(row["r"]), float(row["A"])),
        background=BackgroundSpec(
            present=bg_present,
            line_point=(float(row["line_x"]), float(row["line_y"])),
            line_angle=float(row["line_angle"]),
            dark_intensity=float(row["dark"]),
            light_intensity=float(row["light"]),
            edge_width=float(row["edge_width"]),
        ),
        noise=NoiseSpec(float(row["sigma_n"]), int(row["noise_seed"])),
        size=size,
    )
