"""Two-stage training on streamed, never-repeated synthetic samples."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional

import numpy as np

from .neural import AdamParams, NetworkState, adam_step, backward, freeze_conv_blocks, predict
from .seeding import DOMAIN_TRAIN, DOMAIN_VALIDATION, derive_seed
from .synthgen import LabeledSample, StageDistributions, render_scene, sample_scene

log = logging.getLogger(__name__)

PAPER_STAGE1_LR = 1e-4
PAPER_STAGE2_LR = 1e-6
# desk runs get ~25k steps per stage, so both rates are raised
DESK_STAGE1_LR = 1e-3
DESK_STAGE2_LR = 1e-4


@dataclass(frozen=True)
class TrainConfig:
    stage: int = 1
    epochs_max: int = 700
    batch_size: int = 4
    samples_per_epoch: int = 1000
    adam: AdamParams = AdamParams(PAPER_STAGE1_LR)
    early_stop_patience: int = 25
    validation_size: int = 300
    seed: int = 0
    dist: StageDistributions = field(default_factory=StageDistributions.paper)
    frozen_blocks: int = 2  # conv blocks frozen in stage 2

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        for name in ("epochs_max", "batch_size", "samples_per_epoch",
                     "early_stop_patience", "validation_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def paper(cls, stage: int = 1, seed: int = 0) -> "TrainConfig":
        lr = PAPER_STAGE1_LR if stage == 1 else PAPER_STAGE2_LR
        dist = StageDistributions.paper()
        return cls(stage=stage, adam=AdamParams(lr), seed=seed,
                   dist=dist if stage == 1 else dist.stage2())

    @classmethod
    def desk(cls, stage: int = 1, seed: int = 0) -> "TrainConfig":
        lr = DESK_STAGE1_LR if stage == 1 else DESK_STAGE2_LR
        dist = StageDistributions.desk()
        return cls(stage=stage, epochs_max=100, adam=AdamParams(lr), seed=seed,
                   dist=dist if stage == 1 else dist.stage2())


@dataclass
class TrainReport:
    val_errors: list[float] = field(default_factory=list)  # index = epoch, 0 = before training
    epoch_wall_ms: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_error: float = math.inf
    stop_reason: str = ""
    wall_time: float = 0.0

    def rows(self):
        return [(e, v) for e, v in enumerate(self.val_errors)]


def stream_seed(seed: int, stage: int, index: int) -> int:
    return derive_seed(seed, DOMAIN_TRAIN, stage, index)


def validation_seed(seed: int, stage: int, index: int) -> int:
    return derive_seed(seed, DOMAIN_VALIDATION, stage, index)


def sample_stream(stage: int, seed: int, dist: Optional[StageDistributions] = None,
                  start: int = 0) -> Iterator[LabeledSample]:
    """Endless stream of unique samples; sample ``i`` depends only on (stage, seed, i)."""
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    if dist is None:
        dist = StageDistributions.paper() if stage == 1 else StageDistributions.paper().stage2()
    i = start
    while True:
        yield render_scene(sample_scene(stage, dist, stream_seed(seed, stage, i)))
        i += 1


def validation_set(stage: int, seed: int, dist: StageDistributions, n: int) -> list[LabeledSample]:
    return [render_scene(sample_scene(stage, dist, validation_seed(seed, stage, i)))
            for i in range(n)]


def to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.image for s in samples]).astype(np.float32)[..., None]
    y = np.array([s.truth for s in samples], dtype=np.float32)
    return x, y


def validate(net: NetworkState, samples) -> float:
    """Mean Euclidean distance between predicted and true centers, in pixels."""
    if isinstance(samples, tuple):
        x, y = samples
    else:
        samples = list(samples)
        if not samples:
            raise ValueError("empty validation set")
        x, y = to_arrays(samples)
    if len(x) == 0:
        raise ValueError("empty validation set")
    pred = predict(net, x).astype(np.float64)
    return float(np.mean(np.hypot(pred[:, 0] - y[:, 0], pred[:, 1] - y[:, 1])))


def _check_size(net: NetworkState, cfg: TrainConfig):
    h, w, _ = net.spec.input_shape
    if (h, w) != (cfg.dist.size, cfg.dist.size):
        raise ValueError(f"network input {h}x{w} does not match {cfg.dist.size}-px training images")


def fit(net: NetworkState, cfg: TrainConfig,
        on_epoch: Optional[Callable[[int, float], None]] = None) -> tuple[NetworkState, TrainReport]:
    """Train ``net`` in place on the cfg stage stream; return the best-validation state."""
    _check_size(net, cfg)
    t0 = time.perf_counter()
    val = to_arrays(validation_set(cfg.stage, cfg.seed, cfg.dist, cfg.validation_size))
    report = TrainReport()
    err = validate(net, val)
    report.val_errors.append(err)
    report.epoch_wall_ms.append(0.0)
    best = net.copy()
    report.best_error, report.best_epoch = err, 0
    if on_epoch:
        on_epoch(0, err)
    stream = sample_stream(cfg.stage, cfg.seed, cfg.dist)
    report.stop_reason = "epochs_max"
    for epoch in range(1, cfg.epochs_max + 1):
        te = time.perf_counter()
        remaining = cfg.samples_per_epoch
        while remaining > 0:
            n = min(cfg.batch_size, remaining)
            x, y = to_arrays([next(stream) for _ in range(n)])
            _, grads = backward(net, x, y)
            adam_step(net, grads, cfg.adam)
            remaining -= n
        err = validate(net, val)
        report.val_errors.append(err)
        report.epoch_wall_ms.append(1000 * (time.perf_counter() - te))
        log.info("stage %d epoch %d val_error %.4f", cfg.stage, epoch, err)
        if on_epoch:
            on_epoch(epoch, err)
        if not math.isfinite(err):
            report.stop_reason = "diverged"
            break
        if err < report.best_error:
            report.best_error, report.best_epoch = err, epoch
            best = net.copy()
        elif epoch - report.best_epoch >= cfg.early_stop_patience:
            report.stop_reason = "early_stop"
            break
    report.wall_time = time.perf_counter() - t0
    return best, report


def run_stage1(net: NetworkState, cfg: TrainConfig, **kw) -> tuple[NetworkState, TrainReport]:
    if cfg.stage != 1:
        cfg = replace(cfg, stage=1)
    return fit(net, cfg, **kw)


def run_stage2(net: NetworkState, cfg: TrainConfig, **kw) -> tuple[NetworkState, TrainReport]:
    """Fine-tune with the first conv blocks frozen on the central-CR distribution."""
    if cfg.stage != 2:
        cfg = replace(cfg, stage=2)
    net = freeze_conv_blocks(net.copy(), cfg.frozen_blocks)
    return fit(net, cfg, **kw)


def train_two_stage(net: NetworkState, cfg1: TrainConfig, cfg2: TrainConfig, **kw):
    """Stage 1 then stage 2; returns ``(stage1_net, stage2_net, report1, report2)``."""
    net1, rep1 = run_stage1(net, cfg1, **kw)
    net2, rep2 = run_stage2(net1, cfg2, **kw)
    return net1, net2, rep1, rep2
