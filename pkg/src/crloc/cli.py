"""Command-line entry point.

Every subcommand reads an optional JSON config file (``--config``) whose
top-level keys are ``seed``, ``jobs`` and one section per subcommand, e.g.::

    {"seed": 7, "synth": {"stage": 2, "n": 300, "out": "data/s2"}}

Precedence: built-in defaults < config file < command-line flags.  Paths may
also come from the environment (``CRLOC_MODEL``, ``CRLOC_OUT``) between the
config file and the flags.

Exit codes: 0 success, 1 runtime error, 2 bad arguments or config, 3 missing
input file.  Errors are a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import __version__
from .files import config_hash, header_lines, read_table, write_png, write_table

log = logging.getLogger("crloc")

EXIT_RUNTIME, EXIT_CONFIG, EXIT_MISSING = 1, 2, 3


class ConfigError(Exception):
    """Bad configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# configuration schema: section -> key -> default (type follows the default)


SCHEMA: dict[str, dict[str, Any]] = {
    "synth": {"kind": "stage", "stage": 1, "n": 100, "start": 0, "out": "synth", "preset": "desk",
              "size": None, "rate_hz": 1000.0, "sigma_n": 4.0, "pupil_radius": 40.0,
              "cr_radius": 5.0, "amplitude": 1000.0, "jitter": 0.5},
    "train": {"preset": "desk", "out": "model_stage1.crcnn", "report": None, "epochs": None,
              "lr": None, "batch_size": 4, "samples_per_epoch": 1000, "patience": 25,
              "validation_size": 300},
    "finetune": {"preset": "desk", "model": None, "out": "model_stage2.crcnn", "report": None,
                 "epochs": None, "lr": None, "batch_size": 4, "samples_per_epoch": 1000,
                 "patience": 25, "validation_size": 300, "frozen_blocks": 2},
    "eval-sweep": {"methods": ["threshold", "radial_symmetry"], "stride": [1, 1, 1, 1, 1],
                   "model": None, "out": "grid.csv", "series": None, "size": 180,
                   "threshold": 0.85},
    "eval-oracle": {"out": "oracle.csv", "series": None, "size": 180},
    "eval-precision": {"methods": ["threshold", "radial_symmetry"], "r": 8.0, "A": 10000.0,
                       "sigma_n": [4.0, 10.0], "E": "0", "I": 128.0, "frames": 200,
                       "model": None, "out": "precision.csv", "size": 180, "threshold": 0.85},
    "pipeline": {"frames": None, "out": "pipeline.csv", "model": None,
                 "refiners": ["radial_symmetry"], "roi": None, "cr_threshold": 0.85,
                 "pupil_threshold": 0.2, "cr_min_area": 3.0, "cr_max_area": 5000.0,
                 "pupil_min_area": 100.0, "min_circularity": 0.6, "cutout_size": None,
                 "mask_radius": None, "downsample": 1, "rate_hz": None},
    "metrics": {"inputs": [], "method": "cnn", "calibration": None, "targets": None,
                "window_s": 0.2, "rate_hz": None, "out": "metrics.csv"},
    "calibrate": {"input": None, "targets": None, "method": "cnn", "out": "calibration.json"},
    "model-info": {"model": None, "out": None},
}
GLOBAL = {"seed": 0, "jobs": None, "log_level": "info"}
ENV_PATHS = {"model": "CRLOC_MODEL", "out": "CRLOC_OUT"}


def _check_type(key: str, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {type(default).__name__}, got {type(value).__name__}")
    return value


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(path)
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError("<file>", "top level must be an object")
    return data


def resolve(command: str, file_cfg: dict, flags: dict) -> dict:
    """Merge defaults, config file, environment and flags for one subcommand."""
    for key in file_cfg:
        if key not in GLOBAL and key not in SCHEMA:
            raise ConfigError(key, "unknown key")
    section = file_cfg.get(command, {})
    if not isinstance(section, dict):
        raise ConfigError(command, "section must be an object")
    schema = SCHEMA[command]
    for key in section:
        if key not in schema:
            raise ConfigError(f"{command}.{key}", "unknown key")
    cfg = {k: (list(v) if isinstance(v, list) else v) for k, v in GLOBAL.items()}
    cfg.update({k: (list(v) if isinstance(v, list) else v) for k, v in schema.items()})
    for key in GLOBAL:
        if key in file_cfg:
            cfg[key] = _check_type(key, file_cfg[key], GLOBAL[key])
    for key, value in section.items():
        cfg[key] = _check_type(f"{command}.{key}", value, schema[key])
    for key, env in ENV_PATHS.items():
        if key in schema and os.environ.get(env):
            cfg[key] = os.environ[env]
    for key, value in flags.items():
        if value is not None:
            cfg[key] = value
    if cfg["jobs"] is None:
        cfg["jobs"] = os.cpu_count() or 1
    return cfg


def _identity(cfg: dict) -> dict:
    # what defines the outputs: jobs and logging do not
    return {k: v for k, v in cfg.items() if k not in ("jobs", "log_level")}


def _header(command: str, cfg: dict) -> str:
    return header_lines({"command": command, **_identity(cfg)}, cfg["seed"])


# --------------------------------------------------------------------------
# argument parser


def _csv_list(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in _csv_list(text)]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in _csv_list(text)]


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="crloc", description="Corneal reflection localization toolkit.")
    ap.add_argument("--version", action="version", version=f"crloc {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes (1 = serial, canonical)")
    common.add_argument("--log-level", dest="log_level", choices=("debug", "info", "warning", "error"))
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    p.add_argument("--kind", choices=("stage", "eye"))
    p.add_argument("--stage", type=int, choices=(1, 2))
    p.add_argument("--n", type=int)
    p.add_argument("--start", type=int)
    p.add_argument("--out")
    p.add_argument("--preset", choices=("desk", "paper"))
    p.add_argument("--size", type=int)
    p.add_argument("--rate-hz", dest="rate_hz", type=float)
    p.add_argument("--sigma-n", dest="sigma_n", type=float)
    p.add_argument("--pupil-radius", dest="pupil_radius", type=float)
    p.add_argument("--cr-radius", dest="cr_radius", type=float)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--jitter", type=float)

    for name, helptext in (("train", "stage-1 training"), ("finetune", "stage-2 fine-tuning")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--preset", choices=("desk", "paper"))
        if name == "finetune":
            p.add_argument("--model")
            p.add_argument("--frozen-blocks", dest="frozen_blocks", type=int)
        p.add_argument("--out")
        p.add_argument("--report")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--samples-per-epoch", dest="samples_per_epoch", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--validation-size", dest="validation_size", type=int)

    p = sub.add_parser("eval-sweep", parents=[common], help="sub-pixel sweeps over the grid")
    p.add_argument("--methods", type=_csv_list)
    p.add_argument("--stride", type=_int_list, help="one value or five (r,A,sigma_n,E,I)")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--series")
    p.add_argument("--size", type=int)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("eval-oracle", parents=[common], help="centroid oracle over r x A")
    p.add_argument("--out")
    p.add_argument("--series")
    p.add_argument("--size", type=int)

    p = sub.add_parser("eval-precision", parents=[common], help="RMS-S2S on repeated frames")
    p.add_argument("--methods", type=_csv_list)
    p.add_argument("--r", type=float)
    p.add_argument("--A", type=float)
    p.add_argument("--sigma-n", dest="sigma_n", type=_float_list)
    p.add_argument("--E", help="edge offset in radii or 'none'")
    p.add_argument("--I", type=float)
    p.add_argument("--frames", type=int)
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--size", type=int)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("pipeline", parents=[common], help="process a frame directory")
    p.add_argument("--frames")
    p.add_argument("--out")
    p.add_argument("--model")
    p.add_argument("--refiners", type=_csv_list)
    p.add_argument("--roi", type=_int_list, help="x0,y0,x1,y1")
    p.add_argument("--cr-threshold", dest="cr_threshold", type=float)
    p.add_argument("--pupil-threshold", dest="pupil_threshold", type=float)
    p.add_argument("--cr-min-area", dest="cr_min_area", type=float)
    p.add_argument("--cr-max-area", dest="cr_max_area", type=float)
    p.add_argument("--pupil-min-area", dest="pupil_min_area", type=float)
    p.add_argument("--min-circularity", dest="min_circularity", type=float)
    p.add_argument("--cutout-size", dest="cutout_size", type=int)
    p.add_argument("--mask-radius", dest="mask_radius", type=float)
    p.add_argument("--downsample", type=int, choices=(1, 2))
    p.add_argument("--rate-hz", dest="rate_hz", type=float)

    p = sub.add_parser("metrics", parents=[common], help="precision and accuracy per trial")
    p.add_argument("--inputs", type=_csv_list, help="pipeline tables, one per trial")
    p.add_argument("--method")
    p.add_argument("--calibration")
    p.add_argument("--targets")
    p.add_argument("--window-s", dest="window_s", type=float)
    p.add_argument("--rate-hz", dest="rate_hz", type=float)
    p.add_argument("--out")

    p = sub.add_parser("calibrate", parents=[common], help="fit the P-CR polynomial")
    p.add_argument("--input")
    p.add_argument("--targets")
    p.add_argument("--method")
    p.add_argument("--out")

    p = sub.add_parser("model-info", parents=[common], help="describe a model file")
    p.add_argument("--model")
    p.add_argument("--out")
    return ap


# --------------------------------------------------------------------------
# helpers


def _need(cfg: dict, key: str, command: str):
    if cfg.get(key) in (None, "", []):
        raise ConfigError(f"{command}.{key}", "required")
    return cfg[key]


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(path))
    return p


def _dist(preset: str, size: Optional[int] = None):
    from .synthgen import StageDistributions

    dist = StageDistributions.desk() if preset == "desk" else StageDistributions.paper()
    return replace(dist, size=size) if size else dist


def _load_model(path):
    from .neural import load_model

    return load_model(_existing(path))


def _parse_edge(text):
    return None if str(text).lower() in ("none", "no_gray", "") else float(text)


def _pool_map(fn, items, jobs: int):
    items = list(items)
    if jobs > 1 and len(items) > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(jobs) as pool:
            return pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs)))
    return [fn(i) for i in items]


# --------------------------------------------------------------------------
# subcommands


MANIFEST_FIELDS = ("filename", "stage", "x_c", "y_c", "r", "A", "sigma_n", "bg_present", "line_x",
                   "line_y", "line_angle", "dark", "light", "edge_width", "noise_seed", "seed")


def _render_stage_item(args):
    from .synthgen import render_scene

    i, seed, scene, out = args
    write_png(Path(out) / f"{i:06d}.png", render_scene(scene).image)
    return i


def cmd_synth(cfg: dict) -> None:
    from .pipeline import EyeSequenceSpec, eye_sequence, write_frames
    from .synthgen import scene_record, stage_scenes

    out = Path(cfg["out"])
    header = _header("synth", cfg)
    if cfg["kind"] == "eye":
        spec = EyeSequenceSpec(sigma_n=cfg["sigma_n"], pupil_radius=cfg["pupil_radius"],
                               cr_radius=cfg["cr_radius"], amplitude=cfg["amplitude"],
                               jitter=cfg["jitter"])
        seq = eye_sequence(spec, cfg["n"], cfg["seed"])
        write_frames(out, [s.image for s in seq], cfg["rate_hz"])
        rows = ({"frame": k, "cr_x": s.truth[0], "cr_y": s.truth[1], "pupil_x": s.pupil[0],
                 "pupil_y": s.pupil[1]} for k, s in enumerate(seq))
        write_table(out / "truth.csv", ("frame", "cr_x", "cr_y", "pupil_x", "pupil_y"), rows, header)
        log.info("wrote %d eye frames to %s", cfg["n"], out)
        return
    dist = _dist(cfg["preset"], cfg["size"])
    if cfg["stage"] == 2:
        dist = dist.stage2()
    out.mkdir(parents=True, exist_ok=True)
    items = list(stage_scenes(cfg["stage"], dist, cfg["seed"], cfg["n"], cfg["start"]))
    _pool_map(_render_stage_item, [(i, s, sc, str(out)) for i, s, sc in items], cfg["jobs"])
    rows = ({"filename": f"{i:06d}.png", "stage": cfg["stage"], **scene_record(sc), "seed": s}
            for i, s, sc in items)
    write_table(out / "manifest.csv", MANIFEST_FIELDS, rows, header)
    log.info("wrote %d stage-%d images to %s", len(items), cfg["stage"], out)


def _train_config(cfg: dict, stage: int):
    from .neural import AdamParams
    from .train import TrainConfig

    base = TrainConfig.desk(stage, cfg["seed"]) if cfg["preset"] == "desk" \
        else TrainConfig.paper(stage, cfg["seed"])
    kw = dict(batch_size=cfg["batch_size"], samples_per_epoch=cfg["samples_per_epoch"],
              early_stop_patience=cfg["patience"], validation_size=cfg["validation_size"])
    if cfg["epochs"] is not None:
        kw["epochs_max"] = cfg["epochs"]
    if cfg["lr"] is not None:
        kw["adam"] = AdamParams(cfg["lr"])
    if stage == 2:
        kw["frozen_blocks"] = cfg["frozen_blocks"]
    return replace(base, **kw)


def _write_report(path, report, header: str) -> None:
    rows = ({"epoch": e, "val_error": v} for e, v in enumerate(report.val_errors))
    extra = (f"# best_epoch={report.best_epoch} best_error={report.best_error:.10g} "
             f"stop={report.stop_reason}\n")
    write_table(path, ("epoch", "val_error"), rows, header + extra)


def _train(cfg: dict, stage: int, command: str) -> None:
    from .neural import PRESETS, init_network, save_model
    from .train import run_stage1, run_stage2

    tcfg = _train_config(cfg, stage)
    if stage == 1:
        net = init_network(PRESETS[cfg["preset"]](), cfg["seed"])
        run = run_stage1
    else:
        net = _load_model(_need(cfg, "model", command))
        if net.spec.input_shape[0] != tcfg.dist.size:
            raise ConfigError(f"{command}.preset",
                              f"model input {net.spec.input_shape[0]} px does not match preset")
        run = run_stage2

    def progress(epoch, err):
        log.info("epoch %d val_error %.4f", epoch, err)

    best, report = run(net, tcfg, on_epoch=progress)
    meta = {"stage": stage, "config_hash": config_hash(_identity(cfg)), "seed": cfg["seed"],
            "best_epoch": report.best_epoch, "best_error": report.best_error, "version": __version__}
    save_model(best, cfg["out"], meta=meta)
    if cfg["report"]:
        _write_report(cfg["report"], report, _header(command, cfg))
    log.info("stage %d best %.4f px at epoch %d (%s, %.0f s)", stage, report.best_error,
             report.best_epoch, report.stop_reason, report.wall_time)


def cmd_train(cfg: dict) -> None:
    _train(cfg, 1, "train")


def cmd_finetune(cfg: dict) -> None:
    _train(cfg, 2, "finetune")


def _stride_arg(stride):
    if len(stride) == 1:
        return stride[0]
    if len(stride) != 5:
        raise ConfigError("eval-sweep.stride", "needs 1 or 5 values")
    return tuple(stride)


def _methods(cfg: dict, command: str) -> list[str]:
    from .localize import METHODS

    for m in cfg["methods"]:
        if m not in METHODS:
            raise ConfigError(f"{command}.methods", f"unknown method {m!r}")
    return list(cfg["methods"])


def cmd_eval_sweep(cfg: dict) -> None:
    from .evaluate import EVAL_THRESHOLD, grid_eval
    from .synthgen import build_eval_grid

    methods = _methods(cfg, "eval-sweep")
    model = _load_model(cfg["model"]) if "cnn" in methods else None
    if "cnn" in methods and cfg["model"] is None:
        raise ConfigError("eval-sweep.model", "required for method cnn")
    grid = build_eval_grid(_stride_arg(cfg["stride"]))
    threshold = replace(EVAL_THRESHOLD, threshold=cfg["threshold"])

    def progress(n, total):
        if n % 50 == 0 or n == total:
            log.info("%d / %d grid points", n, total)

    rows = grid_eval(grid, methods, cfg["seed"], size=cfg["size"], model=model, threshold=threshold,
                     out_path=cfg["out"], header=_header("eval-sweep", cfg),
                     series_path=cfg["series"], jobs=cfg["jobs"], progress=progress)
    log.info("%d rows in %s", len(rows), cfg["out"])


def cmd_eval_oracle(cfg: dict) -> None:
    from .evaluate import TABLE_FIELDS, optimal_benchmark, sweep_positions

    results = optimal_benchmark(size=cfg["size"])
    header = _header("eval-oracle", cfg)
    write_table(cfg["out"], TABLE_FIELDS, (r.row() for r in results), header)
    if cfg["series"]:
        xs = [p[0] for p in sweep_positions(cfg["size"])]
        rows = ({"r": r.point.r, "A": r.point.amplitude, "step": k, "x_true": xs[k], "error": e}
                for r in results for k, e in enumerate(r.errors))
        write_table(cfg["series"], ("r", "A", "step", "x_true", "error"), rows, header)
    log.info("oracle table with %d rows in %s", len(results), cfg["out"])


def cmd_eval_precision(cfg: dict) -> None:
    from .evaluate import EVAL_THRESHOLD, precision_frames, precision_sweep
    from .synthgen import GridPoint

    methods = _methods(cfg, "eval-precision")
    if "cnn" in methods and cfg["model"] is None:
        raise ConfigError("eval-precision.model", "required for method cnn")
    model = _load_model(cfg["model"]) if "cnn" in methods else None
    threshold = replace(EVAL_THRESHOLD, threshold=cfg["threshold"])
    edge = _parse_edge(cfg["E"])
    rows = []
    for sn in cfg["sigma_n"]:
        point = GridPoint(cfg["r"], cfg["A"], float(sn), edge, cfg["I"])
        frames = precision_frames(point, cfg["frames"], cfg["seed"], cfg["size"])
        for m in methods:
            res = precision_sweep(point, m, cfg["frames"], cfg["seed"], cfg["size"], model=model,
                                  threshold=threshold, frames=frames)
            rows.append({"r": point.r, "A": point.amplitude, "sigma_n": point.sigma_n,
                         "E": point.edge_label, "I": point.light, "method": m,
                         "rms_s2s": res.rms_s2s, "failures": res.failures})
            log.info("sigma_n %g %s rms_s2s %.4f", sn, m, res.rms_s2s)
    write_table(cfg["out"], ("r", "A", "sigma_n", "E", "I", "method", "rms_s2s", "failures"), rows,
                _header("eval-precision", cfg))


def pipeline_config(cfg: dict, model=None):
    from .localize import ThresholdParams
    from .pipeline import PipelineConfig

    base = PipelineConfig() if model is None or model.spec.input_shape[0] == 180 \
        else PipelineConfig.desk()
    kw = dict(
        cr=ThresholdParams(cfg["cr_threshold"], cfg["cr_min_area"], cfg["cr_max_area"],
                           cfg["min_circularity"]),
        pupil=ThresholdParams(cfg["pupil_threshold"], cfg["pupil_min_area"], math.inf,
                              cfg["min_circularity"]),
        refiners=tuple(cfg["refiners"]), downsample=cfg["downsample"],
        model_path=cfg["model"])
    if cfg["roi"] is not None:
        if len(cfg["roi"]) != 4:
            raise ConfigError("pipeline.roi", "needs x0,y0,x1,y1")
        kw["roi"] = tuple(int(v) for v in cfg["roi"])
    if cfg["cutout_size"] is not None:
        kw["cutout_size"] = cfg["cutout_size"]
    if cfg["mask_radius"] is not None:
        kw["mask_radius"] = cfg["mask_radius"]
    try:
        return replace(base, **kw)
    except ValueError as exc:
        raise ConfigError("pipeline", str(exc)) from None


def cmd_pipeline(cfg: dict) -> None:
    from .pipeline import process_sequence, read_frames, result_fields, result_rows

    frames_dir = _existing(_need(cfg, "frames", "pipeline"))
    model = None
    if "cnn" in cfg["refiners"]:
        model = _load_model(_need(cfg, "model", "pipeline"))
    frames, meta = read_frames(frames_dir)
    if cfg["roi"] is None and meta.get("roi"):
        cfg = {**cfg, "roi": meta["roi"]}
    pcfg = pipeline_config(cfg, model)
    rate = cfg["rate_hz"] or meta.get("rate_hz") or 0.0
    results = process_sequence(frames, pcfg, model, jobs=cfg["jobs"])
    methods = ["threshold"] + [r for r in pcfg.refiners if r != "none"]
    write_table(cfg["out"], result_fields(methods), result_rows(results, methods, rate),
                _header("pipeline", cfg))
    flagged = sum(1 for r in results if r.flags)
    log.info("%d frames, %d flagged, table in %s", len(results), flagged, cfg["out"])


def _num(v) -> float:
    try:
        return float(v)
    except (TypeError, ValueError):
        return math.nan


def _signals(path, method: str, rate: Optional[float]):
    from .metrics import GazeRecord, pcr_vectors

    rows = read_table(_existing(path))
    if not rows:
        raise ValueError(f"{path}: no rows")
    key = f"cr_{method}_x"
    if key not in rows[0]:
        raise ValueError(f"{path}: no column {key}")
    t = np.array([_num(r["t"]) for r in rows])
    if rate:
        t = np.array([_num(r["frame"]) for r in rows]) / rate
    elif not np.all(np.isfinite(t)):
        raise ValueError(f"{path}: no timestamps; pass --rate-hz")
    pupil = np.array([[_num(r["pupil_x"]), _num(r["pupil_y"])] for r in rows])
    cr = np.array([[_num(r[f"cr_{method}_x"]), _num(r[f"cr_{method}_y"])] for r in rows])
    rate = rate or 1.0 / float(np.median(np.diff(t)))
    return GazeRecord(t, pcr_vectors(pupil, cr), rate)


def _targets(path):
    from .metrics import FixationTarget

    rows = read_table(_existing(path))
    return [FixationTarget((float(r["x"]), float(r["y"])), float(r["onset"]), float(r["offset"]))
            for r in rows]


def _read_calibration(path):
    from .metrics import Calibration

    data = json.loads(_existing(path).read_text())
    return Calibration(np.array(data["coefficients"], dtype=np.float64), data.get("residual_rms", 0.0))


def cmd_metrics(cfg: dict) -> None:
    from .metrics import GazeRecord, accuracy, apply_calibration, rms_s2s, std_precision

    inputs = _need(cfg, "inputs", "metrics")
    cal = _read_calibration(cfg["calibration"]) if cfg["calibration"] else None
    targets = _targets(cfg["targets"]) if cfg["targets"] else None
    rows = []
    for k, path in enumerate(inputs):
        rec = _signals(path, cfg["method"], cfg["rate_hz"])
        units = "px"
        if cal is not None:
            rec = GazeRecord(rec.timestamps, apply_calibration(cal, rec.samples), rec.sampling_rate)
            units = "deg"
        ok = np.all(np.isfinite(rec.samples), axis=1)
        clean = GazeRecord(rec.timestamps[ok], rec.samples[ok], rec.sampling_rate) \
            if ok.all() else GazeRecord.uniform(rec.samples[ok], rec.sampling_rate)
        acc = accuracy(rec, targets) if (cal is not None and targets) else math.nan
        rows.append({"trial": k, "input": Path(path).name, "method": cfg["method"], "units": units,
                     "rms_s2s": rms_s2s(clean, cfg["window_s"]),
                     "std": std_precision(clean, cfg["window_s"]), "accuracy": acc})
    write_table(cfg["out"], ("trial", "input", "method", "units", "rms_s2s", "std", "accuracy"), rows,
                _header("metrics", cfg))


def cmd_calibrate(cfg: dict) -> None:
    from .metrics import fit_calibration

    rec = _signals(_need(cfg, "input", "calibrate"), cfg["method"], None)
    targets = _targets(_need(cfg, "targets", "calibrate"))
    cal = fit_calibration(rec, targets)
    out = {"provenance": _header("calibrate", cfg)[2:].strip(), "method": cfg["method"],
           "terms": ["1", "x", "y", "x^2", "y^2", "xy"],
           "coefficients": np.asarray(cal.coefficients).tolist(), "residual_rms": cal.residual_rms}
    Path(cfg["out"]).write_text(json.dumps(out, indent=2) + "\n")
    log.info("calibration residual %.4g deg", cal.residual_rms)


def cmd_model_info(cfg: dict) -> None:
    from .neural import parse_model, spec_text

    path = _existing(_need(cfg, "model", "model-info"))
    state, meta = parse_model(path.read_bytes())
    n_params = sum(int(p["W"].size + p["b"].size) for p in state.params if p is not None)
    text = (f"{spec_text(state.spec)}\nparameters: {n_params}\nstep: {state.step}\n"
            f"seed: {state.seed}\nmeta: {json.dumps(meta, sort_keys=True)}\n")
    if cfg["out"]:
        Path(cfg["out"]).write_text(text)
    else:
        sys.stdout.write(text)


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "finetune": cmd_finetune,
    "eval-sweep": cmd_eval_sweep, "eval-oracle": cmd_eval_oracle,
    "eval-precision": cmd_eval_precision, "pipeline": cmd_pipeline, "metrics": cmd_metrics,
    "calibrate": cmd_calibrate, "model-info": cmd_model_info,
}


def _fail(code: int, msg: str) -> int:
    sys.stderr.write(f"error: {msg}\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_CONFIG, str(exc).replace("\n", " "))
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve(args.command, load_config(args.config), flags)
        logging.basicConfig(level=cfg["log_level"].upper(), stream=sys.stderr,
                            format="%(levelname)s %(message)s")
        log.info("started %s", time.strftime("%Y-%m-%dT%H:%M:%S"))
        log.info("config %s", json.dumps({"command": args.command, **cfg}, sort_keys=True))
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, f"config {exc}")
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, f"missing file {exc.filename or exc.args[0]}")
    except (ValueError, np.linalg.LinAlgError, OSError) as exc:
        return _fail(EXIT_RUNTIME, str(exc).replace("\n", " "))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
