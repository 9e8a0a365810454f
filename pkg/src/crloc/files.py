"""Image and table files.

Tables are comma-separated with a header row, preceded by ``#`` comment lines
carrying provenance (package version, config hash, seed).
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image, PngImagePlugin

from . import __version__


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def provenance(config: dict, seed: Optional[int]) -> str:
    return f"crloc {__version__} config={config_hash(config)} seed={seed}"


def header_lines(config: dict, seed: Optional[int]) -> str:
    return f"# {provenance(config, seed)}\n"


def format_row(row: dict) -> dict:
    """Floats to 10 significant digits; other values unchanged."""
    return {k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()}


def write_table(path, fields: Sequence[str], rows: Iterable[dict], header: str = "") -> None:
    with open(path, "w", newline="") as f:
        f.write(header)
        w = csv.DictWriter(f, fieldnames=list(fields), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(format_row(row))


def read_table(path) -> list[dict]:
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_png(path, image: np.ndarray, text: Optional[dict] = None) -> None:
    """Save a normalized image as 8-bit grayscale PNG (lossless)."""
    levels = np.rint(np.clip(image, 0, 1) * 255).astype(np.uint8)
    info = None
    if text:
        info = PngImagePlugin.PngInfo()
        for k, v in text.items():
            info.add_text(k, str(v))
    Image.fromarray(levels, mode="L").save(path, format="PNG", pnginfo=info)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return arr / 255.0


_NUM = re.compile(r"(\d+)\.png$", re.IGNORECASE)


def frame_files(directory) -> list[Path]:
    """PNG frames with numeric names, in numeric order."""
    files = [p for p in Path(directory).iterdir() if _NUM.search(p.name)]
    return sorted(files, key=lambda p: int(_NUM.search(p.name).group(1)))
