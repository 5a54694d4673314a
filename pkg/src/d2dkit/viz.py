"""Score-map heatmap export.

Five views are written per map pair: the absolute score, the relative
score, their product, and the two positive differences. The absolute and
relative grids are min-max normalized before differencing; every output is
then independently min-max normalized to [0, 1] before quantization. A
constant grid renders all-zero (with a warning) rather than failing.

Formats: binary PGM (P5, no dependencies) or PNG through a fixed
viridis-like lookup table.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .saliency import SaliencyMap

HEATMAP_SUFFIXES = ("as", "rs", "d2d", "as_minus_rs", "rs_minus_as")

# anchor-interpolated viridis-like ramp, pinned so PNGs are reproducible
_LUT_ANCHORS = (
    (0.00, (68, 1, 84)),
    (0.25, (59, 82, 139)),
    (0.50, (33, 145, 140)),
    (0.75, (94, 201, 98)),
    (1.00, (253, 231, 37)),
)


def _build_lut() -> np.ndarray:
    xs = np.array([a[0] for a in _LUT_ANCHORS])
    cols = np.array([a[1] for a in _LUT_ANCHORS], dtype=np.float64)
    t = np.linspace(0.0, 1.0, 256)
    lut = np.stack(
        [np.interp(t, xs, cols[:, ch]) for ch in range(3)], axis=1
    )
    return np.rint(lut).astype(np.uint8)


VIRIDIS_LIKE = _build_lut()


def normalize_unit(values: np.ndarray):
    """Min-max normalize to [0, 1]. Constant input gives zeros + flag."""
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.zeros_like(values, dtype=np.float64), True
    return (values.astype(np.float64) - lo) / (hi - lo), False


def quantize(values01: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8 with round-half-even, clipped."""
    return np.clip(np.rint(values01 * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, gray: np.ndarray) -> Path:
    path = Path(path)
    if gray.dtype != np.uint8 or gray.ndim != 2:
        raise ValidationError("PGM writer expects a 2-D uint8 array")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())
    return path


def write_png(path, gray: np.ndarray, colormap: bool = True) -> Path:
    path = Path(path)
    if gray.dtype != np.uint8 or gray.ndim != 2:
        raise ValidationError("PNG writer expects a 2-D uint8 array")
    if colormap:
        Image.fromarray(VIRIDIS_LIKE[gray], mode="RGB").save(path, format="PNG")
    else:
        Image.fromarray(gray, mode="L").save(path, format="PNG")
    return path


def heatmap_views(as_map: SaliencyMap, rs_map: SaliencyMap) -> dict:
    """The five float views in [0, 1], keyed by filename suffix."""
    if as_map.grid_shape != rs_map.grid_shape:
        raise ValidationError(
            f"grid mismatch: {as_map.grid_shape} vs {rs_map.grid_shape}"
        )
    n_as, const_as = normalize_unit(as_map.values)
    n_rs, const_rs = normalize_unit(rs_map.values)
    views = {}
    flags = {}
    views["as"], flags["as"] = n_as, const_as
    views["rs"], flags["rs"] = n_rs, const_rs
    views["d2d"], flags["d2d"] = normalize_unit(as_map.values * rs_map.values)
    views["as_minus_rs"], flags["as_minus_rs"] = normalize_unit(
        np.maximum(n_as - n_rs, 0.0)
    )
    views["rs_minus_as"], flags["rs_minus_as"] = normalize_unit(
        np.maximum(n_rs - n_as, 0.0)
    )
    for name, is_const in flags.items():
        if is_const:
            warnings.warn(f"heatmap '{name}' is constant; rendering all-zero")
    return views


def render_heatmaps(
    as_map: SaliencyMap, rs_map: SaliencyMap, out_prefix, fmt: str = "pgm"
) -> list:
    """Write the five heatmaps as <prefix>_<suffix>.<fmt>. Returns paths."""
    if fmt not in ("pgm", "png"):
        raise ValidationError(f"unknown heatmap format {fmt!r} (use pgm|png)")
    out_prefix = Path(out_prefix)
    views = heatmap_views(as_map, rs_map)
    paths = []
    for suffix in HEATMAP_SUFFIXES:
        gray = quantize(views[suffix])
        path = out_prefix.parent / f"{out_prefix.name}_{suffix}.{fmt}"
        if fmt == "pgm":
            write_pgm(path, gray)
        else:
            write_png(path, gray)
        paths.append(path)
    return paths


def overlay_crosses(
    gray: np.ndarray, xs, ys, half: int = 2, value: int = 255
) -> np.ndarray:
    """Debug overlay: paint cross markers at pixel positions on a copy."""
    if gray.ndim != 2:
        raise ValidationError("overlay expects a 2-D grayscale image")
    out = np.array(gray, dtype=np.uint8, copy=True)
    h, w = out.shape
    for x, y in zip(np.asarray(xs, int), np.asarray(ys, int)):
        if not (0 <= x < w and 0 <= y < h):
            continue
        out[y, max(0, x - half) : min(w, x + half + 1)] = value
        out[max(0, y - half) : min(h, y + half + 1), x] = value
    return out
