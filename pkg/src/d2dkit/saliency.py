"""Saliency scoring of dense descriptor maps.

Three per-cell scores are produced from a DescriptorMap:

  absolute  - standard deviation across descriptor channels (informativeness)
  relative  - mean L2 distance to spatially sampled neighbour descriptors
              (distinctiveness within the local neighbourhood)
  combined  - elementwise product of the two

Each optimized kernel has a naive reference twin used by tests and by the
`bench` CLI subcommand. All math runs in float64 regardless of storage dtype,
with fixed per-cell reduction order, so results do not depend on parallelism.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, PreconditionError, ValidationError
from .tensor_io import DescriptorMap, GridGeometry, _read_npy, _read_sidecar

SALIENCY_KINDS = ("as", "rs", "d2d", "external")


@dataclass(frozen=True)
class SaliencyMap:
    """Scalar score grid aligned 1:1 with a descriptor grid."""

    values: np.ndarray  # (H_f, W_f) float64, finite, >= 0
    kind: str
    geometry: GridGeometry
    source_image_size: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in SALIENCY_KINDS:
            raise ValidationError(f"unknown saliency kind {self.kind!r}")
        v = self.values
        if v.ndim != 2:
            raise ValidationError(f"saliency grid must be 2-D, got {v.ndim}-D")
        if not np.isfinite(v).all():
            raise DataError("saliency grid contains non-finite values")
        if (v < 0).any():
            raise DataError("saliency grid contains negative values")
        v.flags.writeable = False

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.values.shape

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True)
class RsWindow:
    """Neighbour sampling window for the relative score.

    Offsets form the step lattice {-radius, -radius+step, ...} clipped to
    +radius on each axis, minus the origin, enumerated with the vertical
    offset varying slowest. That enumeration order is part of the contract:
    per-cell sums accumulate in it.
    """

    radius: int = 5
    sample_step: int = 2
    weights: str = "uniform"  # "uniform" | "gaussian"
    sigma: float | None = None

    def __post_init__(self):
        if self.radius < 1:
            raise ValidationError(f"radius must be >= 1, got {self.radius}")
        if self.sample_step < 1:
            raise ValidationError(f"sample_step must be >= 1, got {self.sample_step}")
        if self.weights not in ("uniform", "gaussian"):
            raise ValidationError(f"unknown weighting {self.weights!r}")
        if self.weights == "gaussian" and (self.sigma is None or self.sigma <= 0):
            raise ValidationError("gaussian weighting needs sigma > 0")

    def axis_offsets(self) -> np.ndarray:
        return np.arange(-self.radius, self.radius + 1, self.sample_step)

    def offset_weights(self) -> list[tuple[int, int, float]]:
        """(u, v, weight) triples; u is horizontal, v vertical."""
        out = []
        for v in self.axis_offsets():
            for u in self.axis_offsets():
                if u == 0 and v == 0:
                    continue
                if self.weights == "gaussian":
                    w = math.exp(-(u * u + v * v) / (2.0 * self.sigma**2))
                else:
                    w = 1.0
                out.append((int(u), int(v), w))
        return out


def absolute_saliency(dmap: DescriptorMap) -> SaliencyMap:
    """Per-cell channel standard deviation (population variance, clamped at 0).

    Refuses L2-normalized maps: unit-length descriptors flatten the spread
    this score is meant to measure.
    """
    if dmap.normalized:
        raise PreconditionError(
            "absolute saliency needs raw descriptors; this map is L2-normalized"
        )
    if dmap.channels < 1:
        raise ValidationError("descriptor map has no channels")
    f = dmap.data.astype(np.float64)
    mean = f.mean(axis=2)
    mean_sq = (f * f).mean(axis=2)
    var = np.maximum(mean_sq - mean * mean, 0.0)
    return SaliencyMap(np.sqrt(var), "as", dmap.geometry, dmap.source_image_size)


def absolute_saliency_naive(dmap: DescriptorMap) -> SaliencyMap:
    """Two-pass per-cell standard deviation, cell by cell. Reference only."""
    if dmap.normalized:
        raise PreconditionError(
            "absolute saliency needs raw descriptors; this map is L2-normalized"
        )
    hf, wf, c = dmap.data.shape
    f = dmap.data.astype(np.float64)
    out = np.zeros((hf, wf))
    for gy in range(hf):
        for gx in range(wf):
            cell = f[gy, gx]
            mu = cell.sum() / c
            dev = cell - mu
            out[gy, gx] = math.sqrt((dev * dev).sum() / c)
    return SaliencyMap(out, "as", dmap.geometry, dmap.source_image_size)


def _accumulate_offsets(field: np.ndarray, window: RsWindow, squared: bool):
    """Shared per-offset sweep for the relative score and SSD autocorrelation.

    Returns (acc, count): weighted per-cell sums over valid neighbours and the
    surviving-neighbour counts. `squared` selects (a-b)^2 terms instead of
    L2 distances.
    """
    h, w = field.shape[:2]
    acc = np.zeros((h, w))
    count = np.zeros((h, w), dtype=np.int64)
    for u, v, weight in window.offset_weights():
        y0, y1 = max(0, -v), min(h, h - v)
        x0, x1 = max(0, -u), min(w, w - u)
        if y0 >= y1 or x0 >= x1:
            continue
        a = field[y0:y1, x0:x1]
        b = field[y0 + v : y1 + v, x0 + u : x1 + u]
        diff = a - b
        if field.ndim == 3:
            term = np.sqrt((diff * diff).sum(axis=2))
        elif squared:
            term = diff * diff
        else:
            term = np.abs(diff)
        if weight != 1.0:
            term = weight * term
        acc[y0:y1, x0:x1] += term
        count[y0:y1, x0:x1] += 1
    return acc, count


def relative_saliency(dmap: DescriptorMap, window: RsWindow | None = None) -> SaliencyMap:
    """Mean weighted L2 distance from each cell to its sampled neighbours.

    Neighbours falling outside the grid are dropped and the sum is divided by
    the surviving count, which keeps border cells on the interior scale. A
    cell left with no neighbour at all is an error.
    """
    if window is None:
        window = RsWindow()
    f = dmap.data.astype(np.float64)
    acc, count = _accumulate_offsets(f, window, squared=False)
    if (count == 0).any():
        raise ValidationError(
            f"window (radius {window.radius}, step {window.sample_step}) leaves "
            f"cells of the {f.shape[0]}x{f.shape[1]} grid without any neighbour"
        )
    return SaliencyMap(acc / count, "rs", dmap.geometry, dmap.source_image_size)


def relative_saliency_naive(
    dmap: DescriptorMap, window: RsWindow | None = None
) -> SaliencyMap:
    """Literal double loop over cells and offsets. Reference only."""
    if window is None:
        window = RsWindow()
    hf, wf = dmap.grid_shape
    f = dmap.data.astype(np.float64)
    offsets = window.offset_weights()
    out = np.zeros((hf, wf))
    for gy in range(hf):
        for gx in range(wf):
            total = 0.0
            n = 0
            for u, v, weight in offsets:
                yy, xx = gy + v, gx + u
                if 0 <= yy < hf and 0 <= xx < wf:
                    d = f[gy, gx] - f[yy, xx]
                    total += weight * math.sqrt((d * d).sum())
                    n += 1
            if n == 0:
                raise ValidationError(
                    f"cell ({gx}, {gy}) has no valid neighbour under the window"
                )
            out[gy, gx] = total / n
    return SaliencyMap(out, "rs", dmap.geometry, dmap.source_image_size)


def d2d_score(as_map: SaliencyMap, rs_map: SaliencyMap) -> SaliencyMap:
    """Elementwise product of the absolute and relative score grids."""
    if as_map.kind != "as" or rs_map.kind != "rs":
        raise ValidationError(
            f"expected kinds ('as', 'rs'), got ({as_map.kind!r}, {rs_map.kind!r})"
        )
    if as_map.grid_shape != rs_map.grid_shape:
        raise ValidationError(
            f"shape mismatch: {as_map.grid_shape} vs {rs_map.grid_shape}"
        )
    if as_map.geometry != rs_map.geometry:
        raise ValidationError("geometry mismatch between score grids")
    return SaliencyMap(
        as_map.values * rs_map.values, "d2d", as_map.geometry, as_map.source_image_size
    )


def ssd_autocorrelation(image: np.ndarray, window: RsWindow | None = None) -> SaliencyMap:
    """Classical intensity autocorrelation: per pixel, the weighted sum of
    squared differences against the sampled neighbourhood.

    With C=1 descriptors and uniform weights, square-rooting each term of
    this sum recovers the relative-score terms, so the two rank interior
    pixels identically.
    """
    if window is None:
        window = RsWindow()
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValidationError(f"expected a single-channel image, got shape {img.shape}")
    acc, count = _accumulate_offsets(img, window, squared=True)
    if (count == 0).any():
        raise ValidationError(
            f"window (radius {window.radius}, step {window.sample_step}) leaves "
            f"pixels of the {img.shape[0]}x{img.shape[1]} image without any neighbour"
        )
    geometry = GridGeometry(stride=1, offset=0, receptive_field=1)
    return SaliencyMap(acc, "external", geometry, (img.shape[0], img.shape[1]))


def compute_score_map(
    dmap: DescriptorMap, mode: str, window: RsWindow | None = None
) -> SaliencyMap:
    """Score a descriptor map by mode: 'as', 'rs', or 'both' (the product)."""
    if mode == "as":
        return absolute_saliency(dmap)
    if mode == "rs":
        return relative_saliency(dmap, window)
    if mode == "both":
        return d2d_score(absolute_saliency(dmap), relative_saliency(dmap, window))
    raise ValidationError(f"unknown score mode {mode!r} (use as|rs|both)")


def save_saliency_map(smap: SaliencyMap, tensor_path, meta_path=None):
    """Write a score grid in the shared NPY + JSON sidecar format."""
    tensor_path = Path(tensor_path)
    if meta_path is None:
        meta_path = tensor_path.with_suffix(".json")
    np.save(tensor_path, smap.values.astype(np.float32)[..., np.newaxis])
    h, w = smap.source_image_size if smap.source_image_size else (0, 0)
    meta = {
        "stride": smap.geometry.stride,
        "offset": smap.geometry.offset,
        "receptive_field": smap.geometry.receptive_field,
        "kind": smap.kind,
        "image_height": h,
        "image_width": w,
    }
    Path(meta_path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return tensor_path, Path(meta_path)


def load_saliency_map(tensor_path, meta_path=None) -> SaliencyMap:
    """Load a score grid written by save_saliency_map (or an exporter)."""
    tensor_path = Path(tensor_path)
    if meta_path is None:
        meta_path = tensor_path.with_suffix(".json")
    meta = _read_sidecar(Path(meta_path))
    data = _read_npy(tensor_path)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if data.ndim != 2:
        raise FormatError(f"{tensor_path}: expected a 2-D score grid")
    if "kind" not in meta:
        raise FormatError(f"sidecar {meta_path} lacks required key 'kind'")
    geometry = GridGeometry(
        int(meta.get("stride", 1)),
        int(meta.get("offset", 0)),
        int(meta.get("receptive_field", 1)),
    )
    size = None
    if meta.get("image_height") and meta.get("image_width"):
        size = (int(meta["image_height"]), int(meta["image_width"]))
    return SaliencyMap(data.astype(np.float64), str(meta["kind"]), geometry, size)
