"""Shared builders for synthetic descriptor maps and fixtures."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from d2dkit.tensor_io import DescriptorMap, GridGeometry, default_geometry


def unit_geometry() -> GridGeometry:
    """Stride-1 geometry: grid indices are pixel coordinates."""
    return GridGeometry(stride=1, offset=0, receptive_field=1)


def make_dmap(
    data,
    normalized: bool = False,
    geometry: GridGeometry | None = None,
    image_size: tuple[int, int] | None = None,
    name: str = "synthetic",
) -> DescriptorMap:
    """Wrap an array as a DescriptorMap, defaulting to stride-1 geometry."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if geometry is None:
        geometry = unit_geometry()
    if image_size is None:
        image_size = (arr.shape[0], arr.shape[1])
    return DescriptorMap(
        data=arr,
        geometry=geometry,
        normalized=normalized,
        source_image_size=image_size,
        descriptor_name=name,
    )


def random_dmap(
    rng: np.random.Generator,
    hf: int,
    wf: int,
    channels: int,
    normalized: bool = False,
    default_geom: bool = False,
) -> DescriptorMap:
    """Random positive-ish descriptor map; default_geom implies the 4/14/51 grid."""
    data = rng.standard_normal((hf, wf, channels)).astype(np.float32)
    if normalized:
        norms = np.linalg.norm(data.astype(np.float64), axis=2, keepdims=True)
        norms[norms == 0] = 1.0
        data = (data / norms).astype(np.float32)
    if default_geom:
        geometry = default_geometry()
        image_size = (4 * (hf + 7), 4 * (wf + 7))
    else:
        geometry = unit_geometry()
        image_size = (hf, wf)
    return DescriptorMap(
        data=data,
        geometry=geometry,
        normalized=normalized,
        source_image_size=image_size,
        descriptor_name="synthetic",
    )


VIEW_SHIFTS = ((4, 0), (0, 8), (8, 4), (4, 12), (12, 8))
ILLUM_OFFSETS = (10, -15, 20, 5, -25)


def _write_homography(path: Path, h: np.ndarray):
    path.write_text(" ".join(repr(float(v)) for v in h.ravel()) + "\n")


def write_synthetic_hpatches(root, rng, size=(96, 80)):
    """Two-sequence fixture in the on-disk layout the loaders expect.

    v_synth crops six windows out of one master texture at grid-aligned
    (multiple-of-4) shifts, so ground truth is a pure translation per pair.
    i_synth keeps the window fixed and shifts intensity additively under
    identity homographies. Returns the sequence names.
    """
    root = Path(root)
    height, width = size
    master = rng.integers(40, 216, size=(height + 40, width + 40), dtype=np.uint8)

    view = root / "v_synth"
    view.mkdir(parents=True)
    Image.fromarray(master[:height, :width]).save(view / "1.pgm")
    for k, (dx, dy) in zip(range(2, 7), VIEW_SHIFTS):
        Image.fromarray(master[dy : dy + height, dx : dx + width]).save(
            view / f"{k}.pgm"
        )
        h = np.eye(3)
        h[0, 2] = -float(dx)
        h[1, 2] = -float(dy)
        _write_homography(view / f"H_1_{k}", h)

    illum = root / "i_synth"
    illum.mkdir(parents=True)
    window = master[:height, :width].astype(np.int64)
    Image.fromarray(window.astype(np.uint8)).save(illum / "1.pgm")
    for k, off in zip(range(2, 7), ILLUM_OFFSETS):
        shifted = np.clip(window + off, 0, 255).astype(np.uint8)
        Image.fromarray(shifted).save(illum / f"{k}.pgm")
        _write_homography(illum / f"H_1_{k}", np.eye(3))

    return ["i_synth", "v_synth"]
