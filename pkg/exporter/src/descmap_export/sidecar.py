"""Writers for the NPY + JSON sidecar interchange format.

This mirrors the downstream toolkit's on-disk contract exactly (same keys,
key order, indentation, and NPY discipline) without importing it: float32
C-order tensors, descriptor sidecars with geometry + normalization flag,
score-map sidecars with a `kind` tag.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_tensor(path, array: np.ndarray) -> Path:
    """float32, C-order, 3-D (h, w, c) NPY file."""
    path = Path(path)
    out = np.ascontiguousarray(array, dtype=np.float32)
    if out.ndim != 3:
        raise ValueError(f"tensor must be 3-D, got shape {out.shape}")
    np.save(path, out)
    return path


def _write_json(path, meta: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return path


def write_descriptor_sidecar(
    path,
    *,
    stride: int,
    offset: int,
    receptive_field: int,
    normalized: bool,
    image_height: int,
    image_width: int,
    descriptor_name: str,
) -> Path:
    return _write_json(
        path,
        {
            "stride": int(stride),
            "offset": int(offset),
            "receptive_field": int(receptive_field),
            "normalized": bool(normalized),
            "image_height": int(image_height),
            "image_width": int(image_width),
            "descriptor_name": str(descriptor_name),
        },
    )


def write_score_sidecar(
    path,
    *,
    stride: int,
    offset: int,
    receptive_field: int,
    image_height: int,
    image_width: int,
    kind: str = "external",
) -> Path:
    return _write_json(
        path,
        {
            "stride": int(stride),
            "offset": int(offset),
            "receptive_field": int(receptive_field),
            "kind": str(kind),
            "image_height": int(image_height),
            "image_width": int(image_width),
        },
    )
