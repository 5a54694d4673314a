"""Export dense descriptor maps (and optional score maps) to disk.

Outputs follow the downstream toolkit's file contract: a float32 C-order
(h, w, c) .npy tensor plus a .json sidecar carrying grid geometry. Score
maps are stored as (h, w, 1) with their own sidecar. Nothing here imports
the toolkit; the formats are mirrored by construction.
"""

from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ImageError, WeightsError
from .models import MIN_SIDE, MODELS, ModelSpec, build_model, run_model
from .sidecar import write_descriptor_sidecar, write_score_sidecar, write_tensor

# luma weights used for RGB -> grayscale, matching the downstream reader
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)

_SEQ_DIR = re.compile(r"^[iv]_")


def resolve_weights(spec: ModelSpec, weights_dir: str | None) -> Path:
    """Locate the checkpoint for `spec`, raising an actionable error."""
    base = weights_dir or os.environ.get("DESCMAP_WEIGHTS_DIR") or "weights"
    path = Path(base) / spec.weights_file
    if not path.is_file():
        raise WeightsError(
            f"weights file not found: {path} (expected {spec.weights_file}; "
            f"download: {spec.weights_hint}; or pass --random-init to run "
            "with untrained weights)"
        )
    return path


def load_network(spec: ModelSpec, *, random_init: bool, seed: int,
                 weights_dir: str | None) -> torch.nn.Module:
    """Build the network and either load a checkpoint or seed random weights."""
    torch.set_num_threads(1)
    module = build_model(spec.name)
    if random_init:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for param in module.parameters():
                param.copy_(torch.empty_like(param).normal_(
                    mean=0.0, std=0.05, generator=gen))
    else:
        path = resolve_weights(spec, weights_dir)
        state = torch.load(path, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        try:
            module.load_state_dict(state)
        except RuntimeError as exc:
            raise WeightsError(
                f"weights in {path} do not fit the {spec.name} "
                f"architecture: {exc}"
            ) from exc
    module.eval()
    return module


def load_image(path: Path, *, rgb: bool) -> np.ndarray:
    """Read an image as float32, (H, W) grayscale or (H, W, 3) RGB."""
    if not path.is_file():
        raise ImageError(f"image not found: {path}")
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    if rgb:
        return arr
    gray = arr.astype(np.float64) @ _LUMA
    return np.floor(gray + 0.5).astype(np.float32)


def crop_to_stride(image: np.ndarray, stride: int) -> np.ndarray:
    """Trim bottom/right so both sides are multiples of the grid stride."""
    h = image.shape[0] - image.shape[0] % stride
    w = image.shape[1] - image.shape[1] % stride
    return np.ascontiguousarray(image[:h, :w])


def expected_grid(spec: ModelSpec, height: int, width: int) -> tuple[int, int]:
    if spec.name in ("hardnet", "sosnet"):
        return height // 4 - 7, width // 4 - 7
    return height // spec.stride, width // spec.stride


def export_image(spec: ModelSpec, module: torch.nn.Module, image_path: Path,
                 out_path: Path, *, score_path: Path | None = None) -> dict:
    """Run one image through the network and write tensor(s) + sidecar(s).

    Returns a small summary dict (grid shape, cropped size) for reporting.
    """
    image = load_image(image_path, rgb=spec.input_channels == 3)
    if image.shape[0] < MIN_SIDE or image.shape[1] < MIN_SIDE:
        raise ImageError(
            f"image {image_path} is {image.shape[1]}x{image.shape[0]}; "
            f"both sides must be at least {MIN_SIDE} px"
        )
    image = crop_to_stride(image, spec.stride)
    height, width = image.shape[0], image.shape[1]

    dense, score = run_model(spec.name, module, image)
    want = expected_grid(spec, height, width)
    if dense.shape[:2] != want or dense.shape[2] != spec.channels:
        raise RuntimeError(
            f"unexpected output shape {dense.shape} for {spec.name} "
            f"on {width}x{height} input (wanted {want + (spec.channels,)})"
        )

    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(out_path, dense)
    write_descriptor_sidecar(
        out_path.with_suffix(".json"),
        stride=spec.stride,
        offset=spec.offset,
        receptive_field=spec.receptive_field,
        normalized=spec.normalized,
        image_height=height,
        image_width=width,
        descriptor_name=spec.name,
    )

    if score_path is not None:
        if score is None:
            raise ImageError(
                f"model {spec.name} does not produce a score map"
            )
        if spec.score_resolution == "image":
            geom = {"stride": 1, "offset": 0, "receptive_field": 1}
        else:
            geom = {
                "stride": spec.stride,
                "offset": spec.offset,
                "receptive_field": spec.receptive_field,
            }
        score_path.parent.mkdir(parents=True, exist_ok=True)
        write_tensor(score_path, score[:, :, None])
        write_score_sidecar(
            score_path.with_suffix(".json"),
            image_height=height,
            image_width=width,
            **geom,
        )

    return {
        "image": str(image_path),
        "grid": [int(want[0]), int(want[1])],
        "cropped_size": [height, width],
    }


def export_hpatches(spec: ModelSpec, module: torch.nn.Module, root: Path,
                    out_root: Path) -> dict:
    """Export every sequence under an HPatches-style root.

    Each `<root>/<i_*|v_*>/<n>.ppm|png|jpg` becomes `<out>/<seq>/<n>.npy`
    with its sidecar; a manifest.json lists sequences and (1, k) pairs.
    """
    if not root.is_dir():
        raise ImageError(f"dataset root not found: {root}")
    seq_dirs = sorted(p for p in root.iterdir()
                      if p.is_dir() and _SEQ_DIR.match(p.name))
    if not seq_dirs:
        raise ImageError(f"no i_*/v_* sequence directories under {root}")

    manifest = {"model": spec.name, "sequences": [], "pairs": []}
    for seq in seq_dirs:
        images = sorted(
            (p for p in seq.iterdir()
             if p.suffix.lower() in (".ppm", ".pgm", ".png", ".jpg")),
            key=lambda p: int(p.stem),
        )
        if not images:
            raise ImageError(f"sequence {seq} contains no images")
        for img in images:
            dest = out_root / seq.name / f"{int(img.stem)}.npy"
            export_image(spec, module, img, dest)
        manifest["sequences"].append(seq.name)
        for k in range(2, len(images) + 1):
            manifest["pairs"].append([seq.name, 1, k])

    out_root.mkdir(parents=True, exist_ok=True)
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    (out_root / "manifest.json").write_text(text)
    return manifest
