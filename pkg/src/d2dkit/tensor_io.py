"""Descriptor-map interchange: NPY tensors + JSON sidecars, images, HPatches dirs.

A dense descriptor map is stored as a float32 C-order NPY array of shape
(H_f, W_f, C) next to a JSON sidecar that records how the grid maps back to
source-image pixels. Everything loaded here is immutable afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, FormatError, NotFoundError, ValidationError

# HardNet/SOSNet-family fully convolutional geometry.
DEFAULT_STRIDE = 4
DEFAULT_OFFSET = 14
DEFAULT_RECEPTIVE_FIELD = 51

SIDECAR_GEOMETRY_KEYS = ("stride", "offset", "receptive_field")
UNIT_NORM_TOL = 1e-4


@dataclass(frozen=True)
class GridGeometry:
    """Affine relation between descriptor-grid indices and image pixels.

    A grid cell (gx, gy) describes a receptive_field-sized square region
    centered at pixel (stride*gx + offset, stride*gy + offset).
    """

    stride: int
    offset: int
    receptive_field: int

    def __post_init__(self):
        if self.stride < 1:
            raise ValidationError(f"stride must be >= 1, got {self.stride}")
        if self.offset < 0:
            raise ValidationError(f"offset must be >= 0, got {self.offset}")
        if self.receptive_field < 1:
            raise ValidationError(
                f"receptive_field must be >= 1, got {self.receptive_field}"
            )

    @property
    def is_default(self) -> bool:
        return (self.stride, self.offset, self.receptive_field) == (
            DEFAULT_STRIDE,
            DEFAULT_OFFSET,
            DEFAULT_RECEPTIVE_FIELD,
        )

    def to_image_xy(self, grid_x, grid_y):
        """Map grid indices (arrays or scalars) to pixel coordinates (x, y)."""
        x = self.stride * np.asarray(grid_x) + self.offset
        y = self.stride * np.asarray(grid_y) + self.offset
        return x, y

    def expected_grid_shape(self, image_height: int, image_width: int):
        """Grid shape the default architecture produces, None for custom strides."""
        if not self.is_default:
            return None
        return (image_height // 4 - 7, image_width // 4 - 7)


def default_geometry() -> GridGeometry:
    return GridGeometry(DEFAULT_STRIDE, DEFAULT_OFFSET, DEFAULT_RECEPTIVE_FIELD)


@dataclass(frozen=True)
class DescriptorMap:
    """Dense per-cell descriptors with the geometry tying cells to pixels.

    data is float32, C-order, shape (H_f, W_f, C). `normalized` records
    whether each cell was L2-normalized (unit norm or exactly zero).
    """

    data: np.ndarray
    geometry: GridGeometry
    normalized: bool
    source_image_size: tuple[int, int]  # (H, W)
    descriptor_name: str = "unknown"

    def __post_init__(self):
        data = self.data
        if data.ndim != 3:
            raise ValidationError(f"descriptor tensor must be 3-D, got {data.ndim}-D")
        hf, wf, c = data.shape
        if hf < 1 or wf < 1 or c < 1:
            raise ValidationError(f"empty descriptor tensor of shape {data.shape}")
        if data.dtype != np.float32:
            raise ValidationError(f"descriptor tensor must be float32, got {data.dtype}")
        if not np.isfinite(data).all():
            raise DataError("descriptor tensor contains non-finite values")

        h, w = self.source_image_size
        geom = self.geometry
        expected = geom.expected_grid_shape(h, w)
        if expected is not None and (hf, wf) != expected:
            raise ValidationError(
                f"grid {hf}x{wf} inconsistent with {h}x{w} image under the "
                f"default geometry (expected {expected[0]}x{expected[1]})"
            )
        # Every cell center must land inside the source image.
        max_x = geom.stride * (wf - 1) + geom.offset
        max_y = geom.stride * (hf - 1) + geom.offset
        if max_x >= w or max_y >= h:
            raise ValidationError(
                f"grid {hf}x{wf} with stride {geom.stride}, offset {geom.offset} "
                f"extends past the {h}x{w} image"
            )
        if self.normalized:
            norms = np.linalg.norm(data.astype(np.float64), axis=2)
            ok = (np.abs(norms - 1.0) <= UNIT_NORM_TOL) | (norms == 0.0)
            if not ok.all():
                raise ValidationError(
                    "map flagged normalized but cell norms are neither ~1 nor 0"
                )
        data.flags.writeable = False

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class HpatchesSequence:
    """Six images of a planar scene plus homographies mapping image 1 -> k."""

    name: str
    images: list = field(repr=False)
    homographies: list = field(repr=False)  # five 3x3 float64 arrays
    kind: str  # "viewpoint" | "illumination"

    def __post_init__(self):
        if len(self.images) != 6:
            raise ValidationError(f"expected 6 images, got {len(self.images)}")
        if len(self.homographies) != 5:
            raise ValidationError(
                f"expected 5 homographies, got {len(self.homographies)}"
            )
        for i, h in enumerate(self.homographies):
            if h.shape != (3, 3):
                raise ValidationError(f"H_1_{i + 2} is not 3x3")
            if abs(np.linalg.det(h)) <= 1e-12:
                raise ValidationError(f"H_1_{i + 2} is not invertible")

    def pairs(self):
        """(image_1, image_k, H_1_k) for k = 2..6."""
        for k in range(1, 6):
            yield self.images[0], self.images[k], self.homographies[k - 1]


def _read_sidecar(meta_path: Path) -> dict:
    try:
        raw = meta_path.read_text()
    except FileNotFoundError as e:
        raise NotFoundError(f"missing metadata sidecar {meta_path}") from e
    try:
        meta = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FormatError(f"sidecar {meta_path} is not valid JSON: {e}") from e
    if not isinstance(meta, dict):
        raise FormatError(f"sidecar {meta_path} must hold a JSON object")
    return meta


def _read_npy(tensor_path: Path) -> np.ndarray:
    """Strict NPY read: v1/v2 header, little-endian float32, C-order, 3-D."""
    if not tensor_path.exists():
        raise NotFoundError(f"missing tensor file {tensor_path}")
    with open(tensor_path, "rb") as fh:
        try:
            version = np.lib.format.read_magic(fh)
            if version == (1, 0):
                shape, fortran, dtype = np.lib.format.read_array_header_1_0(fh)
            elif version == (2, 0):
                shape, fortran, dtype = np.lib.format.read_array_header_2_0(fh)
            else:
                raise FormatError(
                    f"{tensor_path}: unsupported NPY version {version[0]}.{version[1]}"
                )
        except ValueError as e:
            raise FormatError(f"{tensor_path}: malformed NPY header: {e}") from e
        if dtype != np.dtype("<f4"):
            raise FormatError(f"{tensor_path}: dtype must be <f4, got {dtype}")
        if fortran:
            raise FormatError(f"{tensor_path}: Fortran-order arrays are not accepted")
        count = int(np.prod(shape)) if shape else 1
        data = np.fromfile(fh, dtype=dtype, count=count)
        if data.size != count:
            raise FormatError(f"{tensor_path}: truncated payload")
    return data.reshape(shape)


def _geometry_from_sidecar(meta: dict, meta_path: Path) -> GridGeometry:
    present = [k for k in SIDECAR_GEOMETRY_KEYS if k in meta]
    if not present:
        # Sidecar omits geometry entirely: fall back to the default. The
        # DescriptorMap constructor then enforces size consistency.
        return default_geometry()
    if len(present) != len(SIDECAR_GEOMETRY_KEYS):
        missing = sorted(set(SIDECAR_GEOMETRY_KEYS) - set(present))
        raise FormatError(f"sidecar {meta_path} has partial geometry, missing {missing}")
    try:
        return GridGeometry(
            int(meta["stride"]), int(meta["offset"]), int(meta["receptive_field"])
        )
    except (TypeError, ValueError) as e:
        raise FormatError(f"sidecar {meta_path}: bad geometry values: {e}") from e


def load_descriptor_map(tensor_path, meta_path=None) -> DescriptorMap:
    """Load and validate a descriptor tensor plus its JSON sidecar.

    meta_path defaults to the tensor path with a .json suffix.
    """
    tensor_path = Path(tensor_path)
    if meta_path is None:
        meta_path = tensor_path.with_suffix(".json")
    meta = _read_sidecar(Path(meta_path))
    data = _read_npy(tensor_path)
    if data.ndim != 3:
        raise FormatError(f"{tensor_path}: expected a 3-D tensor, got {data.ndim}-D")

    for key in ("normalized", "image_height", "image_width"):
        if key not in meta:
            raise FormatError(f"sidecar {meta_path} lacks required key '{key}'")
    geometry = _geometry_from_sidecar(meta, Path(meta_path))
    return DescriptorMap(
        data=data,
        geometry=geometry,
        normalized=bool(meta["normalized"]),
        source_image_size=(int(meta["image_height"]), int(meta["image_width"])),
        descriptor_name=str(meta.get("descriptor_name", "unknown")),
    )


def save_descriptor_map(dmap: DescriptorMap, tensor_path, meta_path=None):
    """Write the NPY tensor + JSON sidecar pair. Round-trips bit-identically."""
    tensor_path = Path(tensor_path)
    if meta_path is None:
        meta_path = tensor_path.with_suffix(".json")
    np.save(tensor_path, np.ascontiguousarray(dmap.data, dtype=np.float32))
    meta = {
        "stride": dmap.geometry.stride,
        "offset": dmap.geometry.offset,
        "receptive_field": dmap.geometry.receptive_field,
        "normalized": dmap.normalized,
        "image_height": dmap.source_image_size[0],
        "image_width": dmap.source_image_size[1],
        "descriptor_name": dmap.descriptor_name,
    }
    Path(meta_path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return tensor_path, Path(meta_path)


def load_image(path) -> np.ndarray:
    """Load an 8-bit image as uint8, (H, W) grayscale or (H, W, 3) RGB."""
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"missing image {path}")
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "1"):
            return np.asarray(im.convert("L"), dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Collapse RGB to ITU-R 601 luma; pass grayscale through unchanged."""
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 3:
        rgb = image.astype(np.float64)
        luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
        return np.clip(np.rint(luma), 0, 255).astype(np.uint8)
    raise ValidationError(f"expected HxW or HxWx3 image, got shape {image.shape}")


def _find_sequence_image(directory: Path, index: int) -> Path:
    for ext in (".ppm", ".pgm", ".png"):
        candidate = directory / f"{index}{ext}"
        if candidate.exists():
            return candidate
    raise NotFoundError(f"{directory}: no image {index}.ppm/.pgm/.png")


def load_hpatches_sequence(directory) -> HpatchesSequence:
    """Load a sequence directory: 1..6 images plus H_1_2..H_1_6 text files.

    kind comes from the directory-name prefix: v_* viewpoint, i_* illumination.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise NotFoundError(f"sequence directory {directory} does not exist")
    name = directory.name
    if name.startswith("v_"):
        kind = "viewpoint"
    elif name.startswith("i_"):
        kind = "illumination"
    else:
        raise ValidationError(
            f"sequence name {name!r} must start with 'v_' or 'i_'"
        )

    images = [load_image(_find_sequence_image(directory, k)) for k in range(1, 7)]
    homographies = []
    for k in range(2, 7):
        h_path = directory / f"H_1_{k}"
        if not h_path.exists():
            raise NotFoundError(f"missing homography file {h_path}")
        values = h_path.read_text().split()
        if len(values) != 9:
            raise FormatError(f"{h_path}: expected 9 numbers, got {len(values)}")
        try:
            h = np.array([float(v) for v in values], dtype=np.float64).reshape(3, 3)
        except ValueError as e:
            raise FormatError(f"{h_path}: non-numeric entry: {e}") from e
        homographies.append(h)
    return HpatchesSequence(name=name, images=images, homographies=homographies, kind=kind)


def list_hpatches_sequences(root) -> list[Path]:
    """Sequence subdirectories under an HPatches-style root, sorted by name."""
    root = Path(root)
    if not root.is_dir():
        raise NotFoundError(f"HPatches root {root} does not exist")
    dirs = sorted(
        p for p in root.iterdir()
        if p.is_dir() and (p.name.startswith("v_") or p.name.startswith("i_"))
    )
    if not dirs:
        raise NotFoundError(f"no v_*/i_* sequence directories under {root}")
    return dirs
