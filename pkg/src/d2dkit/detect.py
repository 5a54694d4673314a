"""Keypoint selection from score grids.

Keypoints live at descriptor-grid cell centers; there is no sub-pixel
refinement. Selection is deterministic: ties in score break toward the
smaller row-major grid index (grid_y first, then grid_x), which makes the
top-k set a prefix of the top-(k+1) set.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import DegenerateInputError, FormatError, NotFoundError, ValidationError
from .saliency import SaliencyMap
from .tensor_io import DescriptorMap

KEYPOINT_CSV_HEADER = "x y score grid_x grid_y"


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    score: float
    grid_x: int
    grid_y: int


@dataclass(frozen=True)
class KeypointSet:
    """Column-oriented keypoints, optionally with unit-norm descriptors.

    Rows are ordered by non-increasing score and no two rows share a grid
    cell; both are enforced here.
    """

    x: np.ndarray  # (N,) int64 pixel column
    y: np.ndarray  # (N,) int64 pixel row
    score: np.ndarray  # (N,) float64
    grid_x: np.ndarray  # (N,) int64
    grid_y: np.ndarray  # (N,) int64
    descriptors: np.ndarray | None = None  # (N, C) float32, L2-normalized rows
    image_size: tuple[int, int] | None = None  # (H, W)

    def __post_init__(self):
        n = self.x.shape[0]
        for name in ("y", "score", "grid_x", "grid_y"):
            col = getattr(self, name)
            if col.shape != (n,):
                raise ValidationError(f"column {name} has shape {col.shape}, want ({n},)")
        if not np.isfinite(self.score).all():
            raise ValidationError("keypoint scores must be finite")
        if n > 1:
            if np.any(np.diff(self.score) > 0):
                raise ValidationError("keypoint scores must be non-increasing")
            cells = np.stack([self.grid_y, self.grid_x], axis=1)
            if np.unique(cells, axis=0).shape[0] != n:
                raise ValidationError("duplicate grid cells in keypoint set")
        if self.descriptors is not None:
            if self.descriptors.ndim != 2 or self.descriptors.shape[0] != n:
                raise ValidationError(
                    f"descriptor block shape {self.descriptors.shape} does not "
                    f"match {n} keypoints"
                )
        if self.image_size is not None and n > 0:
            h, w = self.image_size
            if (
                int(self.x.min()) < 0
                or int(self.y.min()) < 0
                or int(self.x.max()) >= w
                or int(self.y.max()) >= h
            ):
                raise ValidationError(f"keypoints fall outside the {h}x{w} image")
        for col in (self.x, self.y, self.score, self.grid_x, self.grid_y):
            col.flags.writeable = False
        if self.descriptors is not None:
            self.descriptors.flags.writeable = False

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> Keypoint:
        return Keypoint(
            int(self.x[i]), int(self.y[i]), float(self.score[i]),
            int(self.grid_x[i]), int(self.grid_y[i]),
        )

    def xy(self) -> np.ndarray:
        """(N, 2) float64 pixel coordinates, columns (x, y)."""
        return np.stack([self.x, self.y], axis=1).astype(np.float64)

    def take(self, keep: np.ndarray) -> "KeypointSet":
        """Row subset in the original order (keep is a bool mask or indices)."""
        return KeypointSet(
            x=self.x[keep].copy(),
            y=self.y[keep].copy(),
            score=self.score[keep].copy(),
            grid_x=self.grid_x[keep].copy(),
            grid_y=self.grid_y[keep].copy(),
            descriptors=None if self.descriptors is None else self.descriptors[keep].copy(),
            image_size=self.image_size,
        )


def _normalize_rows(block: np.ndarray) -> np.ndarray:
    """L2-normalize rows in float64; zero rows stay zero. Returns float32."""
    work = block.astype(np.float64)
    norms = np.linalg.norm(work, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return (work / norms).astype(np.float32)


def extract_topk(
    smap: SaliencyMap,
    dmap: DescriptorMap | None,
    k: int,
    mask: np.ndarray | None = None,
) -> KeypointSet:
    """Select the k highest-scoring cells (all surviving cells if fewer).

    Ordering is by descending score with row-major grid index as the
    tie-break, so equal scores select the top-left cell first. `mask`
    restricts candidates. When a descriptor map is given, each keypoint
    carries its cell descriptor, L2-normalized here if the map is raw.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if dmap is not None:
        if dmap.grid_shape != smap.grid_shape:
            raise ValidationError(
                f"score grid {smap.grid_shape} vs descriptor grid {dmap.grid_shape}"
            )
        if dmap.geometry != smap.geometry:
            raise ValidationError("score and descriptor grids disagree on geometry")
    hf, wf = smap.grid_shape
    flat = smap.values.ravel()
    order = np.argsort(-flat, kind="stable")
    if mask is not None:
        if mask.shape != (hf, wf):
            raise ValidationError(f"mask shape {mask.shape} does not match grid")
        order = order[mask.ravel()[order]]
    order = order[: min(k, order.size)]

    gy, gx = np.divmod(order, wf)
    px, py = smap.geometry.to_image_xy(gx, gy)
    descriptors = None
    if dmap is not None:
        block = dmap.data[gy, gx, :]
        descriptors = block.astype(np.float32) if dmap.normalized else _normalize_rows(block)
    return KeypointSet(
        x=px.astype(np.int64),
        y=py.astype(np.int64),
        score=flat[order].astype(np.float64),
        grid_x=gx.astype(np.int64),
        grid_y=gy.astype(np.int64),
        descriptors=descriptors,
        image_size=smap.source_image_size,
    )


def rescale_threshold(d2d: SaliencyMap, original: SaliencyMap, alpha: float) -> float:
    """Carry a detector's score threshold over to product-reweighted scores.

    The combined score reweights the original score S_O, so a threshold
    alpha tuned for S_O becomes (E[S * S_O] / E[S_O]) * alpha, expectations
    taken uniformly over all cells including borders.
    """
    if original.grid_shape != d2d.grid_shape:
        raise ValidationError(
            f"shape mismatch: {d2d.grid_shape} vs {original.grid_shape}"
        )
    denom = original.values.mean()
    if denom == 0.0:
        raise DegenerateInputError("original score map has zero mean")
    numer = (d2d.values * original.values).mean()
    return numer / denom * alpha


def _strict_max_mask(values: np.ndarray, radius: int) -> np.ndarray:
    """Cells strictly greater than every neighbour in the (2r+1)^2 window.

    The center is excluded from the neighbourhood and borders compare
    against -inf outside the grid, so plateau cells are all rejected.
    """
    side = 2 * radius + 1
    footprint = np.ones((side, side), dtype=bool)
    footprint[radius, radius] = False
    neighbour_max = maximum_filter(
        values, footprint=footprint, mode="constant", cval=-np.inf
    )
    return values > neighbour_max


def nms(smap: SaliencyMap, radius: int) -> SaliencyMap:
    """Zero out cells that are not strict maxima of their neighbourhood.

    radius is in grid units; radius 0 is the identity.
    """
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return smap
    keep = _strict_max_mask(smap.values, radius)
    return SaliencyMap(
        np.where(keep, smap.values, 0.0), smap.kind, smap.geometry,
        smap.source_image_size,
    )


def filter_maxima(d2d: SaliencyMap, candidates: KeypointSet | None = None) -> KeypointSet:
    """Keep candidates whose combined score strictly exceeds the grid mean.

    Candidates default to the strict local maxima of the map itself
    (radius-1 suppression). A constant map keeps nothing: the strict
    inequality never holds. Order is preserved.
    """
    if candidates is None:
        candidates = extract_topk(
            d2d, None, d2d.values.size, mask=_strict_max_mask(d2d.values, 1)
        )
    hf, wf = d2d.grid_shape
    if len(candidates) > 0:
        if (
            int(candidates.grid_x.min()) < 0
            or int(candidates.grid_y.min()) < 0
            or int(candidates.grid_x.max()) >= wf
            or int(candidates.grid_y.max()) >= hf
        ):
            raise ValidationError("candidate grid indices fall outside the score grid")
    mean = d2d.values.mean()
    keep = d2d.values[candidates.grid_y, candidates.grid_x] > mean
    return candidates.take(keep)


def save_keypoints(kps: KeypointSet, csv_path, desc_path=None):
    """Write keypoints as whitespace CSV; descriptors go to an NPY sidecar."""
    csv_path = Path(csv_path)
    lines = [KEYPOINT_CSV_HEADER]
    for i in range(len(kps)):
        lines.append(
            f"{int(kps.x[i])} {int(kps.y[i])} {float(kps.score[i])!r} "
            f"{int(kps.grid_x[i])} {int(kps.grid_y[i])}"
        )
    csv_path.write_text("\n".join(lines) + "\n")
    if desc_path is not None:
        if kps.descriptors is None:
            raise ValidationError("keypoint set has no descriptors to save")
        np.save(Path(desc_path), np.ascontiguousarray(kps.descriptors, dtype=np.float32))
    return csv_path


def load_keypoints(csv_path, desc_path=None, image_size=None) -> KeypointSet:
    """Read keypoints written by save_keypoints."""
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise NotFoundError(f"missing keypoint file {csv_path}")
    lines = csv_path.read_text().splitlines()
    if not lines or lines[0].strip() != KEYPOINT_CSV_HEADER:
        raise FormatError(
            f"{csv_path}: first line must be '{KEYPOINT_CSV_HEADER}'"
        )
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(f"{csv_path}:{ln}: expected 5 fields, got {len(parts)}")
        try:
            rows.append(
                (int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3]), int(parts[4]))
            )
        except ValueError as e:
            raise FormatError(f"{csv_path}:{ln}: {e}") from e
    descriptors = None
    if desc_path is not None:
        descriptors = np.load(Path(desc_path))
        if descriptors.ndim != 2 or descriptors.shape[0] != len(rows):
            raise FormatError(
                f"{desc_path}: descriptor block does not match {len(rows)} keypoints"
            )
        descriptors = np.ascontiguousarray(descriptors, dtype=np.float32)
    cols = list(zip(*rows)) if rows else [[], [], [], [], []]
    return KeypointSet(
        x=np.asarray(cols[0], dtype=np.int64),
        y=np.asarray(cols[1], dtype=np.int64),
        score=np.asarray(cols[2], dtype=np.float64),
        grid_x=np.asarray(cols[3], dtype=np.int64),
        grid_y=np.asarray(cols[4], dtype=np.int64),
        descriptors=descriptors,
        image_size=image_size,
    )
