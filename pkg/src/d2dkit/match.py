"""Descriptor matching: mutual nearest neighbours under L2 distance.

Distances are computed on L2-normalized descriptors in float64, row blocks
at a time. Per-pair arithmetic never depends on the block size, so results
are identical for any memory budget. Ties resolve to the lowest index on
both sides. No ratio test, no geometric verification: matches are raw
mutual nearest neighbours.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detect import KeypointSet
from .errors import FormatError, NotFoundError, PreconditionError, ValidationError

MATCH_CSV_HEADER = "idx_a idx_b distance"

# ~64 MB of float64 scratch for one (rows, m, C) difference block.
_BLOCK_ELEMS = 8_000_000


@dataclass(frozen=True)
class MatchSet:
    """One-to-one index pairs into two keypoint sets plus L2 distances."""

    idx_a: np.ndarray  # (M,) int64
    idx_b: np.ndarray  # (M,) int64
    distance: np.ndarray  # (M,) float64
    counts: tuple[int, int] | None = None  # (n_a, n_b) of the matched sets

    def __post_init__(self):
        m = self.idx_a.shape[0]
        if self.idx_b.shape != (m,) or self.distance.shape != (m,):
            raise ValidationError("match columns disagree on length")
        if m > 0:
            if int(self.idx_a.min()) < 0 or int(self.idx_b.min()) < 0:
                raise ValidationError("match indices must be non-negative")
            if not np.isfinite(self.distance).all() or (self.distance < 0).any():
                raise ValidationError("match distances must be finite and >= 0")
            if np.unique(self.idx_a).size != m or np.unique(self.idx_b).size != m:
                raise ValidationError("mutual matches must be one-to-one")
            if self.counts is not None:
                n_a, n_b = self.counts
                if int(self.idx_a.max()) >= n_a or int(self.idx_b.max()) >= n_b:
                    raise ValidationError("match indices exceed declared set sizes")
        for col in (self.idx_a, self.idx_b, self.distance):
            col.flags.writeable = False

    def __len__(self) -> int:
        return self.idx_a.shape[0]


def _empty_matches(counts=None) -> MatchSet:
    return MatchSet(
        np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0),
        counts=counts,
    )


def _descriptor_block(obj, side: str) -> np.ndarray:
    if isinstance(obj, KeypointSet):
        if obj.descriptors is None:
            raise PreconditionError(f"keypoint set {side} carries no descriptors")
        return obj.descriptors
    arr = np.asarray(obj)
    if arr.ndim != 2:
        raise ValidationError(f"descriptor block {side} must be 2-D (N, C)")
    return arr


def _unit_rows(block: np.ndarray) -> np.ndarray:
    work = np.asarray(block, dtype=np.float64)
    norms = np.linalg.norm(work, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return work / norms


def _nearest(a: np.ndarray, b: np.ndarray):
    """Per-row nearest neighbour of a in b: (indices, distances)."""
    na = a.shape[0]
    rows = max(1, _BLOCK_ELEMS // (b.shape[0] * b.shape[1]))
    nn = np.empty(na, dtype=np.int64)
    dist = np.empty(na)
    for start in range(0, na, rows):
        stop = min(start + rows, na)
        diff = a[start:stop, np.newaxis, :] - b[np.newaxis, :, :]
        d = np.sqrt((diff * diff).sum(axis=2))
        idx = d.argmin(axis=1)  # first occurrence wins ties
        nn[start:stop] = idx
        dist[start:stop] = d[np.arange(stop - start), idx]
    return nn, dist


def mutual_nn(a, b) -> MatchSet:
    """Mutual nearest-neighbour matches between two descriptor sources.

    Accepts KeypointSets (their attached descriptors are used) or raw
    (N, C) blocks with a shared C. Rows are defensively L2-normalized
    before measuring distances. Two nonempty sources always produce at
    least one match: the globally closest pair is mutual.
    """
    block_a = _descriptor_block(a, "a")
    block_b = _descriptor_block(b, "b")
    counts = (block_a.shape[0], block_b.shape[0])
    if block_a.shape[0] == 0 or block_b.shape[0] == 0:
        return _empty_matches(counts)
    if block_a.shape[1] != block_b.shape[1]:
        raise ValidationError(
            f"descriptor widths differ: {block_a.shape[1]} vs {block_b.shape[1]}"
        )
    ua = _unit_rows(block_a)
    ub = _unit_rows(block_b)
    nn_ab, dist_ab = _nearest(ua, ub)
    nn_ba, _ = _nearest(ub, ua)
    ia = np.arange(block_a.shape[0])
    keep = nn_ba[nn_ab] == ia
    return MatchSet(
        idx_a=ia[keep].astype(np.int64),
        idx_b=nn_ab[keep],
        distance=dist_ab[keep],
        counts=counts,
    )


def save_matches(matches: MatchSet, path):
    path = Path(path)
    lines = [MATCH_CSV_HEADER]
    for i in range(len(matches)):
        lines.append(
            f"{int(matches.idx_a[i])} {int(matches.idx_b[i])} "
            f"{float(matches.distance[i])!r}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def load_matches(path) -> MatchSet:
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"missing match file {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != MATCH_CSV_HEADER:
        raise FormatError(f"{path}: first line must be '{MATCH_CSV_HEADER}'")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{ln}: expected 3 fields, got {len(parts)}")
        try:
            rows.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError as e:
            raise FormatError(f"{path}:{ln}: {e}") from e
    cols = list(zip(*rows)) if rows else [[], [], []]
    return MatchSet(
        idx_a=np.asarray(cols[0], dtype=np.int64),
        idx_b=np.asarray(cols[1], dtype=np.int64),
        distance=np.asarray(cols[2]),
    )
