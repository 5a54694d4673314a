"""Homography-based evaluation: matching accuracy and repeatability.

Protocols:
  - mma: fraction of mutual-NN matches whose reprojection error is within a
    pixel threshold, swept over thresholds (1..10 px by default).
  - repeatability: fraction of one image's keypoints that project within
    eps pixels of the other image's keypoints, greedy one-to-one assignment.
  - repeatability_table: cross-detector repeatability, rows normalized by
    the diagonal.
  - ablation_run / evaluate_sequences: batch drivers aggregating per-pair
    results with a fixed-order reduction, so thread counts never change
    output bytes.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detect import KeypointSet, extract_topk
from .errors import DegenerateInputError, ValidationError
from .match import MatchSet, mutual_nn
from .saliency import RsWindow, compute_score_map
from .tensor_io import DescriptorMap, HpatchesSequence

DEFAULT_THRESHOLDS = tuple(range(1, 11))
DEGENERATE_W = 1e-12


def _project_raw(h: np.ndarray, points: np.ndarray):
    """Apply h to (N, 2) points. Returns (projected, |w| per point)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3):
        raise ValidationError(f"homography must be 3x3, got {h.shape}")
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError(f"points must be (N, 2), got {pts.shape}")
    x, y = pts[:, 0], pts[:, 1]
    # spelled out to keep the arithmetic identical regardless of BLAS backend
    px = h[0, 0] * x + h[0, 1] * y + h[0, 2]
    py = h[1, 0] * x + h[1, 1] * y + h[1, 2]
    w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    absw = np.abs(w)
    safe = np.where(absw < DEGENERATE_W, 1.0, w)
    out = np.stack([px / safe, py / safe], axis=1)
    return (out[0] if single else out), (absw[0] if single else absw)


def project(h: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Planar projection of points by a homography.

    Accepts a single (x, y) point or an (N, 2) block. A homogeneous
    w-component smaller than 1e-12 in magnitude is refused.
    """
    out, absw = _project_raw(h, points)
    if np.any(np.atleast_1d(absw) < DEGENERATE_W):
        raise DegenerateInputError("projection denominator vanished (|w| < 1e-12)")
    return out


def mma(
    matches: MatchSet,
    a: KeypointSet,
    b: KeypointSet,
    h: np.ndarray,
    thresholds=DEFAULT_THRESHOLDS,
) -> dict:
    """Matching accuracy per threshold: share of matches whose projected
    source point lies within t pixels (inclusive) of its matched point.

    An empty match set scores 0 at every threshold.
    """
    thresholds = list(thresholds)
    if not thresholds or any(t <= 0 for t in thresholds):
        raise ValidationError("thresholds must be a non-empty list of positive pixels")
    if len(matches) == 0:
        return {t: 0.0 for t in thresholds}
    if int(matches.idx_a.max()) >= len(a) or int(matches.idx_b.max()) >= len(b):
        raise ValidationError("match indices exceed keypoint set sizes")
    pa = a.xy()[matches.idx_a]
    pb = b.xy()[matches.idx_b]
    proj = project(h, pa)
    diff = proj - pb
    err = np.sqrt((diff * diff).sum(axis=1))
    return {t: float((err <= t).mean()) for t in thresholds}


def repeatability(
    a: KeypointSet,
    b: KeypointSet,
    h: np.ndarray,
    eps: float = 3.0,
    image_size: tuple[int, int] | None = None,
) -> float:
    """Share of a's keypoints that, projected by h into b's image, land
    within eps pixels of a distinct keypoint of b.

    Assignment is greedy one-to-one by ascending distance (ties by index
    pair). The denominator counts only projections that land inside b's
    bounds; degenerate projections are skipped per point. Returns 0 when
    nothing projects in-bounds.
    """
    if eps <= 0:
        raise ValidationError(f"eps must be > 0, got {eps}")
    size = image_size if image_size is not None else b.image_size
    if size is None:
        raise ValidationError("image bounds unknown: pass image_size")
    if len(a) == 0:
        return 0.0
    proj, absw = _project_raw(h, a.xy())
    height, width = size
    inb = (
        (absw >= DEGENERATE_W)
        & (proj[:, 0] >= 0.0)
        & (proj[:, 0] < width)
        & (proj[:, 1] >= 0.0)
        & (proj[:, 1] < height)
    )
    denom = int(inb.sum())
    if denom == 0 or len(b) == 0:
        return 0.0
    pa = proj[inb]
    pb = b.xy()
    diff = pa[:, np.newaxis, :] - pb[np.newaxis, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    ii, jj = np.nonzero(dist <= eps)
    dd = dist[ii, jj]
    order = np.lexsort((jj, ii, dd))  # distance, then source, then target index
    a_free = np.ones(pa.shape[0], dtype=bool)
    b_free = np.ones(pb.shape[0], dtype=bool)
    assigned = 0
    for idx in order:
        i, j = ii[idx], jj[idx]
        if a_free[i] and b_free[j]:
            a_free[i] = False
            b_free[j] = False
            assigned += 1
    return assigned / denom


@dataclass(frozen=True)
class RepeatabilityTable:
    """Cross-detector repeatability, each row normalized by its diagonal."""

    detectors: list
    values: np.ndarray  # (n, n) normalized
    raw: np.ndarray  # (n, n) pre-normalization means

    def __post_init__(self):
        n = len(self.detectors)
        if self.values.shape != (n, n) or self.raw.shape != (n, n):
            raise ValidationError("repeatability matrices must be square over detectors")
        if (self.values < 0).any():
            raise ValidationError("normalized repeatability must be >= 0")
        if not np.all(np.diag(self.values) == 1.0):
            raise ValidationError("normalized diagonal must be exactly 1")
        self.values.flags.writeable = False
        self.raw.flags.writeable = False

    def to_json_dict(self) -> dict:
        return {
            "detectors": list(self.detectors),
            "normalized": [[float(v) for v in row] for row in self.values],
            "raw": [[float(v) for v in row] for row in self.raw],
        }


def repeatability_table(
    detector_outputs: dict,
    homographies: list,
    eps: float = 3.0,
    image_sizes: list | None = None,
) -> RepeatabilityTable:
    """Pairwise cross-repeatability between detectors on shared image pairs.

    detector_outputs maps a detector name to its per-pair (kps_a, kps_b)
    tuples; homographies holds one 3x3 per pair. Entry (src, dst) averages
    repeatability(src's kps_a, dst's kps_b) over pairs, then every row is
    divided by its diagonal entry.
    """
    names = list(detector_outputs.keys())
    if not names:
        raise ValidationError("no detectors given")
    n_pairs = len(homographies)
    for name in names:
        if len(detector_outputs[name]) != n_pairs:
            raise ValidationError(
                f"detector {name!r} ran on {len(detector_outputs[name])} pairs, "
                f"expected {n_pairs}"
            )
    if n_pairs == 0:
        raise ValidationError("no pairs to evaluate")
    n = len(names)
    raw = np.zeros((n, n))
    for i, src in enumerate(names):
        for j, dst in enumerate(names):
            total = 0.0
            for p in range(n_pairs):
                kps_a = detector_outputs[src][p][0]
                kps_b = detector_outputs[dst][p][1]
                size = image_sizes[p] if image_sizes is not None else None
                total += repeatability(kps_a, kps_b, homographies[p], eps, size)
            raw[i, j] = total / n_pairs
    diag = np.diag(raw)
    if np.any(diag == 0.0):
        dead = [names[i] for i in range(n) if diag[i] == 0.0]
        raise DegenerateInputError(f"zero self-repeatability for {dead}")
    values = raw / diag[:, np.newaxis]
    return RepeatabilityTable(detectors=names, values=values, raw=raw.copy())


@dataclass(frozen=True)
class PairResult:
    """Per-pair outcome used by the aggregate reports."""

    sequence: str
    kind: str  # "viewpoint" | "illumination"
    pair_index: int  # k of the (1, k) pair
    n_keypoints_a: int
    n_keypoints_b: int
    n_matches: int
    accuracies: dict  # threshold -> accuracy
    excluded: bool  # True when either image yielded zero keypoints
    degenerate: bool = False  # constant score map seen


def _scope_stats(results: list, thresholds) -> dict:
    included = [r for r in results if not r.excluded]
    stats = {
        "pairs": len(results),
        "excluded_pairs": sum(1 for r in results if r.excluded),
        "degenerate_pairs": sum(1 for r in results if r.degenerate),
        "mean_keypoints": (
            float(np.mean([(r.n_keypoints_a + r.n_keypoints_b) / 2.0 for r in results]))
            if results
            else 0.0
        ),
        "mean_matches": (
            float(np.mean([r.n_matches for r in results])) if results else 0.0
        ),
    }
    stats["match_ratio"] = (
        stats["mean_matches"] / stats["mean_keypoints"]
        if stats["mean_keypoints"] > 0
        else 0.0
    )
    if included:
        stats["mma"] = {
            int(t): float(np.mean([r.accuracies[t] for r in included]))
            for t in thresholds
        }
        stats["mean_mma"] = float(np.mean(list(stats["mma"].values())))
    else:
        stats["mma"] = {int(t): 0.0 for t in thresholds}
        stats["mean_mma"] = 0.0
    return stats


@dataclass
class EvalReport:
    """MMA curves plus keypoint/match statistics, split by sequence kind."""

    k: int
    mode: str
    thresholds: tuple
    parameters: dict = field(default_factory=dict)
    pair_results: list = field(default_factory=list)

    def scope(self, which: str) -> dict:
        if which == "overall":
            subset = self.pair_results
        else:
            subset = [r for r in self.pair_results if r.kind == which]
        return _scope_stats(subset, self.thresholds)

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "mode": self.mode,
            "thresholds": [int(t) for t in self.thresholds],
            "parameters": self.parameters,
            "overall": self.scope("overall"),
            "viewpoint": self.scope("viewpoint"),
            "illumination": self.scope("illumination"),
            "pairs": [
                {
                    "sequence": r.sequence,
                    "kind": r.kind,
                    "pair_index": r.pair_index,
                    "keypoints_a": r.n_keypoints_a,
                    "keypoints_b": r.n_keypoints_b,
                    "matches": r.n_matches,
                    "excluded": r.excluded,
                    "degenerate": r.degenerate,
                    "mma": {int(t): r.accuracies[t] for t in self.thresholds},
                }
                for r in self.pair_results
            ],
        }

    def save_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n")
        return path

    def save_csv(self, path) -> Path:
        """Threshold curve table: overall/viewpoint/illumination columns."""
        path = Path(path)
        overall = self.scope("overall")["mma"]
        view = self.scope("viewpoint")["mma"]
        illum = self.scope("illumination")["mma"]
        lines = ["threshold mma_overall mma_viewpoint mma_illumination"]
        for t in self.thresholds:
            lines.append(f"{int(t)} {overall[t]!r} {view[t]!r} {illum[t]!r}")
        path.write_text("\n".join(lines) + "\n")
        return path


def evaluate_pair(
    dmap_a: DescriptorMap,
    dmap_b: DescriptorMap,
    h: np.ndarray,
    mode: str,
    k: int,
    window: RsWindow | None = None,
    thresholds=DEFAULT_THRESHOLDS,
):
    """Score, detect, match and grade one image pair. Returns the pieces."""
    smap_a = compute_score_map(dmap_a, mode, window)
    smap_b = compute_score_map(dmap_b, mode, window)
    degenerate = bool(
        smap_a.values.max() == smap_a.values.min()
        or smap_b.values.max() == smap_b.values.min()
    )
    kps_a = extract_topk(smap_a, dmap_a, k)
    kps_b = extract_topk(smap_b, dmap_b, k)
    if len(kps_a) == 0 or len(kps_b) == 0:
        matches = mutual_nn(np.zeros((0, 1)), np.zeros((0, 1)))
        accs = {t: 0.0 for t in thresholds}
        return kps_a, kps_b, matches, accs, True, degenerate
    matches = mutual_nn(kps_a, kps_b)
    accs = mma(matches, kps_a, kps_b, h, thresholds)
    return kps_a, kps_b, matches, accs, False, degenerate


def evaluate_sequences(
    sequences: list,
    descriptor_for,
    mode: str,
    k: int,
    window: RsWindow | None = None,
    thresholds=DEFAULT_THRESHOLDS,
    threads: int = 1,
    parameters: dict | None = None,
) -> EvalReport:
    """Evaluate (1, k) pairs of each sequence and aggregate a report.

    descriptor_for(sequence, image_index) -> DescriptorMap supplies dense
    descriptors (image_index is 0-based). Sequences run in a thread pool;
    results aggregate in sequence order regardless of thread count.
    """
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")

    def run_sequence(seq: HpatchesSequence):
        maps = [descriptor_for(seq, i) for i in range(6)]
        results = []
        for pair_k in range(2, 7):
            kps_a, kps_b, matches, accs, excluded, degenerate = evaluate_pair(
                maps[0], maps[pair_k - 1], seq.homographies[pair_k - 2],
                mode, k, window, thresholds,
            )
            results.append(
                PairResult(
                    seq.name, seq.kind, pair_k,
                    len(kps_a), len(kps_b), len(matches),
                    accs, excluded, degenerate,
                )
            )
        return results

    if threads == 1:
        per_seq = [run_sequence(s) for s in sequences]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_seq = list(pool.map(run_sequence, sequences))

    report = EvalReport(
        k=k,
        mode=mode,
        thresholds=tuple(thresholds),
        parameters=parameters or {},
        pair_results=[r for seq_results in per_seq for r in seq_results],
    )
    return report


@dataclass(frozen=True)
class AblationResult:
    mode: str
    k: int
    mean_mma: float
    pairs_used: int
    excluded_pairs: int
    degenerate_pairs: int


def ablation_run(
    map_pairs: list,
    mode: str,
    k: int,
    window: RsWindow | None = None,
    thresholds=DEFAULT_THRESHOLDS,
) -> AblationResult:
    """Mean MMA over thresholds and pairs for one score mode.

    map_pairs holds (dmap_a, dmap_b, h) triples. Pairs where either image
    yields zero keypoints are excluded from the accuracy average; pairs
    with a constant score map are flagged as degenerate but still scored.
    """
    if not map_pairs:
        raise ValidationError("no map pairs given")
    means = []
    excluded = 0
    degenerate = 0
    for dmap_a, dmap_b, h in map_pairs:
        _, _, _, accs, exc, deg = evaluate_pair(
            dmap_a, dmap_b, h, mode, k, window, thresholds
        )
        degenerate += int(deg)
        if exc:
            excluded += 1
            continue
        means.append(float(np.mean([accs[t] for t in thresholds])))
    mean_mma = float(np.mean(means)) if means else 0.0
    return AblationResult(
        mode=mode,
        k=k,
        mean_mma=mean_mma,
        pairs_used=len(means),
        excluded_pairs=excluded,
        degenerate_pairs=degenerate,
    )
