"""Keypoint selection: ordering, tie-breaks, filters, serialization."""

from __future__ import annotations

import numpy as np
import pytest

from d2dkit.detect import (
    KeypointSet,
    extract_topk,
    filter_maxima,
    load_keypoints,
    nms,
    rescale_threshold,
    save_keypoints,
)
from d2dkit.errors import DegenerateInputError, FormatError, ValidationError
from d2dkit.saliency import RsWindow, SaliencyMap, compute_score_map, relative_saliency
from helpers import make_dmap, random_dmap, unit_geometry


def smap_of(values, geometry=None, image_size=None) -> SaliencyMap:
    arr = np.asarray(values, dtype=np.float64)
    if geometry is None:
        geometry = unit_geometry()
    if image_size is None:
        image_size = arr.shape
    return SaliencyMap(arr, "d2d", geometry, image_size)


def test_extract_topk_orders_by_score_then_row_major():
    smap = smap_of([[1.0, 2.0], [2.0, 3.0]])
    kps = extract_topk(smap, None, 4)
    assert list(kps.score) == [3.0, 2.0, 2.0, 1.0]
    # the two 2.0 ties resolve row-major: (y=0,x=1) before (y=1,x=0)
    assert list(zip(kps.grid_x, kps.grid_y)) == [(1, 1), (1, 0), (0, 1), (0, 0)]


def test_extract_topk_k_clamps_to_grid():
    smap = smap_of(np.arange(6.0).reshape(2, 3))
    assert len(extract_topk(smap, None, 100)) == 6
    assert len(extract_topk(smap, None, 2)) == 2
    with pytest.raises(ValidationError):
        extract_topk(smap, None, 0)


def test_extract_topk_prefix_property():
    rng = np.random.default_rng(2)
    values = rng.integers(0, 4, size=(6, 6)).astype(np.float64)  # many ties
    smap = smap_of(values)
    for k in range(1, 36):
        a = extract_topk(smap, None, k)
        b = extract_topk(smap, None, k + 1)
        assert np.array_equal(a.grid_x, b.grid_x[:k])
        assert np.array_equal(a.grid_y, b.grid_y[:k])


def test_extract_topk_pixel_coordinates_default_grid():
    rng = np.random.default_rng(3)
    dmap = random_dmap(rng, 5, 6, 4, default_geom=True)
    smap = compute_score_map(dmap, "as")
    kps = extract_topk(smap, dmap, 30)
    assert np.array_equal(kps.x, 4 * kps.grid_x + 14)
    assert np.array_equal(kps.y, 4 * kps.grid_y + 14)
    assert kps.image_size == dmap.source_image_size


def test_extract_topk_attaches_normalized_descriptors():
    data = np.zeros((1, 3, 2), dtype=np.float32)
    data[0, 0] = [3.0, 4.0]
    data[0, 1] = [0.0, 0.0]  # zero cell stays zero after normalization
    data[0, 2] = [1.0, 0.0]
    dmap = make_dmap(data)
    smap = smap_of([[3.0, 2.0, 1.0]])
    kps = extract_topk(smap, dmap, 3)
    assert kps.descriptors is not None and kps.descriptors.dtype == np.float32
    assert np.allclose(kps.descriptors[0], [0.6, 0.8], atol=1e-7)
    assert np.array_equal(kps.descriptors[1], [0.0, 0.0])
    assert np.array_equal(kps.descriptors[2], [1.0, 0.0])


def test_extract_topk_passes_through_prenormalized():
    rng = np.random.default_rng(5)
    dmap = random_dmap(rng, 4, 4, 8, normalized=True)
    smap = relative_saliency(dmap, RsWindow(radius=1, sample_step=1))
    kps = extract_topk(smap, dmap, 5)
    for i in range(len(kps)):
        expected = dmap.data[kps.grid_y[i], kps.grid_x[i]]
        assert np.array_equal(kps.descriptors[i], expected)


def test_extract_topk_mask_restricts_candidates():
    smap = smap_of([[5.0, 4.0], [3.0, 2.0]])
    mask = np.array([[False, True], [True, False]])
    kps = extract_topk(smap, None, 10, mask=mask)
    assert list(kps.score) == [4.0, 3.0]
    with pytest.raises(ValidationError):
        extract_topk(smap, None, 1, mask=np.ones((3, 3), dtype=bool))


def test_extract_topk_grid_mismatch():
    rng = np.random.default_rng(9)
    dmap = random_dmap(rng, 4, 4, 2)
    other = random_dmap(rng, 5, 4, 2)
    smap = compute_score_map(other, "as")
    with pytest.raises(ValidationError):
        extract_topk(smap, dmap, 1)


def test_extract_topk_scale_invariance():
    rng = np.random.default_rng(10)
    values = rng.random((8, 8))
    base = extract_topk(smap_of(values), None, 20)
    for lam in (0.5, 3.0, 100.0):
        scaled = extract_topk(smap_of(lam * values), None, 20)
        assert np.array_equal(base.grid_x, scaled.grid_x)
        assert np.array_equal(base.grid_y, scaled.grid_y)


def test_rescale_threshold_constant_combined_is_exact():
    ones = smap_of(np.ones((4, 4)))
    for c in (0.25, 3.0, 117.5):
        combined = smap_of(np.full((4, 4), c))
        for alpha in (0.1, 1.0, 7.25):
            assert rescale_threshold(combined, ones, alpha) == c * alpha


def test_rescale_threshold_identity_when_combined_is_ones():
    rng = np.random.default_rng(13)
    original = smap_of(rng.random((6, 7)) + 0.1)
    ones = smap_of(np.ones((6, 7)))
    alpha = 0.625
    assert rescale_threshold(ones, original, alpha) == alpha


def test_rescale_threshold_homogeneity():
    rng = np.random.default_rng(14)
    d2d = smap_of(rng.random((5, 5)))
    original = smap_of(rng.random((5, 5)) + 0.5)
    alpha = 0.015
    base = rescale_threshold(d2d, original, alpha)
    assert rescale_threshold(smap_of(0.5 * d2d.values), original, alpha) == 0.5 * base
    scaled = rescale_threshold(smap_of(3.0 * d2d.values), original, alpha)
    assert scaled == pytest.approx(3.0 * base, rel=1e-12)


def test_rescale_threshold_zero_mean_is_degenerate():
    zeros = smap_of(np.zeros((3, 3)))
    with pytest.raises(DegenerateInputError):
        rescale_threshold(zeros, zeros, 1.0)


def test_filter_maxima_keeps_scores_strictly_above_mean():
    values = np.zeros((5, 5))
    values[1, 1] = 4.0
    values[3, 3] = 0.5  # strict local max, above the grid mean of 0.18
    smap = smap_of(values)
    kept = filter_maxima(smap)
    cells = set(zip(kept.grid_x, kept.grid_y))
    assert (1, 1) in cells
    assert (3, 3) in cells  # 0.5 > mean 0.18


def test_filter_maxima_drops_below_mean_candidates():
    values = np.zeros((4, 4))
    values[0, 0] = 10.0
    values[2, 2] = 0.1  # strict local max, but under the mean (10.1/16)
    kept = filter_maxima(smap_of(values))
    cells = list(zip(kept.grid_x, kept.grid_y))
    assert cells == [(0, 0)]


def test_filter_maxima_constant_map_keeps_nothing():
    kept = filter_maxima(smap_of(np.full((3, 3), 2.0)))
    assert len(kept) == 0


def test_filter_maxima_explicit_candidates_preserve_order():
    values = np.arange(9.0).reshape(3, 3)  # mean 4
    smap = smap_of(values)
    candidates = extract_topk(smap, None, 9)
    kept = filter_maxima(smap, candidates)
    assert list(kept.score) == [8.0, 7.0, 6.0, 5.0]
    bad = extract_topk(smap_of(np.ones((4, 4))), None, 16)
    with pytest.raises(ValidationError):
        filter_maxima(smap, bad)  # indices run off the 3x3 grid


def test_filter_maxima_scale_invariant():
    rng = np.random.default_rng(17)
    values = rng.random((9, 9))
    base = filter_maxima(smap_of(values))
    for lam in (0.5, 3.0, 100.0):
        scaled = filter_maxima(smap_of(lam * values))
        assert np.array_equal(base.grid_x, scaled.grid_x)
        assert np.array_equal(base.grid_y, scaled.grid_y)


def test_nms_zeroes_non_maxima():
    values = np.zeros((5, 5))
    values[2, 2] = 3.0
    values[0, 4] = 2.0  # border peak survives: outside counts as -inf
    out = nms(smap_of(values), 1)
    assert out.values[2, 2] == 3.0
    assert out.values[0, 4] == 2.0
    assert out.values.sum() == 5.0  # everything else zeroed


def test_nms_radius_zero_is_identity():
    rng = np.random.default_rng(19)
    smap = smap_of(rng.random((6, 6)))
    out = nms(smap, 0)
    assert np.array_equal(out.values, smap.values)
    with pytest.raises(ValidationError):
        nms(smap, -1)


def test_nms_rejects_plateaus():
    values = np.zeros((4, 4))
    values[1, 1] = values[1, 2] = 5.0  # twin peak: neither is strict
    out = nms(smap_of(values), 1)
    assert out.values[1, 1] == 0.0 and out.values[1, 2] == 0.0


def test_nms_matches_brute_force_oracle():
    rng = np.random.default_rng(20)
    values = rng.random((10, 12))
    out = nms(smap_of(values), 1)
    for y in range(10):
        for x in range(12):
            neigh = [
                values[yy, xx]
                for yy in range(max(0, y - 1), min(10, y + 2))
                for xx in range(max(0, x - 1), min(12, x + 2))
                if (yy, xx) != (y, x)
            ]
            expected = values[y, x] if values[y, x] > max(neigh) else 0.0
            assert out.values[y, x] == expected


def test_nms_ramp_keeps_only_global_max():
    values = np.arange(25.0).reshape(5, 5)
    out = nms(smap_of(values), 5)
    assert out.values[4, 4] == 24.0
    assert out.values.sum() == 24.0


def test_keypoint_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(21)
    dmap = random_dmap(rng, 8, 9, 16, default_geom=True)
    smap = compute_score_map(dmap, "both")
    kps = extract_topk(smap, dmap, 20)
    csv_path = tmp_path / "kp.csv"
    desc_path = tmp_path / "kp_desc.npy"
    save_keypoints(kps, csv_path, desc_path)
    back = load_keypoints(csv_path, desc_path, image_size=kps.image_size)
    assert len(back) == len(kps)
    assert np.array_equal(back.x, kps.x)
    assert np.array_equal(back.y, kps.y)
    assert np.array_equal(back.score, kps.score)  # repr round-trips exactly
    assert np.array_equal(back.grid_x, kps.grid_x)
    assert np.array_equal(back.grid_y, kps.grid_y)
    assert np.array_equal(back.descriptors, kps.descriptors)


def test_keypoint_csv_empty_set(tmp_path):
    empty = KeypointSet(
        x=np.zeros(0, dtype=np.int64),
        y=np.zeros(0, dtype=np.int64),
        score=np.zeros(0),
        grid_x=np.zeros(0, dtype=np.int64),
        grid_y=np.zeros(0, dtype=np.int64),
    )
    path = tmp_path / "empty.csv"
    save_keypoints(empty, path)
    assert len(load_keypoints(path)) == 0


def test_keypoint_set_enforces_invariants():
    with pytest.raises(ValidationError):
        KeypointSet(  # ascending scores
            x=np.array([0, 1]), y=np.array([0, 0]),
            score=np.array([1.0, 2.0]),
            grid_x=np.array([0, 1]), grid_y=np.array([0, 0]),
        )
    with pytest.raises(ValidationError):
        KeypointSet(  # duplicate cell
            x=np.array([0, 0]), y=np.array([0, 0]),
            score=np.array([2.0, 1.0]),
            grid_x=np.array([0, 0]), grid_y=np.array([0, 0]),
        )


def test_keypoint_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("col_a col_b\n")
    with pytest.raises(FormatError):
        load_keypoints(path)
    path.write_text("x y score grid_x grid_y\n1 2 0.5 1\n")
    with pytest.raises(FormatError):
        load_keypoints(path)
