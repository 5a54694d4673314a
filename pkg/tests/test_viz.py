"""Heatmap rendering: normalization semantics, formats, warnings."""

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from d2dkit.errors import ValidationError
from d2dkit.saliency import SaliencyMap
from d2dkit.viz import (
    HEATMAP_SUFFIXES,
    VIRIDIS_LIKE,
    heatmap_views,
    normalize_unit,
    overlay_crosses,
    quantize,
    render_heatmaps,
    write_pgm,
)
from helpers import unit_geometry


def smap(values, kind) -> SaliencyMap:
    return SaliencyMap(np.asarray(values, dtype=np.float64), kind, unit_geometry())


def test_normalize_unit_range_and_constant_flag():
    v, const = normalize_unit(np.array([[1.0, 3.0], [5.0, 2.0]]))
    assert not const
    assert v.min() == 0.0 and v.max() == 1.0
    z, const = normalize_unit(np.full((3, 3), 7.0))
    assert const and np.all(z == 0.0)


def test_normalize_affine_invariance():
    rng = np.random.default_rng(171)
    values = rng.random((8, 8))
    base, _ = normalize_unit(values)
    doubled, _ = normalize_unit(2.0 * values)  # power-of-two scale: exact
    assert np.array_equal(base, doubled)
    shifted, _ = normalize_unit(values + 11.25)
    assert np.allclose(base, shifted, atol=1e-12)


def test_heatmap_views_difference_semantics():
    rng = np.random.default_rng(173)
    a = rng.random((6, 6))
    r = rng.random((6, 6))
    views = heatmap_views(smap(a, "as"), smap(r, "rs"))
    assert set(views) == set(HEATMAP_SUFFIXES)
    na, _ = normalize_unit(a)
    nr, _ = normalize_unit(r)
    want_d1, _ = normalize_unit(np.maximum(na - nr, 0.0))
    want_d2, _ = normalize_unit(np.maximum(nr - na, 0.0))
    want_prod, _ = normalize_unit(a * r)
    assert np.array_equal(views["as_minus_rs"], want_d1)
    assert np.array_equal(views["rs_minus_as"], want_d2)
    assert np.array_equal(views["d2d"], want_prod)
    for v in views.values():
        assert v.min() >= 0.0 and v.max() <= 1.0


def test_heatmap_equal_maps_yield_zero_differences():
    values = np.arange(16.0).reshape(4, 4)
    with pytest.warns(UserWarning):  # both difference maps are constant zero
        views = heatmap_views(smap(values, "as"), smap(2.0 * values, "rs"))
    assert np.all(views["as_minus_rs"] == 0.0)
    assert np.all(views["rs_minus_as"] == 0.0)


def test_heatmap_constant_input_warns_and_zeroes():
    const = smap(np.full((4, 4), 3.0), "as")
    ramp = smap(np.arange(16.0).reshape(4, 4), "rs")
    with pytest.warns(UserWarning):
        views = heatmap_views(const, ramp)
    assert np.all(views["as"] == 0.0)
    # ones-AS times ramp-RS: the product view is the normalized ramp
    assert np.array_equal(views["d2d"], normalize_unit(ramp.values * 3.0)[0])


def test_render_pgm_files(tmp_path):
    rng = np.random.default_rng(179)
    a = smap(rng.random((5, 7)), "as")
    r = smap(rng.random((5, 7)), "rs")
    paths = render_heatmaps(a, r, tmp_path / "map", fmt="pgm")
    assert [p.name for p in paths] == [f"map_{s}.pgm" for s in HEATMAP_SUFFIXES]
    for p in paths:
        blob = p.read_bytes()
        assert blob.startswith(b"P5\n7 5\n255\n")
        assert len(blob) == len(b"P5\n7 5\n255\n") + 35
    with pytest.raises(ValidationError):
        render_heatmaps(a, r, tmp_path / "x", fmt="bmp")


def test_render_png_roundtrip(tmp_path):
    rng = np.random.default_rng(181)
    a = smap(rng.random((6, 6)), "as")
    r = smap(rng.random((6, 6)), "rs")
    paths = render_heatmaps(a, r, tmp_path / "map", fmt="png")
    views = heatmap_views(a, r)
    for p, suffix in zip(paths, HEATMAP_SUFFIXES):
        with Image.open(p) as im:
            arr = np.asarray(im)
        assert arr.shape == (6, 6, 3)
        want = VIRIDIS_LIKE[quantize(views[suffix])]
        assert np.array_equal(arr, want)


def test_render_quantization_matches_oracle_within_one_step(tmp_path):
    rng = np.random.default_rng(191)
    a_vals = rng.random((9, 9))
    r_vals = rng.random((9, 9))
    paths = render_heatmaps(smap(a_vals, "as"), smap(r_vals, "rs"), tmp_path / "m")
    # independent oracle: normalize, difference, renormalize, quantize
    def norm(v):
        return (v - v.min()) / (v.max() - v.min())

    oracle = {
        "as": norm(a_vals),
        "rs": norm(r_vals),
        "d2d": norm(a_vals * r_vals),
        "as_minus_rs": norm(np.maximum(norm(a_vals) - norm(r_vals), 0.0)),
        "rs_minus_as": norm(np.maximum(norm(r_vals) - norm(a_vals), 0.0)),
    }
    header = len(b"P5\n9 9\n255\n")
    for p, suffix in zip(paths, HEATMAP_SUFFIXES):
        got = np.frombuffer(p.read_bytes()[header:], dtype=np.uint8).reshape(9, 9)
        want = np.rint(oracle[suffix] * 255).astype(np.int64)
        assert np.abs(got.astype(np.int64) - want).max() <= 1


def test_render_determinism(tmp_path):
    rng = np.random.default_rng(193)
    a = smap(rng.random((5, 5)), "as")
    r = smap(rng.random((5, 5)), "rs")
    p1 = render_heatmaps(a, r, tmp_path / "run1", fmt="png")
    p2 = render_heatmaps(a, r, tmp_path / "run2", fmt="png")
    for q1, q2 in zip(p1, p2):
        assert q1.read_bytes() == q2.read_bytes()


def test_pgm_writer_validates():
    with pytest.raises(ValidationError):
        write_pgm("/tmp/never.pgm", np.zeros((4, 4), dtype=np.float64))


def test_overlay_crosses():
    img = np.zeros((16, 16), dtype=np.uint8)
    out = overlay_crosses(img, [5, 30], [5, 2], half=1)
    assert out[5, 4] == out[5, 5] == out[5, 6] == 255
    assert out[4, 5] == out[6, 5] == 255
    assert img.sum() == 0  # original untouched
    assert out.sum() == 255 * 5  # out-of-bounds marker skipped