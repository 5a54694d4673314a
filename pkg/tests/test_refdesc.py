"""Reference descriptor: geometry, determinism, equivariance, oracle."""

from __future__ import annotations

import numpy as np
import pytest

from d2dkit.errors import ValidationError
from d2dkit.refdesc import BIN_BOUNDS, DESCRIPTOR_NAME, PAD, describe_dense
from d2dkit.saliency import absolute_saliency
from d2dkit.tensor_io import default_geometry


def describe_dense_oracle(image: np.ndarray) -> np.ndarray:
    """Literal per-cell histogram: pad, slice each bin rectangle, sum."""
    f = np.asarray(image, dtype=np.float64)
    h, w = f.shape
    gx = np.zeros_like(f)
    gy = np.zeros_like(f)
    gx[:, 1:-1] = 0.5 * (f[:, 2:] - f[:, :-2])
    gy[1:-1, :] = 0.5 * (f[2:, :] - f[:-2, :])
    mag = np.hypot(gx, gy)
    theta = np.arctan2(gy, gx)
    bins = np.floor((theta + np.pi) * (8 / (2 * np.pi))).astype(np.int64) % 8

    pmag = np.zeros((h + 2 * PAD, w + 2 * PAD))
    pbin = np.full((h + 2 * PAD, w + 2 * PAD), -1, dtype=np.int64)
    pmag[PAD : PAD + h, PAD : PAD + w] = mag
    pbin[PAD : PAD + h, PAD : PAD + w] = bins

    hf, wf = h // 4 - 7, w // 4 - 7
    out = np.zeros((hf, wf, 128))
    for gy_i in range(hf):
        for gx_i in range(wf):
            oy = 4 * gy_i + 14  # padded row of the window's top-left corner
            ox = 4 * gx_i + 14
            for r in range(4):
                for c in range(4):
                    rs = slice(oy + BIN_BOUNDS[r], oy + BIN_BOUNDS[r + 1])
                    cs = slice(ox + BIN_BOUNDS[c], ox + BIN_BOUNDS[c + 1])
                    m = pmag[rs, cs]
                    b = pbin[rs, cs]
                    for o in range(8):
                        out[gy_i, gx_i, (r * 4 + c) * 8 + o] = m[b == o].sum()
    return out


def test_shape_and_metadata_256():
    rng = np.random.default_rng(131)
    img = rng.integers(0, 256, size=(256, 256), dtype=np.uint8)
    dmap = describe_dense(img)
    assert dmap.data.shape == (57, 57, 128)
    assert dmap.data.dtype == np.float32
    assert dmap.normalized is False
    assert dmap.geometry == default_geometry()
    assert dmap.source_image_size == (256, 256)
    assert dmap.descriptor_name == DESCRIPTOR_NAME


def test_shape_odd_sizes():
    rng = np.random.default_rng(137)
    img = rng.integers(0, 256, size=(257, 250), dtype=np.uint8)
    dmap = describe_dense(img)
    assert dmap.data.shape == (257 // 4 - 7, 250 // 4 - 7, 128)


def test_rejects_small_images():
    ok = np.zeros((32, 32), dtype=np.uint8)
    describe_dense(ok)  # exactly the minimum works (1x1 grid)
    for shape in [(31, 64), (64, 31), (16, 16)]:
        with pytest.raises(ValidationError):
            describe_dense(np.zeros(shape, dtype=np.uint8))
    with pytest.raises(ValidationError):
        describe_dense(np.zeros((64, 64, 3), dtype=np.uint8))


def test_constant_image_gives_zero_descriptors():
    img = np.full((64, 64), 128, dtype=np.uint8)
    dmap = describe_dense(img)
    assert np.all(dmap.data == 0.0)
    assert np.all(absolute_saliency(dmap).values == 0.0)


def test_determinism_bit_exact():
    rng = np.random.default_rng(139)
    img = rng.integers(0, 256, size=(96, 80), dtype=np.uint8)
    a = describe_dense(img)
    b = describe_dense(img.copy())
    assert np.array_equal(a.data, b.data)


def test_translation_equivariance_4px():
    rng = np.random.default_rng(149)
    img = rng.integers(0, 256, size=(96, 96), dtype=np.uint8)
    full = describe_dense(img)  # grid 17x17
    crop = describe_dense(img[4:, 4:])  # 92x92 -> grid 16x16
    # crop cell (gy, gx) sees the pixels of full cell (gy+1, gx+1); compare
    # cells whose window plus 1 px gradient margin stays inside both images
    assert np.array_equal(crop.data[3:13, 3:13], full.data[4:14, 4:14])


def test_translation_equivariance_multiple_of_stride_only():
    rng = np.random.default_rng(151)
    img = rng.integers(0, 256, size=(96, 96), dtype=np.uint8)
    full = describe_dense(img)
    crop8 = describe_dense(img[8:, :])  # vertical shift of 2 cells
    assert np.array_equal(crop8.data[3:12, 3:13], full.data[5:14, 3:13])


def test_additive_intensity_shift_invariance():
    rng = np.random.default_rng(157)
    img = rng.integers(0, 200, size=(64, 64), dtype=np.uint8)
    shifted = (img.astype(np.int64) + 40).astype(np.uint8)  # no clipping
    a = describe_dense(img)
    b = describe_dense(shifted)
    assert np.array_equal(a.data, b.data)


def test_matches_per_cell_oracle():
    rng = np.random.default_rng(163)
    img = rng.integers(0, 256, size=(48, 52), dtype=np.uint8)
    dmap = describe_dense(img)
    ref = describe_dense_oracle(img)
    assert dmap.data.shape == ref.shape
    assert np.allclose(dmap.data.astype(np.float64), ref, rtol=1e-6, atol=1e-6)


def test_descriptor_energy_tracks_texture():
    # a flat half and a noisy half: noisy cells carry more gradient mass
    rng = np.random.default_rng(167)
    img = np.full((64, 128), 100, dtype=np.uint8)
    img[:, 64:] = rng.integers(0, 256, size=(64, 64), dtype=np.uint8)
    dmap = describe_dense(img)
    energy = dmap.data.astype(np.float64).sum(axis=2)
    # grid columns fully inside the flat half vs fully inside the noisy half
    flat = energy[:, :5].mean()
    noisy = energy[:, -5:].mean()
    assert noisy > 10 * flat
