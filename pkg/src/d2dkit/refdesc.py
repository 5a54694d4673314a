"""Self-contained dense reference descriptor (no learned weights).

For each 51x51 window at stride 4 (grid center (4x+14, 4y+14)), the
descriptor is a gradient-orientation histogram: 4x4 spatial bins times 8
hard-assigned orientation bins = 128 channels, accumulating gradient
magnitudes. Emitted raw (unnormalized) so downstream channel-spread scoring
stays meaningful.

Box sums use per-window sliding reductions rather than integral-image
differencing: every window sums its own pixels in the same order, which
makes 4k-pixel translations shift the output grid bit-exactly.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError
from .tensor_io import DescriptorMap, default_geometry

DESCRIPTOR_NAME = "refdesc-ghist-128"
MIN_SIDE = 32
WINDOW = 51
PAD = WINDOW // 2
N_ORIENTATIONS = 8
# 51 px split into 4 spatial bins: widths 12, 13, 13, 13
BIN_BOUNDS = tuple(i * WINDOW // 4 for i in range(5))


def _gradients(f: np.ndarray):
    """Central differences, zero on the outermost rows/cols."""
    gx = np.zeros_like(f)
    gy = np.zeros_like(f)
    gx[:, 1:-1] = 0.5 * (f[:, 2:] - f[:, :-2])
    gy[1:-1, :] = 0.5 * (f[2:, :] - f[:-2, :])
    return gx, gy


def describe_dense(image: np.ndarray) -> DescriptorMap:
    """Dense 128-channel descriptor map of a grayscale image.

    The image must be at least 32x32. Output shape is
    (H//4 - 7, W//4 - 7, 128) under the default grid geometry.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValidationError(f"expected a grayscale image, got shape {img.shape}")
    h, w = img.shape
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValidationError(
            f"image {h}x{w} is below the {MIN_SIDE}x{MIN_SIDE} minimum"
        )
    f = img.astype(np.float64)
    gx, gy = _gradients(f)
    mag = np.hypot(gx, gy)
    # bins over (-pi, pi], theta = +pi wraps onto the -pi bin
    theta = np.arctan2(gy, gx)
    bins = np.floor((theta + np.pi) * (N_ORIENTATIONS / (2.0 * np.pi))).astype(np.int64)
    bins %= N_ORIENTATIONS

    hf, wf = h // 4 - 7, w // 4 - 7
    padded = np.zeros((N_ORIENTATIONS, h + 2 * PAD, w + 2 * PAD))
    for o in range(N_ORIENTATIONS):
        padded[o, PAD : PAD + h, PAD : PAD + w] = np.where(bins == o, mag, 0.0)

    out = np.empty((hf, wf, 16 * N_ORIENTATIONS))
    for o in range(N_ORIENTATIONS):
        for r in range(4):
            bh = BIN_BOUNDS[r + 1] - BIN_BOUNDS[r]
            rows = sliding_window_view(padded[o], bh, axis=0).sum(axis=-1)
            for c in range(4):
                bw = BIN_BOUNDS[c + 1] - BIN_BOUNDS[c]
                boxes = sliding_window_view(rows, bw, axis=1).sum(axis=-1)
                # cell (gy, gx) centers at image pixel (4gx+14, 4gy+14); its
                # window starts at padded index (4gy+14, 4gx+14)
                y0 = 14 + BIN_BOUNDS[r]
                x0 = 14 + BIN_BOUNDS[c]
                channel = (r * 4 + c) * N_ORIENTATIONS + o
                out[:, :, channel] = boxes[
                    y0 : y0 + 4 * hf : 4, x0 : x0 + 4 * wf : 4
                ]
    return DescriptorMap(
        data=out.astype(np.float32),
        geometry=default_geometry(),
        normalized=False,
        source_image_size=(h, w),
        descriptor_name=DESCRIPTOR_NAME,
    )
