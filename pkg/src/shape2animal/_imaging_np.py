"""Numpy implementations of the raster hot kernels.

Fallback used when the compiled extension (``_imaging_ext``) is missing or
disabled via ``S2A_NO_EXT=1``. Every function here mirrors the extension's
signature and arithmetic (same expression shape, same operand order) so the
two paths agree bit-for-bit on blend/threshold/resize/rescale.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

IMPL = "numpy"


def blend(gen, orig, mask, opacity):
    """Weighted composite: opacity*(M*gen) + (1-opacity)*(M*orig) + (1-M)*orig."""
    m = mask[:, :, None]
    out = opacity * (m * gen) + (1.0 - opacity) * (m * orig) + (1.0 - m) * orig
    return np.clip(out, 0.0, 1.0)


def overlap_counts(a, b):
    """(intersection, union) pixel counts for two uint8 masks."""
    fa = a != 0
    fb = b != 0
    inter = int(np.count_nonzero(fa & fb))
    union = int(np.count_nonzero(fa | fb))
    return inter, union


def threshold(mask, thresh):
    """Binary map: 1.0 where mask >= thresh, else 0.0."""
    return (mask >= thresh).astype(np.float64)


def resize_bilinear(src, out_h, out_w):
    """Bilinear resample with pixel centers at (i+0.5)/N and edge clamping."""
    in_h, in_w = src.shape[0], src.shape[1]
    scale_y = in_h / out_h
    scale_x = in_w / out_w
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * scale_y - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * scale_x - 0.5

    y0f = np.floor(ys)
    x0f = np.floor(xs)
    ty = ys - y0f
    tx = xs - x0f
    y0 = np.clip(y0f, 0, in_h - 1).astype(np.intp)
    y1 = np.clip(y0f + 1, 0, in_h - 1).astype(np.intp)
    x0 = np.clip(x0f, 0, in_w - 1).astype(np.intp)
    x1 = np.clip(x0f + 1, 0, in_w - 1).astype(np.intp)

    tyc = ty[:, None, None]
    txc = tx[None, :, None]
    a = src[y0[:, None], x0[None, :]]
    b = src[y0[:, None], x1[None, :]]
    c = src[y1[:, None], x0[None, :]]
    d = src[y1[:, None], x1[None, :]]
    return (1.0 - tyc) * ((1.0 - txc) * a + txc * b) + tyc * ((1.0 - txc) * c + txc * d)


def rescale01(raw, lo, hi):
    """Affine map of [lo, hi] onto [0, 1]."""
    return (raw - lo) / (hi - lo)


def convolve_separable(field, kernel):
    """Separable 2-D convolution with edge-replicate padding."""
    r = kernel.shape[0] // 2
    padded = np.pad(field, ((r, r), (0, 0)), mode="edge")
    tmp = sliding_window_view(padded, kernel.shape[0], axis=0) @ kernel
    padded = np.pad(tmp, ((0, 0), (r, r)), mode="edge")
    return sliding_window_view(padded, kernel.shape[0], axis=1) @ kernel
