"""The compiled extension and the numpy fallback must agree.

blend/threshold/resize/rescale/counts are required to match bit-for-bit
(same expression order, FMA contraction disabled); the separable convolution
may differ in summation order, so it gets a 1e-12 budget.
"""

import numpy as np
import pytest

from shape2animal import _imaging_np as knp
from shape2animal.imaging import gaussian_kernel1d

kext = pytest.importorskip(
    "shape2animal._imaging_ext", reason="compiled kernels not built"
)

rng = np.random.default_rng(2024)


def c(arr):
    return np.ascontiguousarray(arr)


@pytest.mark.parametrize("trial", range(5))
def test_blend_bit_identical(trial):
    h, w = rng.integers(4, 40, size=2)
    gen = rng.random((h, w, 3))
    orig = rng.random((h, w, 3))
    mask = rng.random((h, w))
    opacity = float(rng.random())
    a = knp.blend(gen, orig, mask, opacity)
    b = kext.blend(c(gen), c(orig), c(mask), opacity)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("out_side", [3, 16, 50])
def test_resize_bit_identical(out_side):
    h, w = rng.integers(2, 33, size=2)
    src = rng.random((h, w, 3))
    a = knp.resize_bilinear(src, out_side, out_side)
    b = kext.resize_bilinear(c(src), out_side, out_side)
    assert np.array_equal(a, b)


def test_threshold_bit_identical():
    m = rng.random((25, 31))
    for t in (0.1, 0.5, 1.0):
        assert np.array_equal(knp.threshold(m, t), kext.threshold(c(m), t))


def test_rescale_bit_identical():
    raw = rng.random((21, 17)) * 40.0 - 7.0
    lo, hi = float(raw.min()), float(raw.max())
    assert np.array_equal(knp.rescale01(raw, lo, hi), kext.rescale01(c(raw), lo, hi))


def test_overlap_counts_equal():
    for _ in range(20):
        a = (rng.random((16, 16)) < rng.uniform(0, 1)).astype(np.uint8)
        b = (rng.random((16, 16)) < rng.uniform(0, 1)).astype(np.uint8)
        assert knp.overlap_counts(a, b) == kext.overlap_counts(c(a), c(b))


@pytest.mark.parametrize("radius", [0.5, 1.0, 3.0])
def test_convolve_agreement(radius):
    field = rng.random((40, 40))
    kernel = gaussian_kernel1d(radius)
    a = knp.convolve_separable(field, kernel)
    b = kext.convolve_separable(c(field), kernel)
    assert np.abs(a - b).max() < 1e-12
