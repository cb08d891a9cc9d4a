# Compiled raster hot kernels. Signatures and arithmetic mirror _imaging_np;
# keep both in sync (the test suite asserts bit-level agreement).

import numpy as np

cimport numpy as cnp

cnp.import_array()

IMPL = "compiled"


cdef extern from "math.h":
    double floor(double x) nogil


cdef inline Py_ssize_t _clampi(Py_ssize_t v, Py_ssize_t lo, Py_ssize_t hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def blend(const double[:, :, ::1] gen, const double[:, :, ::1] orig, const double[:, ::1] mask, double opacity):
    cdef Py_ssize_t h = gen.shape[0], w = gen.shape[1], nc = gen.shape[2]
    cdef Py_ssize_t i, j, c
    cdef double m, v
    out_arr = np.empty((h, w, nc), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for i in range(h):
        for j in range(w):
            m = mask[i, j]
            for c in range(nc):
                v = opacity * (m * gen[i, j, c]) + (1.0 - opacity) * (m * orig[i, j, c]) \
                    + (1.0 - m) * orig[i, j, c]
                if v < 0.0:
                    v = 0.0
                elif v > 1.0:
                    v = 1.0
                out[i, j, c] = v
    return out_arr


def overlap_counts(const unsigned char[:, ::1] a, const unsigned char[:, ::1] b):
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1]
    cdef Py_ssize_t i, j
    cdef long inter = 0, union_ = 0
    cdef int fa, fb
    for i in range(h):
        for j in range(w):
            fa = a[i, j] != 0
            fb = b[i, j] != 0
            inter += fa & fb
            union_ += fa | fb
    return inter, union_


def threshold(const double[:, ::1] mask, double thresh):
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    cdef Py_ssize_t i, j
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(h):
        for j in range(w):
            out[i, j] = 1.0 if mask[i, j] >= thresh else 0.0
    return out_arr


def resize_bilinear(const double[:, :, ::1] src, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t in_h = src.shape[0], in_w = src.shape[1], nc = src.shape[2]
    cdef double scale_y = in_h / <double> out_h
    cdef double scale_x = in_w / <double> out_w
    cdef Py_ssize_t i, j, c, y0, y1, x0, x1
    cdef double ys, xs, y0f, x0f, ty, tx
    out_arr = np.empty((out_h, out_w, nc), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for i in range(out_h):
        ys = (i + 0.5) * scale_y - 0.5
        y0f = floor(ys)
        ty = ys - y0f
        y0 = _clampi(<Py_ssize_t> y0f, 0, in_h - 1)
        y1 = _clampi(<Py_ssize_t> y0f + 1, 0, in_h - 1)
        for j in range(out_w):
            xs = (j + 0.5) * scale_x - 0.5
            x0f = floor(xs)
            tx = xs - x0f
            x0 = _clampi(<Py_ssize_t> x0f, 0, in_w - 1)
            x1 = _clampi(<Py_ssize_t> x0f + 1, 0, in_w - 1)
            for c in range(nc):
                out[i, j, c] = (1.0 - ty) * ((1.0 - tx) * src[y0, x0, c] + tx * src[y0, x1, c]) \
                    + ty * ((1.0 - tx) * src[y1, x0, c] + tx * src[y1, x1, c])
    return out_arr


def rescale01(const double[:, ::1] raw, double lo, double hi):
    cdef Py_ssize_t h = raw.shape[0], w = raw.shape[1]
    cdef Py_ssize_t i, j
    cdef double span = hi - lo
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(h):
        for j in range(w):
            out[i, j] = (raw[i, j] - lo) / span
    return out_arr


def convolve_separable(const double[:, ::1] field, const double[::1] kernel):
    cdef Py_ssize_t h = field.shape[0], w = field.shape[1], k = kernel.shape[0]
    cdef Py_ssize_t r = k // 2
    cdef Py_ssize_t i, j, t, src
    cdef double kt
    tmp_arr = np.zeros((h, w), dtype=np.float64)
    out_arr = np.zeros((h, w), dtype=np.float64)
    cdef double[:, ::1] tmp = tmp_arr
    cdef double[:, ::1] out = out_arr
    # vertical pass, edge-replicate; taps accumulate row-wise for locality
    for i in range(h):
        for t in range(k):
            src = _clampi(i + t - r, 0, h - 1)
            kt = kernel[t]
            for j in range(w):
                tmp[i, j] += field[src, j] * kt
    # horizontal pass; clamped border runs split out so the interior vectorizes
    cdef Py_ssize_t off, jlo, jhi
    for i in range(h):
        for t in range(k):
            kt = kernel[t]
            off = t - r
            jlo = -off if off < 0 else 0
            jhi = w - 1 - off if off > 0 else w - 1
            for j in range(0, jlo):
                out[i, j] += tmp[i, 0] * kt
            for j in range(jlo, jhi + 1):
                out[i, j] += tmp[i, j + off] * kt
            for j in range(jhi + 1, w):
                out[i, j] += tmp[i, w - 1] * kt
    return out_arr
