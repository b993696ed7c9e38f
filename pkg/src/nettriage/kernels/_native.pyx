# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twin of :mod:`nettriage.kernels.numpy_backend`.

Same contract, same scan and accumulation order, so outputs are bitwise
identical to the fallback.  The win over NumPy comes from fusing the zero
pad into the gather (no padded intermediate) and from single-pass pooling.
"""

import numpy as np

cimport cython
cimport numpy as cnp


ctypedef fused floating:
    float
    double


def im2col3x3(floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n * h * w, 9 * c), dtype=dtype)
    cdef floating[:, ::1] cols = out
    cdef Py_ssize_t b, i, j, ky, kx, ch, row, col0, si, sj
    for b in range(n):
        for i in range(h):
            for j in range(w):
                row = (b * h + i) * w + j
                for ky in range(3):
                    si = i + ky - 1
                    if si < 0 or si >= h:
                        continue
                    for kx in range(3):
                        sj = j + kx - 1
                        if sj < 0 or sj >= w:
                            continue
                        col0 = (ky * 3 + kx) * c
                        for ch in range(c):
                            cols[row, col0 + ch] = x[b, si, sj, ch]
    return out


def col2im3x3(floating[:, ::1] cols, Py_ssize_t n, Py_ssize_t h, Py_ssize_t w,
              Py_ssize_t c):
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, p, q, ky, kx, ch, i, j, row, col0
    cdef floating acc
    for b in range(n):
        for p in range(h):
            for q in range(w):
                for ky in range(3):
                    i = p - ky + 1
                    if i < 0 or i >= h:
                        continue
                    for kx in range(3):
                        j = q - kx + 1
                        if j < 0 or j >= w:
                            continue
                        row = (b * h + i) * w + j
                        col0 = (ky * 3 + kx) * c
                        for ch in range(c):
                            dx[b, p, q, ch] = dx[b, p, q, ch] + cols[row, col0 + ch]
    return out


def maxpool2x2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    dtype = np.float32 if floating is float else np.float64
    yout = np.empty((n, ho, wo, c), dtype=dtype)
    iout = np.empty((n, ho, wo, c), dtype=np.uint8)
    cdef floating[:, :, :, ::1] y = yout
    cdef cnp.uint8_t[:, :, :, ::1] idx = iout
    cdef Py_ssize_t b, i, j, ch, dy_, dx_, k
    cdef floating best, v
    cdef cnp.uint8_t bk
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for ch in range(c):
                    best = x[b, 2 * i, 2 * j, ch]
                    bk = 0
                    for k in range(1, 4):
                        dy_ = k >> 1
                        dx_ = k & 1
                        v = x[b, 2 * i + dy_, 2 * j + dx_, ch]
                        if v > best:
                            best = v
                            bk = <cnp.uint8_t> k
                    y[b, i, j, ch] = best
                    idx[b, i, j, ch] = bk
    return yout, iout


def maxpool2x2_backward(floating[:, :, :, ::1] dy,
                        cnp.uint8_t[:, :, :, ::1] idx,
                        Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2], c = dy.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, i, j, ch, k
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for ch in range(c):
                    k = idx[b, i, j, ch]
                    dx[b, 2 * i + (k >> 1), 2 * j + (k & 1), ch] = dy[b, i, j, ch]
    return out
