# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: xoshiro256** bulk generation, direct convolution,
2x2 max pooling.  Mirrors plab.kernels._fallback semantics; the uint64
stream is bit-identical, float kernels agree to rounding error."""

import numpy as np

from libc.stdint cimport int8_t, uint64_t

BACKEND = "compiled"


cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


def xoshiro_fill(object state_arr, Py_ssize_t n):
    cdef uint64_t[:] state = state_arr
    out_arr = np.empty(n, dtype=np.uint64)
    cdef uint64_t[:] out = out_arr
    cdef uint64_t s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3]
    cdef uint64_t t
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = _rotl(s1 * 5, 7) * 9
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out_arr


cdef inline Py_ssize_t _ceil_div(Py_ssize_t a, Py_ssize_t b) nogil:
    return (a + b - 1) // b if a > 0 else 0


def conv2d_fwd(object x_arr, object k_arr, int stride, int pad):
    x_arr = np.ascontiguousarray(x_arr)
    k_arr = np.ascontiguousarray(k_arr)
    cdef double[:, :, :, ::1] x = x_arr
    cdef double[:, :, :, ::1] k = k_arr
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t f = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    y_arr = np.zeros((b, f, ho, wo))
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t ib, jf, jc, u, v, i, j, hi, wi, i_lo, i_hi, j_lo, j_hi
    cdef double kval
    # loop order keeps the innermost walk contiguous in both x and y rows;
    # bounds are hoisted so the hot loop has no branches
    with nogil:
        for ib in range(b):
            for jf in range(f):
                for jc in range(c):
                    for u in range(kh):
                        i_lo = _ceil_div(pad - u, stride)
                        i_hi = ho
                        if (h - 1 + pad - u) // stride + 1 < i_hi:
                            i_hi = (h - 1 + pad - u) // stride + 1
                        for v in range(kw):
                            kval = k[jf, jc, u, v]
                            if kval == 0.0:
                                continue
                            j_lo = _ceil_div(pad - v, stride)
                            j_hi = wo
                            if (w - 1 + pad - v) // stride + 1 < j_hi:
                                j_hi = (w - 1 + pad - v) // stride + 1
                            if stride == 1:
                                # contiguous in j on both sides: vectorizable
                                for i in range(i_lo, i_hi):
                                    hi = i + u - pad
                                    for j in range(j_lo, j_hi):
                                        y[ib, jf, i, j] += kval * x[ib, jc, hi, j + v - pad]
                            else:
                                for i in range(i_lo, i_hi):
                                    hi = i * stride + u - pad
                                    wi = j_lo * stride + v - pad
                                    for j in range(j_lo, j_hi):
                                        y[ib, jf, i, j] += kval * x[ib, jc, hi, wi]
                                        wi += stride
    return y_arr


def conv2d_bwd(object x_arr, object k_arr, object gy_arr, int stride, int pad):
    x_arr = np.ascontiguousarray(x_arr)
    k_arr = np.ascontiguousarray(k_arr)
    gy_arr = np.ascontiguousarray(gy_arr)
    cdef double[:, :, :, ::1] x = x_arr
    cdef double[:, :, :, ::1] k = k_arr
    cdef double[:, :, :, ::1] gy = gy_arr
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t f = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ho = gy.shape[2], wo = gy.shape[3]
    gx_arr = np.zeros((b, c, h, w))
    gk_arr = np.zeros((f, c, kh, kw))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gk = gk_arr
    cdef Py_ssize_t ib, jf, jc, u, v, i, j, hi, wi, i_lo, i_hi, j_lo, j_hi
    cdef double kval, acc, g
    with nogil:
        for ib in range(b):
            for jf in range(f):
                for jc in range(c):
                    for u in range(kh):
                        i_lo = _ceil_div(pad - u, stride)
                        i_hi = ho
                        if (h - 1 + pad - u) // stride + 1 < i_hi:
                            i_hi = (h - 1 + pad - u) // stride + 1
                        for v in range(kw):
                            kval = k[jf, jc, u, v]
                            j_lo = _ceil_div(pad - v, stride)
                            j_hi = wo
                            if (w - 1 + pad - v) // stride + 1 < j_hi:
                                j_hi = (w - 1 + pad - v) // stride + 1
                            acc = 0.0
                            if stride == 1:
                                for i in range(i_lo, i_hi):
                                    hi = i + u - pad
                                    for j in range(j_lo, j_hi):
                                        g = gy[ib, jf, i, j]
                                        gx[ib, jc, hi, j + v - pad] += g * kval
                                        acc += g * x[ib, jc, hi, j + v - pad]
                            else:
                                for i in range(i_lo, i_hi):
                                    hi = i * stride + u - pad
                                    wi = j_lo * stride + v - pad
                                    for j in range(j_lo, j_hi):
                                        g = gy[ib, jf, i, j]
                                        gx[ib, jc, hi, wi] += g * kval
                                        acc += g * x[ib, jc, hi, wi]
                                        wi += stride
                            gk[jf, jc, u, v] += acc
    return gx_arr, gk_arr


def maxpool2_fwd(object x_arr):
    cdef double[:, :, :, :] x = x_arr
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    y_arr = np.empty((b, c, ho, wo))
    idx_arr = np.empty((b, c, ho, wo), dtype=np.int8)
    cdef double[:, :, :, :] y = y_arr
    cdef int8_t[:, :, :, :] idx = idx_arr
    cdef Py_ssize_t ib, jc, i, j, di, dj
    cdef double best, v
    cdef int8_t bi
    with nogil:
        for ib in range(b):
            for jc in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = x[ib, jc, 2 * i, 2 * j]
                        bi = 0
                        for di in range(2):
                            for dj in range(2):
                                if di == 0 and dj == 0:
                                    continue
                                v = x[ib, jc, 2 * i + di, 2 * j + dj]
                                if v > best:
                                    best = v
                                    bi = <int8_t> (2 * di + dj)
                        y[ib, jc, i, j] = best
                        idx[ib, jc, i, j] = bi
    return y_arr, idx_arr


def maxpool2_bwd(object gy_arr, object idx_arr, Py_ssize_t h, Py_ssize_t w):
    cdef double[:, :, :, :] gy = gy_arr
    cdef int8_t[:, :, :, :] idx = idx_arr
    cdef Py_ssize_t b = gy.shape[0], c = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    gx_arr = np.zeros((b, c, h, w))
    cdef double[:, :, :, :] gx = gx_arr
    cdef Py_ssize_t ib, jc, i, j
    cdef int8_t bi
    with nogil:
        for ib in range(b):
            for jc in range(c):
                for i in range(ho):
                    for j in range(wo):
                        bi = idx[ib, jc, i, j]
                        gx[ib, jc, 2 * i + (bi >> 1), 2 * j + (bi & 1)] = gy[ib, jc, i, j]
    return gx_arr
