# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: the hot conv / pooling loops as typed C code.

Call contracts mirror ``kernels_py``. Internally the convolution works
channels-first so the innermost loop runs over the contiguous time axis
(SIMD-friendly AXPY / dot shapes); the layout shuffle happens once per call
in numpy. Accumulation order is fixed, so results are deterministic.
"""

import numpy as np

cimport numpy as cnp

NAME = "compiled"

ctypedef fused real:
    float
    double


def conv1d_fwd(real[:, :, ::1] x, real[:, :, ::1] w,
               Py_ssize_t dilation, Py_ssize_t pad_left, Py_ssize_t pad_right):
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], Ci = x.shape[2]
    cdef Py_ssize_t K = w.shape[0], Co = w.shape[2]
    cdef Py_ssize_t Lp = L + pad_left + pad_right
    cdef Py_ssize_t Lout = Lp - (K - 1) * dilation
    dtype = np.float32 if real is float else np.float64

    # channels-first padded copy of the input
    xt_arr = np.zeros((B, Ci, Lp), dtype=dtype)
    xt_arr[:, :, pad_left:pad_left + L] = np.asarray(x).transpose(0, 2, 1)
    cdef real[:, :, ::1] xt = xt_arr
    yt_arr = np.zeros((B, Co, Lout), dtype=dtype)
    cdef real[:, :, ::1] yt = yt_arr

    cdef Py_ssize_t b, o, c, k, t, off
    cdef real wv
    for b in range(B):
        for o in range(Co):
            for c in range(Ci):
                for k in range(K):
                    wv = w[k, c, o]
                    if wv == 0:
                        continue
                    off = k * dilation
                    for t in range(Lout):
                        yt[b, o, t] += wv * xt[b, c, t + off]
    return np.ascontiguousarray(yt_arr.transpose(0, 2, 1))


def conv1d_bwd(real[:, :, ::1] x, real[:, :, ::1] w, real[:, :, ::1] gy,
               Py_ssize_t dilation, Py_ssize_t pad_left, Py_ssize_t pad_right):
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], Ci = x.shape[2]
    cdef Py_ssize_t K = w.shape[0], Co = w.shape[2]
    cdef Py_ssize_t Lp = L + pad_left + pad_right
    cdef Py_ssize_t Lout = gy.shape[1]
    dtype = np.float32 if real is float else np.float64

    xt_arr = np.zeros((B, Ci, Lp), dtype=dtype)
    xt_arr[:, :, pad_left:pad_left + L] = np.asarray(x).transpose(0, 2, 1)
    gyt_arr = np.ascontiguousarray(np.asarray(gy).transpose(0, 2, 1))
    cdef real[:, :, ::1] xt = xt_arr
    cdef real[:, :, ::1] gyt = gyt_arr

    gxt_arr = np.zeros((B, Ci, Lp), dtype=dtype)
    gw_arr = np.zeros((K, Ci, Co), dtype=dtype)
    cdef real[:, :, ::1] gxt = gxt_arr
    cdef real[:, :, ::1] gwv = gw_arr

    cdef Py_ssize_t b, o, c, k, t, off
    cdef real wv, acc
    for b in range(B):
        for c in range(Ci):
            for o in range(Co):
                for k in range(K):
                    off = k * dilation
                    wv = w[k, c, o]
                    acc = 0
                    for t in range(Lout):
                        acc += xt[b, c, t + off] * gyt[b, o, t]
                        gxt[b, c, t + off] += wv * gyt[b, o, t]
                    gwv[k, c, o] += acc
    gx = np.ascontiguousarray(gxt_arr[:, :, pad_left:pad_left + L].transpose(0, 2, 1))
    return gx, gw_arr


def maxpool2_fwd(real[:, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], L = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t Lh = L // 2
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((B, Lh, C), dtype=dtype)
    arg_arr = np.zeros((B, Lh, C), dtype=np.int8)
    cdef real[:, :, ::1] y = y_arr
    cdef signed char[:, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, t, c
    cdef real a0, a1
    for b in range(B):
        for t in range(Lh):
            for c in range(C):
                a0 = x[b, 2 * t, c]
                a1 = x[b, 2 * t + 1, c]
                if a1 > a0:            # strict: first index wins ties
                    y[b, t, c] = a1
                    arg[b, t, c] = 1
                else:
                    y[b, t, c] = a0
    return y_arr, arg_arr


def maxpool2_bwd(real[:, :, ::1] gy, signed char[:, :, ::1] arg):
    cdef Py_ssize_t B = gy.shape[0], Lh = gy.shape[1], C = gy.shape[2]
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((B, Lh * 2, C), dtype=dtype)
    cdef real[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, t, c
    for b in range(B):
        for t in range(Lh):
            for c in range(C):
                gx[b, 2 * t + arg[b, t, c], c] = gy[b, t, c]
    return gx_arr
