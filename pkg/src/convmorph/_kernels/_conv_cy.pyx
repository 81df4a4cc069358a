# cython: language_level=3
"""Compiled convolution kernels.

Same contract as convmorph._kernels._py; plain typed loops over the padded
input. Skipping zero taps pays off because morphing works with filters whose
support is much smaller than their kernel (zero-padded parents, center-tap
initializations).
"""
import numpy as np

cimport cython


@cython.boundscheck(False)
@cython.wraparound(False)
def conv2d_same(const double[:, :, :, ::1] f, const double[:, :, ::1] b):
    cdef Py_ssize_t c_out = f.shape[0], c_in = f.shape[1]
    cdef Py_ssize_t kh = f.shape[2], kw = f.shape[3]
    cdef Py_ssize_t h = b.shape[1], w = b.shape[2]
    pad_arr = np.zeros((c_in, h + kh - 1, w + kw - 1))
    pad_arr[:, (kh - 1) // 2 : (kh - 1) // 2 + h, (kw - 1) // 2 : (kw - 1) // 2 + w] = np.asarray(b)
    out_arr = np.zeros((c_out, h, w))
    cdef double[:, :, ::1] padded = pad_arr
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, c, u, v, y, x
    cdef double tap
    for o in range(c_out):
        for c in range(c_in):
            for u in range(kh):
                for v in range(kw):
                    tap = f[o, c, u, v]
                    if tap == 0.0:
                        continue
                    for y in range(h):
                        for x in range(w):
                            out[o, y, x] += tap * padded[c, y + u, x + v]
    return out_arr


@cython.boundscheck(False)
@cython.wraparound(False)
def conv2d_compose(const double[:, :, :, ::1] f2, const double[:, :, :, ::1] f1):
    cdef Py_ssize_t c_out = f2.shape[0], c_mid = f2.shape[1]
    cdef Py_ssize_t k2h = f2.shape[2], k2w = f2.shape[3]
    cdef Py_ssize_t c_in = f1.shape[1]
    cdef Py_ssize_t k1h = f1.shape[2], k1w = f1.shape[3]
    out_arr = np.zeros((c_out, c_in, k1h + k2h - 1, k1w + k2w - 1))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t o, c, l, vy, vx, uy, ux
    cdef double tap
    for o in range(c_out):
        for l in range(c_mid):
            for vy in range(k2h):
                for vx in range(k2w):
                    tap = f2[o, l, vy, vx]
                    if tap == 0.0:
                        continue
                    for c in range(c_in):
                        for uy in range(k1h):
                            for ux in range(k1w):
                                out[o, c, vy + uy, vx + ux] += tap * f1[l, c, uy, ux]
    return out_arr
