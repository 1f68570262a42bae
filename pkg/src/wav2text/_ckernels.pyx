# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh
from libc.string cimport memcpy

cnp.import_array()


def im2col(const double[:, :, ::1] x, Py_ssize_t width, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t l_out = (length - width) // stride + 1
    out_arr = np.empty((n, c * width, l_out))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, f, t
    with nogil:
        for b in range(n):
            for ch in range(c):
                for f in range(width):
                    for t in range(l_out):
                        out[b, ch * width + f, t] = x[b, ch, t * stride + f]
    return out_arr


def col2im(cols, Py_ssize_t channels, Py_ssize_t width, Py_ssize_t length, Py_ssize_t stride):
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64)
    cdef Py_ssize_t n = cv.shape[0], l_out = cv.shape[2]
    out_arr = np.zeros((n, channels, length))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, f, t
    with nogil:
        for b in range(n):
            for ch in range(channels):
                for f in range(width):
                    for t in range(l_out):
                        out[b, ch, t * stride + f] += cv[b, ch * width + f, t]
    return out_arr


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def lstm_forward(z, c_prev):
    cdef Py_ssize_t hid = c_prev.shape[c_prev.ndim - 1]
    shape = c_prev.shape
    cdef const double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64).reshape(-1, 4 * hid)
    cdef const double[:, ::1] cp = np.ascontiguousarray(c_prev, dtype=np.float64).reshape(-1, hid)
    cdef Py_ssize_t rows = zv.shape[0]
    gates_arr = np.empty((rows, 4 * hid))
    c_arr = np.empty((rows, hid))
    tc_arr = np.empty((rows, hid))
    h_arr = np.empty((rows, hid))
    cdef double[:, ::1] gv = gates_arr
    cdef double[:, ::1] cv = c_arr
    cdef double[:, ::1] tv = tc_arr
    cdef double[:, ::1] hv = h_arr
    cdef Py_ssize_t r, k
    cdef double i, f, g, o, c
    with nogil:
        for r in range(rows):
            for k in range(hid):
                i = _sigmoid(zv[r, k])
                f = _sigmoid(zv[r, hid + k])
                g = tanh(zv[r, 2 * hid + k])
                o = _sigmoid(zv[r, 3 * hid + k])
                gv[r, k] = i
                gv[r, hid + k] = f
                gv[r, 2 * hid + k] = g
                gv[r, 3 * hid + k] = o
                c = f * cp[r, k] + i * g
                cv[r, k] = c
                tv[r, k] = tanh(c)
                hv[r, k] = o * tv[r, k]
    zshape = shape[:-1] + (4 * hid,)
    return (gates_arr.reshape(zshape), c_arr.reshape(shape),
            tc_arr.reshape(shape), h_arr.reshape(shape))


def lstm_state_backward(dc, gates, c_prev):
    cdef Py_ssize_t hid = c_prev.shape[c_prev.ndim - 1]
    shape = c_prev.shape
    cdef const double[:, ::1] dcv = np.ascontiguousarray(dc, dtype=np.float64).reshape(-1, hid)
    cdef const double[:, ::1] gv = np.ascontiguousarray(gates, dtype=np.float64).reshape(-1, 4 * hid)
    cdef const double[:, ::1] cp = np.ascontiguousarray(c_prev, dtype=np.float64).reshape(-1, hid)
    cdef Py_ssize_t rows = gv.shape[0]
    dz_arr = np.zeros((rows, 4 * hid))
    dcp_arr = np.empty((rows, hid))
    cdef double[:, ::1] dz = dz_arr
    cdef double[:, ::1] dcp = dcp_arr
    cdef Py_ssize_t r, k
    cdef double i, f, g, d
    with nogil:
        for r in range(rows):
            for k in range(hid):
                i = gv[r, k]
                f = gv[r, hid + k]
                g = gv[r, 2 * hid + k]
                d = dcv[r, k]
                dz[r, k] = d * g * i * (1.0 - i)
                dz[r, hid + k] = d * cp[r, k] * f * (1.0 - f)
                dz[r, 2 * hid + k] = d * i * (1.0 - g * g)
                dcp[r, k] = d * f
    return dz_arr.reshape(shape[:-1] + (4 * hid,)), dcp_arr.reshape(shape)


def lstm_output_backward(dh, gates, tanh_c):
    cdef Py_ssize_t hid = tanh_c.shape[tanh_c.ndim - 1]
    shape = tanh_c.shape
    cdef const double[:, ::1] dhv = np.ascontiguousarray(dh, dtype=np.float64).reshape(-1, hid)
    cdef const double[:, ::1] gv = np.ascontiguousarray(gates, dtype=np.float64).reshape(-1, 4 * hid)
    cdef const double[:, ::1] tv = np.ascontiguousarray(tanh_c, dtype=np.float64).reshape(-1, hid)
    cdef Py_ssize_t rows = gv.shape[0]
    dz_arr = np.zeros((rows, 4 * hid))
    dc_arr = np.empty((rows, hid))
    cdef double[:, ::1] dz = dz_arr
    cdef double[:, ::1] dcv = dc_arr
    cdef Py_ssize_t r, k
    cdef double o, t, d
    with nogil:
        for r in range(rows):
            for k in range(hid):
                o = gv[r, 3 * hid + k]
                t = tv[r, k]
                d = dhv[r, k]
                dz[r, 3 * hid + k] = d * t * o * (1.0 - o)
                dcv[r, k] = d * o * (1.0 - t * t)
    return dz_arr.reshape(shape[:-1] + (4 * hid,)), dc_arr.reshape(shape)


def levenshtein(a, b):
    cdef cnp.int64_t[::1] av = np.ascontiguousarray(a, dtype=np.int64)
    cdef cnp.int64_t[::1] bv = np.ascontiguousarray(b, dtype=np.int64)
    if av.shape[0] < bv.shape[0]:
        av, bv = bv, av
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i, j
    prev_arr = np.arange(m + 1, dtype=np.int64)
    cur_arr = np.empty(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] prev = prev_arr
    cdef cnp.int64_t[::1] cur = cur_arr
    cdef cnp.int64_t best, cand
    with nogil:
        for i in range(1, n + 1):
            cur[0] = i
            for j in range(1, m + 1):
                best = prev[j] + 1
                cand = cur[j - 1] + 1
                if cand < best:
                    best = cand
                cand = prev[j - 1] + (av[i - 1] != bv[j - 1])
                if cand < best:
                    best = cand
                cur[j] = best
            memcpy(&prev[0], &cur[0], (m + 1) * sizeof(cnp.int64_t))
    return int(prev[m])
