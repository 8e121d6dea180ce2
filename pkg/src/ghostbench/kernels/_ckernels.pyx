# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, cos, fabs
from libc.stdint cimport uint64_t, uint8_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586


cdef inline uint64_t _mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def mix64(z):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] a = np.ascontiguousarray(
        np.atleast_1d(z), dtype=np.uint64).ravel()
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty_like(a)
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        out[i] = _mix64(a[i])
    return out.reshape(np.shape(z))


def stream_words(uint64_t key, Py_ssize_t start, Py_ssize_t count):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(count, dtype=np.uint64)
    cdef Py_ssize_t j
    for j in range(count):
        out[j] = _mix64(key + GOLDEN * <uint64_t>(start + j + 1))
    return out


def cell_bits(uint64_t key, Py_ssize_t cell_count):
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] out = np.empty(cell_count, dtype=np.uint8)
    cdef Py_ssize_t c
    for c in range(cell_count):
        out[c] = <uint8_t>(_mix64(key + GOLDEN * <uint64_t>(c + 1)) >> 63)
    return out


def pattern_masks(keys, cell_of_pixel):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] k = np.ascontiguousarray(keys, dtype=np.uint64)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] cop = np.ascontiguousarray(cell_of_pixel, dtype=np.intp)
    cdef Py_ssize_t n = cop.shape[0]
    cdef Py_ssize_t n_cells = (cop.max() + 1) if n else 0
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] out = np.empty((k.shape[0], n), dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] bits = np.empty(n_cells, dtype=np.uint8)
    cdef Py_ssize_t t, c, p
    cdef uint64_t key
    with nogil:
        for t in range(k.shape[0]):
            key = k[t]
            for c in range(n_cells):
                bits[c] = <uint8_t>(_mix64(key + GOLDEN * <uint64_t>(c + 1)) >> 63)
            for p in range(n):
                out[t, p] = bits[cop[p]]
    return out


def gaussian_stream(uint64_t key, Py_ssize_t start, Py_ssize_t count):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(count, dtype=np.float64)
    cdef Py_ssize_t i
    cdef uint64_t j
    cdef double u1, u2
    for i in range(count):
        j = <uint64_t>(2 * (start + i))
        u1 = 1.0 - <double>(_mix64(key + GOLDEN * (j + 1)) >> 11) * 1.1102230246251565e-16
        u2 = <double>(_mix64(key + GOLDEN * (j + 2)) >> 11) * 1.1102230246251565e-16
        out[i] = sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)
    return out


def grad_forward(img):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] x = np.ascontiguousarray(img, dtype=np.float64)
    cdef Py_ssize_t h = x.shape[0], w = x.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dx = np.zeros((h, w))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dy = np.zeros((h, w))
    with nogil:
        for i in range(h):
            for j in range(w - 1):
                dx[i, j] = x[i, j + 1] - x[i, j]
        for i in range(h - 1):
            for j in range(w):
                dy[i, j] = x[i + 1, j] - x[i, j]
    return dx, dy


def grad_adjoint(dx_in, dy_in):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dx = np.ascontiguousarray(dx_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dy = np.ascontiguousarray(dy_in, dtype=np.float64)
    cdef Py_ssize_t h = dx.shape[0], w = dx.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((h, w))
    with nogil:
        for i in range(h):
            for j in range(w - 1):
                out[i, j] -= dx[i, j]
                out[i, j + 1] += dx[i, j]
        for i in range(h - 1):
            for j in range(w):
                out[i, j] -= dy[i, j]
                out[i + 1, j] += dy[i, j]
    return out


def shrink(v_in, double t):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v = np.ascontiguousarray(v_in, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty_like(v)
    cdef Py_ssize_t i
    cdef double a
    with nogil:
        for i in range(v.shape[0]):
            a = fabs(v[i]) - t
            if a > 0:
                out[i] = a if v[i] > 0 else -a
            else:
                out[i] = 0.0
    return out.reshape(np.shape(v_in))
