# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. ``_pykernels`` holds the reference twin of each."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs, isfinite
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t FNV_OFFSET = 0xcbf29ce484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001b3ULL
cdef uint64_t MASK64 = 0xffffffffffffffffULL


cdef inline uint64_t _fmix(uint64_t z) nogil:
    z ^= z >> 30
    z *= 0xbf58476d1ce4e5b9ULL
    z ^= z >> 27
    z *= 0x94d049bb133111ebULL
    z ^= z >> 31
    return z


def hash_keys(list keys, seed):
    cdef uint64_t s = <uint64_t>(int(seed) & MASK64)
    cdef Py_ssize_t n = len(keys), i
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef bytes key
    cdef uint64_t h
    cdef const unsigned char* p
    cdef Py_ssize_t j, m
    for i in range(n):
        key = keys[i]
        p = key
        m = len(key)
        h = FNV_OFFSET ^ s
        for j in range(m):
            h ^= p[j]
            h *= FNV_PRIME
        out[i] = _fmix(h)
    return out


def coalesce_rows(const int64_t[:] indptr, const int64_t[:] idx, const double[:] vals):
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t r, a, b, i, j, m, w, start
    cdef int64_t key
    cdef double v
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_idx = np.empty(idx.shape[0], dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_val = np.empty(idx.shape[0], dtype=np.float64)
    cdef int64_t[:] oi = out_idx
    cdef double[:] ov = out_val
    w = 0
    for r in range(n_rows):
        a = indptr[r]
        b = indptr[r + 1]
        start = w
        # insertion sort into the output slot; rows hold one entry per field
        for i in range(a, b):
            key = idx[i]
            v = vals[i]
            j = w - 1
            while j >= start and oi[j] > key:
                j -= 1
            if j >= start and oi[j] == key:
                ov[j] += v
                continue
            j += 1
            for m in range(w, j, -1):
                oi[m] = oi[m - 1]
                ov[m] = ov[m - 1]
            oi[j] = key
            ov[j] = v
            w += 1
        out_ptr[r + 1] = w
    return out_ptr, out_idx[:w].copy(), out_val[:w].copy()


def sgd_epoch(const int64_t[:, :] rows, const double[:] labels, double[:, :] emb,
              double[:, :] proj, double[:] bias, double lr):
    """Run one streaming logistic SGD pass in place.

    Returns ``(losses, bad_step)``; ``bad_step`` is -1 unless a loss went
    non-finite, in which case training stopped at that step.
    """
    cdef Py_ssize_t n = rows.shape[0], n_fields = rows.shape[1], d = emb.shape[1]
    cdef Py_ssize_t i, f, k
    cdef int64_t r
    cdef double z, p, g, y, loss, ek
    cdef cnp.ndarray[cnp.float64_t, ndim=1] losses = np.zeros(n, dtype=np.float64)
    cdef double[:] lv = losses
    for i in range(n):
        y = labels[i]
        z = bias[0]
        for f in range(n_fields):
            r = rows[i, f]
            if r < 0:
                continue
            for k in range(d):
                z += proj[f, k] * emb[r, k]
        if z >= 0:
            p = 1.0 / (1.0 + exp(-z))
        else:
            p = exp(z) / (1.0 + exp(z))
        loss = (z if z > 0 else 0.0) + log1p(exp(-fabs(z))) - y * z
        lv[i] = loss
        if not isfinite(loss):
            return losses, i
        g = lr * (p - y)
        for f in range(n_fields):
            r = rows[i, f]
            if r < 0:
                continue
            for k in range(d):
                ek = emb[r, k]
                emb[r, k] = ek - g * proj[f, k]
                proj[f, k] -= g * ek
        bias[0] -= g
    return losses, -1
