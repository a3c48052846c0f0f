# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; `_pykernels` holds the numpy equivalents."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def first_detections(const cnp.int64_t[::1] photon_counts,
                     const cnp.intp_t[::1] src,
                     const double[::1] z,
                     const double[::1] nominal_ns,
                     double sigma_ns,
                     const cnp.int64_t[::1] background_counts,
                     const double[::1] u,
                     double window_ns,
                     double tdc_ps):
    """Earliest quantised candidate time per trial, -1 where a trial has none."""
    cdef Py_ssize_t n_trials = photon_counts.shape[0]
    out = np.empty(n_trials, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    cdef Py_ssize_t i, j, ip = 0, ib = 0
    cdef cnp.int64_t best, idx
    cdef double t
    with nogil:
        for i in range(n_trials):
            best = -1
            for j in range(photon_counts[i]):
                t = nominal_ns[src[ip]] + sigma_ns * z[ip]
                idx = <cnp.int64_t>floor(t * 1000.0 / tdc_ps)
                if idx < 0:
                    idx = 0
                if best < 0 or idx < best:
                    best = idx
                ip += 1
            for j in range(background_counts[i]):
                t = u[ib] * window_ns
                idx = <cnp.int64_t>floor(t * 1000.0 / tdc_ps)
                if idx < 0:
                    idx = 0
                if best < 0 or idx < best:
                    best = idx
                ib += 1
            res[i] = best
    return out


def window_sums(const cnp.int64_t[::1] counts,
                const cnp.int64_t[::1] starts,
                const cnp.int64_t[::1] stops):
    """Sum of ``counts[start:stop]`` for each window."""
    cdef Py_ssize_t n = starts.shape[0]
    out = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    cdef Py_ssize_t w, b
    cdef cnp.int64_t acc
    with nogil:
        for w in range(n):
            acc = 0
            for b in range(starts[w], stops[w]):
                acc += counts[b]
            res[w] = acc
    return out
