# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the streaming hot kernels (see _pykernels)."""

import numpy as np
from libc.math cimport sqrt, floor, fabs


def ks_statistic(const double[::1] a, const double[::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0]
    cdef Py_ssize_t i = 0, j = 0
    cdef double v, d, best = 0.0
    if n == 0 or m == 0:
        return 0.0
    while i < n or j < m:
        if j >= m or (i < n and a[i] <= b[j]):
            v = a[i]
        else:
            v = b[j]
        while i < n and a[i] <= v:
            i += 1
        while j < m and b[j] <= v:
            j += 1
        d = fabs(<double>i / n - <double>j / m)
        if d > best:
            best = d
    return best


def sorted_replace(double[::1] arr, double old, double new):
    cdef Py_ssize_t n = arr.shape[0]
    cdef Py_ssize_t lo = 0, hi = n, mid, i, k
    while lo < hi:
        mid = (lo + hi) // 2
        if arr[mid] < old:
            lo = mid + 1
        else:
            hi = mid
    i = lo
    if i >= n or arr[i] != old:
        raise KeyError(old)
    k = i
    while k + 1 < n and arr[k + 1] < new:
        arr[k] = arr[k + 1]
        k += 1
    while k > 0 and arr[k - 1] >= new:
        arr[k] = arr[k - 1]
        k -= 1
    arr[k] = new


cdef double _feature_hellinger(const double[:, :] ref, const double[:, :] win,
                               Py_ssize_t f, int bins, long[::1] cr, long[::1] cw):
    cdef Py_ssize_t nr = ref.shape[0], nw = win.shape[0], t
    cdef double lo = ref[0, f], hi = ref[0, f], x, d, s = 0.0
    cdef long idx
    for t in range(nr):
        x = ref[t, f]
        if x < lo: lo = x
        if x > hi: hi = x
    for t in range(nw):
        x = win[t, f]
        if x < lo: lo = x
        if x > hi: hi = x
    if not hi > lo:
        return 0.0
    for t in range(bins):
        cr[t] = 0
        cw[t] = 0
    for t in range(nr):
        idx = <long>floor((ref[t, f] - lo) / (hi - lo) * bins)
        if idx < 0: idx = 0
        if idx > bins - 1: idx = bins - 1
        cr[idx] += 1
    for t in range(nw):
        idx = <long>floor((win[t, f] - lo) / (hi - lo) * bins)
        if idx < 0: idx = 0
        if idx > bins - 1: idx = bins - 1
        cw[idx] += 1
    for t in range(bins):
        d = sqrt(<double>cr[t] / nr) - sqrt(<double>cw[t] / nw)
        s += d * d
    return sqrt(s)


def hellinger_per_feature(const double[:, :] ref, const double[:, :] win, int bins):
    cdef Py_ssize_t nf = ref.shape[1], f
    out = np.zeros(nf)
    cdef double[::1] o = out
    cdef long[::1] cr = np.zeros(bins, dtype=np.int_)
    cdef long[::1] cw = np.zeros(bins, dtype=np.int_)
    for f in range(nf):
        o[f] = _feature_hellinger(ref, win, f, bins, cr, cw)
    return out


def hellinger_mean(const double[:, :] ref, const double[:, :] win, int bins):
    return float(np.sum(hellinger_per_feature(ref, win, bins)) / ref.shape[1])
