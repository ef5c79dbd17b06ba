# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row-wise editing kernels. Mirrors rfedit._kernels_py."""

import numpy as np

cimport cython
from cython cimport floating
from libc.math cimport exp


def orthogonal_rows(floating[:, ::1] v, floating[:, ::1] b):
    cdef Py_ssize_t n = v.shape[0], d = v.shape[1], i, j
    cdef double dot, nn, coef
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, d), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef floating proj
    for i in range(n):
        dot = 0.0
        nn = 0.0
        for j in range(d):
            dot += <double>v[i, j] * <double>b[i, j]
            nn += <double>b[i, j] * <double>b[i, j]
        if nn == 0.0:
            for j in range(d):
                out[i, j] = v[i, j]
        else:
            coef = dot / nn
            for j in range(d):
                proj = <floating>(coef * <double>b[i, j])
                out[i, j] = v[i, j] - proj
    return out_arr


def fine_edit(floating[:, ::1] base, floating[:, ::1] edit, floating[:, ::1] prior,
              double lam, mask=None):
    cdef Py_ssize_t n = base.shape[0], d = base.shape[1], i, j
    out_arr = np.array(base, copy=True)
    if lam == 0.0:
        return out_arr
    cdef floating[:, ::1] out = out_arr
    cdef floating[:, ::1] orth = orthogonal_rows(edit, prior)
    cdef floating flam = <floating>lam
    cdef const unsigned char[::1] m
    cdef bint masked = mask is not None
    if masked:
        m = np.ascontiguousarray(mask, dtype=np.uint8)
    for i in range(n):
        if masked and m[i] == 0:
            continue
        for j in range(d):
            out[i, j] = base[i, j] + flam * orth[i, j]
    return out_arr


def first_token_map(floating[:, :, ::1] q, floating[:, :, ::1] k, double scale):
    """Head-averaged softmax(q k^T * scale)[:, :, 0] -> (n_query,)."""
    cdef Py_ssize_t h = q.shape[0], n = q.shape[1], dh = q.shape[2], L = k.shape[1]
    cdef Py_ssize_t a, i, l, j
    cdef double s, mx, denom, first
    cdef double[::1] logits = np.empty(L, dtype=np.float64)
    acc_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] acc = acc_arr
    for a in range(h):
        for i in range(n):
            mx = -1e300
            for l in range(L):
                s = 0.0
                for j in range(dh):
                    s += <double>q[a, i, j] * <double>k[a, l, j]
                s *= scale
                logits[l] = s
                if s > mx:
                    mx = s
            denom = 0.0
            for l in range(L):
                denom += exp(logits[l] - mx)
            first = exp(logits[0] - mx) / denom
            acc[i] += first
    for i in range(n):
        acc[i] /= h
    return acc_arr
