# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU recurrence. Same contract as ``_gru_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


# exp-based forms: libm tanh is several times slower than exp, and both
# saturate correctly when exp overflows to inf.
cdef inline double _sigmoid(double x) nogil:
    return 1.0 / (1.0 + exp(-x))


cdef inline double _tanh(double x) nogil:
    return 2.0 / (1.0 + exp(-2.0 * x)) - 1.0


def gru_forward(const double[:, :, ::1] ax, const double[:, ::1] wh, const double[:, ::1] h0):
    cdef Py_ssize_t nb = ax.shape[0], nt = ax.shape[1], h = ax.shape[2] // 3
    cdef Py_ssize_t h3 = 3 * h, bi, t, i, j
    cdef double sz, sr, sn, hp_j, z
    hs_arr = np.empty((nb, nt, h))
    cache_arr = np.empty((nb, nt, h3))
    rh_arr = np.empty(h)
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] cache = cache_arr
    cdef double[::1] rh_v = rh_arr
    cdef double* rh = &rh_v[0]
    cdef const double* w = &wh[0, 0]
    cdef const double* a
    cdef const double* hp
    cdef double* c
    cdef double* out
    if nb == 0 or nt == 0:
        return hs_arr, cache_arr
    with nogil:
        for bi in range(nb):
            hp = &h0[bi, 0]
            for t in range(nt):
                a = &ax[bi, t, 0]
                c = &cache[bi, t, 0]
                out = &hs[bi, t, 0]
                # update and reset gates
                for i in range(h):
                    sz = a[i]
                    sr = a[h + i]
                    for j in range(h):
                        hp_j = hp[j]
                        sz = sz + hp_j * w[j * h3 + i]
                        sr = sr + hp_j * w[j * h3 + h + i]
                    c[i] = _sigmoid(sz)
                    c[h + i] = _sigmoid(sr)
                for j in range(h):
                    rh[j] = c[h + j] * hp[j]
                for i in range(h):
                    sn = a[2 * h + i]
                    for j in range(h):
                        sn = sn + rh[j] * w[j * h3 + 2 * h + i]
                    sn = _tanh(sn)
                    c[2 * h + i] = sn
                    z = c[i]
                    out[i] = (1.0 - z) * sn + z * hp[i]
                hp = out
    return hs_arr, cache_arr


def gru_backward(const double[:, :, ::1] dhs, const double[:, ::1] wh, const double[:, ::1] h0,
                 const double[:, :, ::1] hs, const double[:, :, ::1] cache):
    cdef Py_ssize_t nb = dhs.shape[0], nt = dhs.shape[1], h = dhs.shape[2]
    cdef Py_ssize_t h3 = 3 * h, bi, t, i, j
    cdef double z, r, n, dh, hp_i, acc
    dax_arr = np.empty((nb, nt, h3))
    dwh_arr = np.zeros((h, h3))
    dh0_arr = np.empty((nb, h))
    work_arr = np.zeros(3 * h)
    cdef double[:, :, ::1] dax_v = dax_arr
    cdef double[:, ::1] dwh_v = dwh_arr
    cdef double[:, ::1] dh0_v = dh0_arr
    cdef double[::1] work = work_arr
    cdef double* dnext = &work[0]
    cdef double* dcur = &work[h]
    cdef double* drh = &work[2 * h]
    cdef double* dwh = &dwh_v[0, 0]
    cdef const double* w = &wh[0, 0]
    cdef const double* hp
    cdef const double* c
    cdef const double* g
    cdef double* d
    if nb == 0 or nt == 0 or h == 0:
        if nb and h:
            dh0_arr[:] = 0.0
        return dax_arr, dwh_arr, dh0_arr
    with nogil:
        for bi in range(nb):
            for j in range(h):
                dnext[j] = 0.0
            for t in range(nt - 1, -1, -1):
                if t == 0:
                    hp = &h0[bi, 0]
                else:
                    hp = &hs[bi, t - 1, 0]
                c = &cache[bi, t, 0]
                g = &dhs[bi, t, 0]
                d = &dax_v[bi, t, 0]
                for i in range(h):
                    z = c[i]
                    n = c[2 * h + i]
                    dh = g[i] + dnext[i]
                    dcur[i] = dh
                    d[2 * h + i] = dh * (1.0 - z) * (1.0 - n * n)
                    d[i] = dh * (hp[i] - n) * z * (1.0 - z)
                # d(r*h_prev) = dan . Whn^T
                for j in range(h):
                    acc = 0.0
                    for i in range(h):
                        acc = acc + d[2 * h + i] * w[j * h3 + 2 * h + i]
                    drh[j] = acc
                for j in range(h):
                    r = c[h + j]
                    d[h + j] = drh[j] * hp[j] * r * (1.0 - r)
                for j in range(h):
                    hp_i = hp[j]
                    r = c[h + j]
                    for i in range(h):
                        dwh[j * h3 + i] += hp_i * d[i]
                        dwh[j * h3 + h + i] += hp_i * d[h + i]
                        dwh[j * h3 + 2 * h + i] += r * hp_i * d[2 * h + i]
                for j in range(h):
                    acc = dcur[j] * c[j] + drh[j] * c[h + j]
                    for i in range(h):
                        acc = acc + d[i] * w[j * h3 + i] + d[h + i] * w[j * h3 + h + i]
                    dnext[j] = acc
            for j in range(h):
                dh0_v[bi, j] = dnext[j]
    return dax_arr, dwh_arr, dh0_arr
