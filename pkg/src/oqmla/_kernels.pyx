# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled particle kernels.

Both functions mirror ``oqmla._kernels_py`` exactly; see that module for the
reference semantics.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, exp, cos, sin, fabs
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_lapack cimport dgeev, zgetrf, zgetri

cnp.import_array()

ctypedef double complex cplx


def eigen_batch(const double[:, :, ::1] R, double cond_limit):
    """Eigendecomposition ``R[n] = V[n] diag(w[n]) Vinv[n]`` of every particle generator."""
    cdef Py_ssize_t N = R.shape[0], D = R.shape[1]
    w_arr = np.empty((N, D), dtype=np.complex128)
    V_arr = np.empty((N, D, D), dtype=np.complex128)
    Vi_arr = np.empty((N, D, D), dtype=np.complex128)
    ok_arr = np.ones(N, dtype=np.bool_)
    cdef cplx[:, ::1] w = w_arr
    cdef cplx[:, :, ::1] V = V_arr
    cdef cplx[:, :, ::1] Vi = Vi_arr
    cdef cnp.npy_bool[::1] ok = ok_arr

    cdef int n = <int>D, lda = <int>D, info = 0, ldvl = 1, ldvr = <int>D
    cdef int lwork = 8 * n, zlwork = 4 * n
    cdef char jobvl = b'N', jobvr = b'V'
    cdef double *a = <double *> malloc(D * D * sizeof(double))
    cdef double *wr = <double *> malloc(D * sizeof(double))
    cdef double *wi = <double *> malloc(D * sizeof(double))
    cdef double *vr = <double *> malloc(D * D * sizeof(double))
    cdef double vl_dummy = 0
    cdef double *work = <double *> malloc(lwork * sizeof(double))
    cdef cplx *z = <cplx *> malloc(D * D * sizeof(cplx))
    cdef cplx *zwork = <cplx *> malloc(zlwork * sizeof(cplx))
    cdef int *ipiv = <int *> malloc(D * sizeof(int))
    cdef Py_ssize_t p, i, j
    cdef double nv, nvi, colsum
    try:
        with nogil:
            for p in range(N):
                # column-major copy for LAPACK
                for i in range(D):
                    for j in range(D):
                        a[i + j * D] = R[p, i, j]
                dgeev(&jobvl, &jobvr, &n, a, &lda, wr, wi, &vl_dummy, &ldvl, vr, &ldvr, work, &lwork, &info)
                if info != 0:
                    ok[p] = 0
                    continue
                j = 0
                while j < D:
                    if wi[j] == 0.0:
                        w[p, j] = wr[j]
                        for i in range(D):
                            z[i + j * D] = vr[i + j * D]
                        j += 1
                    else:
                        w[p, j] = wr[j] + 1j * wi[j]
                        w[p, j + 1] = wr[j + 1] + 1j * wi[j + 1]
                        for i in range(D):
                            z[i + j * D] = vr[i + j * D] + 1j * vr[i + (j + 1) * D]
                            z[i + (j + 1) * D] = vr[i + j * D] - 1j * vr[i + (j + 1) * D]
                        j += 2
                nv = 0
                for j in range(D):
                    colsum = 0
                    for i in range(D):
                        V[p, i, j] = z[i + j * D]
                        colsum = colsum + abs(z[i + j * D])
                    if colsum > nv:
                        nv = colsum
                zgetrf(&n, &n, z, &lda, ipiv, &info)
                if info != 0:
                    ok[p] = 0
                    continue
                zgetri(&n, z, &lda, ipiv, zwork, &zlwork, &info)
                if info != 0:
                    ok[p] = 0
                    continue
                nvi = 0
                for j in range(D):
                    colsum = 0
                    for i in range(D):
                        Vi[p, i, j] = z[i + j * D]
                        colsum = colsum + abs(z[i + j * D])
                    if colsum > nvi:
                        nvi = colsum
                if nv * nvi > cond_limit:
                    ok[p] = 0
    finally:
        free(a); free(wr); free(wi); free(vr); free(work); free(z); free(zwork); free(ipiv)
    return w_arr, V_arr, Vi_arr, ok_arr


def propagate_loglikes(const cplx[:, ::1] w, const cplx[:, :, ::1] V, const cplx[:, :, ::1] Vi,
                       const double[::1] r0, const double[:, ::1] M, const double[::1] counts,
                       double t, double floor):
    """Multinomial log-likelihood of ``counts`` for every particle at time ``t``."""
    cdef Py_ssize_t N = w.shape[0], D = w.shape[1], K = M.shape[0]
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef cplx *e = <cplx *> malloc(D * sizeof(cplx))
    cdef double *r = <double *> malloc(D * sizeof(double))
    cdef Py_ssize_t p, i, k, a
    cdef cplx acc, ew
    cdef double q, ll, re
    try:
        with nogil:
            for p in range(N):
                for k in range(D):
                    acc = 0
                    for i in range(D):
                        acc = acc + Vi[p, k, i] * r0[i]
                    re = exp(w[p, k].real * t)
                    ew = re * cos(w[p, k].imag * t) + 1j * (re * sin(w[p, k].imag * t))
                    e[k] = ew * acc
                for i in range(D):
                    acc = 0
                    for k in range(D):
                        acc = acc + V[p, i, k] * e[k]
                    r[i] = acc.real
                ll = 0
                for a in range(K):
                    if counts[a] == 0:
                        continue
                    q = 0
                    for i in range(D):
                        q = q + M[a, i] * r[i]
                    if q < floor:
                        q = floor
                    ll = ll + counts[a] * log(q)
                out[p] = ll
    finally:
        free(e); free(r)
    return out_arr
