# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: cyclic Jacobi eigensolver and exact brute-force 1-NN queries.

Both functions mirror ``lipbench._kernels_py`` one-to-one; the pure version is
the fallback when this extension is not built.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()


def jacobi_eigh(double[:, ::1] S, double tol=1e-12, int max_sweeps=100):
    """Cyclic Jacobi on a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors, sweeps)`` with eigenvalues unsorted and
    eigenvectors as columns. Stops once the off-diagonal Frobenius norm drops to
    ``tol`` times the Frobenius norm of ``S``.
    """
    cdef Py_ssize_t n = S.shape[0]
    cdef Py_ssize_t p, q, k
    cdef double[:, ::1] A = np.array(S, dtype=np.float64, copy=True)
    cdef double[:, ::1] V = np.eye(n, dtype=np.float64)
    cdef double apq, app, aqq, tau, t, c, s, akp, akq, off, total, thresh
    cdef int sweep = 0

    total = 0.0
    for p in range(n):
        for q in range(n):
            total += A[p, q] * A[p, q]
    thresh = tol * tol * total

    while sweep < max_sweeps:
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += 2.0 * A[p, q] * A[p, q]
        if off <= thresh:
            break
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                app = A[p, p]
                aqq = A[q, q]
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    akp = A[p, k]
                    akq = A[q, k]
                    A[p, k] = c * akp - s * akq
                    A[q, k] = s * akp + c * akq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(n):
                    akp = V[k, p]
                    akq = V[k, q]
                    V[k, p] = c * akp - s * akq
                    V[k, q] = s * akp + c * akq

    w = np.empty(n, dtype=np.float64)
    cdef double[::1] wv = w
    for p in range(n):
        wv[p] = A[p, p]
    return w, np.asarray(V), sweep


def nn_query(double[:, ::1] train, cnp.int64_t[::1] labels, double[:, ::1] queries,
             int metric, int n_classes):
    """Nearest stored point for every query.

    ``metric`` is 0 for L2 and 1 for L-infinity. Returns ``(pred, d1, d2)``:
    predicted label, distance to the nearest point, and distance to the nearest
    point whose label differs from the prediction (``inf`` if there is none).
    Ties go to the lowest training index.
    """
    cdef Py_ssize_t n = train.shape[0]
    cdef Py_ssize_t dim = train.shape[1]
    cdef Py_ssize_t m = queries.shape[0]
    cdef Py_ssize_t i, j, k, c, best
    cdef double acc, diff, bestd, other
    pred = np.empty(m, dtype=np.int64)
    d1 = np.empty(m, dtype=np.float64)
    d2 = np.empty(m, dtype=np.float64)
    cdef cnp.int64_t[::1] pv = pred
    cdef double[::1] d1v = d1
    cdef double[::1] d2v = d2
    cdef double[::1] per_class = np.empty(n_classes, dtype=np.float64)

    for i in range(m):
        for c in range(n_classes):
            per_class[c] = INFINITY
        best = -1
        bestd = INFINITY
        for j in range(n):
            acc = 0.0
            if metric == 0:
                for k in range(dim):
                    diff = queries[i, k] - train[j, k]
                    acc += diff * diff
            else:
                for k in range(dim):
                    diff = fabs(queries[i, k] - train[j, k])
                    if diff > acc:
                        acc = diff
            if acc < bestd:
                bestd = acc
                best = j
            c = labels[j]
            if acc < per_class[c]:
                per_class[c] = acc
        pv[i] = labels[best]
        other = INFINITY
        for c in range(n_classes):
            if c != pv[i] and per_class[c] < other:
                other = per_class[c]
        if metric == 0:
            d1v[i] = sqrt(bestd)
            d2v[i] = sqrt(other)
        else:
            d1v[i] = bestd
            d2v[i] = other
    return pred, d1, d2
