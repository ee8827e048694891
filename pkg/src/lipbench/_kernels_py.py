"""Pure-Python/numpy twins of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def jacobi_eigh(S, tol=1e-12, max_sweeps=100):
    A = np.array(S, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    thresh = tol * tol * float(np.sum(A * A))
    sweep = 0
    while sweep < max_sweeps:
        off = 2.0 * float(np.sum(np.triu(A, 1) ** 2))
        if off <= thresh:
            break
        sweep += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                colp = A[:, p].copy()
                colq = A[:, q]
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                rowp = A[p, :].copy()
                rowq = A[q, :]
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                A[p, q] = 0.0
                A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q]
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return np.diag(A).copy(), V, sweep


def nn_query(train, labels, queries, metric, n_classes, chunk=256):
    n = train.shape[0]
    m = queries.shape[0]
    pred = np.empty(m, dtype=np.int64)
    d1 = np.empty(m, dtype=np.float64)
    d2 = np.empty(m, dtype=np.float64)
    # rows of this mask select the training points of each class
    class_mask = labels[None, :] == np.arange(n_classes)[:, None]
    step = max(1, chunk * 4096 // max(1, n * train.shape[1]))
    for start in range(0, m, step):
        q = queries[start:start + step]
        diff = q[:, None, :] - train[None, :, :]
        if metric == 0:
            dist = np.sum(diff * diff, axis=2)
        else:
            dist = np.max(np.abs(diff), axis=2)
        best = np.argmin(dist, axis=1)
        p = labels[best]
        rows = np.arange(len(q))
        other = np.where(class_mask[p], np.inf, dist).min(axis=1)
        bestd = dist[rows, best]
        if metric == 0:
            bestd, other = np.sqrt(bestd), np.sqrt(other)
        pred[start:start + step] = p
        d1[start:start + step] = bestd
        d2[start:start + step] = other
    return pred, d1, d2
