"""Dense layers with exact forward/backward passes.

``AOL`` rescales the columns of W so the layer is 1-Lipschitz, ``CPL`` is the
residual map ``x - 2/||W||^2 W^T relu(W x + b)``, ``Standard`` is unconstrained.
Batches are rows: inputs have shape (B, in), outputs (B, out).
"""
from __future__ import annotations

import numpy as np

from ..numerics import power_iteration

KINDS = ("aol", "cpl", "standard")
ACTIVATIONS = ("maxmin", "relu", None)


def maxmin(v: np.ndarray) -> np.ndarray:
    """Sort every adjacent pair (v[2i], v[2i+1]) into (max, min)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] % 2:
        raise ValueError(f"MaxMin needs an even width, got {v.shape[-1]}")
    a = v[..., 0::2]
    b = v[..., 1::2]
    out = np.empty_like(v)
    out[..., 0::2] = np.maximum(a, b)
    out[..., 1::2] = np.minimum(a, b)
    return out


def maxmin_backward(v: np.ndarray, grad: np.ndarray) -> np.ndarray:
    # permutation sub-gradient; ties route the max slot to the first element
    swap = v[..., 0::2] < v[..., 1::2]
    g0 = grad[..., 0::2]
    g1 = grad[..., 1::2]
    out = np.empty_like(grad)
    out[..., 0::2] = np.where(swap, g1, g0)
    out[..., 1::2] = np.where(swap, g0, g1)
    return out


def aol_scaling(W: np.ndarray, P=None) -> np.ndarray:
    """Per-column factors d_j = (sum_i |W^T W|_ji)^(-1/2), zero for all-zero columns."""
    if P is None:
        P = W.T @ W
    r = np.abs(P).sum(axis=1)
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 0, 1.0 / np.sqrt(safe), 0.0)


def aol_effective_weight(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    return W * aol_scaling(W)[None, :]


class DenseLayer:
    def __init__(self, kind, W, b=None, activation=None, power_vector=None):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        W = np.array(W, dtype=np.float64)
        if W.ndim != 2:
            raise ValueError("W must be 2-D")
        if kind == "cpl" and W.shape[0] != W.shape[1]:
            raise ValueError(f"CPL layers must be square, got {W.shape}")
        self.kind = kind
        self.W = W
        self.b = np.zeros(W.shape[0]) if b is None else np.array(b, dtype=np.float64)
        if self.b.shape != (W.shape[0],):
            raise ValueError("bias length must match W rows")
        self.activation = activation
        if activation == "maxmin" and self.out_dim % 2:
            raise ValueError("MaxMin requires an even layer width")
        self.power_vector = None
        self.fixed_sigma = None  # when set, CPL uses this spectral-norm value verbatim
        self._sigma = None
        self._sigma_for = None
        if kind == "cpl":
            v = np.ones(W.shape[1]) if power_vector is None else np.array(power_vector, dtype=np.float64)
            self.power_vector = v / np.linalg.norm(v)

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1] if self.kind == "cpl" else self.W.shape[0]

    def params(self):
        return [self.W, self.b]

    # CPL spectral norm: one refresh step per training forward, converged otherwise
    def cpl_sigma(self, training: bool) -> float:
        if self.fixed_sigma is not None:
            return float(self.fixed_sigma)
        if training:
            w = self.W.T @ (self.W @ self.power_vector)
            nw = np.linalg.norm(w)
            if nw > 0:
                self.power_vector = w / nw
            return float(np.linalg.norm(self.W @ self.power_vector))
        if self._sigma_for is None or not np.array_equal(self._sigma_for, self.W):
            # converge from the stored vector without mutating it, so evaluation leaves training state alone
            sigma, _ = power_iteration(self.W, iters=5000, tol=1e-15, v0=self.power_vector)
            self._sigma = sigma
            self._sigma_for = self.W.copy()
        return self._sigma

    def _aol_weights(self):
        # inference calls reuse the rescaled weights while W is unchanged
        if self._sigma_for is None or not np.array_equal(self._sigma_for, self.W):
            dvec = aol_scaling(self.W)
            self._aol_cached = (dvec, self.W * dvec[None, :])
            self._sigma_for = self.W.copy()
        return self._aol_cached

    def forward(self, X, training=False, cache=None):
        if X.shape[1] != self.in_dim:
            raise ValueError(f"layer expects width {self.in_dim}, got {X.shape[1]}")
        if self.kind == "cpl":
            sigma = self.cpl_sigma(training)
            if sigma == 0.0:
                U = None
                Z = X.copy()
                c = 0.0
            else:
                c = 2.0 / sigma ** 2
                U = X @ self.W.T + self.b
                Z = X - c * (np.maximum(U, 0.0) @ self.W)
            local = {"X": X, "U": U, "c": c}
        else:
            P = None
            if self.kind == "aol" and cache is None:
                dvec, Weff = self._aol_weights()
            elif self.kind == "aol":
                P = self.W.T @ self.W
                dvec = aol_scaling(self.W, P)
                Weff = self.W * dvec[None, :]
            else:
                dvec = None
                Weff = self.W
            Z = X @ Weff.T + self.b
            local = {"X": X, "dvec": dvec, "Weff": Weff, "P": P}
        local["Z"] = Z
        if self.activation == "maxmin":
            out = maxmin(Z)
        elif self.activation == "relu":
            out = np.maximum(Z, 0.0)
        else:
            out = Z
        if cache is not None:
            cache.append(local)
        return out

    def backward(self, local, grad):
        """Return ``(dX, dW, db)`` given the cached forward state and the output gradient."""
        Z = local["Z"]
        if self.activation == "maxmin":
            grad = maxmin_backward(Z, grad)
        elif self.activation == "relu":
            grad = grad * (Z > 0)
        X = local["X"]
        if self.kind == "cpl":
            if local["U"] is None:
                return grad, np.zeros_like(self.W), np.zeros_like(self.b)
            U, c = local["U"], local["c"]
            R = np.maximum(U, 0.0)
            dU = (-c * (grad @ self.W.T)) * (U > 0)
            dX = grad + dU @ self.W
            dW = -c * (R.T @ grad) + dU.T @ X
            return dX, dW, dU.sum(axis=0)
        dWeff = grad.T @ X
        db = grad.sum(axis=0)
        dX = grad @ local["Weff"]
        if self.kind == "standard":
            return dX, dWeff, db
        dvec = local["dvec"]
        W = self.W
        dW = dWeff * dvec[None, :]
        g_d = np.sum(dWeff * W, axis=0)
        # d = r^(-1/2)  =>  dd/dr = -d^3 / 2
        g_r = -0.5 * g_d * dvec ** 3
        P = local["P"] if local.get("P") is not None else W.T @ W
        # dL/dP_ji = g_r[j] sign(P_ji); P symmetric, so dP + dP^T = sign(P) * (g_r[j] + g_r[i])
        G = np.sign(P)
        G *= g_r[:, None] + g_r[None, :]
        dW += W @ G
        return dX, dW, db


def init_weight(kind, out_dim, in_dim, init, rng) -> np.ndarray:
    """Initial weight matrix.

    ``identity``: identity for square AOL layers; non-square AOL and all CPL
    layers fall back to a random (semi-)orthogonal matrix, since a zero column
    receives no AOL gradient and a zero CPL weight has no spectral norm.
    ``orthogonal``: random (semi-)orthogonal. ``uniform``: U(-1/sqrt(in), 1/sqrt(in)).
    """
    if init == "identity" and kind == "aol" and out_dim == in_dim:
        return np.eye(in_dim)
    if init in ("identity", "orthogonal"):
        A = rng.normal(size=(max(out_dim, in_dim), min(out_dim, in_dim)))
        Q, R = np.linalg.qr(A)
        Q = Q * np.sign(np.diag(R))[None, :]
        return Q if out_dim >= in_dim else Q.T
    if init == "uniform":
        bound = 1.0 / np.sqrt(in_dim)
        return rng.uniform(-bound, bound, size=(out_dim, in_dim))
    raise ValueError(f"unknown init {init!r}")
