"""Dense linear algebra, seeded randomness and Gaussian special functions.

Matrices are plain 2-D ``float64`` numpy arrays in row-major order.
"""
from __future__ import annotations

import math
import zlib

import numpy as np

from . import kernels

__all__ = [
    "ShapeError",
    "DomainError",
    "RandomSource",
    "as_matrix",
    "power_iteration",
    "sym_eig",
    "erf",
    "erfc",
    "norm_cdf",
    "inv_norm_cdf",
]

# above this size the O(d^3)-per-sweep Jacobi solver is slower than LAPACK by
# minutes, so "auto" hands over to numpy.linalg.eigh
JACOBI_MAX_DIM = 512


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


def as_matrix(a, name="matrix") -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.size == 0:
        raise ShapeError(f"{name} is empty")
    if not np.all(np.isfinite(m)):
        raise DomainError(f"{name} has non-finite entries")
    return m


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)) and label >= 0:
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


class RandomSource:
    """Seeded, splittable random stream.

    Backed by the counter-based Philox generator. ``split(label)`` derives an
    independent child stream from the seed and the label path alone, so the
    child does not depend on how many draws the parent has made.
    """

    def __init__(self, seed: int = 0, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def split(self, label) -> "RandomSource":
        return RandomSource(self.seed, self.path + (_label_key(label),))

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, path={self.path})"

    # thin delegation to the numpy Generator
    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self.generator.choice(a, size=size, replace=replace)


def _start_vector(n: int) -> np.ndarray:
    v = RandomSource(0x5EED).normal(size=n)
    return v / np.linalg.norm(v)


def power_iteration(M, iters: int = 100, tol: float = 0.0, v0=None):
    """Largest singular value of ``M`` by power iteration on ``M^T M``.

    Returns ``(sigma, v)`` where ``v`` is the unit right singular vector
    estimate and ``sigma = ||M v||``. The estimate never exceeds the true
    largest singular value and does not decrease with more iterations.
    Iteration stops early once the relative change of ``sigma`` is at most
    ``tol``. A zero matrix gives ``(0.0, zeros)``.
    """
    M = as_matrix(M)
    if iters < 1:
        raise DomainError("iters must be >= 1")
    n = M.shape[1]
    if not np.any(M):
        return 0.0, np.zeros(n)
    v = _start_vector(n) if v0 is None else np.asarray(v0, dtype=np.float64).copy()
    nv = np.linalg.norm(v)
    v = _start_vector(n) if nv == 0 else v / nv
    sigma = float(np.linalg.norm(M @ v))
    for _ in range(iters):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space; restart from the fixed vector
            v = _start_vector(n)
            continue
        v = w / nw
        new = float(np.linalg.norm(M @ v))
        done = abs(new - sigma) <= tol * max(new, 1e-300)
        sigma = max(sigma, new)
        if done:
            break
    return sigma, v


def sym_eig(S, method: str = "auto", tol: float = 1e-12):
    """Eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, Q)`` with eigenvalues in descending order and
    orthonormal eigenvectors in the columns of ``Q``. ``method`` is
    ``"jacobi"`` (cyclic Jacobi rotations), ``"lapack"`` or ``"auto"``.
    """
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise ShapeError(f"S must be square, got {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > 1e-9 * scale:
        raise ShapeError("S is not symmetric")
    S = 0.5 * (S + S.T)
    if method == "auto":
        method = "jacobi" if S.shape[0] <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        w, Q, _ = kernels.jacobi_eigh(S, tol)
    elif method == "lapack":
        w, Q = np.linalg.eigh(S)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-w, kind="stable")
    return w[order], np.ascontiguousarray(Q[:, order])


_SQRT_PI = math.sqrt(math.pi)
_SQRT2 = math.sqrt(2.0)


def _erf_series(z: float) -> float:
    # erf(z) = 2/sqrt(pi) exp(-z^2) sum_n 2^n z^(2n+1) / (1*3*...*(2n+1)); all terms positive
    if z == 0.0:
        return 0.0
    term = z
    total = z
    z2 = z * z
    k = 0
    while True:
        k += 1
        term *= 2.0 * z2 / (2 * k + 1)
        total += term
        if term < 1e-17 * total:
            break
    return 2.0 / _SQRT_PI * math.exp(-z2) * total


def _erfc_cf(z: float) -> float:
    # continued fraction erfc(z) = exp(-z^2)/sqrt(pi) * 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
    # evaluated with the modified Lentz method; used for z >= 2
    tiny = 1e-300
    f = z
    C = z
    D = 0.0
    k = 1
    while k < 500:
        a = 0.5 * k
        D = z + a * D
        D = tiny if D == 0.0 else D
        C = z + a / C
        C = tiny if C == 0.0 else C
        D = 1.0 / D
        delta = C * D
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
        k += 1
    return math.exp(-z * z) / _SQRT_PI / f


def erfc(z: float) -> float:
    z = float(z)
    if z < 0.0:
        return 2.0 - erfc(-z)
    if z < 2.0:
        return 1.0 - _erf_series(z)
    if z > 27.3:
        return 0.0
    return _erfc_cf(z)


def erf(z: float) -> float:
    z = float(z)
    if abs(z) < 2.0:
        return _erf_series(abs(z)) * (1.0 if z >= 0 else -1.0)
    return math.copysign(1.0 - erfc(abs(z)), z)


def norm_cdf(x: float) -> float:
    return 0.5 * erfc(-float(x) / _SQRT2)


_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def _lower_quantile(p: float) -> float:
    # rational initializer (relative error ~1e-9) for 0 < p <= 0.5
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    else:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    # one Newton step against the internal cdf
    dens = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if dens > 0.0:
        x -= (norm_cdf(x) - p) / dens
    return x


def inv_norm_cdf(p: float) -> float:
    """Quantile function of the standard normal distribution."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        # 1 - p is exact for p in [0.5, 1]
        return -_lower_quantile(1.0 - p)
    return _lower_quantile(p)
