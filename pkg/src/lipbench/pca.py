"""Principal components of flattened image data and datasets projected onto chosen components.

Component indices are 1-based throughout: component 1 has the largest eigenvalue.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import LabeledDataset
from .numerics import ShapeError, as_matrix, sym_eig

MAX_DIM = 4096


class PcaSizeError(ShapeError):
    pass


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (d, d), column i-1 is component i
    eigenvalues: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def basis(self, index_set) -> np.ndarray:
        """Columns of the selected components, in ascending index order."""
        idx = normalize_indices(index_set, self.dim)
        return self.components[:, np.asarray(idx, dtype=np.int64) - 1]

    def projector(self, index_set) -> np.ndarray:
        V = self.basis(index_set)
        return V @ V.T


def fit_pca(X, method="auto") -> PcaModel:
    """Mean, components and eigenvalues of the sample covariance (divisor n - 1).

    Each component is flipped so its largest-magnitude entry is positive.
    Round-off negatives in the eigenvalues are clipped to zero.
    """
    if isinstance(X, LabeledDataset):
        X = X.features
    X = as_matrix(X, "X")
    n, d = X.shape
    if n < 2:
        raise ShapeError("PCA needs at least two samples")
    if d > MAX_DIM:
        raise PcaSizeError(f"dimension {d} exceeds the supported maximum {MAX_DIM}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / (n - 1)
    w, V = sym_eig(cov, method=method)
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.where(V[pivot, np.arange(d)] < 0, -1.0, 1.0)
    V = V * signs[None, :]
    return PcaModel(mean, V, np.maximum(w, 0.0))


def parse_ranges(text: str, dim: int | None = None) -> list:
    """Parse ``"1-16,513-3072"`` (1-based, inclusive) into sorted unique indices.

    ``"all"`` selects every component and needs ``dim``; ``""`` or ``"none"`` is empty.
    """
    text = text.strip().lower()
    if text in ("", "none"):
        return []
    if text == "all":
        if dim is None:
            raise ValueError("'all' needs the data dimension")
        return list(range(1, dim + 1))
    out = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            a = int(lo)
            b = int(hi) if sep else a
        except ValueError:
            raise ValueError(f"bad component range {part!r}") from None
        if a < 1 or b < a:
            raise ValueError(f"bad component range {part!r}")
        out.update(range(a, b + 1))
    idx = sorted(out)
    if dim is not None and idx and idx[-1] > dim:
        raise ValueError(f"component {idx[-1]} out of range for dimension {dim}")
    return idx


def normalize_indices(index_set, dim: int) -> list:
    if isinstance(index_set, str):
        return parse_ranges(index_set, dim)
    idx = sorted({int(i) for i in index_set})
    if idx and (idx[0] < 1 or idx[-1] > dim):
        raise ValueError(f"component indices must lie in [1, {dim}]")
    return idx


def variance_fraction(model: PcaModel, index_set) -> float:
    idx = normalize_indices(index_set, model.dim)
    total = float(model.eigenvalues.sum())
    if not idx or total == 0.0:
        return 0.0
    return float(model.eigenvalues[np.asarray(idx) - 1].sum()) / total


def project_reconstruct(model: PcaModel, X, index_set) -> np.ndarray:
    """Keep only the selected components of ``X - mean``, then add the mean back."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.dim:
        raise ShapeError(f"expected {model.dim} columns, got {X.shape[-1]}")
    V = model.basis(index_set)
    return model.mean + ((X - model.mean) @ V) @ V.T


@dataclass
class ProjectedPair:
    ranges: str
    indices: list
    variance_fraction: float
    train: LabeledDataset
    test: LabeledDataset


def build_pca_datasets(ds_train: LabeledDataset, ds_test: LabeledDataset, ranges, model=None):
    """One projected (train, test) pair per range spec; the model is fit on the training set only."""
    model = model or fit_pca(ds_train)
    out = []
    for spec in ranges:
        idx = normalize_indices(spec, model.dim)
        label = spec if isinstance(spec, str) else ",".join(map(str, idx))
        out.append(ProjectedPair(
            label, idx, variance_fraction(model, idx),
            ds_train.with_features(project_reconstruct(model, ds_train.features, idx)),
            ds_test.with_features(project_reconstruct(model, ds_test.features, idx)),
        ))
    return out
