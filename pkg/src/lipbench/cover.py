"""Margin distributions on the unit cube and exactly certified 1-nearest-neighbour classification."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .datasets import LabeledDataset

METRICS = {"l2": 0, "linf": 1}


class MarginConfigError(ValueError):
    pass


def _interior_lines(w: float) -> np.ndarray:
    k = np.arange(1, int(math.floor(1.0 / w)) + 1)
    lines = k * w
    return lines[lines < 1.0]


@dataclass(frozen=True)
class MarginDistribution:
    """Grid-parity labels on [0, 1]^d with a forbidden slab of half-width delta around every grid line.

    ``label(x) = sum_j floor(x_j / cell_width) mod 2``. Points within L-inf
    distance delta of a label change are never sampled, so the Bayes
    classifier is L-inf robust with margin delta.
    """

    d: int
    delta: float
    cell_width: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise MarginConfigError("d must be >= 1")
        if not self.delta > 0:
            raise MarginConfigError("delta must be positive")
        if not 2 * self.delta < self.cell_width:
            raise MarginConfigError(f"need 2*delta < cell_width, got delta={self.delta}, w={self.cell_width}")
        if len(_interior_lines(self.cell_width)) == 0:
            raise MarginConfigError(f"cell_width={self.cell_width} leaves a single class on [0, 1]^d")
        if self.acceptance_probability() < 0.01:
            raise MarginConfigError(
                f"acceptance probability {self.acceptance_probability():.3g} below 1%; delta too close to w/2")

    def acceptance_probability(self) -> float:
        lines = _interior_lines(self.cell_width)
        blocked = 0.0
        for c in lines:
            blocked += min(1.0, c + self.delta) - max(0.0, c - self.delta)
        return (1.0 - blocked) ** self.d

    def label(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        cells = np.floor(X / self.cell_width).astype(np.int64)
        return cells.sum(axis=1) % 2

    def boundary_distance(self, X) -> np.ndarray:
        """L-inf distance from each row to the nearest label change."""
        X = np.atleast_2d(X)
        lines = _interior_lines(self.cell_width)
        if len(lines) == 0:
            return np.full(X.shape[0], np.inf)
        per_coord = np.min(np.abs(X[:, :, None] - lines[None, None, :]), axis=2)
        return per_coord.min(axis=1)


def sample_margin(dist: MarginDistribution, n: int, rng) -> LabeledDataset:
    """Uniform samples from [0,1]^d kept only when at least delta from the label boundary."""
    if n < 1:
        raise ValueError("n must be >= 1")
    accept = dist.acceptance_probability()
    chunks, have = [], 0
    while have < n:
        want = int((n - have) / accept * 1.1) + 16
        X = rng.random((want, dist.d))
        X = X[dist.boundary_distance(X) >= dist.delta]
        chunks.append(X)
        have += len(X)
    X = np.concatenate(chunks)[:n]
    return LabeledDataset(X, dist.label(X), (), 2)


@dataclass(frozen=True)
class OneNNModel:
    points: np.ndarray
    labels: np.ndarray
    metric: str = "linf"

    def __post_init__(self):
        P = np.ascontiguousarray(self.points, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if P.ndim != 2 or P.shape[0] == 0:
            raise ValueError("model needs at least one stored point")
        if y.shape != (P.shape[0],):
            raise ValueError("labels must align with points")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {sorted(METRICS)}")
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "labels", y)

    @classmethod
    def fit(cls, ds: LabeledDataset, metric="linf") -> "OneNNModel":
        return cls(ds.features, ds.labels, metric)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def query(self, X):
        """``(pred, d1, d2)`` for every row of X; see :func:`nn_certified_radius`."""
        Q = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        return kernels.nn_query(self.points, self.labels, Q, METRICS[self.metric], self.n_classes)


def nn_predict(model: OneNNModel, x):
    """Label of the nearest stored point (lowest index on ties). Scalar for a single point."""
    pred, _, _ = model.query(x)
    return int(pred[0]) if np.ndim(x) == 1 else pred


def nn_certified_radius(model: OneNNModel, x):
    """Half the gap between the nearest point and the nearest point of another class.

    Any input closer to ``x`` than this radius keeps the same 1-NN prediction,
    by the triangle inequality. Infinite when only one class is stored.
    """
    _, d1, d2 = model.query(x)
    r = (d2 - d1) / 2.0
    return float(r[0]) if np.ndim(x) == 1 else r


def required_samples(delta: float, d: int) -> int:
    if not 0 < delta <= 1 or d < 1:
        raise ValueError("need 0 < delta <= 1 and d >= 1")
    return 37 * _boxes_per_axis(delta) ** d


def _boxes_per_axis(delta: float) -> int:
    # round first so 1/0.1 style representation error cannot bump the ceiling
    return math.ceil(round(1.0 / delta, 9))


def box_coverage(train: LabeledDataset, delta: float, d: int):
    """Assign each point to one of ceil(1/delta)^d boxes of side delta.

    Box k along an axis is centred at (2k+1)*delta/2 and covers
    [k*delta, (k+1)*delta); the last box also takes the upper edge.
    Returns ``(occupied_fraction, counts)`` with ``counts`` shaped (D,)*d.
    """
    D = _boxes_per_axis(delta)
    idx = np.clip(np.floor(train.features / delta).astype(np.int64), 0, D - 1)
    flat = np.ravel_multi_index(idx.T, (D,) * d)
    counts = np.bincount(flat, minlength=D ** d).reshape((D,) * d)
    return float(np.count_nonzero(counts)) / counts.size, counts


@dataclass
class CoverTrial:
    trial: int
    robust_acc: float
    clean_acc: float
    occupancy: float
    train_acc: float = 1.0
    train_robust_acc: float = 1.0


@dataclass
class CoverResult:
    d: int
    delta: float
    n: int
    trials: list
    mean_robust_acc: float
    half_width: float
    bound: float


def run_cover_experiment(d, delta, n, trials, test_per_trial, rng, cell_width=0.5) -> CoverResult:
    """Average L-inf robust accuracy of 1-NN at radius delta/2 on fresh margin-distribution draws.

    A test point counts when the prediction is right and the certified radius
    is at least delta/2. ``bound`` is the covering guarantee 1 - |B|/(n e).
    """
    dist = MarginDistribution(d, delta, cell_width)
    rows = []
    for t in range(trials):
        sub = rng.split(t)
        train = sample_margin(dist, n, sub.split("train"))
        test = sample_margin(dist, test_per_trial, sub.split("test"))
        model = OneNNModel.fit(train, "linf")
        pred, d1, d2 = model.query(test.features)
        correct = pred == test.labels
        robust = correct & ((d2 - d1) / 2.0 >= delta / 2.0)
        occ, _ = box_coverage(train, delta, d)
        tp, t1, t2 = model.query(train.features)
        t_correct = tp == train.labels
        t_robust = t_correct & ((t2 - t1) / 2.0 >= delta / 2.0)
        rows.append(CoverTrial(t, float(robust.mean()), float(correct.mean()), occ,
                               float(t_correct.mean()), float(t_robust.mean())))
    acc = np.array([r.robust_acc for r in rows])
    half = 1.96 * acc.std(ddof=1) / math.sqrt(trials) if trials > 1 else float("nan")
    boxes = _boxes_per_axis(delta) ** d
    return CoverResult(d, delta, n, rows, float(acc.mean()), float(half), 1.0 - boxes / (n * math.e))
