"""Hypercube distributions on which robust learning needs exponentially many samples.

Each labeling ``phi`` of the (d-1)-cube defines a distribution: the first d-1
coordinates are uniform signs, the last one is ``delta * phi(x_1..x_{d-1})``
and the label is its sign. Labels are stored as 0/1 in datasets, with 1
meaning +1; :func:`signed_labels` converts back.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .datasets import LabeledDataset

MAX_D = 26


def hard_dimension(n: int) -> int:
    """Data dimension ceil(log2 n) + 7 used for a dataset of size n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (n - 1).bit_length() + 7


def sign(x):
    """Componentwise sign with sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1, -1)


def signed_labels(labels) -> np.ndarray:
    return 2 * np.asarray(labels, dtype=np.int64) - 1


def vertex_index(robust: np.ndarray) -> np.ndarray:
    """Encode sign patterns of shape (n, d-1) as integers; coordinate j is bit j, +1 is bit 1."""
    bits = (np.asarray(robust) >= 0).astype(np.int64)
    return bits @ (np.int64(1) << np.arange(bits.shape[1], dtype=np.int64))


@dataclass(frozen=True)
class BooleanLabeling:
    d_minus_1: int
    table: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = np.asarray(self.table, dtype=bool)
        if t.shape != (1 << self.d_minus_1,):
            raise ValueError(f"table must have length 2^{self.d_minus_1}, got {t.shape}")
        object.__setattr__(self, "table", t)

    def __call__(self, robust) -> np.ndarray:
        robust = np.atleast_2d(robust)
        return np.where(self.table[vertex_index(robust)], 1, -1)


@dataclass(frozen=True)
class HypercubeDistribution:
    d: int
    delta: float
    phi: BooleanLabeling

    def __post_init__(self):
        if self.phi.d_minus_1 != self.d - 1:
            raise ValueError("labeling dimension must be d - 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")


def sample_labeling(d: int, rng) -> BooleanLabeling:
    if not 2 <= d <= MAX_D:
        raise ValueError(f"d must lie in [2, {MAX_D}], got {d}")
    table = rng.integers(0, 2, size=1 << (d - 1)).astype(bool)
    return BooleanLabeling(d - 1, table)


def points_for_vertices(dist: HypercubeDistribution, robust: np.ndarray) -> LabeledDataset:
    robust = np.atleast_2d(np.asarray(robust, dtype=np.float64))
    xd = dist.delta * dist.phi(robust)
    X = np.column_stack([robust, xd])
    return LabeledDataset(X, (xd > 0).astype(np.int64), (), 2)


def sample_points(dist: HypercubeDistribution, n: int, rng) -> LabeledDataset:
    robust = np.where(rng.integers(0, 2, size=(n, dist.d - 1)) == 1, 1.0, -1.0)
    return points_for_vertices(dist, robust)


class Classifier:
    """Maps feature rows to +1/-1."""

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def accuracy(self, ds: LabeledDataset, attack=None) -> float:
        X = ds.features if attack is None else attack(ds.features)
        return float(np.mean(self.predict(X) == signed_labels(ds.labels)))


class OracleRobustClassifier(Classifier):
    def __init__(self, phi: BooleanLabeling):
        self.phi = phi

    def predict(self, X):
        X = np.atleast_2d(X)
        return self.phi(sign(X[:, :-1]))


class LastFeatureSign(Classifier):
    def predict(self, X):
        return sign(np.atleast_2d(X)[:, -1])


class MemorizedVertices(Classifier):
    def __init__(self, keys, values, default):
        self.keys = keys
        self.values = values
        self.default = default

    def predict(self, X):
        idx = vertex_index(np.atleast_2d(X)[:, :-1])
        out = np.full(idx.shape, self.default, dtype=np.int64)
        if len(self.keys):
            pos = np.clip(np.searchsorted(self.keys, idx), 0, len(self.keys) - 1)
            hit = self.keys[pos] == idx
            out[hit] = self.values[pos[hit]]
        return out


def oracle_robust_classifier(phi: BooleanLabeling) -> Classifier:
    return OracleRobustClassifier(phi)


class NonRobustLearner:
    """Ignores the data and always returns sign(x_d)."""

    name = "sign"

    def fit(self, ds=None, dist=None) -> Classifier:
        return LastFeatureSign()


class MemorizingLearner:
    """Looks only at the robust features: recalls seen vertices, predicts the
    majority training label (ties to +1) elsewhere."""

    name = "memorize"

    def fit(self, ds, dist=None) -> Classifier:
        if ds is None or ds.n == 0:
            return MemorizedVertices(np.empty(0, np.int64), np.empty(0, np.int64), 1)
        y = signed_labels(ds.labels)
        idx = vertex_index(ds.features[:, :-1])
        keys, first = np.unique(idx, return_index=True)
        default = 1 if y.sum() >= 0 else -1
        return MemorizedVertices(keys, y[first], default)


class OracleLearner:
    """Reference 'learner' that is handed the true labeling."""

    name = "oracle"

    def fit(self, ds=None, dist=None) -> Classifier:
        return OracleRobustClassifier(dist.phi)


LEARNERS = {"sign": NonRobustLearner, "memorize": MemorizingLearner, "oracle": OracleLearner}


def nonrobust_learner():
    return NonRobustLearner()


def memorizing_learner():
    return MemorizingLearner()


def zero_feature_attack(X) -> np.ndarray:
    """Set the small last feature to zero; costs exactly delta on distribution samples."""
    out = np.array(X, dtype=np.float64, copy=True)
    out[..., -1] = 0.0
    return out


@dataclass
class NfrTrial:
    trial: int
    clean_acc: float
    adv_acc: float
    train_acc: float
    train_adv_acc: float


@dataclass
class NfrResult:
    n: int
    d: int
    trials: list
    mean_adv_acc: float
    half_width: float
    mean_clean_acc: float
    ceiling: float


def run_no_free_robustness(n, trials, test_per_trial, learner, rng, d=None, delta=0.1) -> NfrResult:
    """Average accuracy under the zero-feature attack over fresh labelings and training sets.

    ``ceiling`` is 1/2 + n/2^d, the accuracy bound for learners that only memorize what they saw.
    Returns the mean and a normal-approximation 95% half-width over trials.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    d = hard_dimension(n) if d is None else d
    rows = []
    for t in range(trials):
        sub = rng.split(t)
        dist = HypercubeDistribution(d, delta, sample_labeling(d, sub.split("phi")))
        train = sample_points(dist, n, sub.split("train"))
        test = sample_points(dist, test_per_trial, sub.split("test"))
        clf = learner.fit(train, dist)
        rows.append(NfrTrial(
            trial=t,
            clean_acc=clf.accuracy(test),
            adv_acc=clf.accuracy(test, zero_feature_attack),
            train_acc=clf.accuracy(train),
            train_adv_acc=clf.accuracy(train, zero_feature_attack),
        ))
    adv = np.array([r.adv_acc for r in rows])
    half = 1.96 * adv.std(ddof=1) / math.sqrt(trials) if trials > 1 else float("nan")
    return NfrResult(
        n=n, d=d, trials=rows,
        mean_adv_acc=float(adv.mean()),
        half_width=float(half),
        mean_clean_acc=float(np.mean([r.clean_acc for r in rows])),
        ceiling=0.5 + n / 2 ** d,
    )


def exact_adversarial_accuracy(d: int, n: int, learner):
    """Exact average attacked accuracy by enumerating every labeling, training set and test vertex.

    Returns ``(accuracy, p_seen)`` as Fractions, where ``p_seen`` is the
    probability that the test vertex appears in the training set.
    """
    vertices = list(itertools.product((1.0, -1.0), repeat=d - 1))
    nv = len(vertices)
    acc = Fraction(0)
    seen = Fraction(0)
    tables = list(itertools.product((False, True), repeat=nv))
    weight = Fraction(1, len(tables) * nv ** n * nv)
    for table in tables:
        dist = HypercubeDistribution(d, 0.5, BooleanLabeling(d - 1, np.array(table)))
        test = points_for_vertices(dist, np.array(vertices))
        truth = signed_labels(test.labels)
        for combo in itertools.product(range(nv), repeat=n):
            train = points_for_vertices(dist, np.array([vertices[i] for i in combo]))
            pred = learner.fit(train, dist).predict(zero_feature_attack(test.features))
            acc += weight * int(np.sum(pred == truth))
            seen += weight * len(set(combo))
    return acc, seen
