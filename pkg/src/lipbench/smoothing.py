"""Monte-Carlo randomized smoothing: vote counts under Gaussian noise and plug-in certified radii."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RandomSource, inv_norm_cdf

CHUNK = 1000


@dataclass(frozen=True)
class SmoothingConfig:
    sigma: float = 0.125
    samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if int(self.samples) != self.samples or self.samples < 1:
            raise ValueError("samples must be an integer >= 1")


def _predict_fn(base):
    if hasattr(base, "predict"):
        return base.predict
    return base


def smoothed_predict(base, x, cfg: SmoothingConfig, n_classes=None, sample_id=0):
    """Vote counts of ``base`` on ``cfg.samples`` noisy copies of ``x``; ties go to the lowest class.

    ``base`` is a callable (or an object with ``predict``) mapping a batch of
    rows to integer labels. Noise for sample ``sample_id`` comes from its own
    seeded stream, so results do not depend on evaluation order.
    Returns ``(counts, top_class)``.
    """
    predict = _predict_fn(base)
    x = np.asarray(x, dtype=np.float64).ravel()
    rng = RandomSource(cfg.seed).split("smoothing").split(int(sample_id))
    labels = []
    for start in range(0, cfg.samples, CHUNK):
        k = min(CHUNK, cfg.samples - start)
        noisy = x[None, :] + cfg.sigma * rng.normal(size=(k, x.size))
        labels.append(np.asarray(predict(noisy), dtype=np.int64).ravel())
    labels = np.concatenate(labels)
    if labels.min() < 0:
        raise ValueError("base classifier returned a negative label")
    size = max(int(labels.max()) + 1, n_classes or 0)
    counts = np.bincount(labels, minlength=size)
    return counts, int(np.argmax(counts))


def radius_from_probabilities(p1: float, p2: float, sigma: float) -> float:
    return 0.5 * sigma * (inv_norm_cdf(p1) - inv_norm_cdf(p2))


def certified_radius_estimate(counts, cfg: SmoothingConfig) -> float:
    """sigma/2 * (Phi^-1(p1) - Phi^-1(p2)) from the two largest vote frequencies.

    Frequencies are clamped to [1/(m+1), m/(m+1)] so unanimous votes stay finite.
    """
    counts = np.asarray(counts, dtype=np.int64)
    m = int(counts.sum())
    if m < 1:
        raise ValueError("counts must contain at least one vote")
    top = np.sort(counts)[::-1]
    c1 = int(top[0])
    c2 = int(top[1]) if len(top) > 1 else 0
    lo, hi = 1.0 / (m + 1), m / (m + 1.0)
    p1 = min(max(c1 / m, lo), hi)
    p2 = min(max(c2 / m, lo), hi)
    return max(0.0, radius_from_probabilities(p1, p2, cfg.sigma))


@dataclass
class SmoothedSample:
    sample_id: int
    label: int
    top_class: int
    correct: bool
    radius: float


def smooth_dataset(base, ds, cfg: SmoothingConfig):
    """Smoothed prediction and plug-in radius for every sample of a labelled dataset."""
    rows = []
    for i in range(ds.n):
        counts, top = smoothed_predict(base, ds.features[i], cfg, ds.class_count, sample_id=i)
        y = int(ds.labels[i])
        rows.append(SmoothedSample(i, y, top, top == y, certified_radius_estimate(counts, cfg)))
    return rows
