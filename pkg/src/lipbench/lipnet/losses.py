"""Cross-entropy variants on raw network scores. Each returns the mean loss and d(loss)/d(scores)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("temperature-ce", "offset-ce", "selfnorm-ce")
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class LossSpec:
    kind: str = "offset-ce"
    offset: float = 0.25
    temperature: float = 0.25
    tradeoff: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"loss kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind != "selfnorm-ce" and not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.kind == "selfnorm-ce" and self.tradeoff < 0:
            raise ValueError("tradeoff must be >= 0")

    @classmethod
    def paper_default(cls) -> "LossSpec":
        return cls("offset-ce", offset=0.25, temperature=0.25)

    @classmethod
    def overfit(cls) -> "LossSpec":
        return cls("offset-ce", offset=math.sqrt(2.0), temperature=0.25)


def _onehot(y, k):
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def _ce(logits, y):
    # per-sample cross entropy and softmax
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=1, keepdims=True)
    p = e / z
    loss = (np.log(z[:, 0]) + m[:, 0]) - logits[np.arange(len(y)), y]
    return loss, p


def loss_and_grad(spec: LossSpec, S, y):
    """Mean loss over the batch and its gradient with respect to the score matrix S (B, K)."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    B, K = S.shape
    Y = _onehot(y, K)
    if spec.kind == "temperature-ce":
        loss, p = _ce(S / spec.temperature, y)
        dS = (p - Y) / spec.temperature
    elif spec.kind == "offset-ce":
        loss, p = _ce((S - spec.offset * Y) / spec.temperature, y)
        dS = (p - Y) / spec.temperature
    else:
        mu = S.mean(axis=1, keepdims=True)
        std = np.sqrt(np.mean((S - mu) ** 2, axis=1, keepdims=True))
        denom = np.maximum(std + spec.tradeoff, STD_FLOOR)
        loss, p = _ce(S / denom - Y, y)
        dz = p - Y
        # through s / (std(s) + t): direct term plus the dependence of std on s
        inner = np.sum(dz * S, axis=1, keepdims=True)
        dstd = np.where(std > 0, (S - mu) / (K * np.where(std > 0, std, 1.0)), 0.0)
        active = (std + spec.tradeoff) > STD_FLOOR
        dS = dz / denom - np.where(active, inner / denom ** 2, 0.0) * dstd
    return float(loss.mean()), dS / B


def loss_value(spec: LossSpec, s, y) -> float:
    """Loss of a single score vector ``s`` with label ``y``."""
    loss, _ = loss_and_grad(spec, np.asarray(s, dtype=np.float64)[None, :], [y])
    return loss
