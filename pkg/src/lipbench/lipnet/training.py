"""SGD with Nesterov momentum under a one-cycle schedule, plus accuracy / CRA evaluation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..datasets import AugmentConfig, LabeledDataset, augment_batch
from ..numerics import RandomSource
from .losses import LossSpec, loss_and_grad
from .network import Network

DEFAULT_EPSILON = 36.0 / 255.0
SQRT2 = math.sqrt(2.0)
LR_GRID = tuple(10.0 ** (k / 2.0) for k in range(-6, 1))  # 1e-3 ... 1 in steps of sqrt(10)

WARMUP_FRACTION = 0.1
START_DIV = 25.0
END_DIV = 1e4


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, step, lr, loss, history):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, step {step} (lr={lr:.4g})")
        self.epoch = epoch
        self.step = step
        self.lr = lr
        self.loss = loss
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 0.1
    epochs: int = 10
    batch_size: int = 256
    momentum: float = 0.9
    loss: LossSpec = field(default_factory=LossSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig.off)
    seed: int = 0
    noise_sigma: float = 0.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValueError(f"epochs must be an integer >= 1, got {self.epochs}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError(f"batch_size must be an integer >= 1, got {self.batch_size}")
        if not self.peak_lr > 0:
            raise ValueError("peak_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def one_cycle_lr(step: int, total_steps: int, peak: float) -> float:
    """Linear ramp peak/25 -> peak over the first 10% of steps, then linear decay to peak/1e4."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    warm = WARMUP_FRACTION * total_steps
    start, end = peak / START_DIV, peak / END_DIV
    if step < warm:
        return start + (peak - start) * step / warm
    rest = total_steps - 1 - warm
    if rest <= 0:
        return peak
    t = min(1.0, (step - warm) / rest)
    return peak + (end - peak) * t


class NesterovSGD:
    """buf <- mu*buf + g;  p <- p - lr*(g + mu*buf), updating parameters in place."""

    def __init__(self, params, momentum=0.9):
        self.params = params
        self.momentum = momentum
        self.buffers = [np.zeros_like(p) for p in params]

    def step(self, grads, lr):
        mu = self.momentum
        for p, g, buf in zip(self.params, grads, self.buffers):
            buf *= mu
            buf += g
            p -= lr * g
            p -= (lr * mu) * buf


def margins(scores, labels) -> np.ndarray:
    """True-class score minus the best other score."""
    S = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(y))
    true = S[rows, y]
    other = S.copy()
    other[rows, y] = -np.inf
    return true - other.max(axis=1)


def cra(scores, labels, epsilon=DEFAULT_EPSILON) -> float:
    """Fraction of samples whose margin strictly exceeds sqrt(2)*epsilon."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    m = margins(scores, labels)
    if len(m) == 0:
        return 0.0
    return float(np.mean(m > SQRT2 * epsilon))


def accuracy(scores, labels) -> float:
    S = np.atleast_2d(scores)
    return float(np.mean(np.argmax(S, axis=1) == np.asarray(labels)))


def evaluate(net: Network, ds: LabeledDataset, epsilon=DEFAULT_EPSILON) -> dict:
    S = net.scores(ds.features)
    return {"acc": accuracy(S, ds.labels), "cra": cra(S, ds.labels, epsilon)}


def train(net: Network, data: LabeledDataset, cfg: TrainConfig, val: LabeledDataset | None = None,
          log=None):
    """Train ``net`` in place. Returns ``(net, history)``.

    Each history entry holds the epoch's mean loss, running batch accuracy and
    CRA (measured on the augmented batches before each update), the final
    learning rate, and full-set train/validation accuracy and CRA.
    """
    if data.n == 0:
        raise ValueError("training data is empty")
    if cfg.augment.active:
        cfg.augment.check_shape(data.image_shape)
    rng = RandomSource(cfg.seed).split("train")
    order_rng = rng.split("order")
    aug_rng = rng.split("augment")
    noise_rng = rng.split("noise")
    steps_per_epoch = math.ceil(data.n / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    opt = NesterovSGD(net.params(), cfg.momentum)
    history = []
    step = 0
    lr = one_cycle_lr(0, total, cfg.peak_lr)
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(data.n)
        loss_sum = correct = certified = 0.0
        for start in range(0, data.n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            X = data.features[idx]
            y = data.labels[idx]
            if cfg.augment.active:
                X = augment_batch(X, data.image_shape, cfg.augment, aug_rng)
            if cfg.noise_sigma > 0:
                X = X + cfg.noise_sigma * noise_rng.normal(size=X.shape)
            cache = []
            S = net.forward(X, training=True, cache=cache)
            loss, dS = loss_and_grad(cfg.loss, S, y)
            lr = one_cycle_lr(step, total, cfg.peak_lr)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, step, lr, loss, history)
            grads, _ = net.backward(cache, dS)
            opt.step(grads, lr)
            m = margins(S, y)
            loss_sum += loss * len(idx)
            correct += np.sum(m > 0)
            certified += np.sum(m > SQRT2 * cfg.epsilon)
            step += 1
        entry = {
            "epoch": epoch + 1,
            "lr": lr,
            "loss": float(loss_sum / data.n),
            "batch_acc": float(correct / data.n),
            "batch_cra": float(certified / data.n),
        }
        if epoch == cfg.epochs - 1 or val is not None:
            tr = evaluate(net, data, cfg.epsilon)
            entry["train_acc"], entry["train_cra"] = tr["acc"], tr["cra"]
        if val is not None:
            ev = evaluate(net, val, cfg.epsilon)
            entry["val_acc"], entry["val_cra"] = ev["acc"], ev["cra"]
        history.append(entry)
        if log is not None:
            log(entry)
    return net, history


def select_learning_rate(make_net, data: LabeledDataset, val: LabeledDataset, cfg: TrainConfig,
                         grid=LR_GRID):
    """Train one fresh network per peak learning rate; pick the best validation CRA.

    Diverged runs score -1. Ties keep the smaller learning rate.
    Returns ``(best_lr, {lr: val_cra})``.
    """
    from dataclasses import replace

    scores = {}
    for lr in grid:
        net = make_net()
        try:
            train(net, data, replace(cfg, peak_lr=lr))
            scores[lr] = evaluate(net, val, cfg.epsilon)["cra"]
        except TrainingDiverged:
            scores[lr] = -1.0
    best = max(scores, key=lambda k: (scores[k], -k))
    return best, scores
