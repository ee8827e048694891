"""Data/compute scaling harness, nearest-neighbour distance profiles and intrinsic dimension."""
from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from .datasets import (AugmentConfig, LabeledDataset, load_cifar10, load_mnist, pad_mnist_to_32,
                       preprocess_center, subsample, subsample_indices)
from .lipnet import (DEFAULT_EPSILON, LossSpec, TrainConfig, TrainingDiverged, evaluate, make_mlp,
                     train)
from .numerics import RandomSource

CSV_HEADER = ("experiment", "n", "seed", "clean_acc", "cra", "train_acc", "train_cra", "wall_seconds")
DATASETS = ("mnist32", "mnist", "cifar10")


class IntrinsicDimError(ValueError):
    pass


def load_experiment_data(name: str, root=None):
    """``(train, test)`` with pixels in [0, 1] and the per-channel training mean subtracted.

    ``mnist32`` zero-pads the centred 28x28 digits to 32x32.
    """
    if name in ("mnist", "mnist32"):
        train, test = load_mnist(root)
    elif name == "cifar10":
        train, test = load_cifar10(root)
    else:
        raise ValueError(f"unknown dataset {name!r}; expected one of {DATASETS}")
    train, (test,), _ = preprocess_center(train, [test])
    if name == "mnist32":
        train, test = pad_mnist_to_32(train), pad_mnist_to_32(test)
    return train, test


@dataclass(frozen=True)
class ScalingPlan:
    dataset: str = "mnist32"
    sizes: tuple = (512, 2048, 8192)
    base_epochs: int = 40
    epoch_scaling: bool = True
    width: int = 256
    depth: int = 8
    kind: str = "aol"
    init: str = "identity"
    loss: LossSpec = field(default_factory=LossSpec)
    peak_lr: float = 0.1
    batch_size: int = 256
    epsilon: float = DEFAULT_EPSILON
    seeds: tuple = (0,)
    augment: AugmentConfig = field(default_factory=AugmentConfig.off)
    noise_sigma: float = 0.0
    experiment: str = "scale"

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if not sizes or any(n < 1 for n in sizes):
            raise ValueError("sizes must be positive")
        if list(sizes) != sorted(set(sizes)):
            raise ValueError("sizes must be strictly ascending")
        if self.base_epochs < 1:
            raise ValueError("base_epochs must be >= 1")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def epochs_for(self, n: int) -> int:
        """Base epochs at the largest size; a k-times smaller subsample trains k times longer."""
        if not self.epoch_scaling:
            return self.base_epochs
        return max(1, round(self.base_epochs * self.sizes[-1] / n))

    def train_config(self, n: int, seed: int, epochs=None) -> TrainConfig:
        return TrainConfig(peak_lr=self.peak_lr, epochs=epochs or self.epochs_for(n),
                           batch_size=self.batch_size, loss=self.loss, augment=self.augment,
                           seed=seed, noise_sigma=self.noise_sigma, epsilon=self.epsilon)

    def make_net(self, input_dim: int, n_classes: int, seed: int):
        return make_mlp(input_dim, n_classes, width=self.width, depth=self.depth, kind=self.kind,
                        init=self.init, rng=RandomSource(seed).split("init"))


@dataclass
class ExperimentRecord:
    experiment: str
    n: int
    seed: int
    clean_acc: float
    cra: float
    train_acc: float
    train_cra: float
    wall_seconds: float
    epochs: int = 0
    status: str = "ok"
    history: list = field(default_factory=list, repr=False)


def _train_point(plan, train_ds, test_ds, n, seed, epochs, experiment, log):
    sub = subsample(train_ds, n, seed)
    net = plan.make_net(train_ds.dim, train_ds.class_count, seed)
    cfg = plan.train_config(n, seed, epochs)
    t0 = time.perf_counter()
    try:
        net, hist = train(net, sub, cfg)
    except TrainingDiverged as exc:
        nan = float("nan")
        rec = ExperimentRecord(experiment, n, seed, nan, nan, nan, nan,
                               time.perf_counter() - t0, cfg.epochs, "diverged", exc.history)
        if log:
            log(f"{experiment} n={n} seed={seed}: {exc}")
        return rec, None
    te = evaluate(net, test_ds, plan.epsilon)
    rec = ExperimentRecord(experiment, n, seed, te["acc"], te["cra"], hist[-1]["train_acc"],
                           hist[-1]["train_cra"], time.perf_counter() - t0, cfg.epochs, "ok", hist)
    if log:
        log(f"{experiment} n={n} seed={seed} epochs={cfg.epochs}: test acc={te['acc']:.4f} "
            f"cra={te['cra']:.4f} train cra={rec.train_cra:.4f} ({rec.wall_seconds:.1f}s)")
    return rec, net


def run_scaling(plan: ScalingPlan, train_ds: LabeledDataset, test_ds: LabeledDataset, log=None):
    """Train one network per (size, seed) on nested subsamples; evaluate on the full test set.

    Divergent points are recorded with status ``"diverged"`` and NaN metrics.
    Rows come back sorted by (n, seed).
    """
    if plan.sizes[-1] > train_ds.n:
        raise ValueError(f"largest size {plan.sizes[-1]} exceeds the {train_ds.n} training samples")
    rows = []
    for seed in plan.seeds:
        for n in plan.sizes:
            rows.append(_train_point(plan, train_ds, test_ds, n, seed, None, plan.experiment, log)[0])
    rows.sort(key=lambda r: (r.n, r.seed))
    return rows


def run_compute_scaling(plan: ScalingPlan, train_ds, test_ds, n: int, epochs_list, log=None):
    """Fixed subsample size, one row per (epochs, seed); the experiment id carries the epoch count."""
    rows = []
    for seed in plan.seeds:
        for ep in epochs_list:
            if int(ep) < 1:
                raise ValueError("epochs must be >= 1")
            name = f"{plan.experiment}-e{int(ep)}"
            rows.append(_train_point(plan, train_ds, test_ds, n, seed, int(ep), name, log)[0])
    rows.sort(key=lambda r: (r.epochs, r.seed))
    return rows


def nn_distance_profile(train: LabeledDataset, test: LabeledDataset, sizes, metric="l2", seed=0):
    """Median distance from the test points to their nearest neighbour in nested training subsets.

    ``metric`` is ``"l2"``, ``"linf"`` or ``"angular"`` (angle between the
    vectors in radians). Returns a list of ``(n, median distance)``.
    """
    sizes = sorted(int(n) for n in sizes)
    if not sizes or sizes[-1] > train.n or sizes[0] < 1:
        raise ValueError(f"sizes must lie in [1, {train.n}]")
    order = subsample_indices(train.n, sizes[-1], seed)
    P = np.ascontiguousarray(train.features[order], dtype=np.float64)
    Q = np.ascontiguousarray(test.features, dtype=np.float64)
    code = 1 if metric == "linf" else 0
    if metric == "angular":
        P = P / np.maximum(np.linalg.norm(P, axis=1, keepdims=True), 1e-300)
        Q = Q / np.maximum(np.linalg.norm(Q, axis=1, keepdims=True), 1e-300)
    elif metric not in ("l2", "linf"):
        raise ValueError(f"unknown metric {metric!r}")
    zeros = np.zeros(len(P), dtype=np.int64)
    out = []
    for n in sizes:
        _, d1, _ = kernels.nn_query(P[:n], zeros[:n], Q, code, 1)
        if metric == "angular":
            # chord length c between unit vectors subtends the angle 2 asin(c / 2)
            d1 = 2.0 * np.arcsin(np.clip(d1 / 2.0, 0.0, 1.0))
        out.append((n, float(np.median(d1))))
    return out


def estimate_intrinsic_dim(profile) -> float:
    """d* = -1/slope of the least-squares line through (log n, log median distance)."""
    pts = [(float(n), float(r)) for n, r in profile]
    if len(pts) < 3:
        raise IntrinsicDimError("need at least 3 profile points")
    if any(r <= 0 or n <= 0 for n, r in pts):
        raise IntrinsicDimError("profile sizes and distances must be positive")
    x = np.log([n for n, _ in pts])
    y = np.log([r for _, r in pts])
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        raise IntrinsicDimError("profile sizes must not all be equal")
    slope = float(xc @ (y - y.mean())) / denom
    if slope >= 0:
        raise IntrinsicDimError(f"non-negative slope {slope:.4g}: distances do not shrink with n")
    return -1.0 / slope


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.6f}"


def write_rows_csv(path, rows, timing=False) -> None:
    """Write records in the fixed CSV schema with 6-decimal floats.

    ``wall_seconds`` is written as 0 unless ``timing`` is set, so repeated
    runs produce byte-identical files; real timings go to the JSON summary.
    """
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.experiment, int(r.n), int(r.seed), _fmt(r.clean_acc), _fmt(r.cra),
                        _fmt(r.train_acc), _fmt(r.train_cra), _fmt(r.wall_seconds if timing else 0.0)])


def read_rows_csv(path) -> list:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        return [ExperimentRecord(r[0], int(r[1]), int(r[2]), *map(float, r[3:8])) for r in reader]


def environment_fingerprint() -> dict:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "machine": platform.machine(),
        "kernel_backend": kernels.BACKEND,
    }


def _jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_summary_json(path, summary: dict) -> None:
    """JSON summary with the environment fingerprint and a timestamp added."""
    doc = dict(summary)
    doc["environment"] = environment_fingerprint()
    doc["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    with open(path, "w") as f:
        json.dump(_jsonable(doc), f, indent=2, sort_keys=True)
        f.write("\n")


def summarize_records(rows) -> dict:
    """Per-size mean metrics over seeds (diverged rows excluded)."""
    out = {}
    for n in sorted({r.n for r in rows}):
        ok = [r for r in rows if r.n == n and r.status == "ok"]
        entry = {"runs": len([r for r in rows if r.n == n]), "ok": len(ok)}
        for key in ("clean_acc", "cra", "train_acc", "train_cra", "wall_seconds"):
            entry[key] = float(np.mean([getattr(r, key) for r in ok])) if ok else None
        out[str(n)] = entry
    return out


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_line_chart(path, series: dict, title="", xlabel="n", ylabel="", logx=True,
                   width=640, height=400) -> None:
    """Minimal SVG line chart; ``series`` maps a legend name to ``[(x, y), ...]``."""
    pts = [(x, y) for s in series.values() for x, y in s if y is not None and math.isfinite(y)]
    if not pts:
        pts = [(1.0, 0.0), (2.0, 1.0)]
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    xs = [tx(x) for x, _ in pts]
    ys = [y for _, y in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 60, 20, 30, 45
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (tx(x) - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (1 - (y - y0) / (y1 - y0)) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="12">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.1f}" y="18" text-anchor="middle">{title}</text>',
             f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
             f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
             f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">'
             f'{xlabel}{" (log scale)" if logx else ""}</text>',
             f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
             f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{ylabel}</text>',
             f'<text x="{ml - 4}" y="{mt + ph:.1f}" text-anchor="end">{y0:.3g}</text>',
             f'<text x="{ml - 4}" y="{mt + 10:.1f}" text-anchor="end">{y1:.3g}</text>']
    for x in sorted({x for x, _ in pts}):
        parts.append(f'<text x="{px(x):.1f}" y="{mt + ph + 16}" text-anchor="middle">{x:g}</text>')
    for i, (name, s) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        good = [(x, y) for x, y in s if y is not None and math.isfinite(y)]
        if good:
            coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in good)
            parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
            parts.extend(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>' for x, y in good)
        parts.append(f'<text x="{ml + pw - 4}" y="{mt + 14 + 14 * i}" text-anchor="end" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def plan_with(plan: ScalingPlan, **changes) -> ScalingPlan:
    return replace(plan, **changes)
