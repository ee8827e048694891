"""MLP container: forward, exact backward, construction helpers and the LNET1 checkpoint format."""
from __future__ import annotations

import json
import struct

import numpy as np

from .layers import DenseLayer, init_weight
from .losses import loss_and_grad

CHECKPOINT_MAGIC = b"LNET1"


class Network:
    """Sequence of dense layers; inputs narrower than ``input_pad_to`` are zero-padded."""

    def __init__(self, layers, input_dim=None, input_pad_to=None):
        if not layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")
        self.layers = list(layers)
        self.input_pad_to = input_pad_to or layers[0].in_dim
        self.input_dim = input_dim or self.input_pad_to
        if self.input_pad_to != layers[0].in_dim or self.input_dim > self.input_pad_to:
            raise ValueError("input padding must match the first layer width")

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def is_lipschitz(self) -> bool:
        return all(layer.kind != "standard" for layer in self.layers)

    def freeze_cpl_sigma(self, frozen=True):
        """Pin every CPL layer's spectral-norm estimate at its converged value (or unpin)."""
        for layer in self.layers:
            if layer.kind == "cpl":
                layer.fixed_sigma = None
                if frozen:
                    layer.fixed_sigma = layer.cpl_sigma(training=False)

    def _pad(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise ValueError(f"network expects {self.input_dim} input features, got {X.shape[1]}")
        if self.input_pad_to > self.input_dim:
            X = np.pad(X, ((0, 0), (0, self.input_pad_to - self.input_dim)))
        return X

    def forward(self, X, training=False, cache=None):
        h = self._pad(X)
        for layer in self.layers:
            h = layer.forward(h, training=training, cache=cache)
        return h

    def __call__(self, X):
        return self.forward(X)

    def predict(self, X, batch_size=4096):
        return np.argmax(self.scores(X, batch_size), axis=1)

    def scores(self, X, batch_size=4096):
        X = np.atleast_2d(X)
        return np.concatenate([self.forward(X[i:i + batch_size]) for i in range(0, len(X), batch_size)])

    def backward(self, cache, dS):
        """Gradients for every parameter (in ``params()`` order) and the input gradient."""
        grads = []
        g = dS
        for layer, local in zip(reversed(self.layers), reversed(cache)):
            g, dW, db = layer.backward(local, g)
            grads.append((dW, db))
        flat = [t for pair in reversed(grads) for t in pair]
        return flat, g[:, :self.input_dim]


def forward(net: Network, x):
    """Scores for one input vector or a batch of rows."""
    s = net.forward(x)
    return s[0] if np.ndim(x) == 1 else s


def backward(net: Network, X, y, spec, training=False):
    """Mean loss over the batch and exact gradients with respect to all parameters."""
    cache = []
    S = net.forward(X, training=training, cache=cache)
    loss, dS = loss_and_grad(spec, S, y)
    grads, _ = net.backward(cache, dS)
    return loss, grads


def input_gradient(net: Network, X, dS):
    cache = []
    net.forward(X, cache=cache)
    _, dX = net.backward(cache, dS)
    return dX


def make_mlp(input_dim, n_classes, width=256, depth=8, kind="aol", activation="maxmin",
             init="identity", rng=None) -> Network:
    """Build a ``depth``-layer MLP of the given ``kind``.

    Inputs narrower than ``width`` are zero-padded so the first layer is
    square. For ``kind="cpl"`` the non-square first/last layers are AOL.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if rng is None:
        from ..numerics import RandomSource
        rng = RandomSource(0)
    pad_to = max(input_dim, width)
    dims = [pad_to] + [width] * (depth - 1) + [n_classes]
    layers = []
    for i in range(depth):
        fan_in, fan_out = dims[i], dims[i + 1]
        last = i == depth - 1
        k = kind
        if kind == "cpl" and fan_in != fan_out:
            k = "aol"
        act = None if last else ("relu" if kind == "standard" else activation)
        if k == "cpl" and act == "maxmin":
            act = None
        W = init_weight(k, fan_out, fan_in, init, rng.split(f"layer{i}"))
        layers.append(DenseLayer(k, W, activation=act))
    return Network(layers, input_dim=input_dim, input_pad_to=pad_to)


def save_checkpoint(net: Network, path) -> None:
    """LNET1: magic, uint32 header length, JSON layer specs, then little-endian float64 blocks."""
    spec = {
        "input_dim": net.input_dim,
        "input_pad_to": net.input_pad_to,
        "layers": [
            {"kind": l.kind, "shape": list(l.W.shape), "activation": l.activation,
             "power_vector": l.power_vector is not None}
            for l in net.layers
        ],
    }
    header = json.dumps(spec, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header)
        for l in net.layers:
            f.write(l.W.astype("<f8").tobytes())
            f.write(l.b.astype("<f8").tobytes())
            if l.power_vector is not None:
                f.write(l.power_vector.astype("<f8").tobytes())


def load_checkpoint(path) -> Network:
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an LNET1 checkpoint")
    (hlen,) = struct.unpack("<I", data[5:9])
    spec = json.loads(data[9:9 + hlen].decode("utf-8"))
    pos = 9 + hlen

    def block(count):
        nonlocal pos
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr

    layers = []
    for ls in spec["layers"]:
        rows, cols = ls["shape"]
        W = block(rows * cols).reshape(rows, cols)
        b = block(rows)
        v = block(cols) if ls["power_vector"] else None
        layers.append(DenseLayer(ls["kind"], W, b, ls["activation"], v))
    return Network(layers, input_dim=spec["input_dim"], input_pad_to=spec["input_pad_to"])
