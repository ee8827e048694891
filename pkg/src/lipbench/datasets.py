"""Dataset ingestion (MNIST IDX, CIFAR-10 binary), preprocessing, augmentation and subsampling."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import RandomSource

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CACHE_MAGIC = b"LBDS1"


class DatasetFormatError(ValueError):
    pass


class MagicError(DatasetFormatError):
    pass


class TruncatedError(DatasetFormatError):
    pass


class CountMismatchError(DatasetFormatError):
    pass


class EmptyDatasetError(DatasetFormatError):
    pass


class LabelRangeError(DatasetFormatError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    image_shape: tuple = ()
    class_count: int = 2

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-D, got {X.shape}")
        if X.shape[0] < 1:
            raise EmptyDatasetError("dataset has no samples")
        if y.shape != (X.shape[0],):
            raise ValueError(f"{y.shape[0]} labels for {X.shape[0]} samples")
        if y.min() < 0 or y.max() >= self.class_count:
            raise LabelRangeError(f"labels must lie in [0, {self.class_count})")
        shape = tuple(int(s) for s in self.image_shape)
        if shape and int(np.prod(shape)) != X.shape[1]:
            raise ValueError(f"image shape {shape} does not match {X.shape[1]} features")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "image_shape", shape)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.image_shape, self.class_count)

    def with_features(self, X) -> "LabeledDataset":
        return LabeledDataset(X, self.labels, self.image_shape, self.class_count)


def _read_all(stream) -> bytes:
    if isinstance(stream, (bytes, bytearray, memoryview)):
        data = bytes(stream)
    elif isinstance(stream, (str, os.PathLike)):
        data = Path(stream).read_bytes()
    else:
        data = stream.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _idx_header(data: bytes, magic: int, ndims: int, what: str):
    need = 4 * (1 + ndims)
    if len(data) < need:
        raise TruncatedError(f"{what}: header needs {need} bytes, got {len(data)}")
    found, *dims = struct.unpack(">" + "I" * (1 + ndims), data[:need])
    if found != magic:
        raise MagicError(f"{what}: magic 0x{found:08x}, expected 0x{magic:08x}")
    return dims, data[need:]


def load_idx(image_bytes, label_bytes, class_count: int = 10) -> LabeledDataset:
    """Parse an IDX image/label pair; pixels are divided by 255."""
    (count, rows, cols), pixels = _idx_header(_read_all(image_bytes), IDX_IMAGES_MAGIC, 3, "images")
    (lcount,), labels = _idx_header(_read_all(label_bytes), IDX_LABELS_MAGIC, 1, "labels")
    if count != lcount:
        raise CountMismatchError(f"{count} images but {lcount} labels")
    if len(pixels) < count * rows * cols:
        raise TruncatedError(f"images: expected {count * rows * cols} pixel bytes, got {len(pixels)}")
    if len(labels) < lcount:
        raise TruncatedError(f"labels: expected {lcount} bytes, got {len(labels)}")
    X = np.frombuffer(pixels, dtype=np.uint8, count=count * rows * cols).reshape(count, rows * cols)
    y = np.frombuffer(labels, dtype=np.uint8, count=lcount)
    return LabeledDataset(X / 255.0, y.astype(np.int64), (1, rows, cols), class_count)


def load_cifar10_binary(batch_bytes) -> LabeledDataset:
    """Parse CIFAR-10 binary batches (1 label byte + 3072 plane-ordered pixel bytes per record)."""
    if isinstance(batch_bytes, (bytes, bytearray, memoryview, str, os.PathLike)):
        batch_bytes = [batch_bytes]
    blocks = []
    for i, stream in enumerate(batch_bytes):
        data = _read_all(stream)
        if len(data) % CIFAR_RECORD:
            raise TruncatedError(f"batch {i}: {len(data)} bytes is not a multiple of {CIFAR_RECORD}")
        blocks.append(np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(blocks) if blocks else np.empty((0, CIFAR_RECORD), np.uint8)
    if records.shape[0] == 0:
        raise EmptyDatasetError("no CIFAR-10 records")
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= 10:
        raise LabelRangeError(f"label byte {labels.max()} >= 10")
    return LabeledDataset(records[:, 1:] / 255.0, labels, (3, 32, 32), 10)


def data_root() -> Path:
    return Path(os.environ.get("LIPBENCH_DATA", "data"))


def _first_existing(folder: Path, names):
    for name in names:
        for candidate in (folder / name, folder / (name + ".gz")):
            if candidate.exists():
                return candidate
    raise FileNotFoundError(f"none of {names} found in {folder}")


def load_mnist(root=None):
    """Return ``(train, test)`` from ``<root>/mnist`` IDX files (optionally gzipped)."""
    folder = Path(root or data_root()) / "mnist"
    out = []
    for split in ("train", "t10k"):
        img = _first_existing(folder, [f"{split}-images-idx3-ubyte", f"{split}-images.idx3-ubyte"])
        lab = _first_existing(folder, [f"{split}-labels-idx1-ubyte", f"{split}-labels.idx1-ubyte"])
        out.append(load_idx(img, lab))
    return tuple(out)


def load_cifar10(root=None):
    """Return ``(train, test)`` from the CIFAR-10 binary batches under ``<root>/cifar10``."""
    base = Path(root or data_root())
    for folder in (base / "cifar10", base / "cifar10" / "cifar-10-batches-bin", base / "cifar-10-batches-bin"):
        if (folder / "test_batch.bin").exists():
            train = load_cifar10_binary([folder / f"data_batch_{i}.bin" for i in range(1, 6)])
            return train, load_cifar10_binary([folder / "test_batch.bin"])
    raise FileNotFoundError(f"CIFAR-10 binary batches not found under {base}")


def channel_means(ds: LabeledDataset) -> np.ndarray:
    c = ds.image_shape[0] if ds.image_shape else 1
    return ds.features.reshape(ds.n, c, -1).mean(axis=(0, 2))


def preprocess_center(train: LabeledDataset, apply_to=()):
    """Subtract the per-channel training mean from ``train`` and every dataset in ``apply_to``.

    Returns ``(centered_train, [centered others], means)``. No rescaling.
    """
    means = channel_means(train)
    c = len(means)

    def center(ds):
        if ds.image_shape != train.image_shape:
            raise ValueError(f"shape {ds.image_shape} differs from training shape {train.image_shape}")
        X = ds.features.reshape(ds.n, c, -1) - means[None, :, None]
        return ds.with_features(X.reshape(ds.n, -1))

    return center(train), [center(ds) for ds in apply_to], means


def pad_mnist_to_32(ds: LabeledDataset) -> LabeledDataset:
    if ds.image_shape != (1, 28, 28):
        raise ValueError(f"expected image shape (1, 28, 28), got {ds.image_shape}")
    out = np.zeros((ds.n, 1, 32, 32))
    out[:, :, 2:30, 2:30] = ds.features.reshape(ds.n, 1, 28, 28)
    return LabeledDataset(out.reshape(ds.n, -1), ds.labels, (1, 32, 32), ds.class_count)


def subsample_indices(total: int, n: int, seed) -> np.ndarray:
    if not 1 <= n <= total:
        raise ValueError(f"subsample size {n} outside [1, {total}]")
    rng = seed if isinstance(seed, RandomSource) else RandomSource(seed)
    # prefixes of one permutation nest: smaller subsamples are subsets of larger ones
    return rng.split("subsample").permutation(total)[:n]


def subsample(ds: LabeledDataset, n: int, seed) -> LabeledDataset:
    return ds.take(subsample_indices(ds.n, n, seed))


@dataclass(frozen=True)
class AugmentConfig:
    crop_padding: int = 4
    horizontal_flip: bool = False
    random_erase: bool = False
    erase_size: tuple = (4, 12)
    crop: bool = True

    def __post_init__(self):
        if self.crop_padding < 0:
            raise ValueError("crop_padding must be >= 0")
        lo, hi = self.erase_size
        if not 1 <= lo <= hi:
            raise ValueError(f"erase_size must satisfy 1 <= lo <= hi, got {self.erase_size}")

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls(crop_padding=0, horizontal_flip=False, random_erase=False, crop=False)

    @property
    def active(self) -> bool:
        return (self.crop and self.crop_padding > 0) or self.horizontal_flip or self.random_erase

    def check_shape(self, image_shape):
        if len(image_shape) != 3:
            raise ValueError("augmentation needs image-shaped data (C, H, W)")
        _, h, w = image_shape
        if self.random_erase and self.erase_size[1] > min(h, w):
            raise ValueError(f"erase patch {self.erase_size[1]} does not fit a {h}x{w} image")


def augment_batch(X: np.ndarray, image_shape, cfg: AugmentConfig, rng) -> np.ndarray:
    """Augment a batch of images of shape ``(B, C, H, W)`` (or flattened ``(B, C*H*W)``).

    Crop pads with zeros and takes a random window of the original size, flip
    mirrors the width axis with probability 1/2, erase zeroes one random square.
    """
    flat = X.ndim == 2
    B = X.shape[0]
    c, h, w = image_shape
    out = X.reshape(B, c, h, w)
    if cfg.crop and cfg.crop_padding > 0:
        p = cfg.crop_padding
        offsets = rng.integers(0, 2 * p + 1, size=(B, 2))
        padded = np.pad(out, ((0, 0), (0, 0), (p, p), (p, p)))
        windows = np.lib.stride_tricks.sliding_window_view(padded, (h, w), axis=(2, 3))
        out = windows[np.arange(B), :, offsets[:, 0], offsets[:, 1]]
    if cfg.horizontal_flip:
        flip = rng.random(B) < 0.5
        out = np.where(flip[:, None, None, None], out[..., ::-1], out)
    if cfg.random_erase:
        cfg.check_shape(image_shape)
        lo, hi = cfg.erase_size
        size = rng.integers(lo, hi + 1, size=B)
        top = np.floor(rng.random(B) * (h - size + 1)).astype(np.int64)
        left = np.floor(rng.random(B) * (w - size + 1)).astype(np.int64)
        rows = np.arange(h)[None, :]
        cols = np.arange(w)[None, :]
        in_r = (rows >= top[:, None]) & (rows < (top + size)[:, None])
        in_c = (cols >= left[:, None]) & (cols < (left + size)[:, None])
        mask = in_r[:, :, None] & in_c[:, None, :]
        out = np.where(mask[:, None, :, :], 0.0, out)
    out = np.ascontiguousarray(out)
    return out.reshape(B, -1) if flat else out


def augment(x: np.ndarray, cfg: AugmentConfig, rng) -> np.ndarray:
    """Augment a single ``(C, H, W)`` image."""
    return augment_batch(x[None], x.shape, cfg, rng)[0]


def write_cache(ds: LabeledDataset, path) -> None:
    """Write the LBDS1 cache: magic, six uint64 dims, float64 feature block, int64 label block."""
    shape = ds.image_shape if ds.image_shape else (0, 0, 0)
    header = CACHE_MAGIC + struct.pack("<6Q", ds.n, ds.dim, ds.class_count, *shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(ds.features.astype("<f8").tobytes())
        f.write(ds.labels.astype("<i8").tobytes())


def read_cache(path) -> LabeledDataset:
    data = Path(path).read_bytes()
    if data[:5] != CACHE_MAGIC:
        raise MagicError(f"{path}: not an LBDS1 cache file")
    n, d, k, c, h, w = struct.unpack("<6Q", data[5:53])
    need = 53 + 8 * n * d + 8 * n
    if len(data) < need:
        raise TruncatedError(f"{path}: expected {need} bytes, got {len(data)}")
    X = np.frombuffer(data, dtype="<f8", count=n * d, offset=53).reshape(n, d)
    y = np.frombuffer(data, dtype="<i8", count=n, offset=53 + 8 * n * d)
    shape = (c, h, w) if c else ()
    return LabeledDataset(X.astype(np.float64), y.astype(np.int64), shape, k)
