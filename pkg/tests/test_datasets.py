import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lipbench.datasets import (AugmentConfig, CountMismatchError, EmptyDatasetError, LabeledDataset,
                               LabelRangeError, MagicError, TruncatedError, augment, augment_batch,
                               load_cifar10_binary, load_idx, pad_mnist_to_32, preprocess_center,
                               read_cache, subsample, subsample_indices, write_cache)
from lipbench.numerics import RandomSource


def idx_labels(labels):
    return struct.pack(">II", 0x801, len(labels)) + bytes(labels)


def idx_images(pixels, count, rows, cols):
    return struct.pack(">IIII", 0x803, count, rows, cols) + bytes(pixels)


def test_load_idx_hand_fixture():
    ds = load_idx(idx_images([0, 255, 128, 64], 1, 2, 2), idx_labels([7]))
    assert ds.image_shape == (1, 2, 2)
    assert np.allclose(ds.features[0], [0.0, 1.0, 128 / 255, 64 / 255], atol=0, rtol=1e-15)
    assert ds.features[0, 2] == pytest.approx(0.50196, abs=1e-5)
    assert ds.features[0, 3] == pytest.approx(0.25098, abs=1e-5)
    assert list(ds.labels) == [7]


def test_load_idx_label_fixture():
    ds = load_idx(idx_images([0] * 8, 2, 2, 2), idx_labels([7, 3]))
    assert list(ds.labels) == [7, 3]


def test_load_idx_gzip():
    img = gzip.compress(idx_images([1, 2, 3, 4], 1, 2, 2))
    ds = load_idx(img, gzip.compress(idx_labels([5])))
    assert ds.n == 1 and ds.labels[0] == 5


def test_load_idx_errors():
    with pytest.raises(CountMismatchError):
        load_idx(idx_images([0] * 8, 2, 2, 2), idx_labels([1, 2, 3]))
    with pytest.raises(MagicError):
        load_idx(idx_images([0] * 4, 1, 2, 2), idx_images([0] * 4, 1, 2, 2))
    with pytest.raises(TruncatedError):
        load_idx(idx_images([0] * 3, 1, 2, 2), idx_labels([1]))
    with pytest.raises(TruncatedError):
        load_idx(b"\x00\x00", idx_labels([1]))
    # distinct error types
    assert len({CountMismatchError, MagicError, TruncatedError}) == 3


def test_cifar_binary():
    rec = bytes([9]) + bytes([255] * 3072)
    ds = load_cifar10_binary([rec])
    assert ds.n == 1 and ds.labels[0] == 9 and ds.image_shape == (3, 32, 32)
    assert np.all(ds.features == 1.0)
    with pytest.raises(EmptyDatasetError):
        load_cifar10_binary([b""])
    with pytest.raises(TruncatedError):
        load_cifar10_binary([rec + b"\x00"])
    with pytest.raises(LabelRangeError):
        load_cifar10_binary([bytes([10]) + bytes(3072)])


def test_cifar_plane_layout():
    pix = np.arange(3072) % 251
    ds = load_cifar10_binary([bytes([1]) + bytes(pix.astype(np.uint8))])
    img = ds.features[0].reshape(3, 32, 32)
    # red plane first, row-major
    assert img[0, 0, 1] == pytest.approx(1 / 255)
    assert img[1, 0, 0] == pytest.approx((1024 % 251) / 255)


def test_preprocess_center_examples():
    tr = LabeledDataset(np.array([[0.2], [0.4]]), np.array([0, 1]), (1, 1, 1), 2)
    te = LabeledDataset(np.array([[1.0]]), np.array([0]), (1, 1, 1), 2)
    ctr, (cte,), means = preprocess_center(tr, [te])
    assert means == pytest.approx([0.3])
    assert np.allclose(ctr.features[:, 0], [-0.1, 0.1], atol=1e-15)
    assert cte.features[0, 0] == pytest.approx(0.7)


def test_preprocess_center_three_channels_and_idempotent():
    X = RandomSource(1).random((10, 3 * 4 * 4))
    tr = LabeledDataset(X, np.zeros(10, int), (3, 4, 4), 2)
    ctr, _, means = preprocess_center(tr)
    assert means.shape == (3,)
    per_channel = ctr.features.reshape(10, 3, -1).mean(axis=(0, 2))
    assert np.max(np.abs(per_channel)) < 1e-10
    again, _, _ = preprocess_center(ctr)
    assert np.max(np.abs(again.features - ctr.features)) < 1e-12
    other = LabeledDataset(np.zeros((1, 16)), [0], (1, 4, 4), 2)
    with pytest.raises(ValueError):
        preprocess_center(tr, [other])


def test_pad_mnist():
    X = np.zeros((2, 784))
    X[1, 0] = 1.0
    ds = pad_mnist_to_32(LabeledDataset(X, [0, 1], (1, 28, 28), 10))
    assert ds.dim == 1024 and ds.image_shape == (1, 32, 32)
    img = ds.features.reshape(2, 32, 32)
    assert np.all(img[0] == 0)
    assert img[1, 2, 2] == 1.0 and img[1].sum() == 1.0
    with pytest.raises(ValueError):
        pad_mnist_to_32(LabeledDataset(np.zeros((1, 4)), [0], (1, 2, 2), 10))


def test_subsample_properties():
    ds = LabeledDataset(np.arange(200.0)[:, None], np.zeros(200, int), (), 2)
    full = subsample_indices(200, 200, 3)
    assert sorted(full) == list(range(200))
    assert np.array_equal(subsample_indices(200, 50, 3), subsample_indices(200, 50, 3))
    assert set(subsample_indices(200, 10, 3)) <= set(subsample_indices(200, 100, 3))
    assert subsample(ds, 10, 3).n == 10
    for bad in (0, 201):
        with pytest.raises(ValueError):
            subsample_indices(200, bad, 3)


class ForcedRng:
    def __init__(self, offsets):
        self.offsets = offsets

    def integers(self, low, high=None, size=None):
        return np.broadcast_to(np.asarray(self.offsets), size).copy()


def test_augment_examples():
    x = RandomSource(0).random((1, 5, 6))
    assert np.array_equal(augment(x, AugmentConfig.off(), RandomSource(0)), x)
    # centre offset of a padding-4 crop is the identity
    assert np.array_equal(augment(x, AugmentConfig(crop_padding=4), ForcedRng([4, 4])), x)
    shifted = augment(x, AugmentConfig(crop_padding=4), ForcedRng([5, 4]))
    assert np.array_equal(shifted[:, :-1, :], x[:, 1:, :]) and np.all(shifted[:, -1, :] == 0)


def test_flip_mirrors_width():
    x = np.array([[[1.0, 2.0]]])
    cfg = AugmentConfig(crop=False, horizontal_flip=True)
    outs = {tuple(augment(x, cfg, RandomSource(s)).ravel()) for s in range(20)}
    assert outs == {(1.0, 2.0), (2.0, 1.0)}


def test_erase_patch_must_fit():
    cfg = AugmentConfig(crop=False, random_erase=True, erase_size=(2, 9))
    with pytest.raises(ValueError):
        cfg.check_shape((1, 8, 8))
    with pytest.raises(ValueError):
        AugmentConfig(crop_padding=-1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), flip=st.booleans(), erase=st.booleans(), pad=st.integers(0, 4))
def test_augment_preserves_shape(seed, flip, erase, pad):
    X = RandomSource(seed).random((4, 2 * 8 * 8))
    cfg = AugmentConfig(crop_padding=pad, horizontal_flip=flip, random_erase=erase, erase_size=(1, 4))
    out = augment_batch(X, (2, 8, 8), cfg, RandomSource(seed).split("aug"))
    assert out.shape == X.shape
    if erase:
        assert np.count_nonzero(out == 0) >= 4


def test_cache_round_trip(tmp_path):
    X = RandomSource(2).normal(size=(5, 12))
    for shape in [(3, 2, 2), ()]:
        ds = LabeledDataset(X, [0, 1, 2, 3, 4], shape, 7)
        write_cache(ds, tmp_path / "c.lbds")
        back = read_cache(tmp_path / "c.lbds")
        assert back.features.tobytes() == ds.features.tobytes()
        assert np.array_equal(back.labels, ds.labels)
        assert back.image_shape == ds.image_shape and back.class_count == 7


def test_dataset_invariants():
    with pytest.raises(EmptyDatasetError):
        LabeledDataset(np.zeros((0, 3)), np.zeros(0, int), (), 2)
    with pytest.raises(LabelRangeError):
        LabeledDataset(np.zeros((1, 3)), [2], (), 2)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((1, 3)), [0], (1, 2, 2), 2)
