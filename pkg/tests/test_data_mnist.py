"""IDX parsing, subsetting and drive encoding."""

import gzip
import struct

import numpy as np
import pytest

from wuxingnet.data_mnist import Dataset, encode_drive, load_idx, require_nonempty, subset
from wuxingnet.errors import BadMagicError, CountMismatchError, EmptyDatasetError, TruncatedFileError


def write_idx(path, magic, dims, payload: bytes, compress=False):
    raw = struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + payload
    if compress:
        raw = gzip.compress(raw)
    path.write_bytes(raw)
    return path


def write_pair(tmp_path, n=20, rows=4, cols=3, compress=False, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, rows, cols), dtype=np.uint8)
    labels = (np.arange(n) % 10).astype(np.uint8)
    ip = write_idx(tmp_path / "img", 0x00000803, (n, rows, cols), images.tobytes(), compress)
    lp = write_idx(tmp_path / "lab", 0x00000801, (n,), labels.tobytes(), compress)
    return ip, lp, images, labels


class TestLoadIdx:
    @pytest.mark.parametrize("compress", [False, True])
    def test_round_trip(self, tmp_path, compress):
        ip, lp, images, labels = write_pair(tmp_path, compress=compress)
        ds = load_idx(ip, lp)
        np.testing.assert_array_equal(ds.images, images.reshape(len(images), -1))
        np.testing.assert_array_equal(ds.labels, labels)

    def test_dimensions_from_header(self, tmp_path):
        ip, lp, _, _ = write_pair(tmp_path, rows=5, cols=7)
        assert load_idx(ip, lp).images.shape == (20, 35)

    def test_bad_magic(self, tmp_path):
        ip, lp, images, _ = write_pair(tmp_path)
        write_idx(ip, 0x00000801, (20, 4, 3), images.tobytes())
        with pytest.raises(BadMagicError):
            load_idx(ip, lp)

    def test_truncated_payload(self, tmp_path):
        ip, lp, images, _ = write_pair(tmp_path)
        write_idx(ip, 0x00000803, (20, 4, 3), images.tobytes()[:-1])
        with pytest.raises(TruncatedFileError):
            load_idx(ip, lp)

    def test_truncated_header(self, tmp_path):
        ip, lp, _, _ = write_pair(tmp_path)
        ip.write_bytes(struct.pack(">I", 0x00000803) + b"\x00\x00")
        with pytest.raises(TruncatedFileError):
            load_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        ip, lp, _, labels = write_pair(tmp_path)
        write_idx(lp, 0x00000801, (19,), labels[:19].tobytes())
        with pytest.raises(CountMismatchError):
            load_idx(ip, lp)

    def test_errors_are_distinct(self):
        assert len({BadMagicError, TruncatedFileError, CountMismatchError}) == 3
        assert not issubclass(BadMagicError, TruncatedFileError)

    def test_shipped_files(self, mnist_train, mnist_test):
        assert mnist_train.images.shape[1] == 784
        assert len(mnist_train) == 8000 and len(mnist_test) == 2000
        assert mnist_train.labels.max() == 9


class TestSubset:
    def test_full_size_is_permutation(self, tmp_path):
        ip, lp, _, _ = write_pair(tmp_path)
        ds = load_idx(ip, lp)
        sub = subset(ds, len(ds), seed=1)
        assert sorted(map(bytes, sub.images)) == sorted(map(bytes, ds.images))

    def test_stratified_balance(self, mnist_train):
        counts = np.bincount(subset(mnist_train, 100, seed=0, stratified=True).labels, minlength=10)
        np.testing.assert_array_equal(counts, 10)

    def test_stratified_within_one(self, mnist_train):
        counts = np.bincount(subset(mnist_train, 1003, seed=4, stratified=True).labels, minlength=10)
        assert counts.max() - counts.min() <= 1 and counts.sum() == 1003

    def test_same_seed_same_subset(self, mnist_train):
        a = subset(mnist_train, 50, seed=3, stratified=True)
        b = subset(mnist_train, 50, seed=3, stratified=True)
        np.testing.assert_array_equal(a.images, b.images)

    def test_subset_chain_reproducible(self, mnist_train):
        a = subset(subset(mnist_train, 500, 1), 60, 2, True)
        b = subset(subset(mnist_train, 500, 1), 60, 2, True)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_too_large(self, mnist_test):
        with pytest.raises(ValueError):
            subset(mnist_test, len(mnist_test) + 1, 0)

    def test_empty_dataset_error(self):
        empty = Dataset(np.zeros((0, 784), np.uint8), np.zeros(0, np.uint8))
        with pytest.raises(EmptyDatasetError):
            require_nonempty(empty)


class TestEncodeDrive:
    def test_black_image(self):
        assert np.all(encode_drive(np.zeros(784, np.uint8)) == 0.0)

    def test_white_pixel(self):
        assert encode_drive(np.array([255], np.uint8), 0.5)[0] == 0.5

    def test_mean_drive_of_real_digits(self, mnist_train):
        means = [encode_drive(img, 0.5).mean() for img in mnist_train.images[:200]]
        assert abs(np.mean(means) - 0.065) < 0.03
