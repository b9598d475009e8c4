"""MNIST in IDX format: parsing, subsetting and pixel-to-drive encoding."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagicError, CountMismatchError, EmptyDatasetError, TruncatedFileError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
N_CLASSES = 10


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # (N, rows*cols) uint8, row-major
    labels: np.ndarray  # (N,) uint8

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatchError(f"{len(self.images)} images vs {len(self.labels)} labels")
        if len(self.labels) and int(self.labels.max()) >= N_CLASSES:
            raise ValueError("labels must lie in 0..9")

    def __len__(self):
        return len(self.labels)

    def take(self, index) -> Dataset:
        return Dataset(self.images[index], self.labels[index])


def _read_bytes(path: Path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: missing header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise BadMagicError(f"{path}: magic {found:#010x}, expected {magic:#010x}")
    ndim = found & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise TruncatedFileError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header_len
    if payload < expected:
        raise TruncatedFileError(f"{path}: payload has {payload} bytes, header promises {expected}")
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header_len).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair (optionally gzip-compressed).

    Dimensions come from the headers; only the magic numbers are fixed.
    """
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} {labels.shape[0]} labels"
        )
    return Dataset(images.reshape(images.shape[0], -1).copy(), labels.copy())


def encode_drive(image, input_scale: float = 0.5) -> np.ndarray:
    """Constant drive per external input: ``input_scale * pixel / 255``."""
    return input_scale * (np.asarray(image, dtype=float) / 255.0)


def subset(dataset: Dataset, n: int, seed: int, stratified: bool = False) -> Dataset:
    """Seeded sample of ``n`` items; stratified mode balances labels to within one."""
    if n > len(dataset):
        raise ValueError(f"requested {n} samples from a dataset of {len(dataset)}")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    if not stratified:
        return dataset.take(rng.permutation(len(dataset))[:n])
    per_class = np.full(N_CLASSES, n // N_CLASSES)
    per_class[rng.permutation(N_CLASSES)[: n % N_CLASSES]] += 1
    picked = []
    for digit in range(N_CLASSES):
        pool = np.flatnonzero(dataset.labels == digit)
        if len(pool) < per_class[digit]:
            raise ValueError(f"only {len(pool)} samples of digit {digit}, need {per_class[digit]}")
        picked.append(rng.permutation(pool)[: per_class[digit]])
    index = np.concatenate(picked)
    return dataset.take(index[rng.permutation(len(index))])


def require_nonempty(dataset: Dataset) -> Dataset:
    if len(dataset) == 0:
        raise EmptyDatasetError("dataset is empty")
    return dataset
