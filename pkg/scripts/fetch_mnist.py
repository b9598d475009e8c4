"""Fetch MNIST into gzip IDX files under ``data/``.

Tries the official IDX mirrors first.  When those are unreachable it falls
back to the ``mnist`` npm package, which bundles the first 10,000 digits of
the MNIST training set as JSON (pixels stored as value/255 with three
decimals), and rewrites them as IDX pairs:

    mnist-train-images-idx3-ubyte.gz / mnist-train-labels-idx1-ubyte.gz  (8,000)
    mnist-test-images-idx3-ubyte.gz  / mnist-test-labels-idx1-ubyte.gz   (2,000)

Usage: python scripts/fetch_mnist.py [--out data]
"""

from __future__ import annotations

import argparse
import gzip
import json
import re
import shutil
import struct
import subprocess
import tarfile
import tempfile
import urllib.request
from pathlib import Path

import numpy as np

MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)
OFFICIAL = {
    "train-images-idx3-ubyte.gz": "mnist-train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz": "mnist-train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz": "mnist-test-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz": "mnist-test-labels-idx1-ubyte.gz",
}
N_TRAIN_FALLBACK = 8000
SPLIT_SEED = 20240101


def write_idx(path: Path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    code = 0x0803 if array.ndim == 3 else 0x0801
    header = struct.pack(">I", code) + b"".join(struct.pack(">I", d) for d in array.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header)
        fh.write(array.tobytes())


def try_official(out: Path) -> bool:
    for base in MIRRORS:
        try:
            for remote, local in OFFICIAL.items():
                with urllib.request.urlopen(base + remote, timeout=20) as resp:
                    (out / local).write_bytes(resp.read())
            return True
        except OSError as exc:
            print(f"mirror {base} failed: {exc}")
    return False


def from_npm(out: Path) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        tgz = next(Path(tmp).glob("mnist-*.tgz"))
        with tarfile.open(tgz) as tar:
            tar.extractall(tmp)
        images, labels = [], []
        for digit in range(10):
            text = (Path(tmp) / "package/src/digits" / f"{digit}.json").read_text()
            values = np.array(json.loads(text)["data"], dtype=np.float64)
            pixels = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
            images.append(pixels.reshape(-1, 28, 28))
            labels.append(np.full(len(images[-1]), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(SPLIT_SEED).permutation(len(labels))
    images, labels = images[order], labels[order]
    n = N_TRAIN_FALLBACK
    write_idx(out / "mnist-train-images-idx3-ubyte.gz", images[:n])
    write_idx(out / "mnist-train-labels-idx1-ubyte.gz", labels[:n])
    write_idx(out / "mnist-test-images-idx3-ubyte.gz", images[n:])
    write_idx(out / "mnist-test-labels-idx1-ubyte.gz", labels[n:])
    print(f"wrote {n} train / {len(labels) - n} test digits from the npm bundle")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data")
    parser.add_argument("--offline-only", action="store_true",
                        help="skip the official mirrors and use the npm bundle")
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    if args.offline_only or not try_official(args.out):
        from_npm(args.out)


if __name__ == "__main__":
    main()
