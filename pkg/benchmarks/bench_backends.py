"""Time the numba and numpy integration backends on the same workloads.

    python benchmarks/bench_backends.py [--repeat 5] [--samples 5]

Workloads: a forward run of a random small network driven on every input,
and a forward plus backward training step of MODEL1 on real digits (or a
synthetic image when the MNIST files are absent).  The numba time excludes
compilation, which happens once in a warm-up call.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from wuxingnet import kernels
from wuxingnet.data_mnist import encode_drive, load_idx
from wuxingnet.engine import DriveSet, SimulationConfig, simulate_forward
from wuxingnet.topology import build_named_model, build_random
from wuxingnet.trainer import TrainConfig, sample_gradient

DATA = Path(__file__).resolve().parents[1] / "data"


def _images(n: int) -> np.ndarray:
    files = (DATA / "mnist-test-images-idx3-ubyte.gz", DATA / "mnist-test-labels-idx1-ubyte.gz")
    if all(f.exists() for f in files):
        return load_idx(*files).images[:n]
    rng = np.random.default_rng(0)
    return (rng.random((n, 784)) < 0.15).astype(np.uint8) * 255


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(samples: int):
    small = build_random((100, 60, 30, 10), seed=0)
    drive = DriveSet(np.full(100, 0.3))
    sim = SimulationConfig(20.0, 0.01)
    model1 = build_named_model("MODEL1")
    images = _images(samples)
    cfg = TrainConfig()

    def small_forward():
        simulate_forward(small, small.coefficients(), drive, sim)

    def model1_step():
        for image in images:
            sample_gradient(model1, model1.coefficients(), image, 0, cfg)

    return {"small net forward (dt 0.01)": small_forward,
            f"MODEL1 fwd+bwd x{samples} (dt 0.1)": model1_step}


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--samples", type=int, default=5)
    args = parser.parse_args(argv)

    backends = ["numpy"] + (["numba"] if kernels.numba is not None else [])
    results = {}
    for name, fn in workloads(args.samples).items():
        for backend in backends:
            previous = kernels.set_backend(backend)
            try:
                fn()  # warm-up, includes numba compilation
                results[name, backend] = _best(fn, args.repeat)
            finally:
                kernels.set_backend(previous)

    print(f"{'workload':<34}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name in workloads(args.samples):
        row = [results[name, b] for b in backends]
        line = f"{name:<34}" + "".join(f"{t * 1e3:>10.1f}ms" for t in row)
        if len(row) == 2:
            line += f"{row[0] / row[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
