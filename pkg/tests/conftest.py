from pathlib import Path

import numpy as np
import pytest

from wuxingnet import kernels
from wuxingnet.data_mnist import load_idx
from wuxingnet.topology import Connection, NetworkTopology, build_random
from wuxingnet.dynamics import NeuronParams

DATA = Path(__file__).resolve().parents[1] / "data"
TRAIN_FILES = (DATA / "mnist-train-images-idx3-ubyte.gz", DATA / "mnist-train-labels-idx1-ubyte.gz")
TEST_FILES = (DATA / "mnist-test-images-idx3-ubyte.gz", DATA / "mnist-test-labels-idx1-ubyte.gz")


def _need(files):
    missing = [str(f) for f in files if not f.exists()]
    if missing:
        pytest.skip(f"MNIST files missing (run scripts/fetch_mnist.py): {missing}")


@pytest.fixture(scope="session")
def mnist_train():
    _need(TRAIN_FILES)
    return load_idx(*TRAIN_FILES)


@pytest.fixture(scope="session")
def mnist_test():
    _need(TEST_FILES)
    return load_idx(*TEST_FILES)


def chain(coeff=1.0, params=None) -> NetworkTopology:
    """Two neurons, one link: neuron 0 element 1 feeds neuron 1 element 2."""
    p = params or NeuronParams.uniform(1.0, 0.5, 0.5)
    return NetworkTopology(
        layer_sizes=(1, 1),
        params=(p, p),
        connections=(Connection(0, 1, 1, 2, coeff),),
        external_inputs=((0, 0),),
        external_outputs=((1, 3),),
    )


@pytest.fixture
def two_neuron_chain():
    return chain()


@pytest.fixture
def small_net():
    return build_random((6, 5, 3), seed=3)


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    if request.param == "numba" and kernels.numba is None:
        pytest.skip("numba not installed")
    previous = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one "PASS/FAIL criterion N: ..." line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
