import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from neaw import data

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny_synthetic():
    """5 classes x 6 train / 3 test clouds of 128 points."""
    return (data.synthetic_dataset(6, 128, seed=11, split="train"),
            data.synthetic_dataset(3, 128, seed=11, split="test"))


@pytest.fixture(scope="session")
def mnist_arrays():
    """The 5000-digit MNIST sample bundled with mlxtend, as uint8 images and labels."""
    from mlxtend.data import mnist_data
    X, y = mnist_data()
    return np.asarray(X).reshape(-1, 28, 28).astype(np.uint8), np.asarray(y).astype(np.uint8)


@pytest.fixture(scope="session")
def mnist_idx_dir(tmp_path_factory, mnist_arrays):
    """IDX files in the standard layout: first 4000 samples as train, last 1000 as test."""
    X, y = mnist_arrays
    rng = np.random.default_rng(0)
    order = rng.permutation(len(y))
    tr, te = order[:4000], order[4000:]
    root = tmp_path_factory.mktemp("mnist")
    data.write_idx(root / "train-images-idx3-ubyte.gz", X[tr])
    data.write_idx(root / "train-labels-idx1-ubyte.gz", y[tr])
    data.write_idx(root / "t10k-images-idx3-ubyte", X[te])
    data.write_idx(root / "t10k-labels-idx1-ubyte", y[te])
    return root


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record ``(passed, detail)`` for an acceptance criterion; lines are printed in the summary."""
    def record(n, passed, detail):
        ACCEPTANCE[n] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
