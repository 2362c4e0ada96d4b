import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from wnn.dataset_io import SplitSpec, LabeledSet, build_split, load_dataset

DATA_DIR = os.environ.get("WNN_DATA_DIR",
                          os.path.join(os.path.dirname(__file__), "..", "data"))


def mnist_available():
    try:
        from wnn.dataset_io import dataset_paths
        return all(os.path.exists(p) for p in dataset_paths(DATA_DIR, "mnist"))
    except Exception:
        return False


needs_mnist = pytest.mark.skipif(not mnist_available(),
                                 reason="MNIST data files not present")


@pytest.fixture(scope="session")
def mnist_files():
    if not mnist_available():
        pytest.skip("MNIST data files not present")
    return load_dataset(DATA_DIR, "mnist")


@pytest.fixture(scope="session")
def mnist_balanced(mnist_files):
    return build_split(SplitSpec.mnist_balanced(), *mnist_files)


def small_labeled_set(rng, per_class=3, grid=(6, 6), n_classes=10):
    imgs = [rng.integers(0, 256, size=(per_class, *grid), dtype=np.uint8)
            for _ in range(n_classes)]
    return LabeledSet.from_arrays(imgs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


# One line per acceptance gate, printed after the run (uncaptured).
ACCEPTANCE_RESULTS = []


def record_acceptance(name, detail, passed):
    ACCEPTANCE_RESULTS.append((name, detail, passed))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance gates")
    for name, detail, passed in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {name}: {detail}")
