import numpy as np
import pytest

from hoprbm.data_io import load_mnist, mnist_available


def random_patterns(rng, n, p):
    """Full-rank ±1 matrix with (generally) correlated columns."""
    while True:
        xi = rng.choice([-1.0, 1.0], size=(n, p))
        if np.linalg.matrix_rank(xi) == p:
            return xi


def random_orthogonal_patterns(n, p):
    """Columns of a Sylvester-Hadamard matrix (n a power of two)."""
    h = np.array([[1.0]])
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h[:, :p]


@pytest.fixture(scope="session")
def mnist_train():
    if not mnist_available():
        pytest.skip("MNIST not found (set HOPRBM_DATA)")
    return load_mnist("train")


@pytest.fixture(scope="session")
def mnist_test():
    if not mnist_available():
        pytest.skip("MNIST not found (set HOPRBM_DATA)")
    return load_mnist("test")


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request, capsys):
    """``acceptance(n, ok, detail)`` records and prints one PASS/FAIL line."""

    def report(n, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}"
        request.config.stash[_ACCEPTANCE].append((n, line))
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
