import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def dense_op(L: int, site_ops: dict[int, np.ndarray], d: int = 2) -> np.ndarray:
    """Kronecker product with ``site_ops`` placed on their sites and identities elsewhere."""
    out = np.ones((1, 1))
    for j in range(L):
        out = np.kron(out, site_ops.get(j, np.eye(d)))
    return out


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k.split()[0])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
