import numpy as np
import pytest

from a2bas.data import RatingMatrix
from a2bas.model import FactorState

# criterion id -> (description, outcome); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[str, str]] = {}


def random_matrix(rng, num_rows, num_cols, density=0.1, low=1.0, high=5.0):
    mask = rng.random((num_rows, num_cols)) < density
    rows, cols = np.nonzero(mask)
    vals = rng.uniform(low, high, len(rows))
    return RatingMatrix(rows, cols, vals, num_rows, num_cols)


def random_state(rng, num_rows, num_cols, f, scale=1.0):
    return FactorState(
        scale * rng.standard_normal((num_rows, f)),
        scale * rng.standard_normal((num_cols, f)),
        scale * rng.standard_normal(num_rows),
        scale * rng.standard_normal(num_cols),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k)):
        desc, outcome = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{outcome}] criterion {key}: {desc}")
