import numpy as np
import pytest

from ladc.dataset import FeatureDataset


def random_spd(rng, d, floor=0.1):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + floor * np.eye(d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_dataset():
    """Five classes with counts 50, 30, 10, 6, 4 around distinct centres."""
    r = np.random.default_rng(3)
    counts = [50, 30, 10, 6, 4]
    centres = np.array([[0, 0, 0], [3, 0, 0], [0.5, 0.5, 0], [3, 0.5, 0], [0, 0, 3]], dtype=float)
    feats = np.concatenate([c + 0.3 * r.standard_normal((n, 3)) for c, n in zip(centres, counts)])
    labels = np.repeat(np.arange(5), counts)
    return FeatureDataset(feats, labels, 5)


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
