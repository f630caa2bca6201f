import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from epimatch.affinity import AffinityFactors
from epimatch.graph import fully_connected_edges

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_factors(rng, n=None, m=None, crossed=True, edge_prob=0.6):
    """Random nonnegative factors on random edge subsets, n, m <= 6."""
    n = n or int(rng.integers(1, 7))
    m = m or int(rng.integers(1, 7))
    e1 = [e for e in fully_connected_edges(n) if rng.random() < edge_prob]
    e2 = [e for e in fully_connected_edges(m) if rng.random() < edge_prob]
    mp = rng.random((n, m))
    me = rng.random((len(e1), len(e2)))
    mc = rng.random((len(e1), len(e2))) if crossed else None
    return AffinityFactors(mp, me, [a for a, _ in e1], [b for _, b in e1],
                           [a for a, _ in e2], [b for _, b in e2], mc)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, shown at the end of the run
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
