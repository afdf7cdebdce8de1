import numpy as np
import pytest

from hsm.hierarchy import Hierarchy, random_dag


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_path(rng, max_nodes=60, max_size=5):
    D = int(rng.integers(1, max_nodes + 1))
    sizes = rng.integers(1, max_size + 1, D)
    return Hierarchy.path(sizes), sizes


def random_forest(rng, n_nodes, max_size=3):
    sizes = rng.integers(1, max_size + 1, n_nodes)
    h = Hierarchy.path(sizes)
    edges = [(int(rng.integers(0, j)), j) for j in range(1, n_nodes)
             if rng.random() < 0.8]
    return Hierarchy(h.p, h.nodes, tuple(edges))


def dag_instances(seed, count, n_nodes=8, **kw):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        h = random_dag(rng, n_nodes, **kw)
        yield h, rng.standard_normal(h.p)


# one summary line per acceptance criterion, shown at the end of the run
ACCEPTANCE = []


@pytest.fixture
def criterion():
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
