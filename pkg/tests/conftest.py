import numpy as np
import pytest

from bethe_qsg.graph import DisorderInstance, RegularGraph


def instance_from_edges(n, degree, edges, couplings, seed=0, j=1.0):
    """Instance on an explicit edge list; couplings follow the canonical edge order."""
    g = RegularGraph.from_edges(n, degree, edges)
    cmap = {tuple(sorted(e)): c for e, c in zip(edges, couplings)}
    return DisorderInstance(g, np.array([cmap[tuple(e)] for e in g.edges.tolist()]), seed, j)


@pytest.fixture
def two_spin():
    return lambda j=1.0: instance_from_edges(2, 1, [(0, 1)], [j], j=abs(j))


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


_criteria = []


@pytest.fixture
def report(capsys):
    """Record one pass/fail line per acceptance criterion; echoed live and in the summary."""
    def emit(number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}"
        _criteria.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criteria, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
