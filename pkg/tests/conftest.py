from pathlib import Path

import numpy as np
import pytest

from cocograph.graph import Graph, parse_tudataset

DATA = Path(__file__).resolve().parents[1] / "src" / "cocograph" / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def fixture2():
    return parse_tudataset(DATA, "FIXTURE2")


@pytest.fixture
def mini8():
    return parse_tudataset(DATA, "MINI8")


def path_graph(n, **kw):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)], **kw)


def cycle_graph(n, **kw):
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], **kw)


def random_graph(rng, n_max=8, labels=3, p=0.4, attrs=0, n_min=1):
    n = int(rng.integers(n_min, n_max + 1))
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    node_labels = rng.integers(0, labels, size=n) if labels else None
    node_attrs = rng.standard_normal((n, attrs)) if attrs else None
    return Graph.from_edges(n, edges, node_labels=node_labels, node_attrs=node_attrs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance(request):
    """Records one PASS/FAIL line per criterion; printed at the end of the run."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
