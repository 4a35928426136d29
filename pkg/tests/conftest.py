import sys

import numpy as np
import pytest

from harnack_lab.graph_core import build_graph
from harnack_lab.gallery import build_path

from oracles import random_connected_edges


@pytest.fixture
def path4():
    return build_path(4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_graph(rng, n, extra=None, measure="degree"):
    extra = n // 2 if extra is None else extra
    edges = random_connected_edges(rng, n, extra)
    if measure == "random":
        measure = list(np.exp(rng.normal(size=n)))
    return build_graph(edges, measure, n=n), edges


def random_domain(rng, g, size):
    """Connected vertex set of ``size`` grown from a random seed (BFS order)."""
    start = int(rng.integers(g.n))
    seen, frontier = [start], [start]
    while frontier and len(seen) < size:
        v = frontier.pop(0)
        for u in rng.permutation(g.neighbors(v)):
            if int(u) not in seen and len(seen) < size:
                seen.append(int(u))
                frontier.append(int(u))
    return np.array(sorted(seen))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
