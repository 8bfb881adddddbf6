import numpy as np
import pytest

from porter.problems import partition, synthetic_problem
from porter.topology import build_er_connected, build_named_graph, metropolis_weights


def make_graph(kind, n, seed=0):
    if kind == "er":
        return build_er_connected(n, 0.8, seed)[0]
    return build_named_graph(kind, n)


@pytest.fixture
def small_logreg():
    """Synthetic logreg split over 5 agents on a ring."""
    problem, ds = synthetic_problem(d=6, m_total=100, seed=3)
    data = partition(ds, 5, seed=3)
    mix = metropolis_weights(build_named_graph("ring", 5))
    return problem, data, mix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance report --------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def report(request):
    """Record one pass/fail line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def add(criterion: int, ok: bool, detail: str) -> None:
        lines[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[criterion])

    return add


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
