import numpy as np
import pytest

from metroknock.factor_model import (CliquePotential, DiscreteLevels, FactorGraph, TableLogPotential,
                                     VariableSpec)
from metroknock.junction_tree import grid_adjacency


def random_chain(p: int, K: int, seed: int, levels=None) -> FactorGraph:
    """Chain with random unary/pairwise log-tables over levels 0..K-1."""
    r = np.random.default_rng(seed)
    lv = DiscreteLevels(tuple(levels) if levels is not None else tuple(float(i) for i in range(K)))
    vs = [VariableSpec(i + 1, lv) for i in range(p)]
    cl = [CliquePotential((1,), TableLogPotential([lv], r.normal(size=K)))]
    for i in range(1, p):
        cl.append(CliquePotential((i, i + 1), TableLogPotential([lv, lv], r.normal(size=(K, K)))))
    return FactorGraph(vs, cl)


def random_grid(d1: int, d2: int, K: int, seed: int) -> FactorGraph:
    """Grid with random unary and edge log-tables."""
    r = np.random.default_rng(seed)
    lv = DiscreteLevels(tuple(float(i) for i in range(K)))
    p = d1 * d2
    vs = [VariableSpec(i + 1, lv) for i in range(p)]
    cl = [CliquePotential((v,), TableLogPotential([lv], r.normal(size=K))) for v in range(1, p + 1)]
    adj = grid_adjacency(d1, d2)
    for a in sorted(adj):
        for b in sorted(adj[a]):
            if a < b:
                cl.append(CliquePotential((a, b), TableLogPotential([lv, lv],
                                                                    r.normal(size=(K, K)))))
    return FactorGraph(vs, cl)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``report(criterion, ok, detail)`` prints one PASS/FAIL line and keeps
    it for the end-of-run summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
