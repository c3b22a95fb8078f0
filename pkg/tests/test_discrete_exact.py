import math

import numpy as np
import pytest

from metroknock.discrete_exact import conditional_pmf, exact_discrete_sample, exact_sampler
from metroknock.engine import TractabilityError
from metroknock.factor_model import (CliquePotential, DiscreteLevels, FactorGraph, QueryCounter,
                                     TableLogPotential, VariableSpec)
from metroknock.junction_tree import build_junction_tree, order_variables
from metroknock.models import IsingConfig, build_ising
from metroknock.oracle import joint_pmf, max_swap_asymmetry, scip_joint_pmf, target_pmf

from conftest import random_chain, random_grid

BITS = DiscreteLevels((-1.0, 1.0))


def independent_graph(p, logits):
    return FactorGraph([VariableSpec(i, BITS) for i in range(1, p + 1)],
                       [CliquePotential((i,), TableLogPotential([BITS], [0.0, logits[i - 1]]))
                        for i in range(1, p + 1)])


class TestSampling:
    def test_single_variable_draws_from_the_marginal(self):
        g = independent_graph(1, [math.log(0.7 / 0.3)])
        pmf = joint_pmf(g, exact_sampler(g))
        m = np.array([0.3, 0.7])
        assert np.max(np.abs(pmf - np.outer(m, m))) < 1e-15

    def test_2x3_ising_is_exchangeable(self):
        g = build_ising(IsingConfig(2, 3, beta=0.5, alpha=0.2)).graph
        pmf = joint_pmf(g, exact_sampler(g))
        assert max_swap_asymmetry(pmf) < 1e-10

    def test_uniform_bits_give_uncorrelated_knockoffs(self):
        p, n = 5, 3000
        g = independent_graph(p, np.zeros(p))
        rng = np.random.default_rng(12)
        X = rng.choice([-1.0, 1.0], size=(n, p))
        sampler = exact_sampler(g)
        XT = np.array([sampler.sample(x, rng).x_tilde for x in X])
        for j in range(p):
            r = np.corrcoef(X[:, j], XT[:, j])[0, 1]
            assert abs(r) < 3 / math.sqrt(n)

    def test_always_accepts(self):
        g = random_grid(2, 3, 3, 4)
        run = exact_discrete_sample(g, None, np.zeros(6), np.random.default_rng(0))
        assert run.accepted.all()

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_direct_scip_construction(self, seed):
        r = np.random.default_rng(seed)
        p = int(r.integers(2, 5))
        K = int(r.integers(2, 4))
        if p == 4 and K == 3:
            K = 2
        g = random_chain(p, K, seed) if seed % 2 else random_grid(2, p // 2 if p >= 4 else 1, K, seed)
        sampler = exact_sampler(g)
        direct = scip_joint_pmf(g, sampler.order.order)
        assert np.max(np.abs(joint_pmf(g, sampler) - direct)) < 1e-10

    def test_tractability_guard(self):
        lv = DiscreteLevels(tuple(float(i) for i in range(40)))
        scope = (1, 2, 3, 4)
        g = FactorGraph([VariableSpec(i, lv) for i in scope],
                        [CliquePotential(scope, TableLogPotential([lv] * 4, np.zeros((40,) * 4)))])
        with pytest.raises(TractabilityError, match="divide-and-conquer"):
            exact_sampler(g)

    def test_query_budget(self):
        model = build_ising(IsingConfig(4, 4, beta=0.3))
        tree = model.tree()
        sampler = exact_sampler(model.graph, order_variables(tree))
        x = model.sample(1, np.random.default_rng(1))[0]
        c = QueryCounter()
        sampler.sample(x, np.random.default_rng(2), c)
        assert c.full_equivalents <= 2 * 16 * 2 ** (tree.width + 1)


class TestConditionalPmf:
    def test_independent_coordinate_gives_marginal(self):
        g = independent_graph(3, [0.4, -1.0, 2.0])
        out = conditional_pmf(g, None, [1.0, -1.0, 1.0], [-1.0, 1.0, 0.0], 3)
        want = np.array([1.0, math.exp(2.0)]) / (1 + math.exp(2.0))
        assert np.max(np.abs(out - want)) < 1e-12

    def test_ising_without_coupling_is_uniform(self):
        g = build_ising(IsingConfig(3, 3, beta=0.0)).graph
        out = conditional_pmf(g, None, np.ones(9), -np.ones(9), 5)
        assert np.max(np.abs(out - 0.5)) < 1e-15

    def test_strong_chain_concentrates_and_matches_full_joint(self):
        coupling = 3.0
        g = FactorGraph([VariableSpec(i, BITS) for i in (1, 2, 3)],
                        [CliquePotential((i, i + 1), TableLogPotential(
                            [BITS, BITS], [[coupling, -coupling], [-coupling, coupling]]))
                         for i in (1, 2)] + [CliquePotential((1,), TableLogPotential([BITS], [0.0, 0.3]))])
        order = order_variables(build_junction_tree(g))
        assert order.order[:2] == (1, 2)
        x = np.array([1.0, 1.0, 1.0])
        levels = [-1.0, 1.0]
        px = target_pmf(g)
        i1, i3 = levels.index(x[0]), levels.index(x[2])
        for xt1 in levels:
            t = levels.index(xt1)
            # P(x_2 = z, rest of x, x~_1) = P(x_1, z, x_3) P(X_1 = x~_1 | z, x_3)
            want = np.array([px[i1, z, i3] * px[t, z, i3] / px[:, z, i3].sum() for z in range(2)])
            want /= want.sum()
            got = conditional_pmf(g, order, x, [xt1, 0.0, 0.0], 2)
            assert np.max(np.abs(got - want)) < 1e-12
            assert got[1] > 0.99
