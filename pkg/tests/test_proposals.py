import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metroknock.engine import NullLaw, SequentialSampler
from metroknock.factor_model import (CliquePotential, ContinuousReal, DiscreteLevels, FactorGraph,
                                     TableLogPotential, VariableSpec)
from metroknock.models import ChainConfig, ar_covariance, build_gaussian_chain
from metroknock.oracle import joint_pmf
from metroknock.proposals import (CovarianceKernel, MtmKernel, MtmParams, PlanError,
                                  PrefixDependentKernel, SingularCovarianceError,
                                  conditional_moments_direct, covariance_plan, default_step_sizes,
                                  equicorrelated_s, gamma_matrix, mac_lower_bound, mtm_candidates,
                                  mtm_log_accept, mtm_select_and_accept, mtm_selection_logprobs,
                                  faithfulness_audit, round_to_levels)

from conftest import random_chain


def random_spd(rng, p):
    A = rng.normal(size=(p, p))
    return A @ A.T + 0.5 * np.eye(p)


class TestMtmCandidates:
    def test_symmetric_lattice(self):
        assert mtm_candidates(0.0, 2, 1.0).tolist() == [-2.0, -1.0, 1.0, 2.0]

    def test_one_per_side(self):
        assert mtm_candidates(5.0, 1, 3.0).tolist() == [2.0, 8.0]

    def test_off_support_candidates_get_no_mass(self):
        levels = np.arange(1.0, 6.0)
        cand = mtm_candidates(1.0, 2, 1.0)
        assert cand.tolist() == [-1.0, 0.0, 2.0, 3.0]
        logpi = np.where(np.isin(cand, levels), 0.0, -np.inf)
        sel = np.exp(mtm_selection_logprobs(logpi))
        assert sel.tolist() == [0.0, 0.0, 0.5, 0.5]

    def test_all_off_support_rejects_automatically(self):
        # levels {1, 10}: the lattice around 1 with t=1 misses both
        lv = DiscreteLevels((1.0, 10.0))
        g = FactorGraph([VariableSpec(1, lv)], [CliquePotential((1,), TableLogPotential([lv], [0, 0]))])
        s = SequentialSampler(g, kernel=MtmKernel(1, 1.0, 1.0))
        state = s.start([1.0])
        assert isinstance(state.begin(0), NullLaw)
        run = s.sample([1.0], np.random.default_rng(0))
        assert run.x_tilde.tolist() == [1.0] and not run.accepted[0]
        x_star, acc, _ = mtm_select_and_accept(1.0, lambda c: np.where(np.isin(c, [1, 10]), 0.0, -np.inf),
                                               MtmParams(1, 1.0, 1.0), np.random.default_rng(0))
        assert x_star is None and not acc

    def test_params_are_validated(self):
        with pytest.raises(ValueError):
            MtmParams(0, 1.0, 0.5)
        with pytest.raises(ValueError):
            MtmParams(2, -1.0, 0.5)
        with pytest.raises(ValueError):
            MtmParams(2, 1.0, 1.5)


class TestMtmAcceptance:
    def test_flat_target_accepts_surely(self):
        la = mtm_log_accept(np.zeros(4), np.zeros(4), 1.0)
        assert la == 0.0

    def test_flat_target_rate_is_gamma(self):
        rng = np.random.default_rng(1)
        params = MtmParams(2, 1.0, 0.8)
        n = 100_000
        hits = sum(mtm_select_and_accept(0.0, lambda c: np.zeros_like(c), params, rng)[1]
                   for _ in range(n))
        rate = hits / n
        se = math.sqrt(0.8 * 0.2 / n)
        assert abs(rate - 0.8) < 3 * se

    @pytest.mark.parametrize("pa,pb,gamma", [(0.3, 0.6, 0.999), (0.6, 0.3, 0.9), (0.2, 0.2, 0.7)])
    def test_two_candidate_case(self, pa, pb, gamma):
        # x = 0, m = 1, t = 1: only +1 has mass forward, only 0 backward
        mass = {1.0: pa, 0.0: pb}

        def logpi(c):
            return np.array([math.log(mass[v]) if v in mass else -np.inf for v in c])

        _, _, info = mtm_select_and_accept(0.0, logpi, MtmParams(1, 1.0, gamma),
                                           np.random.default_rng(0))
        assert info["selection"].tolist() == [0.0, 1.0]
        assert math.isclose(math.exp(info["log_accept"]), gamma * min(1.0, pa / pb), rel_tol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.one_of(st.floats(-30, 30), st.just(-np.inf)), min_size=2, max_size=12))
    def test_selection_sums_to_one_or_rejects(self, logpi):
        sel = mtm_selection_logprobs(logpi)
        if all(v == -np.inf for v in logpi):
            assert sel is None
        else:
            assert abs(np.exp(sel).sum() - 1.0) < 1e-12

    def test_law_stabilizes_as_m_grows(self):
        g = random_chain(2, 6, 3)
        laws = [joint_pmf(g, SequentialSampler(g, kernel=MtmKernel(m, 1.0, 0.999)))
                for m in (1, 2, 4, 8, 16)]
        tv = [0.5 * np.abs(a - b).sum() for a, b in zip(laws, laws[1:])]
        assert all(b <= a for a, b in zip(tv, tv[1:]))
        assert tv[-1] < 1e-12  # the lattice already covers the support


class TestStepSizes:
    def test_identity(self):
        assert np.allclose(default_step_sizes(np.eye(4)), 1.5)

    def test_ar_chain_middle(self):
        rho = 0.6
        S = ar_covariance(np.array([rho, rho]))
        assert abs(np.linalg.inv(S)[1, 1] - (1 + rho**2) / (1 - rho**2)) < 1e-12
        assert abs(default_step_sizes(S)[1] - 1.5 / math.sqrt(2.125)) < 1e-12

    def test_scalar(self):
        assert default_step_sizes(np.array([[4.0]])).tolist() == [3.0]

    def test_singular_asks_for_ridge(self):
        with pytest.raises(SingularCovarianceError, match="ridge"):
            default_step_sizes(np.ones((2, 2)))

    def test_scaling(self, rng):
        S = random_spd(rng, 5)
        assert np.allclose(default_step_sizes(4 * S), 2 * default_step_sizes(S), rtol=1e-12)


class TestEquicorrelated:
    def test_identity(self):
        s = equicorrelated_s(np.eye(3))
        assert s.tolist() == [1.0, 1.0, 1.0]
        assert mac_lower_bound(np.eye(3), s) == 0.0

    def test_pair(self):
        S = np.array([[1.0, 0.6], [0.6, 1.0]])
        s = equicorrelated_s(S)
        assert np.allclose(s, 0.8)
        assert abs(mac_lower_bound(S, s) - 0.2) < 1e-12
        assert np.linalg.eigvalsh(gamma_matrix(S, s)).min() >= -1e-8

    def test_nearly_collinear(self):
        S = np.array([[1.0, 0.999999], [0.999999, 1.0]])
        s = equicorrelated_s(S)
        assert s.max() < 1e-5
        assert mac_lower_bound(S, s) > 1 - 1e-5

    def test_rescaled_to_covariance_units(self):
        S = np.diag([4.0, 9.0])
        assert np.allclose(equicorrelated_s(S), [4.0, 9.0])


class TestCovariancePlan:
    def test_scalar_identity(self):
        plan = covariance_plan([0.7], [[1.0]], [1.0])
        assert plan.weights_x.tolist() == [[0.0]]
        assert plan.cond_var.tolist() == [1.0]

    def test_inverses_match_direct(self, rng):
        S = random_spd(rng, 5)
        s = equicorrelated_s(S)
        plan = covariance_plan(None, S, s, keep_inverses=True)
        G = gamma_matrix(S, s)
        for j, inv in enumerate(plan.inverses):
            n = 5 + j
            assert np.max(np.abs(inv - np.linalg.inv(G[:n, :n]))) < 1e-10

    def test_ball_arithmetic_agrees_with_float(self, rng):
        S = random_spd(rng, 6)
        s = equicorrelated_s(S)
        fast = covariance_plan(None, S, s)
        slow = covariance_plan(None, S, s, keep_inverses=True, precision_bits=200)
        assert np.max(np.abs(fast.weights_x - slow.weights_x)) < 1e-8
        assert np.max(np.abs(fast.cond_var - slow.cond_var)) < 1e-10
        # radii stay tiny: the kept inverses are certified to many digits
        assert max(float(v.rad()) for v in slow.inverses[-1].ravel()) < 1e-30

    @pytest.mark.parametrize("seed", range(5))
    def test_conditional_variance_matches_direct(self, seed):
        r = np.random.default_rng(seed)
        p = int(r.integers(2, 21))
        S = random_spd(r, p)
        s = equicorrelated_s(S)
        plan = covariance_plan(None, S, s)
        for j in range(p):
            _, var = conditional_moments_direct(S, s, j)
            assert abs(plan.cond_var[j] - max(var, 0.0)) < 1e-8

    def test_indefinite_gamma(self):
        with pytest.raises(PlanError, match="eigenvalue"):
            covariance_plan(None, np.eye(2), [2.5, 1.0])

    def test_moments_of_x_and_proposals(self):
        model = build_gaussian_chain(ChainConfig(3, 0.5))
        S = model.Sigma
        s = equicorrelated_s(S)
        sampler = SequentialSampler(model.graph, kernel=CovarianceKernel(None, S, s))
        rng = np.random.default_rng(7)
        X = model.sample(40_000, rng)
        Z = np.array([np.concatenate([x, sampler.sample(x, rng).x_star]) for x in X])
        G = gamma_matrix(S, s)
        n = len(Z)
        assert np.all(np.abs(Z.mean(axis=0)) < 3 * Z.std(axis=0) / math.sqrt(n))
        for a in range(6):
            for b in range(a, 6):
                prod = Z[:, a] * Z[:, b]
                assert abs(prod.mean() - G[a, b]) < 3 * prod.std() / math.sqrt(n)


class TestCovarianceProposal:
    def test_scalar_identity_draws_standard_normal(self):
        g = FactorGraph([VariableSpec(1, ContinuousReal())],
                        [CliquePotential((1,), lambda v: -0.5 * np.asarray(v) ** 2)])
        s = SequentialSampler(g, kernel=CovarianceKernel([0.0], [[1.0]], [1.0]))
        rng = np.random.default_rng(3)
        draws = np.array([s.sample([0.4], rng).x_star[0] for _ in range(4000)])
        assert abs(draws.mean()) < 3 / math.sqrt(4000)
        assert abs(draws.var() - 1.0) < 0.07

    def test_rounding(self):
        assert round_to_levels([0.2, -0.2, 0.0], [-1.0, 1.0]).tolist() == [1.0, -1.0, -1.0]


class TestFaithfulness:
    def test_mtm(self):
        assert faithfulness_audit(MtmKernel(2, 1.0, 0.9), random_chain(3, 2, 0))

    def test_covariance(self):
        g = random_chain(3, 2, 0, levels=(-1.0, 1.0))
        S = np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])
        assert faithfulness_audit(CovarianceKernel(None, S, equicorrelated_s(S)), g)

    def test_prefix_dependent_kernel_fails(self):
        g = random_chain(3, 2, 0, levels=(-1.0, 1.0))
        assert not faithfulness_audit(PrefixDependentKernel(), g)
