"""Proposal kernels in isolation.

Multiple-try proposals look at the lattice x +- k t and pick a point in
proportion to the target.  The covariance-guided kernel draws from the
conditional law of a Gaussian knockoff built from Gamma(s), which needs one
regression per step; those come from a rank-one recursion over the leading
blocks of Gamma.
"""
import numpy as np
from scipy import stats

from metroknock.proposals import (covariance_plan, equicorrelated_s, mac_lower_bound,
                                  mtm_candidates, mtm_log_accept, mtm_selection_logprobs)

# multiple-try on a standard normal target
x, m, t = 0.3, 2, 0.8
cands = mtm_candidates(x, m, t)
logp = mtm_selection_logprobs(stats.norm.logpdf(cands))
print("candidates      :", np.round(cands, 3))
print("selection probs :", np.round(np.exp(logp), 3))
star = cands[np.random.default_rng(0).choice(len(cands), p=np.exp(logp))]
back = mtm_candidates(star, m, t)
la = mtm_log_accept(stats.norm.logpdf(cands), stats.norm.logpdf(back), gamma=0.999)
print(f"accept prob moving {x} -> {star:.3f}: {np.exp(la):.4f}")

# covariance-guided plan on an AR(1) covariance
p, rho = 5, 0.6
Sigma = rho ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
s = equicorrelated_s(Sigma)
plan = covariance_plan(None, Sigma, s)
print("equicorrelated s:", np.round(s, 4))
print("conditional variances:", np.round(plan.cond_var, 4))
print("best achievable mean |cor(X_j, X~_j)|:", round(mac_lower_bound(Sigma, s), 4))
