"""Faithful proposal kernels for the sequential knockoff sampler.

Three families are provided:

* multiple-try proposals (:class:`MtmKernel`), which pick among the lattice
  points ``x +- k t`` in proportion to the target and accept with the ratio
  of candidate sums;
* covariance-guided proposals (:class:`CovarianceKernel`), which draw from the
  conditional law of a Gaussian knockoff built from ``Gamma(s)``;
* a symmetric Gaussian random walk (:class:`GaussianRandomWalkKernel`).

Kernels are bound to a sampling order with :meth:`ProposalKernel.prepare`
and then queried per sampling unit.  A unit is a tuple of variable ids (a
single variable unless group knockoffs are in use).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .factor_model import ContinuousReal, DiscreteLevels, FactorGraph

NEG_INF = -np.inf
DEFAULT_GAMMA = 0.999
DEFAULT_M = 4
DEFAULT_T_SCALE = 1.5


class SingularCovarianceError(ValueError):
    pass


class PlanError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Gaussian algebra


def _ridge_hint(Sigma: np.ndarray) -> str:
    ridge = 1e-6 * float(np.mean(np.diag(Sigma)))
    return (f"covariance is singular; add a ridge first, e.g. Sigma + {ridge:.3g} * I "
            "(1e-6 times the average diagonal)")


def _check_pd(Sigma: np.ndarray) -> np.ndarray:
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        raise ValueError("Sigma must be a square matrix")
    if not np.allclose(Sigma, Sigma.T, rtol=1e-10, atol=1e-12):
        raise ValueError("Sigma must be symmetric")
    try:
        np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(_ridge_hint(Sigma)) from exc
    ev = np.linalg.eigvalsh(Sigma)
    if ev[0] <= 1e-12 * ev[-1]:
        raise SingularCovarianceError(_ridge_hint(Sigma))
    return Sigma


def default_step_sizes(Sigma, scale: float = DEFAULT_T_SCALE) -> np.ndarray:
    """``scale * sqrt(1 / (Sigma^-1)_jj)`` per coordinate."""
    Sigma = _check_pd(Sigma)
    prec_diag = np.diag(np.linalg.inv(Sigma))
    return scale * np.sqrt(1.0 / prec_diag)


def equicorrelated_s(Sigma) -> np.ndarray:
    """Equicorrelated s-vector: ``min(1, 2 lambda_min)`` on the correlation
    scale, mapped back to covariance units."""
    Sigma = _check_pd(Sigma)
    sd = np.sqrt(np.diag(Sigma))
    corr = Sigma / np.outer(sd, sd)
    lam = float(np.linalg.eigvalsh(corr)[0])
    s = min(1.0, 2.0 * lam) * sd**2
    G = gamma_matrix(Sigma, s)
    lmin = float(np.linalg.eigvalsh(G)[0])
    if lmin < -1e-8:
        raise PlanError(f"equicorrelated s gives an indefinite Gamma (eigenvalue {lmin:.3g})")
    return s


def gamma_matrix(Sigma, s) -> np.ndarray:
    """Joint covariance ``[[Sigma, Sigma - diag(s)], [Sigma - diag(s), Sigma]]``."""
    Sigma = np.asarray(Sigma, dtype=float)
    off = Sigma - np.diag(np.asarray(s, dtype=float))
    return np.block([[Sigma, off], [off, Sigma]])


def mac_lower_bound(Sigma, s) -> float:
    """Mean absolute correlation implied by s: mean of |1 - s_j / Sigma_jj|."""
    d = np.diag(np.asarray(Sigma, dtype=float))
    return float(np.mean(np.abs(1.0 - np.asarray(s, dtype=float) / d)))


@dataclass(frozen=True)
class GaussianProposalPlan:
    """Per-step regression of the j-th proposal on ``(x, x*_{<j})``.

    ``weights_x[j]`` multiplies ``x - mu``, ``weights_star[j, :j]``
    multiplies ``x*_{<j} - mu_{<j}``, and ``cond_var[j]`` is the conditional
    variance.  ``inverses`` (optional) holds the inverse of each leading
    ``(p + j)`` block of Gamma, j = 0..p-1.
    """

    mu: np.ndarray
    Sigma: np.ndarray
    s: np.ndarray
    weights_x: np.ndarray
    weights_star: np.ndarray
    cond_var: np.ndarray
    deterministic: np.ndarray
    inverses: tuple | None = None


def _inverse_or_pinv(M: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(M)
        Linv = np.linalg.solve(L, np.eye(M.shape[0]))
        return Linv.T @ Linv
    except np.linalg.LinAlgError:
        return np.linalg.pinv(M, hermitian=True)


def ball_matrix(M) -> np.ndarray:
    """Object array of Arb balls holding the float64 entries of ``M`` exactly."""
    import flint
    return np.array([[flint.arb(float(v)) for v in row] for row in np.asarray(M)], dtype=object)


def ball_inverse(M) -> np.ndarray:
    """Inverse of a float or ball matrix in Arb arithmetic at the current precision."""
    import flint
    A = flint.arb_mat([[v if isinstance(v, flint.arb) else float(v) for v in row]
                       for row in np.asarray(M)])
    return np.array(A.inv().tolist(), dtype=object)


def _mid(v) -> float:
    return float(v.mid()) if hasattr(v, "mid") else float(v)


_mids = np.vectorize(_mid, otypes=[float])


def covariance_plan(mu, Sigma, s, keep_inverses: bool = False,
                    det_tol: float = 1e-10, precision_bits: int | None = None
                    ) -> GaussianProposalPlan:
    """Regression weights and conditional variances for every step.

    The inverse of each leading block of Gamma is grown one row at a time
    with a rank-one (Sherman-Morrison) update of the previous inverse, so the
    whole plan costs O(p^3).  A vanishing Schur complement marks a step whose
    proposal is deterministic; the next inverse then falls back to a
    pseudoinverse.

    ``precision_bits`` runs the same recursion on Arb balls (python-flint)
    at that working precision.  The kept inverses are then ball matrices
    whose radii bound the rounding error.  Equicorrelated s puts Gamma on
    the boundary of the PSD cone, so the last leading blocks can be close
    to singular and float64 cannot resolve their inverses to many digits.
    """
    if precision_bits is not None:
        import flint
        saved = flint.ctx.prec
        flint.ctx.prec = int(precision_bits)
        try:
            return _covariance_plan(mu, Sigma, s, keep_inverses, det_tol, balls=True)
        finally:
            flint.ctx.prec = saved
    return _covariance_plan(mu, Sigma, s, keep_inverses, det_tol, balls=False)


def _covariance_plan(mu, Sigma, s, keep_inverses, det_tol, balls):
    Sigma = np.asarray(Sigma, dtype=float)
    p = Sigma.shape[0]
    mu = np.zeros(p) if mu is None else np.asarray(mu, dtype=float).reshape(p)
    s = np.asarray(s, dtype=float).reshape(p)
    if np.any(s < 0):
        raise PlanError("s must be nonnegative")
    G = gamma_matrix(Sigma, s)
    ev = np.linalg.eigvalsh(G)
    if ev[0] < -1e-8:
        raise PlanError(f"Gamma(s) is not positive semidefinite: most negative eigenvalue {ev[0]:.6g}")

    if balls:
        G, dt = ball_matrix(G), object
        inv = ball_inverse(Sigma)
    else:
        dt = float
        inv = _inverse_or_pinv(Sigma)
    weights_x = np.zeros((p, p))
    weights_star = np.zeros((p, p))
    cond_var = np.zeros(p)
    deterministic = np.zeros(p, dtype=bool)
    kept = [inv] if keep_inverses else None
    for j in range(p):
        n = p + j
        gam = G[:n, n]
        sig2 = G[n, n]
        b = inv @ gam
        d = sig2 - gam @ b
        weights_x[j] = _mids(b[:p])
        weights_star[j, :j] = _mids(b[p:])
        if _mid(d) <= det_tol * _mid(sig2):
            deterministic[j] = True
            d = 0.0
        cond_var[j] = _mid(d)
        if j == p - 1:
            break
        if _mid(d) > 0.0:
            new = np.empty((n + 1, n + 1), dtype=dt)
            new[:n, :n] = inv + np.outer(b, b) / d
            new[:n, n] = -b / d
            new[n, :n] = -b / d
            new[n, n] = 1.0 / d
            inv = new
        else:
            block = _mids(G[: n + 1, : n + 1])
            inv = np.linalg.pinv(block, hermitian=True)
            if balls:
                inv = ball_matrix(inv)
        if keep_inverses:
            kept.append(inv)
    return GaussianProposalPlan(mu, Sigma, s, weights_x, weights_star, cond_var, deterministic,
                                tuple(kept) if keep_inverses else None)


def conditional_moments_direct(Sigma, s, j: int):
    """Direct-linear-algebra oracle for the j-th (0-based) step's conditional
    variance: Gamma22 - Gamma12' pinv(Gamma11) Gamma12."""
    G = gamma_matrix(Sigma, s)
    p = np.asarray(Sigma).shape[0]
    n = p + j
    g11 = G[:n, :n]
    g12 = G[:n, n]
    w = np.linalg.pinv(g11, hermitian=True) @ g12
    return w, float(G[n, n] - g12 @ w)


# ---------------------------------------------------------------------------
# proposal laws and the kernel contract


@dataclass
class DiscreteLaw:
    """Finitely many proposal values (rows of ``values``) with log-probabilities."""

    values: np.ndarray
    logp: np.ndarray


@dataclass
class ContinuousLaw:
    draw: Callable[[np.random.Generator], np.ndarray]


@dataclass
class StepContext:
    """What a kernel may look at when proposing for one unit.

    Arrays are indexed by variable id - 1.  ``x_star`` is NaN for variables
    not proposed yet.
    """

    x: np.ndarray
    x_star: np.ndarray
    x_tilde: np.ndarray
    accepted: np.ndarray
    position: int


class ProposalKernel:
    """Contract between kernels and the sampling engine.

    ``log_q(ctx, k, to, frm, overrides)`` is the log-probability (or
    density) of proposing ``to`` for unit ``k`` when the unit currently
    holds ``frm`` and the variables in ``overrides`` take the given
    (broadcastable) values instead of their entries in ``ctx.x``.
    """

    kind = "plain"
    gamma: float = 1.0
    discrete_only = False

    def prepare(self, graph: FactorGraph, units: Sequence[tuple[int, ...]]) -> None:
        self.graph = graph
        self.units = [tuple(u) for u in units]
        self.position_of_var = {v: k for k, u in enumerate(self.units) for v in u}

    def reads(self, k: int) -> set[int]:
        """Variable ids of ``x`` (outside unit k) the proposal at unit k reads."""
        return set()

    def law(self, ctx: StepContext, k: int):
        raise NotImplementedError

    def log_q(self, ctx: StepContext, k: int, to, frm, overrides) -> np.ndarray:
        raise NotImplementedError


def _require_singletons(kernel, units):
    if any(len(u) != 1 for u in units):
        raise ValueError(f"{type(kernel).__name__} proposes one variable at a time")


# ---------------------------------------------------------------------------
# multiple-try


@dataclass(frozen=True)
class MtmParams:
    m: int = DEFAULT_M
    t: float | np.ndarray = 1.0
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")
        if np.any(np.asarray(self.t) <= 0):
            raise ValueError("step sizes must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


def mtm_offsets(m: int) -> np.ndarray:
    return np.concatenate([np.arange(-m, 0), np.arange(1, m + 1)])


def mtm_candidates(x_j: float, m: int, t: float) -> np.ndarray:
    """The 2m values ``x_j + k t``, k in -m..-1, 1..m, ascending."""
    return x_j + mtm_offsets(m) * float(t)


def _log1mexp(a):
    """log(1 - exp(a)) for a <= 0, vectorized and stable."""
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(a > -0.6931471805599453, np.log(-np.expm1(a)), np.log1p(-np.exp(a)))
    return np.where(a == 0.0, NEG_INF, out)


def log1mexp(a):
    out = _log1mexp(a)
    return float(out) if np.ndim(out) == 0 else out


def mtm_selection_logprobs(log_pi_candidates) -> np.ndarray | None:
    """Selection log-probabilities proportional to the target, or None when
    every candidate has zero mass (automatic rejection)."""
    lp = np.asarray(log_pi_candidates, dtype=float)
    total = special.logsumexp(lp)
    if total == NEG_INF:
        return None
    return lp - total


def mtm_log_accept(log_pi_from_candidates, log_pi_to_candidates, gamma: float) -> float:
    """log of ``gamma * min(1, sum pi(C_x) / sum pi(C_x*))``."""
    a = special.logsumexp(np.asarray(log_pi_from_candidates, dtype=float))
    b = special.logsumexp(np.asarray(log_pi_to_candidates, dtype=float))
    if a == NEG_INF:
        return NEG_INF
    return math.log(gamma) + min(0.0, a - b)


def mtm_select_and_accept(x_j: float, target_logpdf: Callable[[np.ndarray], np.ndarray],
                          params: MtmParams, rng: np.random.Generator):
    """One multiple-try move for a single coordinate.

    Returns ``(x_star, accepted, info)``; ``x_star`` is None when no
    candidate around ``x_j`` has positive mass.
    """
    t = float(np.asarray(params.t).reshape(-1)[0])
    cand = mtm_candidates(x_j, params.m, t)
    lp_from = np.asarray(target_logpdf(cand), dtype=float)
    sel = mtm_selection_logprobs(lp_from)
    if sel is None:
        return None, False, {"selection": None, "log_accept": NEG_INF}
    i = int(rng.choice(len(cand), p=np.exp(sel)))
    x_star = cand[i]
    back = mtm_candidates(x_star, params.m, t)
    lp_to = np.asarray(target_logpdf(back), dtype=float)
    la = mtm_log_accept(lp_from, lp_to, params.gamma)
    accepted = bool(rng.random() < math.exp(la))
    return x_star, accepted, {"selection": np.exp(sel), "log_accept": la,
                              "candidates": cand, "reverse_candidates": back}


class MtmKernel(ProposalKernel):
    """Multiple-try proposals on the lattice ``x + k t``.

    ``t`` is a scalar or a per-variable array indexed by id - 1.  The
    target-dependent selection and acceptance are assembled by the engine;
    the kernel contributes the candidate lattice.
    """

    kind = "mtm"

    def __init__(self, m: int = DEFAULT_M, t=1.0, gamma: float = DEFAULT_GAMMA):
        self.params = MtmParams(int(m), t, float(gamma))
        self.m = int(m)
        self.gamma = float(gamma)
        self._t = t

    def prepare(self, graph, units):
        _require_singletons(self, units)
        super().prepare(graph, units)
        t = np.asarray(self._t, dtype=float)
        self.t = np.full(graph.p, float(t)) if t.ndim == 0 else t.reshape(graph.p)

    def step_size(self, k: int) -> float:
        return float(self.t[self.units[k][0] - 1])

    def log_q(self, ctx, k, to, frm, overrides=None):
        # target-free part: uniform over the candidate lattice around frm
        t = self.step_size(k)
        steps = (np.asarray(to, dtype=float) - np.asarray(frm, dtype=float)) / t
        k_int = np.rint(steps)
        ok = (np.abs(steps - k_int) < 1e-9) & (np.abs(k_int) >= 1) & (np.abs(k_int) <= self.m)
        return np.where(ok, -math.log(2 * self.m), NEG_INF)


# ---------------------------------------------------------------------------
# covariance-guided


def _log_gauss_interval(lo, hi, mean, sd):
    """log P(lo < N(mean, sd^2) <= hi), stable in both tails."""
    a = (np.asarray(lo, dtype=float) - mean) / sd
    b = (np.asarray(hi, dtype=float) - mean) / sd
    # use the upper tail when the interval sits above the mean
    flip = a > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    lb = special.log_ndtr(b2)
    la = special.log_ndtr(a2)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lb + _log1mexp(np.minimum(la - lb, 0.0))
    return np.where(lb == NEG_INF, NEG_INF, out)


def round_to_levels(values, levels: Sequence[float]) -> np.ndarray:
    """Nearest level; exact midpoints go to the smaller level."""
    lv = np.asarray(levels, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(lv) == 1:
        return np.full_like(v, lv[0])
    mids = 0.5 * (lv[1:] + lv[:-1])
    idx = np.searchsorted(mids, v, side="left")
    return lv[idx]


class CovarianceKernel(ProposalKernel):
    """Conditional-Gaussian proposals from ``Gamma(s)``.

    The regression plan is rebuilt for the sampling order in ``prepare``.
    For discrete variables a draw is rounded to the nearest level and the
    proposal mass is the Gaussian probability of the rounding cell.
    """

    def __init__(self, mu, Sigma, s, gamma: float = 1.0, weight_tol: float = 1e-9):
        self.mu = None if mu is None else np.asarray(mu, dtype=float)
        self.Sigma = np.asarray(Sigma, dtype=float)
        self.s = np.asarray(s, dtype=float)
        self.gamma = float(gamma)
        self.weight_tol = weight_tol
        self.plan: GaussianProposalPlan | None = None

    def prepare(self, graph, units):
        _require_singletons(self, units)
        super().prepare(graph, units)
        p = graph.p
        if self.Sigma.shape != (p, p):
            raise ValueError("Sigma does not match the graph dimension")
        self.perm = np.array([u[0] - 1 for u in self.units])  # position -> var index
        mu = np.zeros(p) if self.mu is None else self.mu
        self.mu_perm = mu[self.perm]
        self.plan = covariance_plan(self.mu_perm, self.Sigma[np.ix_(self.perm, self.perm)],
                                    self.s[self.perm])
        self.sd = np.sqrt(self.plan.cond_var)
        self.levels = []
        for k in range(p):
            dom = graph.domain(int(self.perm[k]) + 1)
            self.levels.append(np.asarray(dom.levels) if isinstance(dom, DiscreteLevels) else None)

    def reads(self, k):
        w = np.abs(self.plan.weights_x[k])
        cut = self.weight_tol * max(float(w.max()), 1e-300)
        return {int(self.perm[i]) + 1 for i in np.nonzero(w > cut)[0] if i != k}

    def _base_mean(self, ctx, k):
        plan = self.plan
        xp = ctx.x[self.perm]
        out = self.mu_perm[k] + plan.weights_x[k] @ (xp - self.mu_perm)
        if k:
            xs = ctx.x_star[self.perm[:k]]
            out += plan.weights_star[k, :k] @ (xs - self.mu_perm[:k])
        return float(out)

    def _mean(self, ctx, k, frm, overrides):
        w = self.plan.weights_x[k]
        own = int(self.perm[k])
        mean = self._base_mean(ctx, k) + w[k] * (np.asarray(frm, dtype=float) - ctx.x[own])
        if overrides:
            pos = self.position_of_var
            for v, arr in overrides.items():
                wv = w[pos[v]]
                if wv != 0.0:
                    mean = mean + wv * (np.asarray(arr, dtype=float) - ctx.x[v - 1])
        return mean

    def law(self, ctx, k):
        mean = self._mean(ctx, k, ctx.x[self.perm[k]], None)
        sd = float(self.sd[k])
        levels = self.levels[k]

        def draw(rng):
            z = mean + sd * rng.standard_normal()
            if levels is not None:
                z = round_to_levels(z, levels)
            return np.array([float(z)])

        return ContinuousLaw(draw)

    def log_q(self, ctx, k, to, frm, overrides=None):
        mean = self._mean(ctx, k, frm, overrides)
        to = np.asarray(to, dtype=float)
        levels = self.levels[k]
        if self.plan.deterministic[k]:
            target = mean if levels is None else round_to_levels(mean, levels)
            tol = 1e-8 * (1.0 + np.abs(target))
            return np.where(np.abs(to - target) <= tol, 0.0, NEG_INF)
        sd = float(self.sd[k])
        if levels is None:
            z = (to - mean) / sd
            return -0.5 * z * z - math.log(sd) - 0.5 * math.log(2 * math.pi)
        lv = levels
        mids = 0.5 * (lv[1:] + lv[:-1])
        lo_edges = np.concatenate([[-np.inf], mids])
        hi_edges = np.concatenate([mids, [np.inf]])
        idx = np.searchsorted(lv, to)
        idx_c = np.clip(idx, 0, len(lv) - 1)
        on = lv[idx_c] == to
        out = _log_gauss_interval(lo_edges[idx_c], hi_edges[idx_c], mean, sd)
        return np.where(on, out, NEG_INF)


# ---------------------------------------------------------------------------
# random walk and block kernels


class GaussianRandomWalkKernel(ProposalKernel):
    """Symmetric proposal ``x* ~ N(x_j, scale_j^2)`` (rounded for discrete
    variables, in which case the mass is that of the rounding cell)."""

    def __init__(self, scale=1.0, gamma: float = 1.0):
        self._scale = scale
        self.gamma = float(gamma)

    def prepare(self, graph, units):
        _require_singletons(self, units)
        super().prepare(graph, units)
        sc = np.asarray(self._scale, dtype=float)
        self.scale = np.full(graph.p, float(sc)) if sc.ndim == 0 else sc.reshape(graph.p)
        self.levels = {}
        for v in range(1, graph.p + 1):
            dom = graph.domain(v)
            self.levels[v] = np.asarray(dom.levels) if isinstance(dom, DiscreteLevels) else None

    def law(self, ctx, k):
        v = self.units[k][0]
        x0 = float(ctx.x[v - 1])
        sd = float(self.scale[v - 1])
        levels = self.levels[v]

        def draw(rng):
            z = x0 + sd * rng.standard_normal()
            if levels is not None:
                z = round_to_levels(z, levels)
            return np.array([float(z)])

        return ContinuousLaw(draw)

    def log_q(self, ctx, k, to, frm, overrides=None):
        v = self.units[k][0]
        sd = float(self.scale[v - 1])
        to = np.asarray(to, dtype=float)
        frm = np.asarray(frm, dtype=float)
        levels = self.levels[v]
        if levels is None:
            z = (to - frm) / sd
            return -0.5 * z * z - math.log(sd) - 0.5 * math.log(2 * math.pi)
        mids = 0.5 * (levels[1:] + levels[:-1])
        lo_edges = np.concatenate([[-np.inf], mids])
        hi_edges = np.concatenate([mids, [np.inf]])
        idx = np.clip(np.searchsorted(levels, to), 0, len(levels) - 1)
        on = levels[idx] == to
        return np.where(on, _log_gauss_interval(lo_edges[idx], hi_edges[idx], frm, sd), NEG_INF)


class UniformBlockKernel(ProposalKernel):
    """Propose a uniformly random configuration of the whole unit over its
    level grid (discrete variables only).  Symmetric, so it is faithful and
    reads nothing."""

    discrete_only = True

    def __init__(self, gamma: float = 1.0):
        self.gamma = float(gamma)

    def prepare(self, graph, units):
        super().prepare(graph, units)
        self.grids = []
        for u in self.units:
            doms = [graph.domain(v) for v in u]
            if not all(isinstance(d, DiscreteLevels) for d in doms):
                raise ValueError("UniformBlockKernel needs discrete variables")
            grid = np.array(list(itertools.product(*[d.levels for d in doms])), dtype=float)
            self.grids.append(grid)

    def law(self, ctx, k):
        g = self.grids[k]
        return DiscreteLaw(g, np.full(len(g), -math.log(len(g))))

    def log_q(self, ctx, k, to, frm, overrides=None):
        return -math.log(len(self.grids[k]))


class PrefixDependentKernel(ProposalKernel):
    """Deliberately unfaithful binary-level kernel, for negative controls.

    From the second unit on, the proposal favours the value of ``x`` at the
    first sampled variable, ignoring its knockoff partner.
    """

    def __init__(self, strength: float = 1.5, gamma: float = 1.0):
        self.strength = float(strength)
        self.gamma = float(gamma)

    def prepare(self, graph, units):
        _require_singletons(self, units)
        super().prepare(graph, units)
        self.first = self.units[0][0]
        self.level_sets = {v: np.asarray(graph.domain(v).levels) for v in range(1, graph.p + 1)}

    def reads(self, k):
        return {self.first} if k > 0 else set()

    def _logits(self, ctx, k):
        lv = self.level_sets[self.units[k][0]]
        if k == 0:
            return lv, np.full(len(lv), -math.log(len(lv)))
        a = self.strength * lv * ctx.x[self.first - 1]
        return lv, a - special.logsumexp(a)

    def law(self, ctx, k):
        lv, lp = self._logits(ctx, k)
        return DiscreteLaw(lv.reshape(-1, 1), lp)

    def log_q(self, ctx, k, to, frm, overrides=None):
        lv, lp = self._logits(ctx, k)
        to = np.asarray(to, dtype=float)
        idx = np.clip(np.searchsorted(lv, to), 0, len(lv) - 1)
        return np.where(lv[idx] == to, lp[idx], NEG_INF)


# ---------------------------------------------------------------------------
# faithfulness audit


def faithfulness_audit(kernel: ProposalKernel, graph: FactorGraph,
                       values: Sequence[float] | None = None, tol: float = 1e-10) -> bool:
    """Check that every step's proposal law is unchanged when an earlier
    original/knockoff pair is swapped.

    Enumerates all assignments of a small instance (p <= 3).  Discrete
    variables range over their levels; continuous ones over ``values``.
    On an accepted earlier step the proposal equals the knockoff, so it
    moves with it under the swap; on a rejected step the swap is a no-op.
    """
    p = graph.p
    if p > 3:
        raise ValueError("faithfulness audit is for instances with p <= 3")
    units = [(v,) for v in range(1, p + 1)]
    kernel.prepare(graph, units)
    grids = []
    for v in range(1, p + 1):
        dom = graph.domain(v)
        if isinstance(dom, DiscreteLevels):
            grids.append(list(dom.levels))
        else:
            if values is None:
                raise ValueError("continuous variables need explicit audit values")
            grids.append(list(values))
    for j in range(1, p):
        v_j = units[j][0]
        targets = np.asarray(grids[v_j - 1], dtype=float)
        if kernel.kind == "mtm":
            t = kernel.step_size(j)
            targets = np.concatenate([targets, targets + t, targets - t])
        prefix_grids = [grids[units[k][0] - 1] for k in range(j)]
        for x in itertools.product(*grids):
            x = np.array(x, dtype=float)
            for star_prefix in itertools.product(*prefix_grids):
                for acc in itertools.product([True, False], repeat=j):
                    x_tilde = x.copy()
                    x_star = np.full(p, np.nan)
                    accepted = np.zeros(p, dtype=bool)
                    for k in range(j):
                        v = units[k][0]
                        x_star[v - 1] = star_prefix[k]
                        if acc[k]:
                            x_tilde[v - 1] = star_prefix[k]
                        accepted[v - 1] = acc[k]
                    ctx = StepContext(x, x_star, x_tilde, accepted, j)
                    base = kernel.log_q(ctx, j, targets, x[v_j - 1], {})
                    for k in range(j):
                        v = units[k][0]
                        xs, ts, ss = x.copy(), x_tilde.copy(), x_star.copy()
                        xs[v - 1], ts[v - 1] = x_tilde[v - 1], x[v - 1]
                        if accepted[v - 1]:
                            ss[v - 1] = ts[v - 1]
                        ctx2 = StepContext(xs, ss, ts, accepted, j)
                        other = kernel.log_q(ctx2, j, targets, xs[v_j - 1], {})
                        both_inf = (base == NEG_INF) & (other == NEG_INF)
                        diff = np.where(both_inf, 0.0, np.abs(np.exp(base) - np.exp(other)))
                        if np.any(diff > tol):
                            return False
    return True
