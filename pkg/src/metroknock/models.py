"""Built-in distributions: factor graphs plus forward samplers for X."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .factor_model import (CliquePotential, ContinuousReal, DiscreteLevels, FactorGraph,
                           GaussianPairPotential, MIXTURE_MEAN, MIXTURE_SD,
                           MixtureInnovationPotential, QuadraticGibbsPotential,
                           StudentTInnovationPotential, TableLogPotential, VariableSpec)
from .junction_tree import JunctionTree, grid_adjacency, grid_junction_tree

DEFAULT_BURN_IN = 10_000
DEFAULT_THIN = 10
INNOVATIONS = ("gaussian", "student-t", "gauss-exp-mixture")

Sampler = Callable[[int, np.random.Generator], np.ndarray]


@dataclass
class Model:
    """A distribution ready for knockoff sampling.

    ``sample(n, rng)`` returns an ``(n, p)`` array of independent draws.
    ``Sigma`` is the exact covariance when known in closed form and
    ``None`` otherwise (see :func:`pilot_covariance`).
    """

    kind: str
    graph: FactorGraph
    sample: Sampler
    Sigma: np.ndarray | None = None
    mu: np.ndarray | None = None
    grid: tuple[int, int] | None = None
    params: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.graph.p

    def tree(self) -> JunctionTree | None:
        """Width-min(d1, d2) path tree for grid models."""
        return grid_junction_tree(*self.grid) if self.grid else None


# ---------------------------------------------------------------------------
# configs


def _rho_vector(rho, p: int) -> np.ndarray:
    r = np.asarray(rho, dtype=float)
    r = np.full(max(p - 1, 0), float(r)) if r.ndim == 0 else r.reshape(-1)
    if len(r) != max(p - 1, 0):
        raise ValueError(f"need {p - 1} correlations, got {len(r)}")
    if np.any(np.abs(r) >= 1):
        raise ValueError("chain correlations must lie in (-1, 1)")
    return r


@dataclass
class ChainConfig:
    p: int
    rho: float | Sequence[float] = 0.6
    innovation: str = "gaussian"
    nu: float = 5.0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be positive")
        if self.innovation not in INNOVATIONS:
            raise ValueError(f"innovation must be one of {INNOVATIONS}")
        if self.innovation == "student-t" and self.nu <= 2:
            raise ValueError("student-t innovations need nu > 2")
        self.rho_vec = _rho_vector(self.rho, self.p)


@dataclass
class DiscreteChainConfig:
    p: int
    K: int = 5
    alpha: float = 0.1

    def __post_init__(self):
        if self.p < 1 or self.K < 2:
            raise ValueError("need p >= 1 and K >= 2")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")


@dataclass
class IsingConfig:
    d1: int
    d2: int
    beta: float | dict = 0.25
    alpha: float | np.ndarray = 0.0
    burn_in: int = DEFAULT_BURN_IN
    thin: int = DEFAULT_THIN

    def __post_init__(self):
        if self.d1 < 1 or self.d2 < 1:
            raise ValueError("grid dimensions must be positive")
        edges = _grid_edges(self.d1, self.d2)
        if isinstance(self.beta, dict):
            bad = [e for e in self.beta if tuple(sorted(e)) not in edges]
            if bad:
                raise ValueError(f"couplings on non-adjacent pairs: {bad}")
            self.beta_of = {e: float(self.beta.get(e, self.beta.get((e[1], e[0]), 0.0)))
                            for e in edges}
        else:
            self.beta_of = {e: float(self.beta) for e in edges}
        a = np.asarray(self.alpha, dtype=float)
        self.alpha_vec = np.full(self.d1 * self.d2, float(a)) if a.ndim == 0 else a.reshape(-1)


@dataclass
class GibbsGridConfig:
    d: int
    K: int = 5
    beta0: float = 0.1
    burn_in: int = DEFAULT_BURN_IN
    thin: int = DEFAULT_THIN
    d2: int | None = None

    def __post_init__(self):
        if self.d < 1 or self.K < 2 or self.beta0 < 0:
            raise ValueError("need d >= 1, K >= 2, beta0 >= 0")


def _grid_edges(d1: int, d2: int) -> list[tuple[int, int]]:
    adj = grid_adjacency(d1, d2)
    return sorted((a, b) for a in adj for b in adj[a] if a < b)


# ---------------------------------------------------------------------------
# continuous chains


def ar_covariance(rho: np.ndarray) -> np.ndarray:
    """Sigma_jk = prod of rho between j and k (unit diagonal)."""
    p = len(rho) + 1
    S = np.eye(p)
    for j in range(p):
        acc = 1.0
        for k in range(j + 1, p):
            acc *= rho[k - 1]
            S[j, k] = S[k, j] = acc
    return S


def _continuous_vars(p: int) -> list[VariableSpec]:
    return [VariableSpec(i + 1, ContinuousReal()) for i in range(p)]


def _chain_sampler(rho: np.ndarray, innovation: Callable[[np.random.Generator, int], np.ndarray]):
    p = len(rho) + 1
    scale = np.sqrt(1.0 - rho**2)

    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((n, p))
        out[:, 0] = innovation(rng, n)
        for j in range(1, p):
            out[:, j] = rho[j - 1] * out[:, j - 1] + scale[j - 1] * innovation(rng, n)
        return out

    return sample


def build_gaussian_chain(cfg: ChainConfig) -> Model:
    rho = cfg.rho_vec
    cliques = [CliquePotential((1,), GaussianPairPotential([[1.0]]))]
    for j, r in enumerate(rho, start=1):
        prec = np.array([[r * r, -r], [-r, 1.0]]) / (1.0 - r * r)
        cliques.append(CliquePotential((j, j + 1), GaussianPairPotential(prec)))
    graph = FactorGraph(_continuous_vars(cfg.p), cliques)
    sample = _chain_sampler(rho, lambda rng, n: rng.standard_normal(n))
    return Model("gaussian-chain", graph, sample, ar_covariance(rho), np.zeros(cfg.p),
                 params={"rho": cfg.rho})


def student_t_innovations(nu: float):
    sc = math.sqrt((nu - 2.0) / nu)
    return lambda rng, n: sc * rng.standard_t(nu, size=n)


def mixture_innovations(rng: np.random.Generator, n: int) -> np.ndarray:
    """Standardized equal mixture of |N(0,1)| and -Exp(1)."""
    coin = rng.random(n) < 0.5
    g = np.abs(rng.standard_normal(n))
    e = rng.standard_exponential(n)
    return (np.where(coin, g, -e) - MIXTURE_MEAN) / MIXTURE_SD


def build_t_chain(cfg: ChainConfig) -> Model:
    rho = cfg.rho_vec
    cliques = [CliquePotential((1,), StudentTInnovationPotential(cfg.nu))]
    for j, r in enumerate(rho, start=1):
        cliques.append(CliquePotential((j, j + 1), StudentTInnovationPotential(cfg.nu, r)))
    graph = FactorGraph(_continuous_vars(cfg.p), cliques)
    sample = _chain_sampler(rho, student_t_innovations(cfg.nu))
    return Model("t-chain", graph, sample, ar_covariance(rho), np.zeros(cfg.p),
                 params={"rho": cfg.rho, "nu": cfg.nu})


def build_mixture_chain(cfg: ChainConfig) -> Model:
    rho = cfg.rho_vec
    cliques = [CliquePotential((1,), MixtureInnovationPotential())]
    for j, r in enumerate(rho, start=1):
        cliques.append(CliquePotential((j, j + 1), MixtureInnovationPotential(r)))
    graph = FactorGraph(_continuous_vars(cfg.p), cliques)
    sample = _chain_sampler(rho, mixture_innovations)
    return Model("mixture-chain", graph, sample, ar_covariance(rho), np.zeros(cfg.p),
                 params={"rho": cfg.rho})


def build_chain(cfg: ChainConfig) -> Model:
    return {"gaussian": build_gaussian_chain, "student-t": build_t_chain,
            "gauss-exp-mixture": build_mixture_chain}[cfg.innovation](cfg)


# ---------------------------------------------------------------------------
# discrete chain


def transition_matrix(K: int, alpha: float) -> np.ndarray:
    """Q(j, j') proportional to (1 - alpha)^|j - j'|."""
    d = np.abs(np.subtract.outer(np.arange(K), np.arange(K)))
    w = (1.0 - alpha) ** d
    return w / w.sum(axis=1, keepdims=True)


def _chain_marginals(p: int, Q: np.ndarray) -> np.ndarray:
    marg = [np.full(len(Q), 1.0 / len(Q))]
    for _ in range(p - 1):
        marg.append(marg[-1] @ Q)
    return np.array(marg)


def discrete_chain_covariance(p: int, Q: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Exact covariance of the chain started uniform.

    Row normalization makes Q asymmetric for K > 2, so the uniform start is
    not stationary and each coordinate has its own marginal.
    """
    marg = _chain_marginals(p, Q)
    means = marg @ levels
    S = np.empty((p, p))
    for j in range(p):
        h = levels.copy()  # h(a) = E[X_k | X_j = a], stepped forward in k
        for k in range(j, p):
            S[j, k] = S[k, j] = float(marg[j] @ (levels * h)) - means[j] * means[k]
            h = Q @ h
    return S


def build_discrete_chain(cfg: DiscreteChainConfig) -> Model:
    K, p = cfg.K, cfg.p
    Q = transition_matrix(K, cfg.alpha)
    levels = np.arange(1, K + 1, dtype=float)
    dom = DiscreteLevels(tuple(levels))
    variables = [VariableSpec(i + 1, dom) for i in range(p)]
    cliques = [CliquePotential((1,), TableLogPotential([dom], np.full(K, -math.log(K))))]
    logQ = np.log(Q)
    for j in range(1, p):
        cliques.append(CliquePotential((j, j + 1), TableLogPotential([dom, dom], logQ)))
    graph = FactorGraph(variables, cliques)
    cum = np.cumsum(Q, axis=1)

    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        state = rng.integers(0, K, size=n)
        out = np.empty((n, p))
        out[:, 0] = levels[state]
        for j in range(1, p):
            u = rng.random(n)
            state = np.minimum((u[:, None] >= cum[state]).sum(axis=1), K - 1)
            out[:, j] = levels[state]
        return out

    Sigma = discrete_chain_covariance(p, Q, levels)
    return Model("discrete-chain", graph, sample, Sigma, _chain_marginals(p, Q) @ levels,
                 params={"K": K, "alpha": cfg.alpha, "Q": Q})


# ---------------------------------------------------------------------------
# grids


def _checkerboard(d1: int, d2: int) -> tuple[np.ndarray, np.ndarray]:
    ii, jj = np.meshgrid(np.arange(d1), np.arange(d2), indexing="ij")
    black = ((ii + jj) % 2 == 0).ravel()
    return np.nonzero(black)[0], np.nonzero(~black)[0]


def _neighbor_index(d1: int, d2: int) -> tuple[np.ndarray, np.ndarray]:
    """Padded neighbour table (p x 4, pad = p) and its validity mask."""
    p = d1 * d2
    nb = np.full((p, 4), p)
    for i in range(d1):
        for j in range(d2):
            s = i * d2 + j
            cand = [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
            for c, (a, b) in enumerate(cand):
                if 0 <= a < d1 and 0 <= b < d2:
                    nb[s, c] = a * d2 + b
    return nb, nb < p


def _run_sweeps(update, state, n: int, burn_in: int, thin: int, rng) -> np.ndarray:
    """Independent parallel chains; each contributes draws spaced ``thin``
    sweeps apart after ``burn_in`` sweeps."""
    n_chains, p = state.shape
    per_chain = -(-n // n_chains)
    # a trailing zero column serves as the padding neighbour
    padded = np.concatenate([state, np.zeros((n_chains, 1))], axis=1)
    for _ in range(burn_in):
        update(padded, rng)
    draws = []
    for r in range(per_chain):
        if r:
            for _ in range(thin):
                update(padded, rng)
        draws.append(padded[:, :p].copy())
    return np.concatenate(draws, axis=0)[:n]


def _chains_for(n: int, max_chains: int) -> int:
    return max(1, min(n, max_chains))


def build_ising(cfg: IsingConfig, max_chains: int = 256) -> Model:
    d1, d2 = cfg.d1, cfg.d2
    p = d1 * d2
    dom = DiscreteLevels((-1.0, 1.0))
    variables = [VariableSpec(i + 1, dom) for i in range(p)]
    spins = np.array([-1.0, 1.0])
    cliques = []
    for s in range(1, p + 1):
        cliques.append(CliquePotential((s,), TableLogPotential([dom], cfg.alpha_vec[s - 1] * spins)))
    for (a, b), beta in cfg.beta_of.items():
        cliques.append(CliquePotential((a, b), TableLogPotential(
            [dom, dom], beta * np.outer(spins, spins))))
    graph = FactorGraph(variables, cliques)
    nb, valid = _neighbor_index(d1, d2)
    coup = np.zeros((p, 4))
    for s in range(p):
        for c in range(4):
            if valid[s, c]:
                t = nb[s, c]
                coup[s, c] = cfg.beta_of[(min(s, t) + 1, max(s, t) + 1)]
    colors = _checkerboard(d1, d2)
    field_ = cfg.alpha_vec

    def update(padded, rng):
        for sites in colors:
            local = (padded[:, nb[sites]] * coup[sites]).sum(axis=2) + field_[sites]
            prob_up = 1.0 / (1.0 + np.exp(-2.0 * local))
            padded[:, sites] = np.where(rng.random(local.shape) < prob_up, 1.0, -1.0)

    def sample(n: int, rng: np.random.Generator, burn_in: int | None = None,
               thin: int | None = None) -> np.ndarray:
        state = rng.choice(spins, size=(_chains_for(n, max_chains), p))
        return _run_sweeps(update, state, n, cfg.burn_in if burn_in is None else burn_in,
                           cfg.thin if thin is None else thin, rng)

    return Model("ising", graph, sample, None, None, grid=(d1, d2),
                 params={"beta": cfg.beta, "alpha": cfg.alpha})


def build_gibbs_grid(cfg: GibbsGridConfig, max_chains: int = 256) -> Model:
    d1 = cfg.d
    d2 = cfg.d if cfg.d2 is None else cfg.d2
    p, K = d1 * d2, cfg.K
    levels = np.arange(1, K + 1, dtype=float)
    dom = DiscreteLevels(tuple(levels))
    variables = [VariableSpec(i + 1, dom) for i in range(p)]
    cliques = [CliquePotential((a, b), QuadraticGibbsPotential(cfg.beta0))
               for a, b in _grid_edges(d1, d2)]
    if not cliques:  # a single site still needs a clique
        cliques = [CliquePotential((1,), TableLogPotential([dom], np.zeros(K)))]
    graph = FactorGraph(variables, cliques)
    nb, valid = _neighbor_index(d1, d2)
    colors = _checkerboard(d1, d2)
    beta = cfg.beta0

    degree = valid.sum(axis=1).astype(float)
    lev2 = levels * levels

    def update(padded, rng):
        for sites in colors:
            # sum_t (l - x_t)^2 = deg l^2 - 2 l sum_t x_t + const; the pad column is 0
            s1 = padded[:, nb[sites]].sum(axis=2)
            logits = -beta * (degree[sites][None, :, None] * lev2 - 2.0 * s1[..., None] * levels)
            logits -= logits.max(axis=2, keepdims=True)
            cum = np.cumsum(np.exp(logits), axis=2)
            u = rng.random(cum.shape[:2])[..., None] * cum[..., -1:]
            idx = np.minimum((u >= cum).sum(axis=2), K - 1)
            padded[:, sites] = levels[idx]

    def sample(n: int, rng: np.random.Generator, burn_in: int | None = None,
               thin: int | None = None) -> np.ndarray:
        state = levels[rng.integers(0, K, size=(_chains_for(n, max_chains), p))]
        return _run_sweeps(update, state, n, cfg.burn_in if burn_in is None else burn_in,
                           cfg.thin if thin is None else thin, rng)

    return Model("gibbs-grid", graph, sample, None, None, grid=(d1, d2),
                 params={"K": K, "beta0": cfg.beta0})


# ---------------------------------------------------------------------------
# generic sampler for user graphs


def gibbs_sweep_sampler(graph: FactorGraph, burn_in: int = 1000, thin: int = 10,
                        max_chains: int = 256, rw_scale: float = 1.0) -> Sampler:
    """Single-site sweeps over variables 1..p, vectorized across chains.

    Discrete variables are drawn from their full conditional; continuous
    ones take a Gaussian random-walk Metropolis step.
    """
    p = graph.p
    discrete = [isinstance(graph.domain(v), DiscreteLevels) for v in range(1, p + 1)]

    def local(v, cols):
        total = 0.0
        for ci in graph.cliques_of[v]:
            c = graph.cliques[ci]
            total = total + c(*[cols[u] for u in c.scope])
        return total

    def update(state, rng):
        n = state.shape[0]
        cols = {u: state[:, u - 1] for u in range(1, p + 1)}  # last column is padding
        for v in range(1, p + 1):
            if discrete[v - 1]:
                lv = np.asarray(graph.domain(v).levels)
                logits = np.empty((n, len(lv)))
                for i, val in enumerate(lv):
                    cols[v] = np.full(n, val)
                    logits[:, i] = np.broadcast_to(local(v, cols), (n,))
                logits -= logits.max(axis=1, keepdims=True)
                cum = np.cumsum(np.exp(logits), axis=1)
                u = rng.random(n)[:, None] * cum[:, -1:]
                state[:, v - 1] = lv[np.minimum((u >= cum).sum(axis=1), len(lv) - 1)]
            else:
                cur = state[:, v - 1].copy()
                cols[v] = cur
                old = np.broadcast_to(local(v, cols), (n,))
                prop = cur + rw_scale * rng.standard_normal(n)
                cols[v] = prop
                new = np.broadcast_to(local(v, cols), (n,))
                with np.errstate(invalid="ignore"):
                    take = np.log(rng.random(n)) < new - old
                state[:, v - 1] = np.where(take, prop, cur)
            cols[v] = state[:, v - 1]

    def init(n, rng):
        out = np.zeros((n, p))
        for v in range(1, p + 1):
            if discrete[v - 1]:
                lv = np.asarray(graph.domain(v).levels)
                out[:, v - 1] = lv[rng.integers(0, len(lv), size=n)]
        return out

    def sample(n: int, rng: np.random.Generator) -> np.ndarray:
        state = init(_chains_for(n, max_chains), rng)
        return _run_sweeps(update, state, n, burn_in, thin, rng)

    return sample


def custom_model(graph: FactorGraph, **kwargs) -> Model:
    return Model("custom", graph, gibbs_sweep_sampler(graph, **kwargs))


# ---------------------------------------------------------------------------
# helpers


def pilot_covariance(model: Model, rng: np.random.Generator, n: int = 10_000) -> np.ndarray:
    """Empirical covariance from ``n`` forward draws (for models without a
    closed form)."""
    xs = model.sample(n, rng)
    return np.cov(xs, rowvar=False).reshape(model.p, model.p)


def enumerate_pmf(graph: FactorGraph) -> tuple[np.ndarray, np.ndarray]:
    """All states (rows) and their exact probabilities; small graphs only."""
    grid = np.array(list(itertools.product(*[graph.domain(v).levels
                                             for v in range(1, graph.p + 1)])), dtype=float)
    lp = graph.log_phi_batch(grid)
    w = np.exp(lp - lp.max())
    return grid, w / w.sum()
