"""Run configuration: which model, which knockoff sampler, which seed.

A configuration is a JSON object::

    {
      "model":   {"kind": "gaussian-chain", "p": 50, "rho": 0.6},
      "sampler": {"kind": "metro", "w": null},
      "proposal": {"kind": "covariance", "s_source": "equicorrelated"},
      "seed": 0,
      "replicates": 100
    }

``model.kind`` is one of ``gaussian-chain``, ``t-chain``, ``mixture-chain``,
``discrete-chain``, ``ising``, ``gibbs-grid`` or ``custom-file:<path>``.
``sampler.kind`` is ``metro`` (Metropolized, with the proposal from the
``proposal`` block), ``discrete-exact`` or ``default`` (per-model choice,
see :func:`default_sampler`).  ``proposal.kind`` is ``mtm``,
``covariance`` or ``gaussian-rw``.  For brevity the proposal kind may also
be written directly as ``sampler.kind``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .engine import (DEFAULT_MAX_STATES, KnockoffRun, Partition, SequentialSampler,
                     grid_ribbon_partition)
from .factor_model import DiscreteLevels, FactorGraph, load_factor_graph
from .junction_tree import build_junction_tree, order_variables, quotient_adjacency
from .models import (ChainConfig, DiscreteChainConfig, GibbsGridConfig, IsingConfig, Model,
                     build_discrete_chain, build_gaussian_chain, build_gibbs_grid, build_ising,
                     build_mixture_chain, build_t_chain, custom_model, pilot_covariance)
from .proposals import (DEFAULT_GAMMA, DEFAULT_M, DEFAULT_T_SCALE, CovarianceKernel,
                        GaussianRandomWalkKernel, MtmKernel, equicorrelated_s, gamma_matrix,
                        mac_lower_bound)

MODEL_KINDS = ("gaussian-chain", "t-chain", "mixture-chain", "discrete-chain", "ising",
               "gibbs-grid")
SAMPLER_KINDS = ("default", "covariance", "mtm", "gaussian-rw", "discrete-exact")
PROPOSAL_KINDS = ("mtm", "covariance", "gaussian-rw")
PROPOSAL_KEYS = ("kind", "m", "t_scale", "gamma", "s_source")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# models


def build_model(spec: Mapping[str, Any]) -> Model:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind is None:
        raise ConfigError("model.kind is required")
    try:
        if kind in ("gaussian-chain", "t-chain", "mixture-chain"):
            innovation = {"gaussian-chain": "gaussian", "t-chain": "student-t",
                          "mixture-chain": "gauss-exp-mixture"}[kind]
            cfg = ChainConfig(int(spec.pop("p")), spec.pop("rho", 0.6), innovation,
                              float(spec.pop("nu", 5.0)))
            model = {"gaussian-chain": build_gaussian_chain, "t-chain": build_t_chain,
                     "mixture-chain": build_mixture_chain}[kind](cfg)
        elif kind == "discrete-chain":
            model = build_discrete_chain(DiscreteChainConfig(
                int(spec.pop("p")), int(spec.pop("K", 5)), float(spec.pop("alpha", 0.1))))
        elif kind == "ising":
            d1 = int(spec.pop("d1", spec.get("d", 10)))
            d2 = int(spec.pop("d2", spec.pop("d", d1)))
            beta = spec.pop("beta0", spec.pop("beta", 0.25))
            model = build_ising(IsingConfig(d1, d2, beta, spec.pop("alpha", 0.0),
                                            int(spec.pop("burn_in", 10_000)),
                                            int(spec.pop("thin", 10))))
        elif kind == "gibbs-grid":
            model = build_gibbs_grid(GibbsGridConfig(
                int(spec.pop("d")), int(spec.pop("K", 5)), float(spec.pop("beta0", 0.1)),
                int(spec.pop("burn_in", 10_000)), int(spec.pop("thin", 10)),
                spec.pop("d2", None)))
        elif isinstance(kind, str) and kind.startswith("custom-file:"):
            path = Path(kind.split(":", 1)[1])
            graph = load_factor_graph(path.read_text())
            model = custom_model(graph)
        else:
            raise ConfigError(f"unknown model kind {kind!r}")
    except KeyError as exc:
        raise ConfigError(f"model {kind!r} needs parameter {exc.args[0]!r}") from None
    if spec:
        raise ConfigError(f"unknown model parameters for {kind!r}: {sorted(spec)}")
    return model


# ---------------------------------------------------------------------------
# samplers


@dataclass
class SamplerConfig:
    """Knockoff sampler settings.

    ``t_scale`` is in units of ``sqrt(1 / (Sigma^-1)_jj)`` for continuous
    variables and of the level spacing for discrete ones (rounded to a
    whole number of levels).  ``w`` enables divide-and-conquer on grid
    models with ribbons at most ``w`` columns wide.  ``s_source`` is
    ``equicorrelated`` or ``file:<path>`` naming a JSON array of s values
    for covariance-guided proposals.
    """

    kind: str = "default"
    m: int = DEFAULT_M
    t_scale: float | None = None
    gamma: float = DEFAULT_GAMMA
    w: int | None = None
    groups: list | None = None
    max_states: int = DEFAULT_MAX_STATES
    pilot_n: int = 10_000
    s_source: str = "equicorrelated"

    @classmethod
    def from_mapping(cls, spec: Mapping[str, Any] | None,
                     proposal: Mapping[str, Any] | None = None) -> "SamplerConfig":
        spec = merge_sampler_spec(spec, proposal)
        known = set(cls.__dataclass_fields__)
        extra = set(spec) - known
        if extra:
            raise ConfigError(f"unknown sampler parameters: {sorted(extra)}")
        cfg = cls(**spec)
        if cfg.kind not in SAMPLER_KINDS + ("metro",):
            raise ConfigError(f"sampler.kind must be one of {SAMPLER_KINDS + ('metro',)}")
        if int(cfg.m) < 1:
            raise ConfigError("proposal.m must be a positive integer")
        if not 0.0 < float(cfg.gamma) <= 1.0:
            raise ConfigError("proposal.gamma must lie in (0, 1]")
        if cfg.t_scale is not None and not float(cfg.t_scale) > 0:
            raise ConfigError("proposal.t_scale must be positive")
        if cfg.w is not None and int(cfg.w) < 1:
            raise ConfigError("sampler.w must be a positive integer")
        if cfg.s_source != "equicorrelated" and not cfg.s_source.startswith("file:"):
            raise ConfigError("proposal.s_source must be 'equicorrelated' or 'file:<path>'")
        return cfg


def merge_sampler_spec(sampler: Mapping[str, Any] | None,
                       proposal: Mapping[str, Any] | None) -> dict:
    """Flatten a ``sampler`` block and an optional ``proposal`` block into
    one mapping; ``proposal.kind`` fills in a ``metro`` sampler kind."""
    out = dict(sampler or {})
    if not proposal:
        return out
    proposal = dict(proposal)
    extra = set(proposal) - set(PROPOSAL_KEYS)
    if extra:
        raise ConfigError(f"unknown proposal parameters: {sorted(extra)}")
    pkind = proposal.pop("kind", None)
    if pkind is not None:
        if pkind not in PROPOSAL_KINDS:
            raise ConfigError(f"proposal.kind must be one of {PROPOSAL_KINDS}")
        skind = out.get("kind", "metro")
        if skind not in ("metro", "default", pkind):
            raise ConfigError(f"sampler.kind {skind!r} does not use proposal.kind {pkind!r}")
        out["kind"] = pkind
    clash = set(proposal) & set(out)
    if clash:
        raise ConfigError(f"parameters given in both sampler and proposal: {sorted(clash)}")
    out.update(proposal)
    return out


def default_sampler(model: Model) -> SamplerConfig:
    """Per-model defaults.

    Gaussian chains use covariance-guided proposals; other chains and
    custom continuous graphs use multiple-try proposals (m=4, gamma=0.999);
    Ising grids use the exact discrete sampler on the grid tree; Gibbs grids
    use multiple-try proposals with ribbons of width 3.
    """
    if model.kind == "gaussian-chain":
        return SamplerConfig("covariance")
    if model.kind == "ising":
        return SamplerConfig("discrete-exact")
    if model.kind == "gibbs-grid":
        return SamplerConfig("mtm", w=3)
    if model.kind == "custom" and model.graph.is_discrete:
        try:
            SequentialSampler(model.graph, rule="exact")
            return SamplerConfig("discrete-exact")
        except ValueError:
            return SamplerConfig("mtm")
    return SamplerConfig("mtm")


def resolve_sampler(model: Model, cfg: SamplerConfig) -> SamplerConfig:
    """Replace ``default`` and ``metro`` by a concrete kind for ``model``
    (``metro`` never resolves to the rejection-free sampler)."""
    if cfg.kind not in ("default", "metro"):
        return cfg
    base = default_sampler(model)
    out = copy.copy(cfg)
    out.kind = base.kind
    if cfg.kind == "metro" and base.kind == "discrete-exact":
        out.kind = "mtm"
    if out.w is None:
        out.w = base.w
    return out


@dataclass
class Knockoff:
    """One knockoff with per-variable bookkeeping (indexed by id - 1)."""

    x_tilde: np.ndarray
    accepted: np.ndarray
    queries: np.ndarray
    copied: np.ndarray
    log_ratio: np.ndarray


class KnockoffGenerator:
    """Builds everything that does not depend on the observation once, then
    maps ``(x, rng)`` to a :class:`Knockoff`."""

    def __init__(self, model: Model, cfg: SamplerConfig, pilot_rng: np.random.Generator | None = None):
        self.model = model
        self.cfg = cfg = resolve_sampler(model, cfg)
        graph = model.graph
        self._Sigma = model.Sigma
        self._pilot_rng = pilot_rng
        if cfg.w is not None and model.grid is None:
            raise ConfigError("divide-and-conquer ribbons (w) need a grid model")
        if cfg.groups is not None and cfg.w is not None:
            raise ConfigError("groups and divide-and-conquer cannot be combined")
        self.t = self._step_sizes() if cfg.kind in ("mtm", "gaussian-rw") else None
        self.s = None
        if cfg.kind == "covariance":
            self.s = self._s_vector(self.Sigma())
        self._sampler = None
        if cfg.w is None:
            tree = model.tree() if cfg.groups is None else None
            self._sampler = self._make_sampler(graph, tree, np.arange(graph.p))

    # -- parameters --------------------------------------------------------

    def Sigma(self) -> np.ndarray:
        if self._Sigma is None:
            rng = self._pilot_rng or np.random.default_rng(0)
            self._Sigma = pilot_covariance(self.model, rng, self.cfg.pilot_n)
        return self._Sigma

    def lower_bound(self) -> float:
        """(1/p) sum |1 - s_j / Sigma_jj| for the s in use (equicorrelated
        unless a covariance sampler was given an s file)."""
        S = self.Sigma()
        s = self.s if self.s is not None else equicorrelated_s(S)
        return mac_lower_bound(S, s)

    def _s_vector(self, Sigma: np.ndarray) -> np.ndarray:
        src = self.cfg.s_source
        if src == "equicorrelated":
            return equicorrelated_s(Sigma)
        path = Path(src.split(":", 1)[1])
        try:
            s = np.asarray(json.loads(path.read_text()), dtype=float)
        except (OSError, ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: cannot read an s vector ({exc})") from None
        if s.shape != (Sigma.shape[0],) or np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ConfigError(f"{path}: need {Sigma.shape[0]} nonnegative finite s values")
        lam = float(np.linalg.eigvalsh(gamma_matrix(Sigma, s)).min())
        if lam < -1e-8:
            raise ConfigError(f"{path}: Gamma(s) is not PSD (smallest eigenvalue {lam:.3g})")
        return s

    def _step_sizes(self) -> np.ndarray:
        graph = self.model.graph
        p = graph.p
        t = np.empty(p)
        cont = [v for v in range(1, p + 1) if not isinstance(graph.domain(v), DiscreteLevels)]
        if cont:
            scale = DEFAULT_T_SCALE if self.cfg.t_scale is None else self.cfg.t_scale
            prec_diag = np.diag(np.linalg.inv(self.Sigma()))
            for v in cont:
                t[v - 1] = scale * np.sqrt(1.0 / prec_diag[v - 1])
        for v in range(1, p + 1):
            dom = graph.domain(v)
            if isinstance(dom, DiscreteLevels):
                scale = 1.0 if self.cfg.t_scale is None else self.cfg.t_scale
                t[v - 1] = max(1, int(round(scale))) * dom.spacing()
        return t

    def _make_sampler(self, graph: FactorGraph, tree, ids: np.ndarray) -> SequentialSampler:
        cfg = self.cfg
        groups = cfg.groups
        order = None
        if tree is not None:
            order = order_variables(tree)
        elif groups is not None:
            order = order_variables(build_junction_tree(quotient_adjacency(graph, groups)))
        if cfg.kind == "discrete-exact":
            return SequentialSampler(graph, order, rule="exact", groups=groups,
                                     max_states=cfg.max_states)
        if cfg.kind == "mtm":
            if groups is not None:
                raise ConfigError("multiple-try proposals are per variable; groups need a block kernel")
            return SequentialSampler(graph, order, MtmKernel(cfg.m, self.t[ids], cfg.gamma))
        if cfg.kind == "covariance":
            if groups is not None:
                raise ConfigError("covariance proposals are per variable")
            kern = CovarianceKernel(self.model.mu, self.Sigma(), self.s, gamma=1.0)
            return SequentialSampler(graph, order, kern)
        if cfg.kind == "gaussian-rw":
            if groups is not None:
                raise ConfigError("random-walk proposals are per variable")
            return SequentialSampler(graph, order,
                                     GaussianRandomWalkKernel(self.t[ids], cfg.gamma))
        raise ConfigError(f"unsupported sampler kind {cfg.kind!r}")

    # -- sampling -------------------------------------------------------------

    def __call__(self, x, rng: np.random.Generator) -> Knockoff:
        x = np.asarray(x, dtype=float)
        p = self.model.p
        if self._sampler is not None:
            run = self._sampler.sample(x, rng)
            return _from_run(run, p, np.arange(p))
        d1, d2 = self.model.grid
        w = self.cfg.w
        offset = int(rng.integers(0, w + 1))
        part = grid_ribbon_partition(d1, d2, w, offset)
        return self._divide(x, part, rng)

    def _divide(self, x: np.ndarray, part: Partition, rng) -> Knockoff:
        graph = self.model.graph
        p = graph.p
        out = Knockoff(x.copy(), np.zeros(p, dtype=bool), np.zeros(p, dtype=np.int64),
                       np.zeros(p, dtype=bool), np.full(p, np.nan))
        out.copied[np.array(part.separator, dtype=int) - 1] = True
        for i, side in enumerate(part.sides):
            members = set(side)
            fixed = {v: float(x[v - 1]) for v in range(1, p + 1) if v not in members}
            sub, ids = graph.condition(fixed)
            idx = np.array(ids) - 1
            tree = part.trees[i] if part.trees is not None else None
            run = self._make_sampler(sub, tree, idx).sample(x[idx], rng)
            part_k = _from_run(run, len(idx), np.arange(len(idx)))
            out.x_tilde[idx] = part_k.x_tilde
            out.accepted[idx] = part_k.accepted
            out.queries[idx] = part_k.queries
            out.log_ratio[idx] = part_k.log_ratio
        return out


def _from_run(run: KnockoffRun, p: int, idx: np.ndarray) -> Knockoff:
    acc = np.zeros(p, dtype=bool)
    q = np.zeros(p, dtype=np.int64)
    lr = np.full(p, np.nan)
    for k, unit in enumerate(run.units):
        for j, v in enumerate(unit):
            acc[v - 1] = run.accepted[k]
            lr[v - 1] = run.log_ratio[k]
            # a block's queries are charged to its first member
            q[v - 1] = run.queries_per_step[k] if j == 0 else 0
    return Knockoff(run.x_tilde.copy(), acc, q, np.zeros(p, dtype=bool), lr)


# ---------------------------------------------------------------------------
# whole-run config


@dataclass
class RunConfig:
    model: dict
    sampler: dict = field(default_factory=dict)   # already merged with any proposal block
    seed: int = 0
    replicates: int = 100
    bench: dict = field(default_factory=dict)

    @classmethod
    def load(cls, source: str | Path | Mapping) -> "RunConfig":
        if isinstance(source, Mapping):
            doc = dict(source)
        else:
            text = Path(source).read_text()
            try:
                doc = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{source}: invalid JSON ({exc})") from None
        if "model" not in doc:
            raise ConfigError("config needs a 'model' object")
        extra = set(doc) - {"model", "sampler", "proposal", "seed", "replicates", "bench"}
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        sampler = merge_sampler_spec(doc.get("sampler"), doc.get("proposal"))
        return cls(dict(doc["model"]), sampler, int(doc.get("seed", 0)),
                   int(doc.get("replicates", 100)), dict(doc.get("bench") or {}))

    def to_dict(self) -> dict:
        return asdict(self)
