"""Knockoff quality measurement, parameter sweeps and the validation suite."""

from __future__ import annotations

import csv
import io
import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .config import (ConfigError, Knockoff, KnockoffGenerator, SamplerConfig, build_model,
                     resolve_sampler)
from .engine import SequentialSampler
from .factor_model import DiscreteLevels, FactorGraph
from .models import Model
from .oracle import OracleRefusal, joint_pmf, max_swap_asymmetry
from .proposals import (DEFAULT_T_SCALE, ball_inverse, covariance_plan, equicorrelated_s,
                        gamma_matrix)

BENCH_COLUMNS = ("model", "kind", "m", "t_scale", "gamma", "w", "beta0", "rho", "alpha", "mac",
                 "mac_se", "mean_acceptance", "queries_total", "lower_bound", "seed")
SAMPLE_COLUMNS = ("replicate", "coordinate", "x", "x_tilde", "accepted", "queries_this_step")
MODEL_AXES = ("beta0", "rho", "alpha")
SAMPLER_AXES = ("m", "t_scale", "gamma", "w")

KnockoffFn = Callable[[np.ndarray, np.random.Generator], Knockoff]


def x_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Stream for drawing observations."""
    return np.random.default_rng([seed, 0, stream])


def knockoff_rng(seed: int, replicate: int) -> np.random.Generator:
    """Stream for the knockoff of one replicate."""
    return np.random.default_rng([seed, 1, replicate])


def pilot_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2])


# ---------------------------------------------------------------------------
# correlation summaries


@dataclass
class MacReport:
    cor: np.ndarray
    abs_cor: np.ndarray
    se: np.ndarray
    mac: float
    mac_se: float
    acceptance_rate: np.ndarray
    queries_total: int
    queries_per_knockoff: float
    lower_bound: float
    zero_variance: np.ndarray
    n: int
    wall_time: float = 0.0
    x: np.ndarray | None = field(default=None, repr=False)
    x_tilde: np.ndarray | None = field(default=None, repr=False)

    @property
    def mean_acceptance(self) -> float:
        return float(np.mean(self.acceptance_rate))


def correlation_summary(X: np.ndarray, XT: np.ndarray, coords: Sequence[int] | None = None):
    """Signed correlations, their delta-method standard errors, the MAC over
    ``coords`` and its standard error.

    The per-observation influence of a sample correlation r is
    ``z_x z_y - r (z_x^2 + z_y^2) / 2`` with z the standardized values;
    the MAC's influence is the sign-weighted average of these.
    A coordinate where either side is constant gets correlation 1 and a
    flag.
    """
    X = np.asarray(X, dtype=float)
    XT = np.asarray(XT, dtype=float)
    n, p = X.shape
    if n < 2:
        raise ValueError("need at least two replicates")
    dx = X - X.mean(axis=0)
    dy = XT - XT.mean(axis=0)
    sxx = (dx * dx).sum(axis=0)
    syy = (dy * dy).sum(axis=0)
    sxy = (dx * dy).sum(axis=0)
    flat = (sxx == 0) | (syy == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(flat, 1.0, sxy / np.sqrt(sxx * syy))
        r = np.clip(r, -1.0, 1.0)
        zx = np.where(flat, 0.0, dx / np.sqrt(np.where(flat, 1.0, sxx) / n))
        zy = np.where(flat, 0.0, dy / np.sqrt(np.where(flat, 1.0, syy) / n))
    infl = zx * zy - 0.5 * r * (zx * zx + zy * zy)
    se = infl.std(axis=0, ddof=1) / math.sqrt(n)
    idx = np.arange(p) if coords is None else np.asarray(coords)
    sign = np.sign(r[idx])
    sign[sign == 0] = 1.0
    mac = float(np.mean(np.abs(r[idx])))
    mac_infl = (infl[:, idx] * sign).mean(axis=1)
    mac_se = float(mac_infl.std(ddof=1) / math.sqrt(n))
    return r, se, mac, mac_se, flat


def identity_sampler(x, rng=None) -> Knockoff:
    """The trivial knockoff x~ = x (a valid but useless construction)."""
    x = np.asarray(x, dtype=float)
    p = x.size
    return Knockoff(x.copy(), np.ones(p, dtype=bool), np.zeros(p, dtype=np.int64),
                    np.ones(p, dtype=bool), np.zeros(p))


def generate(knockoff: KnockoffFn, X: np.ndarray, seed: int):
    """Knockoffs for each row of X with per-replicate streams."""
    n, p = X.shape
    XT = np.empty_like(X)
    acc = np.zeros((n, p), dtype=bool)
    queries = np.zeros((n, p), dtype=np.int64)
    for r in range(n):
        k = knockoff(X[r], knockoff_rng(seed, r))
        XT[r] = k.x_tilde
        acc[r] = k.accepted
        queries[r] = k.queries
    return XT, acc, queries


def measure_mac(model: Model, sampler: SamplerConfig | KnockoffFn | None, n: int, seed: int,
                X: np.ndarray | None = None, coords: Sequence[int] | None = None,
                lower_bound: bool = True) -> MacReport:
    """MAC over ``n`` fresh (x, x~) pairs.

    ``sampler`` is a sampler config (``None`` for the model default) or any
    callable ``(x, rng) -> Knockoff``.  ``X`` lets callers share draws
    across settings.
    """
    if n < 2:
        raise ValueError("need at least two replicates")
    t0 = time.perf_counter()
    gen = None
    if sampler is None or isinstance(sampler, SamplerConfig):
        gen = KnockoffGenerator(model, sampler or SamplerConfig(), pilot_rng(seed))
        fn: KnockoffFn = gen
    else:
        fn = sampler
    if X is None:
        X = model.sample(n, x_rng(seed))
    XT, acc, queries = generate(fn, X, seed)
    r, se, mac, mac_se, flat = correlation_summary(X, XT, coords)
    lb = float("nan")
    if lower_bound and gen is not None:
        try:
            lb = gen.lower_bound()
        except Exception:  # singular pilot covariance and the like
            lb = float("nan")
    return MacReport(r, np.abs(r), se, mac, mac_se, acc.mean(axis=0), int(queries.sum()),
                     float(queries.sum(axis=1).mean()), lb, flat, n,
                     time.perf_counter() - t0, X, XT)


# ---------------------------------------------------------------------------
# sweeps


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        return repr(f)
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(u) for u in v)
    return str(v)


def sweep(model_spec: Mapping, sampler_spec: Mapping | None, grid: Mapping[str, Sequence],
          n: int, seed: int, common_random_numbers: bool = True,
          timings: list | None = None) -> list[dict]:
    """One row per point of the Cartesian grid.

    Grid axes may be sampler settings (m, t_scale, gamma, w) or model
    parameters (beta0, rho, alpha).  With common random numbers every point
    with the same model reuses the same observations.
    """
    unknown = set(grid) - set(SAMPLER_AXES) - set(MODEL_AXES)
    if unknown:
        raise ConfigError(f"unknown sweep axes: {sorted(unknown)}")
    axes = [a for a in (*MODEL_AXES, *SAMPLER_AXES) if a in grid]
    points = list(itertools.product(*[list(grid[a]) for a in axes])) if axes else [()]
    rows = []
    cache: dict = {}
    for i, point in enumerate(points):
        values = dict(zip(axes, point))
        mspec = dict(model_spec)
        sspec = dict(sampler_spec or {})
        for a, v in values.items():
            if a in MODEL_AXES:
                mspec[a] = v
            else:
                sspec[a] = v
        model_key = repr(sorted(mspec.items()))
        model = build_model(mspec)
        scfg = SamplerConfig.from_mapping(sspec)
        stream = 0 if common_random_numbers else i
        key = (model_key, stream)
        if key not in cache:
            cache[key] = model.sample(n, x_rng(seed, stream))
        rep = measure_mac(model, scfg, n, seed, X=cache[key])
        resolved = resolve_sampler(model, scfg)
        rows.append({
            "model": model.kind, "kind": resolved.kind, **_proposal_columns(model, resolved),
            "w": resolved.w,
            "beta0": mspec.get("beta0", mspec.get("beta")), "rho": mspec.get("rho"),
            "alpha": mspec.get("alpha"), "mac": rep.mac, "mac_se": rep.mac_se,
            "mean_acceptance": rep.mean_acceptance, "queries_total": rep.queries_total,
            "lower_bound": rep.lower_bound, "seed": seed,
        })
        if timings is not None:
            timings.append({**{a: values[a] for a in axes}, "wall_time": rep.wall_time})
    return rows


def _proposal_columns(model: Model, cfg: SamplerConfig) -> dict:
    """m, t_scale and gamma as used; blank for samplers without them."""
    if cfg.kind not in ("mtm", "gaussian-rw"):
        return {"m": None, "t_scale": None, "gamma": None}
    t = cfg.t_scale
    if t is None:
        t = 1.0 if model.graph.is_discrete else DEFAULT_T_SCALE
    return {"m": cfg.m if cfg.kind == "mtm" else None, "t_scale": float(t), "gamma": cfg.gamma}


def rows_to_csv(rows: Iterable[Mapping], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def sample_rows(model: Model, gen: KnockoffFn, n: int, seed: int) -> list[dict]:
    """Per-coordinate rows for the ``sample`` subcommand."""
    X = model.sample(n, x_rng(seed))
    rows = []
    for r in range(n):
        k = gen(X[r], knockoff_rng(seed, r))
        for j in range(model.p):
            rows.append({"replicate": r, "coordinate": j + 1, "x": float(X[r, j]),
                         "x_tilde": float(k.x_tilde[j]), "accepted": bool(k.accepted[j]),
                         "queries_this_step": int(k.queries[j])})
    return rows


# ---------------------------------------------------------------------------
# validation


@dataclass
class Check:
    name: str
    passed: bool | None
    detail: str

    def line(self) -> str:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]
        return f"{status}  {self.name}: {self.detail}"


def query_budget(cfg: SamplerConfig, p: int, width: int, levels: int) -> int:
    """Full-query-equivalent allowance per knockoff."""
    if cfg.kind == "discrete-exact":
        return 2 * p * levels ** (width + 1)
    if cfg.kind == "mtm":
        return 2 * p * (3 * cfg.m + 1) ** (width + 1)
    return 2 * p * 2 ** (width + 1)


def small_instance(model_spec: Mapping) -> dict | None:
    """A shrunken model of the same family for exhaustive checks."""
    kind = model_spec.get("kind")
    spec = dict(model_spec)
    if kind == "discrete-chain":
        spec.update(p=3, K=min(int(spec.get("K", 5)), 3))
        return spec
    if kind == "ising":
        for key in ("d", "d1", "d2"):
            spec.pop(key, None)
        spec.update(d1=2, d2=2, burn_in=10, thin=1)
        return spec
    if kind == "gibbs-grid":
        spec.pop("d2", None)
        spec.update(d=2, K=min(int(spec.get("K", 5)), 3), burn_in=10, thin=1)
        return spec
    return None


def check_exchangeability(graph: FactorGraph, sampler: SequentialSampler | Callable,
                          tol: float = 1e-10, groups=None) -> Check:
    try:
        pmf = joint_pmf(graph, sampler)
    except OracleRefusal as exc:
        return Check("exchangeability", None, str(exc))
    asym = max_swap_asymmetry(pmf, groups)
    return Check("exchangeability", asym < tol, f"max swap asymmetry {asym:.3g} (tol {tol:g})")


def marginal_tests(X: np.ndarray, XT: np.ndarray, graph: FactorGraph, level: float = 0.01) -> Check:
    """Per-coordinate two-sample tests of X~ against independent X draws,
    Bonferroni-corrected: chi-square on level counts for discrete variables,
    Kolmogorov-Smirnov for continuous ones."""
    p = X.shape[1]
    pvals = np.ones(p)
    for j in range(p):
        dom = graph.domain(j + 1)
        if isinstance(dom, DiscreteLevels):
            lv = np.asarray(dom.levels)
            a = np.array([(X[:, j] == v).sum() for v in lv])
            b = np.array([(XT[:, j] == v).sum() for v in lv])
            keep = (a + b) > 0
            table = np.vstack([a[keep], b[keep]])
            if table.shape[1] < 2:
                pvals[j] = 1.0
            else:
                pvals[j] = stats.chi2_contingency(table, correction=False)[1]
        else:
            pvals[j] = stats.ks_2samp(X[:, j], XT[:, j]).pvalue
    worst = int(np.argmin(pvals))
    ok = bool(pvals.min() >= level / p)
    return Check("marginal law", ok,
                 f"smallest p-value {pvals.min():.3g} at coordinate {worst + 1} "
                 f"(threshold {level / p:.3g})")


def recursion_check(Sigma: np.ndarray, tol: float = 1e-8, precision_bits: int = 256) -> Check:
    """Recursive leading-block inverses of Gamma against direct inversion.

    Both routes run in Arb ball arithmetic, and the reported difference is
    a rigorous upper bound (midpoint plus radius).
    """
    import flint
    s = equicorrelated_s(Sigma)
    p = Sigma.shape[0]
    plan = covariance_plan(None, Sigma, s, keep_inverses=True, precision_bits=precision_bits)
    G = gamma_matrix(Sigma, s)
    saved = flint.ctx.prec
    flint.ctx.prec = precision_bits
    try:
        worst = 0.0
        for j, inv in enumerate(plan.inverses):
            diff = inv - ball_inverse(G[: p + j, : p + j])
            worst = max(worst, max(float(abs(v).upper()) for v in diff.ravel()))
    finally:
        flint.ctx.prec = saved
    return Check("recursive inverses", worst < tol, f"max abs difference {worst:.3g}")


def validate(model_spec: Mapping, sampler_spec: Mapping | None = None, n: int = 2000,
             seed: int = 0, exchangeability_sampler: Callable[[FactorGraph], object] | None = None
             ) -> list[Check]:
    """Run every check that applies to the configuration.

    ``exchangeability_sampler`` overrides the sampler used for the exhaustive
    check on the shrunken instance (for negative controls).
    """
    checks: list[Check] = []
    model = build_model(model_spec)
    scfg = SamplerConfig.from_mapping(sampler_spec)
    gen = KnockoffGenerator(model, scfg, pilot_rng(seed))
    cfg = gen.cfg

    # exhaustive exchangeability on a small instance of the same family
    small_spec = small_instance(model_spec)
    if model.kind == "custom" and model.graph.is_discrete and model.p <= 4:
        small = model
    else:
        small = build_model(small_spec) if small_spec is not None else None
    if cfg.kind in ("covariance", "gaussian-rw") and exchangeability_sampler is None:
        checks.append(Check("exchangeability", None, "continuous proposals cannot be enumerated"))
    elif small is None or not small.graph.is_discrete:
        checks.append(Check("exchangeability", None, "needs a small discrete instance"))
    else:
        if exchangeability_sampler is not None:
            sampler = exchangeability_sampler(small.graph)
        else:
            small_cfg = SamplerConfig(**{**cfg.__dict__, "w": None})
            sampler = KnockoffGenerator(small, small_cfg)._sampler
        checks.append(check_exchangeability(small.graph, sampler))

    # marginal law against independent draws
    X = model.sample(n, x_rng(seed, 0))
    fresh = model.sample(n, x_rng(seed, 1))
    XT, acc, queries = generate(gen, X, seed)
    checks.append(marginal_tests(fresh, XT, model.graph))

    # query budget
    if gen._sampler is not None:
        width = gen._sampler.order.width
    else:
        width = min(cfg.w, min(model.grid))
    levels = max((model.graph.domain(v).size for v in range(1, model.p + 1)
                  if isinstance(model.graph.domain(v), DiscreteLevels)), default=2)
    budget = query_budget(cfg, model.p, width, levels)
    worst = int(queries.sum(axis=1).max())
    checks.append(Check("query budget", worst <= budget,
                        f"max {worst} full-query equivalents per knockoff (budget {budget})"))

    # covariance recursion
    if cfg.kind == "covariance":
        checks.append(recursion_check(gen.Sigma()))
    return checks
