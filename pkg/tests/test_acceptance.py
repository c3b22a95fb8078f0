"""End-to-end acceptance criteria, one test per criterion.

Each test reports a single PASS/FAIL line (collected in the pytest terminal
summary) before asserting.
"""

import math
import time

import numpy as np
import pytest

from metroknock.bench import (BENCH_COLUMNS, correlation_summary, generate, knockoff_rng,
                              marginal_tests, measure_mac, pilot_rng, recursion_check,
                              rows_to_csv, sweep, x_rng)
from metroknock.cli import main
from metroknock.config import KnockoffGenerator, SamplerConfig, build_model
from metroknock.engine import Partition, SequentialSampler
from metroknock.factor_model import QueryCounter
from metroknock.models import IsingConfig, build_ising
from metroknock.oracle import joint_pmf, max_swap_asymmetry, partition_law
from metroknock.proposals import (CovarianceKernel, GaussianRandomWalkKernel, MtmKernel,
                                  UniformBlockKernel, equicorrelated_s)

from conftest import random_chain, random_grid


def small_models():
    """Binary and three-level models with at most four variables."""
    out = []
    for p in (2, 3, 4):
        for K in (2, 3):
            out.append((f"chain p={p} K={K}", random_chain(p, K, 10 * p + K)))
    out.append(("ising 2x2", build_ising(IsingConfig(2, 2, beta=0.4, alpha=0.15)).graph))
    out.append(("grid 2x2 K=3", random_grid(2, 2, 3, 1)))
    return out


def two_groups(p):
    half = (p + 1) // 2
    return [list(range(1, half + 1)), list(range(half + 1, p + 1))]


def test_criterion_1_exchangeability(acceptance):
    t0 = time.perf_counter()
    worst = {}
    for name, g in small_models():
        cases = {"discrete-exact": (SequentialSampler(g, rule="exact"), None)}
        for m in (1, 2):
            for t in (1.0, 2.0):
                cases[f"mtm m={m} t={t:g}"] = (
                    SequentialSampler(g, kernel=MtmKernel(m, t, 0.999)), None)
        groups = two_groups(g.p)
        cases["group metro"] = (
            SequentialSampler(g, kernel=UniformBlockKernel(0.999), groups=groups), groups)
        for label, (sampler, grp) in cases.items():
            asym = max_swap_asymmetry(joint_pmf(g, sampler), grp)
            worst[(name, label)] = asym
    for K in (2, 3):
        g = random_chain(3, K, 70 + K)
        part = Partition.from_sets({1}, {3}, {2})
        for label, make in (("exact", lambda sub, tree: SequentialSampler(sub, rule="exact")),
                            ("mtm", lambda sub, tree: SequentialSampler(
                                sub, kernel=MtmKernel(1, 1.0, 0.999)))):
            pmf = joint_pmf(g, partition_law(g, part, make))
            worst[(f"chain p=3 K={K}", f"divide-and-conquer ({label} sides)")] = \
                max_swap_asymmetry(pmf)
    elapsed = time.perf_counter() - t0
    (name, label), top = max(worst.items(), key=lambda kv: kv[1])
    ok = top < 1e-10 and elapsed < 300
    acceptance("criterion 1 (exchangeability)", ok,
               f"{len(worst)} model/sampler pairs, max swap asymmetry {top:.2e} "
               f"({label} on {name}), {elapsed:.0f}s")
    assert top < 1e-10
    assert elapsed < 300


def test_criterion_2_gaussian_never_rejects(acceptance):
    t0 = time.perf_counter()
    model = build_model({"kind": "gaussian-chain", "p": 50, "rho": 0.6})
    S = model.Sigma
    sampler = SequentialSampler(model.graph, kernel=CovarianceKernel(None, S, equicorrelated_s(S)))
    X = model.sample(200, x_rng(0))
    steps = accepted = 0
    worst = 0.0
    for r, x in enumerate(X):
        run = sampler.sample(x, knockoff_rng(0, r))
        steps += run.accepted.size
        accepted += int(run.accepted.sum())
        worst = max(worst, float(np.max(np.abs(run.log_ratio))))
    elapsed = time.perf_counter() - t0
    ok = accepted == steps == 10_000 and worst < 1e-6 and elapsed < 30
    acceptance("criterion 2 (Gaussian never rejects)", ok,
               f"{accepted}/{steps} accepted, max |log ratio| {worst:.2e}, {elapsed:.1f}s")
    assert steps == 10_000 and accepted == steps
    assert worst < 1e-6
    assert elapsed < 30


def test_criterion_3_gaussian_mac_identity(acceptance):
    t0 = time.perf_counter()
    model = build_model({"kind": "gaussian-chain", "p": 50, "rho": 0.6})
    rep = measure_mac(model, SamplerConfig("covariance"), 2000, seed=3)
    s = equicorrelated_s(model.Sigma)
    target = float(np.mean(np.abs(1 - s / np.diag(model.Sigma))))
    gap = abs(rep.mac - target)
    elapsed = time.perf_counter() - t0
    ok = gap <= 3 * rep.mac_se and elapsed < 120
    acceptance("criterion 3 (Gaussian MAC identity)", ok,
               f"MAC {rep.mac:.4f} vs {target:.4f} (gap {gap:.4f}, 3 SE {3 * rep.mac_se:.4f}), "
               f"{elapsed:.0f}s")
    assert abs(rep.lower_bound - target) < 1e-12
    assert gap <= 3 * rep.mac_se
    assert elapsed < 120


def _queries(sampler, x, seed):
    c = QueryCounter()
    sampler.sample(x, np.random.default_rng(seed), c)
    return c.full_equivalents


def test_criterion_4_query_budgets(acceptance):
    t0 = time.perf_counter()
    results = []

    def record(label, used, budget):
        results.append((label, used, budget))

    # chain, p = 500, width 1
    chain = build_model({"kind": "gaussian-chain", "p": 500, "rho": 0.6})
    x = chain.sample(1, x_rng(4))[0]
    S = chain.Sigma
    width = SequentialSampler(chain.graph, kernel=GaussianRandomWalkKernel(1.0)).order.width
    assert width == 1
    plain = 2 * 500 * 2 ** (width + 1)
    record("gaussian chain p=500, covariance",
           _queries(SequentialSampler(chain.graph, kernel=CovarianceKernel(None, S,
                                                                           equicorrelated_s(S))),
                    x, 1), plain)
    record("gaussian chain p=500, random walk",
           _queries(SequentialSampler(chain.graph, kernel=GaussianRandomWalkKernel(0.8)), x, 2),
           plain)
    dchain = build_model({"kind": "discrete-chain", "p": 500, "K": 5, "alpha": 0.3})
    xd = dchain.sample(1, x_rng(5))[0]
    record("discrete chain p=500 K=5, mtm m=4",
           _queries(SequentialSampler(dchain.graph, kernel=MtmKernel(4, 1.0, 0.999)), xd, 3),
           2 * 500 * 13 ** (width + 1))
    record("discrete chain p=500 K=5, exact",
           _queries(SequentialSampler(dchain.graph, rule="exact"), xd, 4),
           2 * 500 * 5 ** (width + 1))

    # 4x4 Ising on the grid tree, width 4
    ising = build_model({"kind": "ising", "d1": 4, "d2": 4, "beta0": 0.25, "burn_in": 500})
    from metroknock.junction_tree import order_variables
    order = order_variables(ising.tree())
    w = order.width
    xi = ising.sample(1, x_rng(6))[0]
    record("ising 4x4, exact", _queries(SequentialSampler(ising.graph, order, rule="exact"), xi, 5),
           2 * 16 * 2 ** (w + 1))
    record("ising 4x4, mtm m=1",
           _queries(SequentialSampler(ising.graph, order, MtmKernel(1, 2.0, 0.999)), xi, 6),
           2 * 16 * 4 ** (w + 1))
    record("ising 4x4, plain (uniform proposal)",
           _queries(SequentialSampler(ising.graph, order, UniformBlockKernel(0.999)), xi, 7),
           2 * 16 * 2 ** (w + 1))

    # 6x6 Gibbs grid cut into ribbons of width 3
    for kind, m in (("mtm", 4), ("discrete-exact", None)):
        gibbs = build_model({"kind": "gibbs-grid", "d": 6, "K": 5, "beta0": 0.2, "burn_in": 500})
        cfg = SamplerConfig(kind, w=3) if m is None else SamplerConfig(kind, m=m, w=3)
        gen = KnockoffGenerator(gibbs, cfg, pilot_rng(0))
        xg = gibbs.sample(3, x_rng(7))
        used = max(int(gen(xr, knockoff_rng(7, r)).queries.sum()) for r, xr in enumerate(xg))
        per = 5 if m is None else 3 * m + 1
        record(f"gibbs 6x6 ribbons w=3, {kind}", used, 2 * 36 * per ** (3 + 1))

    elapsed = time.perf_counter() - t0
    bad = [r for r in results if r[1] > r[2]]
    tight = max(results, key=lambda r: r[1] / r[2])
    ok = not bad and elapsed < 120
    acceptance("criterion 4 (query budgets)", ok,
               f"{len(results) - len(bad)}/{len(results)} within budget, tightest "
               f"{tight[0]} at {tight[1]}/{tight[2]}, {elapsed:.0f}s")
    assert not bad, bad
    assert elapsed < 120


def test_criterion_5_recursive_inverses(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(55)
    worst = 0.0
    fails = 0
    for _ in range(50):
        p = int(rng.integers(2, 21))
        A = rng.normal(size=(p, p))
        S = A @ A.T / p + 0.1 * np.eye(p)
        check = recursion_check(S, tol=1e-8)
        worst = max(worst, float(check.detail.rsplit(" ", 1)[1]))
        fails += not check.passed
    elapsed = time.perf_counter() - t0
    ok = fails == 0 and elapsed < 10
    acceptance("criterion 5 (recursive inverses)", ok,
               f"50 matrices, max abs difference {worst:.2e}, {elapsed:.1f}s")
    assert fails == 0
    assert elapsed < 10


def _grid_sites(d, which):
    ids = []
    for i in range(d):
        for j in range(d):
            corner = i in (0, d - 1) and j in (0, d - 1)
            interior = 0 < i < d - 1 and 0 < j < d - 1
            if (which == "corner" and corner) or (which == "interior" and interior):
                ids.append(i * d + j)
    return ids


def test_criterion_6_ising_quality_tracks_coupling(acceptance):
    t0 = time.perf_counter()
    d, n = 10, 500
    reps = {}
    for beta in (0.05, 0.15, 0.25):
        model = build_model({"kind": "ising", "d1": d, "d2": d, "beta0": beta})
        reps[beta] = measure_mac(model, None, n, seed=6)
    betas = sorted(reps)
    steps = [(reps[a].mac, reps[b].mac, 3 * math.hypot(reps[a].mac_se, reps[b].mac_se))
             for a, b in zip(betas, betas[1:])]
    monotone = all(hi >= lo - slack for lo, hi, slack in steps)
    top = reps[0.25]
    corner = float(top.abs_cor[_grid_sites(d, "corner")].mean())
    interior = float(top.abs_cor[_grid_sites(d, "interior")].mean())
    elapsed = time.perf_counter() - t0
    ok = monotone and corner < interior and elapsed < 1800
    macs = ", ".join(f"{reps[b].mac:.3f}+-{reps[b].mac_se:.3f}" for b in betas)
    acceptance("criterion 6 (Ising MAC vs coupling)", ok,
               f"MAC {macs}; corner {corner:.3f} < interior {interior:.3f} at 0.25, "
               f"{elapsed:.0f}s")
    assert monotone
    assert corner < interior
    assert elapsed < 1800


def test_criterion_7_divide_and_conquer(acceptance):
    t0 = time.perf_counter()
    d, n, seed = 20, 300, 7
    model = build_model({"kind": "ising", "d1": d, "d2": d, "beta0": 0.25})
    X = model.sample(n, x_rng(seed))
    interior = [i * d + j for i in range(1, d - 1) for j in range(1, d - 1)]
    out = {}
    copies_ok = True
    for w in (2, 5):
        gen = KnockoffGenerator(model, SamplerConfig(w=w), pilot_rng(seed))
        XT = np.empty_like(X)
        for r in range(n):
            k = gen(X[r], knockoff_rng(seed, r))
            XT[r] = k.x_tilde
            copies_ok &= bool(k.copied.sum() >= d) and \
                bool(np.array_equal(k.x_tilde[k.copied], X[r][k.copied]))
        _, _, mac, mac_se, _ = correlation_summary(X, XT, interior)
        out[w] = (mac, mac_se)
    (m2, s2), (m5, s5) = out[2], out[5]
    elapsed = time.perf_counter() - t0
    ok = copies_ok and m5 <= m2 + 3 * math.hypot(s2, s5) and elapsed < 1200
    acceptance("criterion 7 (divide and conquer)", ok,
               f"separator copied on every replicate: {copies_ok}; interior MAC "
               f"w=2 {m2:.3f}+-{s2:.3f}, w=5 {m5:.3f}+-{s5:.3f}, {elapsed:.0f}s")
    assert copies_ok
    assert m5 <= m2 + 3 * math.hypot(s2, s5)
    assert elapsed < 1200


MARGINAL_MODELS = [
    {"kind": "gaussian-chain", "p": 10, "rho": 0.6},
    {"kind": "t-chain", "p": 10, "rho": 0.6, "nu": 5},
    {"kind": "mixture-chain", "p": 10, "rho": 0.6},
    {"kind": "discrete-chain", "p": 10, "K": 5, "alpha": 0.3},
    {"kind": "ising", "d1": 4, "d2": 4, "beta0": 0.25},
    {"kind": "gibbs-grid", "d": 4, "K": 5, "beta0": 0.25},
]


def test_criterion_8_marginal_laws(acceptance):
    t0 = time.perf_counter()
    n = 10_000
    lines = []
    all_ok = True
    for i, spec in enumerate(MARGINAL_MODELS):
        model = build_model(dict(spec))
        gen = KnockoffGenerator(model, SamplerConfig(), pilot_rng(i))
        X = model.sample(n, x_rng(i, 0))
        fresh = model.sample(n, x_rng(i, 1))
        XT, _, _ = generate(gen, X, i)
        check = marginal_tests(fresh, XT, model.graph, level=0.01)
        all_ok &= bool(check.passed)
        lines.append(f"{spec['kind']}/{gen.cfg.kind}: {'ok' if check.passed else 'FAILED'}")
    elapsed = time.perf_counter() - t0
    ok = all_ok and elapsed < 900
    acceptance("criterion 8 (marginal laws)", ok, "; ".join(lines) + f", {elapsed:.0f}s")
    assert all_ok
    assert elapsed < 900


def test_criterion_9_bench_is_deterministic(tmp_path, acceptance):
    import json
    cfg = tmp_path / "bench.json"
    cfg.write_text(json.dumps({
        "model": {"kind": "discrete-chain", "p": 6, "K": 4, "alpha": 0.3},
        "sampler": {"kind": "mtm"}, "seed": 21, "replicates": 100,
        "bench": {"grid": {"m": [1, 3], "gamma": [0.9, 0.999]}}}))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["bench", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["bench", "--config", str(cfg), "--out", str(b)]) == 0
    same = a.read_bytes() == b.read_bytes()
    rows = a.read_text().count("\n") - 1
    acceptance("criterion 9 (deterministic bench)", same,
               f"{rows} rows, byte-identical: {same}")
    assert a.read_text().splitlines()[0] == ",".join(BENCH_COLUMNS)
    assert same
