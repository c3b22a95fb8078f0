"""Brute-force verifiers for small discrete models.

The enumeration oracle follows every branch of a knockoff sweep (proposal
choice, then accept or reject) and sums path probabilities, producing the
exact joint law of ``(X, X~)``.  The target is normalized here by summing
over the whole state space; nothing else in the package normalizes.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .engine import NullLaw, Partition, SequentialSampler
from .factor_model import DiscreteLevels, FactorGraph
from .proposals import ContinuousLaw, DiscreteLaw

MAX_OUTCOMES = 10**7


class OracleRefusal(ValueError):
    """The instance is too large, or its randomness cannot be enumerated."""


def _levels(graph: FactorGraph) -> list[np.ndarray]:
    out = []
    for v in range(1, graph.p + 1):
        dom = graph.domain(v)
        if not isinstance(dom, DiscreteLevels):
            raise OracleRefusal("the oracle needs discrete variables")
        out.append(np.asarray(dom.levels, dtype=float))
    return out


def target_pmf(graph: FactorGraph) -> np.ndarray:
    """Normalized P(x) as an array with one axis per variable."""
    levels = _levels(graph)
    grid = np.array(list(itertools.product(*levels)), dtype=float)
    lp = graph.log_phi_batch(grid)
    lp = lp - special.logsumexp(lp)
    return np.exp(lp).reshape([len(l) for l in levels])


def knockoff_law(sampler: SequentialSampler, x) -> dict[tuple, float]:
    """Exact law of x~ given x for one sweep of ``sampler``."""
    out: dict[tuple, float] = {}
    n = len(sampler.layout.units)

    def walk(state, k, prob):
        if prob == 0.0:
            return
        if k == n:
            key = tuple(state.x_tilde.tolist())
            out[key] = out.get(key, 0.0) + prob
            return
        law = state.begin(k)
        if isinstance(law, ContinuousLaw):
            raise OracleRefusal("continuous proposal laws cannot be enumerated")
        if isinstance(law, NullLaw):
            branches = [(None, 1.0)]
        else:
            w = np.exp(law.logp)
            branches = [(i, float(w[i])) for i in range(len(w)) if w[i] > 0.0]
        for choice, pc in branches:
            st = state.copy()
            la = st.propose(k, choice)
            pa = math.exp(la) if la > -np.inf else 0.0
            for acc, pr in ((True, pa), (False, 1.0 - pa)):
                if pr <= 0.0:
                    continue
                st2 = st.copy()
                st2.finish(k, acc)
                walk(st2, k + 1, prob * pc * pr)

    walk(sampler.start(x), 0, 1.0)
    return out


KnockoffLaw = Callable[[np.ndarray], dict]


def partition_law(graph: FactorGraph, partition: Partition,
                  side_sampler: Callable[[FactorGraph, object], SequentialSampler]) -> KnockoffLaw:
    """Knockoff law of divide-and-conquer: separator copied, sides independent."""
    partition.verify(graph)

    def law(x):
        parts = []
        for i, side in enumerate(partition.sides):
            members = set(side)
            fixed = {v: float(x[v - 1]) for v in range(1, graph.p + 1) if v not in members}
            sub, ids = graph.condition(fixed)
            tree = partition.trees[i] if partition.trees is not None else None
            sub_law = knockoff_law(side_sampler(sub, tree), x[np.array(ids) - 1])
            parts.append((np.array(ids) - 1, sub_law))
        out: dict[tuple, float] = {}
        for combo in itertools.product(*[list(pl.items()) for _, pl in parts]):
            xt = np.array(x, dtype=float)
            prob = 1.0
            for (idx, _), (vals, pr) in zip(parts, combo):
                xt[idx] = vals
                prob *= pr
            key = tuple(xt.tolist())
            out[key] = out.get(key, 0.0) + prob
        return out

    return law


def joint_pmf(graph: FactorGraph, law: SequentialSampler | KnockoffLaw) -> np.ndarray:
    """Exact P(X = x, X~ = x~) with axes (x_1..x_p, x~_1..x~_p)."""
    levels = _levels(graph)
    sizes = [len(l) for l in levels]
    n_states = int(np.prod(sizes))
    if n_states * n_states > MAX_OUTCOMES:
        raise OracleRefusal(f"{n_states}^2 joint outcomes exceed {MAX_OUTCOMES}")
    if isinstance(law, SequentialSampler):
        sampler = law
        law = lambda x: knockoff_law(sampler, x)  # noqa: E731
    px = target_pmf(graph)
    out = np.zeros(sizes + sizes)
    index = [{float(v): i for i, v in enumerate(l)} for l in levels]
    for cell in itertools.product(*[range(s) for s in sizes]):
        if px[cell] == 0.0:
            continue
        x = np.array([levels[j][c] for j, c in enumerate(cell)])
        for xt, pr in law(x).items():
            tcell = tuple(index[j][v] for j, v in enumerate(xt))
            out[cell + tcell] += px[cell] * pr
    return out


def swap_axes(pmf: np.ndarray, coords: Sequence[int]) -> np.ndarray:
    """Joint law after exchanging X_j and X~_j for each 0-based ``j``."""
    p = pmf.ndim // 2
    perm = list(range(2 * p))
    for j in coords:
        perm[j], perm[p + j] = p + j, j
    return np.transpose(pmf, perm)


def max_swap_asymmetry(pmf: np.ndarray, groups: Sequence[Sequence[int]] | None = None) -> float:
    """Largest |P(v) - P(swap(v))| over single coordinates (or over whole
    groups, given as 1-based ids)."""
    p = pmf.ndim // 2
    sets = [[j] for j in range(p)] if groups is None else [[v - 1 for v in g] for g in groups]
    return max(float(np.max(np.abs(pmf - swap_axes(pmf, s)))) for s in sets)


def scip_joint_pmf(graph: FactorGraph, order: Sequence[int]) -> np.ndarray:
    """Joint law of the sequential conditional independent pairs construction,
    computed directly from the full joint (no junction tree involved).

    Step j draws x~_j from P(X_j | X_-j, X~ already drawn) in the joint of
    ``(X, X~_prefix)`` built so far.
    """
    levels = _levels(graph)
    p = graph.p
    sizes = [len(l) for l in levels]
    if int(np.prod(sizes)) ** 2 > MAX_OUTCOMES:
        raise OracleRefusal("instance too large")
    # joint has axes x_1..x_p followed by x~ for variables drawn so far
    joint = target_pmf(graph)
    drawn: list[int] = []
    for v in order:
        j = v - 1
        # marginal over x_j given everything else
        denom = joint.sum(axis=j, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(denom > 0, joint / denom, 0.0)  # P(x_j | rest)
        # new axis for x~_j: P(x~_j = z | rest) = cond with x_j replaced by z
        cond_z = np.moveaxis(cond, j, -1)  # axes: rest..., z
        cond_z = np.expand_dims(cond_z, axis=j)  # restore a singleton x_j axis
        joint = joint[..., None] * cond_z
        drawn.append(j)
    # axes are x_1..x_p, then x~ in draw order; reorder to x~_1..x~_p
    perm = list(range(p)) + [p + drawn.index(j) for j in range(p)]
    return np.transpose(joint, perm)
