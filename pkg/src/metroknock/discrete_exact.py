"""Rejection-free knockoffs for discrete models with small supports.

Each step draws x~_j from P(X_j | X_-j, X~ drawn so far), represented as a
vector over the levels of X_j and built with the same cached tables the
Metropolized sampler uses.
"""

from __future__ import annotations

import numpy as np

from .engine import DEFAULT_MAX_STATES, KnockoffRun, SequentialSampler
from .factor_model import FactorGraph
from .junction_tree import EliminationOrder


def exact_sampler(graph: FactorGraph, order: EliminationOrder | None = None,
                  max_states: int = DEFAULT_MAX_STATES) -> SequentialSampler:
    """Reusable exact sampler; raises :class:`TractabilityError` when a step
    needs more than ``max_states`` level configurations."""
    return SequentialSampler(graph, order, rule="exact", max_states=max_states)


def exact_discrete_sample(graph: FactorGraph, order: EliminationOrder | None, x,
                          rng: np.random.Generator,
                          max_states: int = DEFAULT_MAX_STATES) -> KnockoffRun:
    return exact_sampler(graph, order, max_states).sample(x, rng)


def conditional_pmf(graph: FactorGraph, order: EliminationOrder | None, x, x_tilde_prefix,
                    j: int) -> np.ndarray:
    """P(X~_j = level | X = x, X~ of earlier variables) over the levels of
    variable ``j`` (in level order).

    ``x_tilde_prefix`` holds the knockoff values of the variables sampled
    before ``j``; other entries are ignored.
    """
    sampler = exact_sampler(graph, order)
    state = sampler.start(x)
    pos = sampler.order.position[j]
    prefix = np.asarray(x_tilde_prefix, dtype=float)
    for k in range(pos):
        law = state.begin(k)
        v = sampler.layout.units[k][0]
        hit = np.nonzero(law.values[:, 0] == prefix[v - 1])[0]
        if len(hit) == 0:
            raise ValueError(f"knockoff value {prefix[v - 1]} of variable {v} is not a level")
        state.propose(k, int(hit[0]))
        state.finish(k, True)
    law = state.begin(pos)
    levels = np.asarray(graph.domain(j).levels)
    out = np.zeros(len(levels))
    probs = np.exp(law.logp)
    for val, pr in zip(law.values[:, 0], probs):
        out[np.searchsorted(levels, val)] = pr
    return out / out.sum()
