"""Sequential knockoff sampling over a junction-tree order.

The sampler visits sampling units (single variables, or blocks for group
knockoffs) in the order produced by :func:`order_variables`.  At unit ``k``
it proposes a value, accepts or rejects it, and records a table ``F[k]``:
the log-probability of what happened at step ``k`` (proposal and
accept/reject outcome) as a function of the values taken by the later
members of the unit's junction-tree node.  Those tables are all that is
needed to evaluate the conditional target at later steps, so each step only
evaluates the cliques touching its own unit.

Every unit ``a`` owns a *universe*: the list of values its coordinate may
take in any table, with the observed value at index 0.  Tables are indexed
by universe positions and grow whenever a universe does.

Three step rules share this machinery:

``plain``  a proposal kernel with an explicit proposal density;
``mtm``    multiple-try selection among lattice candidates;
``exact``  direct draw from the conditional law over all levels.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .factor_model import DiscreteLevels, FactorGraph, QueryCounter
from .junction_tree import (EliminationOrder, JunctionTree, build_junction_tree, order_variables,
                            quotient_adjacency)
from .proposals import (ContinuousLaw, DiscreteLaw, MtmKernel, ProposalKernel, StepContext,
                        log1mexp, mtm_offsets)

NEG_INF = -np.inf
DEFAULT_MAX_STATES = 10**6


def _lse(a, axis=None):
    """log-sum-exp that returns -inf for an all -inf slice."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out.item() if axis is None else np.squeeze(out, axis=axis)


class IncompatibleKernelError(ValueError):
    """The kernel reads variables outside the closure of a step."""


class TractabilityError(ValueError):
    """Too many level configurations for the exact discrete sampler."""


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class NullLaw:
    """No candidate has positive mass: the step rejects automatically."""


@dataclass
class KnockoffRun:
    x: np.ndarray
    x_star: np.ndarray
    x_tilde: np.ndarray
    accepted: np.ndarray
    units: list
    order: EliminationOrder
    f_cache: dict
    log_ratio: np.ndarray
    log_accept: np.ndarray
    counter: QueryCounter
    queries_per_step: np.ndarray

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))


# ---------------------------------------------------------------------------
# layout


class _Layout:
    """Static structure: units in order and, per unit, the later members of
    its node (``plus``) and the earlier units whose tables depend on it
    (``feeders``)."""

    def __init__(self, graph: FactorGraph, units: Sequence[tuple[int, ...]],
                 node_units: Sequence[set[int]]):
        self.graph = graph
        self.units = [tuple(u) for u in units]
        n = len(self.units)
        self.plus = [tuple(sorted(a for a in node_units[k] if a > k)) for k in range(n)]
        self.axis = [{a: i for i, a in enumerate(self.plus[k])} for k in range(n)]
        self.feeders = [[] for _ in range(n)]
        for k in range(n):
            for a in self.plus[k]:
                self.feeders[a].append(k)
        self.var_index = [np.array([v - 1 for v in u]) for u in self.units]
        self.cliques = [sorted({ci for v in u for ci in graph.cliques_of[v]})
                        for u in self.units]
        # per feeder k2 of k: for each axis of F[k2], -1 (own), a slab axis, or None
        self.gather = []
        for k in range(n):
            plan = []
            for k2 in self.feeders[k]:
                plan.append((k2, tuple(-1 if a == k else self.axis[k].get(a)
                                       for a in self.plus[k2])))
            self.gather.append(plan)


def unit_layout(graph: FactorGraph, order: EliminationOrder,
                groups: Sequence[Sequence[int]] | None = None):
    """Units (in sampling order) and node membership in unit positions.

    Without ``groups`` the order is over variable ids; with groups it is
    over group ids 1..len(groups).
    """
    if groups is None:
        units = [(v,) for v in order.order]
    else:
        units = [tuple(sorted(groups[g - 1])) for g in order.order]
    pos = {uid: k for k, uid in enumerate(order.order)}
    node_units = [{pos[u] for u in order.node_of[uid]} for uid in order.order]
    return units, node_units


# ---------------------------------------------------------------------------
# sampler


class SequentialSampler:
    """A reusable knockoff sampler bound to a graph, an order, and a rule.

    ``rule`` is ``"exact"`` or inferred from the kernel (``"mtm"`` for
    :class:`MtmKernel`, ``"plain"`` otherwise).
    """

    def __init__(self, graph: FactorGraph, order: EliminationOrder | None = None,
                 kernel: ProposalKernel | None = None, rule: str | None = None,
                 groups: Sequence[Sequence[int]] | None = None,
                 max_states: int = DEFAULT_MAX_STATES):
        self.graph = graph
        if order is None:
            adj = graph if groups is None else quotient_adjacency(graph, groups)
            order = order_variables(build_junction_tree(adj))
        self.order = order
        self.groups = None if groups is None else [tuple(sorted(g)) for g in groups]
        if self.groups is not None:
            _check_groups(self.groups, graph.p)
        units, node_units = unit_layout(graph, order, self.groups)
        covered = sorted(v for u in units for v in u)
        if covered != list(range(1, graph.p + 1)):
            raise ValueError("order does not cover every variable exactly once")
        self.layout = _Layout(graph, units, node_units)
        if rule is None:
            if kernel is None:
                raise ValueError("a kernel or rule='exact' is required")
            rule = "mtm" if isinstance(kernel, MtmKernel) else "plain"
        if rule not in ("plain", "mtm", "exact"):
            raise ValueError(f"unknown rule {rule!r}")
        self.rule = rule
        self.kernel = kernel
        if rule == "exact":
            self._prepare_exact(max_states)
            self.gamma = 1.0
        else:
            kernel.prepare(graph, units)
            self.gamma = float(kernel.gamma)
            self._check_compatibility()

    # -- contracts ---------------------------------------------------------

    def _check_compatibility(self) -> None:
        lay = self.layout
        for k, unit in enumerate(lay.units):
            closure = {v for a in range(k) for v in lay.units[a]}
            closure |= {v for a in lay.plus[k] for v in lay.units[a]}
            closure |= set(unit)
            extra = set(self.kernel.reads(k)) - closure
            if extra:
                raise IncompatibleKernelError(
                    f"proposal for unit {unit} reads variables {sorted(extra)} outside its closure")

    def _prepare_exact(self, max_states: int) -> None:
        lay = self.layout
        self.level_grids = []
        for k, unit in enumerate(lay.units):
            doms = [self.graph.domain(v) for v in unit]
            if not all(isinstance(d, DiscreteLevels) for d in doms):
                raise ValueError("the exact sampler needs discrete variables")
            self.level_grids.append(
                np.array(list(itertools.product(*[d.levels for d in doms])), dtype=float))
        for k in range(len(lay.units)):
            states = len(self.level_grids[k])
            for a in lay.plus[k]:
                states *= len(self.level_grids[a])
            if states > max_states:
                raise TractabilityError(
                    f"step {k} needs {states} level configurations (limit {max_states}); "
                    "use divide-and-conquer or multiple-try proposals instead")

    # -- driving -------------------------------------------------------------

    def start(self, x, counter: QueryCounter | None = None) -> "_SweepState":
        x = np.asarray(x, dtype=float).reshape(self.graph.p)
        self.graph._check_domain(x)
        return _SweepState(self, x, counter if counter is not None else QueryCounter())

    def sample(self, x, rng: np.random.Generator, counter: QueryCounter | None = None) -> KnockoffRun:
        st = self.start(x, counter)
        for k in range(len(self.layout.units)):
            law = st.begin(k)
            if isinstance(law, ContinuousLaw):
                choice = law.draw(rng)
            elif isinstance(law, DiscreteLaw):
                choice = _draw_index(rng, law.logp)
            else:
                choice = None
            la = st.propose(k, choice)
            u = rng.random()
            st.finish(k, bool(la > NEG_INF and u < math.exp(la)))
        return st.result()

    def knockoff(self, x, rng) -> np.ndarray:
        return self.sample(x, rng).x_tilde


def _draw_index(rng: np.random.Generator, logp: np.ndarray) -> int:
    w = np.exp(logp - np.max(logp))
    c = np.cumsum(w)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(c) - 1))


def _check_groups(groups, p: int) -> None:
    flat = [v for g in groups for v in g]
    if any(len(g) == 0 for g in groups):
        raise ValueError("groups must be nonempty")
    if sorted(flat) != list(range(1, p + 1)):
        raise ValueError("groups must partition 1..p")


# ---------------------------------------------------------------------------
# one sweep


class _SweepState:
    """Mutable state of one knockoff sweep.  ``copy`` gives an independent
    branch (arrays inside tables are never written in place)."""

    def __init__(self, sampler: SequentialSampler, x: np.ndarray, counter: QueryCounter):
        self.s = sampler
        lay = sampler.layout
        n = len(lay.units)
        self.x = x
        self.counter = counter
        self.universe = [x[lay.var_index[k]].reshape(1, -1) for k in range(n)]
        self.offsets = [np.zeros(1, dtype=np.int64) for _ in range(n)]
        # 0 or -inf per universe entry (None while all entries are in-domain);
        # off-domain values are detected once, when they join a universe
        self.penalty = [None] * n
        self.F: list = [None] * n
        self.info: list = [None] * n
        self.x_star = np.full(sampler.graph.p, np.nan)
        self.x_tilde = x.copy()
        self.accepted = np.zeros(sampler.graph.p, dtype=bool)
        self.unit_accepted = np.zeros(n, dtype=bool)
        self.log_ratio = np.full(n, np.nan)
        self.log_accept = np.full(n, np.nan)
        self.queries = np.zeros(n, dtype=np.int64)

    def copy(self) -> "_SweepState":
        new = object.__new__(_SweepState)
        new.s = self.s
        new.x = self.x
        new.counter = self.counter.copy()
        new.universe = list(self.universe)
        new.offsets = list(self.offsets)
        new.penalty = list(self.penalty)
        new.F = list(self.F)
        new.info = [dict(d) if d is not None else None for d in self.info]
        new.x_star = self.x_star.copy()
        new.x_tilde = self.x_tilde.copy()
        new.accepted = self.accepted.copy()
        new.unit_accepted = self.unit_accepted.copy()
        new.log_ratio = self.log_ratio.copy()
        new.log_accept = self.log_accept.copy()
        new.queries = self.queries.copy()
        return new

    # -- table algebra -------------------------------------------------------

    def _context(self, k: int) -> StepContext:
        return StepContext(self.x, self.x_star, self.x_tilde, self.accepted, k)

    def _slab_overrides(self, k: int, slab: dict, lead: int) -> dict:
        lay = self.s.layout
        plus = lay.plus[k]
        ndim = len(plus) + lead
        out = {}
        for i, a in enumerate(plus):
            vals = self.universe[a][slab[a]]
            shape = [1] * ndim
            shape[i + lead] = -1
            for r, v in enumerate(lay.units[a]):
                out[v] = vals[:, r].reshape(shape)
        return out

    def _pi_grid(self, k: int, own_idx: np.ndarray, slab: dict) -> np.ndarray:
        """Log conditional target (up to a factor free of unit k's value) over
        ``own values x slab``."""
        lay = self.s.layout
        plus = lay.plus[k]
        r = len(plus)
        shape = (len(own_idx),) + tuple(len(slab[a]) for a in plus)
        ov = self._slab_overrides(k, slab, 1)
        own_vals = self.universe[k][own_idx]
        own_shape = (-1,) + (1,) * r
        for m, v in enumerate(lay.units[k]):
            ov[v] = own_vals[:, m].reshape(own_shape)
        out = self.s.graph.local_log_phi(lay.units[k], self.x, ov, shape, self.counter,
                                         cliques=lay.cliques[k], checked=True)
        own = own_idx.reshape(own_shape)
        axes = []
        for i, a in enumerate(plus):
            sh = [1] * (r + 1)
            sh[i + 1] = -1
            axes.append(slab[a].reshape(sh))
        for a, ix in zip((k,) + plus, (own,) + tuple(axes)):
            if self.penalty[a] is not None:
                out = out + self.penalty[a][ix]
        if lay.gather[k]:
            for k2, plan in lay.gather[k]:
                idx = tuple(own if j == -1 else (0 if j is None else axes[j]) for j in plan)
                out = out + self.F[k2][idx]
        return np.broadcast_to(out, shape)

    def _f_values(self, k: int, pi: np.ndarray, slab: dict) -> np.ndarray:
        """log P(step-k outcome | later node members = slab) from the target
        grid ``pi`` (own universe x slab)."""
        info = self.info[k]
        rule = self.s.rule
        with np.errstate(invalid="ignore", divide="ignore"):
            if rule == "exact":
                tot = _lse(pi, axis=0)
                out = pi[info["tilde"]] - tot
                return np.where(tot == NEG_INF, NEG_INF, out)
            if rule == "mtm":
                sx = _lse(pi[info["cx"]], axis=0) if len(info["cx"]) else \
                    np.full(pi.shape[1:], NEG_INF)
                if info["null"]:
                    return np.where(sx == NEG_INF, 0.0, NEG_INF)
                ss = _lse(pi[info["cs"]], axis=0)
                la = math.log(self.s.gamma) + np.minimum(0.0, sx - ss)
                step = la if info["acc"] else log1mexp(la)
                out = pi[info["star"]] - sx + step
                bad = (sx == NEG_INF) | (pi[0] == NEG_INF)
                return np.where(bad, NEG_INF, out)
            # plain kernel
            shape = pi.shape[1:]
            ov = self._slab_overrides(k, slab, 0)
            ctx = self._context(k)
            kern = self.s.kernel
            xk = self.universe[k][0]
            xs = self.universe[k][info["star"]]
            to_s, frm_x = _kernel_value(xs), _kernel_value(xk)
            lq2 = np.broadcast_to(kern.log_q(ctx, k, to_s, frm_x, ov), shape)
            if info["tie"]:
                return np.where(pi[0] == NEG_INF, NEG_INF, lq2)
            lq1 = np.broadcast_to(kern.log_q(ctx, k, frm_x, to_s, ov), shape)
            delta = lq1 + pi[info["star"]] - lq2 - pi[0]
            la = math.log(self.s.gamma) + np.minimum(0.0, delta)
            la = np.where(np.isnan(la), NEG_INF, la)
            step = la if info["acc"] else log1mexp(la)
            out = lq2 + step
            bad = (pi[0] == NEG_INF) | (lq2 == NEG_INF)
            return np.where(bad, NEG_INF, out)

    def _extend(self, unit: int, new_values: np.ndarray, new_offsets=None) -> np.ndarray:
        """Append values to a unit's universe and grow every earlier table
        that has this unit as an axis.  Returns the new universe indices."""
        old = len(self.universe[unit])
        self.universe[unit] = np.concatenate([self.universe[unit], new_values], axis=0)
        ok = np.ones(len(new_values), dtype=bool)
        for r, v in enumerate(self.s.layout.units[unit]):
            ok &= self.s.graph.domain(v).contains(new_values[:, r])
        pen = self.penalty[unit]
        if pen is not None or not ok.all():
            if pen is None:
                pen = np.zeros(old)
            self.penalty[unit] = np.concatenate([pen, np.where(ok, 0.0, NEG_INF)])
        if new_offsets is not None:
            self.offsets[unit] = np.concatenate([self.offsets[unit], new_offsets])
        new_idx = np.arange(old, len(self.universe[unit]))
        if len(new_idx) == 0:
            return new_idx
        lay = self.s.layout
        for k in lay.feeders[unit]:
            slab = {a: (new_idx if a == unit else np.arange(len(self.universe[a])))
                    for a in lay.plus[k]}
            pi = self._pi_grid(k, np.arange(len(self.universe[k])), slab)
            fresh = self._f_values(k, pi, slab)
            self.F[k] = np.concatenate([self.F[k], fresh], axis=lay.axis[k][unit])
        return new_idx

    def _root_slab(self, k: int) -> dict:
        return {a: np.zeros(1, dtype=np.int64) for a in self.s.layout.plus[k]}

    def _root_pi(self, k: int, idx: np.ndarray) -> np.ndarray:
        return self._pi_grid(k, idx, self._root_slab(k)).reshape(len(idx))

    # -- step protocol ---------------------------------------------------------

    def begin(self, k: int):
        """Start step k and return the proposal law."""
        self.counter.step = k
        self.queries[k] = -self.counter.full_equivalents
        rule = self.s.rule
        lay = self.s.layout
        xk = self.universe[k][0]
        if rule == "plain":
            law = self.s.kernel.law(self._context(k), k)
            self.info[k] = {"law": law}
            return law
        if rule == "exact":
            grid = self.s.level_grids[k]
            others = grid[~np.all(grid == xk, axis=1)]
            if len(others) != len(grid) - 1:
                raise ModelError(f"observed value of unit {lay.units[k]} is not a level")
            self._extend(k, others)
            idx = np.arange(len(self.universe[k]))
            pi = self._root_pi(k, idx)
            tot = _lse(pi)
            if tot == NEG_INF:
                raise ModelError("conditional law has no mass; the observation has zero density")
            self.info[k] = {"pi": pi}
            return DiscreteLaw(self.universe[k], pi - tot)
        # multiple-try
        kern = self.s.kernel
        t = kern.step_size(k)
        offs = mtm_offsets(kern.m)
        vals = xk[0] + offs * t
        v = lay.units[k][0]
        dom = self.s.graph.domain(v)
        if isinstance(dom, DiscreteLevels):
            keep = dom.contains(vals)
            offs, vals = offs[keep], vals[keep]
        self._extend(k, vals.reshape(-1, 1), offs)
        cx = np.arange(1, len(self.universe[k]))
        pi = self._root_pi(k, np.arange(len(self.universe[k])))
        if pi[0] == NEG_INF:
            raise ModelError("the observation has zero density")
        self.info[k] = {"cx": cx, "pi": pi, "null": False}
        sel = pi[cx] - _lse(pi[cx]) if len(cx) else None
        if sel is None or not np.isfinite(np.max(sel)):
            self.info[k]["null"] = True
            return NullLaw()
        return DiscreteLaw(self.universe[k][cx], sel)

    def propose(self, k: int, choice) -> float:
        """Register the proposal and return the log acceptance probability.

        ``choice`` is an index into the law's values for a discrete law and
        the drawn value for a continuous one.
        """
        rule = self.s.rule
        info = self.info[k]
        lay = self.s.layout
        vidx = lay.var_index[k]
        xk = self.universe[k][0]
        if rule == "exact":
            info["tilde"] = int(choice)
            self.x_star[vidx] = self.universe[k][int(choice)]
            self.log_accept[k] = 0.0
            return 0.0
        if rule == "mtm":
            if info["null"]:
                info["cs"] = np.zeros(0, dtype=np.int64)
                info["star"] = 0
                self.log_accept[k] = NEG_INF
                return NEG_INF
            star = int(info["cx"][int(choice)])
            o_star = int(self.offsets[k][star])
            kern = self.s.kernel
            t = kern.step_size(k)
            back = o_star + mtm_offsets(kern.m)
            vals = xk[0] + back * t
            dom = self.s.graph.domain(lay.units[k][0])
            if isinstance(dom, DiscreteLevels):
                keep = dom.contains(vals)
                back, vals = back[keep], vals[keep]
            known = {int(o): i for i, o in enumerate(self.offsets[k])}
            fresh = [i for i, o in enumerate(back) if int(o) not in known]
            new_idx = self._extend(k, vals[fresh].reshape(-1, 1), back[fresh])
            if len(new_idx):
                pi_new = self._root_pi(k, new_idx)
                info["pi"] = np.concatenate([info["pi"], pi_new])
            known = {int(o): i for i, o in enumerate(self.offsets[k])}
            info["cs"] = np.array([known[int(o)] for o in back], dtype=np.int64)
            info["star"] = star
            pi = info["pi"]
            sx = _lse(pi[info["cx"]])
            ss = _lse(pi[info["cs"]])
            self.x_star[vidx] = self.universe[k][star]
            self.log_ratio[k] = sx - ss
            la = math.log(self.s.gamma) + min(0.0, sx - ss)
            self.log_accept[k] = la
            return la
        # plain kernel
        law = info["law"]
        value = law.values[int(choice)] if isinstance(law, DiscreteLaw) else choice
        value = np.asarray(value, dtype=float).reshape(-1)
        self.x_star[vidx] = value
        if np.array_equal(value, xk):
            info.update(star=0, tie=True, pi=self._root_pi(k, np.zeros(1, dtype=np.int64)))
            self.log_ratio[k] = 0.0
            self.log_accept[k] = 0.0
            return 0.0
        self._extend(k, value.reshape(1, -1))
        pi = self._root_pi(k, np.array([0, 1]))
        if pi[0] == NEG_INF:
            raise ModelError("the observation has zero density")
        info.update(star=1, tie=False, pi=pi)
        ctx = self._context(k)
        kern = self.s.kernel
        lq2 = float(np.asarray(kern.log_q(ctx, k, _kernel_value(value), _kernel_value(xk), {})))
        lq1 = float(np.asarray(kern.log_q(ctx, k, _kernel_value(xk), _kernel_value(value), {})))
        with np.errstate(invalid="ignore"):
            delta = lq1 + pi[1] - lq2 - pi[0]
        if math.isnan(delta):
            delta = NEG_INF
        self.log_ratio[k] = delta
        la = math.log(self.s.gamma) + min(0.0, delta)
        self.log_accept[k] = la
        return la

    def finish(self, k: int, accepted: bool) -> None:
        """Record the outcome of step k and build its table."""
        info = self.info[k]
        lay = self.s.layout
        vidx = lay.var_index[k]
        if self.s.rule == "exact":
            accepted = True
            self.x_tilde[vidx] = self.universe[k][info["tilde"]]
        elif accepted:
            self.x_tilde[vidx] = self.universe[k][info["star"]]
        info["acc"] = bool(accepted)
        self.accepted[vidx] = accepted
        self.unit_accepted[k] = accepted
        pi = info["pi"]
        r = len(lay.plus[k])
        self.F[k] = self._f_values(k, pi.reshape((-1,) + (1,) * r), self._root_slab(k))
        self.queries[k] += self.counter.full_equivalents
        self.counter.step = None

    def result(self) -> KnockoffRun:
        return KnockoffRun(
            x=self.x, x_star=self.x_star, x_tilde=self.x_tilde, accepted=self.unit_accepted,
            units=self.s.layout.units, order=self.s.order,
            f_cache={k: f for k, f in enumerate(self.F)}, log_ratio=self.log_ratio,
            log_accept=self.log_accept, counter=self.counter, queries_per_step=self.queries)


def _kernel_value(v: np.ndarray):
    v = np.asarray(v, dtype=float).reshape(-1)
    return float(v[0]) if v.size == 1 else v


# ---------------------------------------------------------------------------
# public entry points


def metro_sample(graph: FactorGraph, order: EliminationOrder | None, kernel: ProposalKernel,
                 x, rng: np.random.Generator) -> KnockoffRun:
    """One knockoff of ``x`` with the given proposal kernel."""
    return SequentialSampler(graph, order, kernel).sample(x, rng)


def group_metro_sample(graph: FactorGraph, groups: Sequence[Sequence[int]],
                       kernel: ProposalKernel, x, rng: np.random.Generator,
                       order: EliminationOrder | None = None) -> KnockoffRun:
    """Block knockoff: each group is proposed and accepted as a whole.

    ``order`` (over group ids 1..k) defaults to the junction-tree order of the
    graph whose vertices are the groups.
    """
    return SequentialSampler(graph, order, kernel, groups=groups).sample(x, rng)


# ---------------------------------------------------------------------------
# divide and conquer


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    """Free sides separated by a set of variables held fixed.

    ``trees`` optionally supplies a junction tree per side, over the side's
    own ids 1..|side| (side members renumbered in increasing id order).
    """

    sides: tuple[tuple[int, ...], ...]
    separator: tuple[int, ...]
    trees: tuple | None = None

    @classmethod
    def from_sets(cls, A, B, C) -> "Partition":
        return cls((tuple(sorted(A)), tuple(sorted(B))), tuple(sorted(C)))

    def verify(self, graph: FactorGraph) -> None:
        owner = {}
        for i, side in enumerate(self.sides):
            for v in side:
                if v in owner:
                    raise PartitionError(f"variable {v} is in two sides")
                owner[v] = i
        sep = set(self.separator)
        if sep & set(owner):
            raise PartitionError("separator overlaps a side")
        if sorted(sep | set(owner)) != list(range(1, graph.p + 1)):
            raise PartitionError("sides and separator must cover every variable")
        # breadth-first search on G minus the separator
        for start in owner:
            seen = {start}
            frontier = [start]
            while frontier:
                a = frontier.pop()
                for b in graph.neighbors[a]:
                    if b in sep or b in seen:
                        continue
                    if owner[b] != owner[start]:
                        raise PartitionError(
                            f"edge ({a}, {b}) joins sides {owner[a]} and {owner[b]}")
                    seen.add(b)
                    frontier.append(b)


def grid_ribbon_partition(d1: int, d2: int, w: int, offset: int = 0) -> Partition:
    """Hold every column ``c`` with ``(c - offset) % (w + 1) == 0`` fixed, so
    each free ribbon is at most ``w`` columns wide.  Columns are 0-based and
    site ``(i, j)`` has id ``i * d2 + j + 1``."""
    from .junction_tree import grid_junction_tree

    if w < 1:
        raise ValueError("ribbon width must be at least 1")
    sep_cols = [c for c in range(d2) if (c - offset) % (w + 1) == 0]
    sep = tuple(sorted(i * d2 + c + 1 for i in range(d1) for c in sep_cols))
    sides, trees = [], []
    col = 0
    while col < d2:
        if col in sep_cols:
            col += 1
            continue
        end = col
        while end < d2 and end not in sep_cols:
            end += 1
        cols = range(col, end)
        sides.append(tuple(sorted(i * d2 + c + 1 for i in range(d1) for c in cols)))
        trees.append(grid_junction_tree(d1, end - col))
        col = end
    return Partition(tuple(sides), sep, tuple(trees))


InnerSampler = Callable[[FactorGraph, np.ndarray, np.random.Generator, "JunctionTree | None"],
                        np.ndarray]


def divide_and_conquer_sample(graph: FactorGraph, partition: Partition, inner: InnerSampler,
                              x, rng: np.random.Generator) -> np.ndarray:
    """Knockoff with the separator copied and each side sampled on its
    conditional model (separator values frozen into the potentials)."""
    partition.verify(graph)
    x = np.asarray(x, dtype=float).reshape(graph.p)
    out = x.copy()
    for i, side in enumerate(partition.sides):
        members = set(side)
        # other sides do not touch this one once the separator is fixed
        fixed = {v: float(x[v - 1]) for v in range(1, graph.p + 1) if v not in members}
        sub, ids = graph.condition(fixed)
        idx = np.array(ids) - 1
        tree = partition.trees[i] if partition.trees is not None else None
        out[idx] = inner(sub, x[idx], rng, tree)
    return out


def make_inner_sampler(rule: str, kernel_factory: Callable[[FactorGraph], ProposalKernel] | None = None,
                       max_states: int = DEFAULT_MAX_STATES) -> InnerSampler:
    """Inner sampler for divide-and-conquer: builds a junction tree (or uses
    the supplied one) and runs one sweep on the side model."""

    def inner(sub, x_sub, rng, tree):
        order = order_variables(tree if tree is not None else build_junction_tree(sub))
        if rule == "exact":
            sampler = SequentialSampler(sub, order, rule="exact", max_states=max_states)
        else:
            sampler = SequentialSampler(sub, order, kernel_factory(sub))
        return sampler.sample(x_sub, rng).x_tilde

    return inner
