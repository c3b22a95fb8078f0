"""Unnormalized densities that factor over a graph.

A :class:`FactorGraph` is the only window the samplers have onto the target
law.  Every evaluation goes through a :class:`QueryCounter` so that the cost
of a knockoff run can be audited.  Nothing in this module ever normalizes a
density.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import jsonschema
import numpy as np
from scipy import special

NEG_INF = -np.inf


class FactorGraphError(ValueError):
    """Raised for invalid inputs to factor-graph operations."""


class FactorGraphLoadError(FactorGraphError):
    """Raised when a factor-graph document fails validation.

    The message starts with the JSON path of the offending field.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# domains and variables


@dataclass(frozen=True)
class DiscreteLevels:
    levels: tuple[float, ...]

    def __post_init__(self):
        lv = tuple(float(v) for v in self.levels)
        if not lv:
            raise FactorGraphError("discrete domain needs at least one level")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise FactorGraphError(f"levels must be strictly increasing: {lv}")
        object.__setattr__(self, "levels", lv)
        object.__setattr__(self, "_array", np.asarray(lv))

    @property
    def size(self) -> int:
        return len(self.levels)

    def index_of(self, values) -> np.ndarray:
        """Level index of each value, or -1 where the value is not a level."""
        arr = np.asarray(values, dtype=float)
        lv = self._array
        idx = np.minimum(np.searchsorted(lv, arr), len(lv) - 1)
        return np.where(lv[idx] == arr, idx, -1)

    def slot_of(self, values) -> np.ndarray:
        """Like :meth:`index_of` but misses map to ``size``."""
        arr = np.asarray(values, dtype=float)
        lv = self._array
        idx = np.minimum(np.searchsorted(lv, arr), len(lv) - 1)
        return np.where(lv[idx] == arr, idx, len(lv))

    def contains(self, values) -> np.ndarray:
        return self.index_of(values) >= 0

    def spacing(self) -> float:
        """Smallest gap between consecutive levels (1.0 for one level)."""
        if len(self.levels) == 1:
            return 1.0
        return float(np.min(np.diff(self.levels)))


@dataclass(frozen=True)
class ContinuousReal:
    def contains(self, values) -> np.ndarray:
        return np.isfinite(np.asarray(values, dtype=float))


Domain = DiscreteLevels | ContinuousReal


@dataclass(frozen=True)
class VariableSpec:
    id: int
    domain: Domain

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.domain, DiscreteLevels)


# ---------------------------------------------------------------------------
# potentials


class TableLogPotential:
    """Log-potential stored as a dense table over the scope's level grid."""

    family = "table"

    def __init__(self, domains: Sequence[DiscreteLevels], log_values):
        self.domains = tuple(domains)
        shape = tuple(d.size for d in self.domains)
        table = np.asarray(log_values, dtype=float)
        if table.size != int(np.prod(shape)):
            raise FactorGraphError(
                f"table has {table.size} entries, level grid needs {int(np.prod(shape))}"
            )
        self.table = table.reshape(shape)
        if np.any(np.isnan(self.table)) or np.any(self.table == np.inf):
            raise FactorGraphError("table log-values must be finite or -inf")
        # one extra -inf slot per axis absorbs values that are not levels
        self._padded = np.pad(self.table, [(0, 1)] * len(shape), constant_values=NEG_INF)

    def __call__(self, *values):
        return self._padded[tuple(d.slot_of(v) for d, v in zip(self.domains, values))]

    def params(self) -> dict:
        return {"log_values": [float(v) for v in self.table.ravel()]}


class GaussianPairPotential:
    """log phi(x) = -(x - mean)' P (x - mean) / 2 on a scope of any size."""

    family = "gaussian-pair"

    def __init__(self, precision, mean=None):
        self.precision = np.atleast_2d(np.asarray(precision, dtype=float))
        k = self.precision.shape[0]
        if self.precision.shape != (k, k):
            raise FactorGraphError("precision must be square")
        self.mean = np.zeros(k) if mean is None else np.asarray(mean, dtype=float).reshape(k)

    def __call__(self, *values):
        d = [np.asarray(v, dtype=float) - m for v, m in zip(values, self.mean)]
        out = 0.0
        k = len(d)
        for a in range(k):
            out = out + 0.5 * self.precision[a, a] * d[a] * d[a]
            for b in range(a + 1, k):
                out = out + self.precision[a, b] * d[a] * d[b]
        return -np.asarray(out, dtype=float)

    def params(self) -> dict:
        return {"precision": self.precision.tolist(), "mean": self.mean.tolist()}


class QuadraticGibbsPotential:
    """log phi(a, b) = -beta (a - b)^2."""

    family = "quadratic-gibbs"

    def __init__(self, beta: float):
        self.beta = float(beta)

    def __call__(self, a, b):
        diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        return -self.beta * diff * diff

    def params(self) -> dict:
        return {"beta": self.beta}


class StudentTInnovationPotential:
    """Log-density of a scaled Student-t innovation.

    With scope ``(prev, cur)`` the value is the log-density of
    ``cur = rho * prev + scale * Z`` with ``Z ~ t_nu``; with scope ``(cur,)``
    it is the log-density of ``cur = scale * Z``.
    """

    family = "student-t-innovation"

    def __init__(self, nu: float, rho: float = 0.0, scale: float | None = None):
        if nu <= 2:
            raise FactorGraphError("student-t innovation needs nu > 2")
        self.nu = float(nu)
        self.rho = float(rho)
        if scale is None:
            scale = math.sqrt(1.0 - self.rho**2) * math.sqrt((self.nu - 2.0) / self.nu)
        self.scale = float(scale)
        nu = self.nu
        self._const = (
            special.gammaln((nu + 1) / 2)
            - special.gammaln(nu / 2)
            - 0.5 * math.log(nu * math.pi)
            - math.log(self.scale)
        )

    def __call__(self, *values):
        if len(values) == 1:
            resid = np.asarray(values[0], dtype=float)
        else:
            resid = np.asarray(values[1], dtype=float) - self.rho * np.asarray(values[0], dtype=float)
        z = resid / self.scale
        return self._const - 0.5 * (self.nu + 1) * np.log1p(z * z / self.nu)

    def params(self) -> dict:
        return {"nu": self.nu, "rho": self.rho, "scale": self.scale}


# Standardizing constants of U = I*|G| - (1 - I)*E with I ~ Bern(1/2),
# G ~ N(0, 1), E ~ Exp(1).  E|G| = sqrt(2/pi), E[E] = 1, E[G^2] = 1,
# E[E^2] = 2, hence E[U] = (sqrt(2/pi) - 1)/2 and E[U^2] = 3/2.
MIXTURE_MEAN = 0.5 * (math.sqrt(2.0 / math.pi) - 1.0)
MIXTURE_SD = math.sqrt(1.5 - MIXTURE_MEAN**2)


def mixture_innovation_logpdf(z):
    """Log-density of the standardized Gaussian/exponential mixture."""
    u = MIXTURE_SD * np.asarray(z, dtype=float) + MIXTURE_MEAN
    pos = -0.5 * u * u - 0.5 * math.log(2.0 * math.pi)
    neg = u - math.log(2.0)
    return np.where(u >= 0, pos, neg) + math.log(MIXTURE_SD)


class MixtureInnovationPotential:
    """Log-density of ``cur = rho * prev + sqrt(1 - rho^2) * Z`` with Z the
    standardized Gaussian/exponential mixture (scope of size 1 or 2)."""

    family = "gauss-exp-mixture-innovation"

    def __init__(self, rho: float = 0.0):
        self.rho = float(rho)
        self.scale = math.sqrt(1.0 - self.rho**2)

    def __call__(self, *values):
        if len(values) == 1:
            resid = np.asarray(values[0], dtype=float)
        else:
            resid = np.asarray(values[1], dtype=float) - self.rho * np.asarray(values[0], dtype=float)
        return mixture_innovation_logpdf(resid / self.scale) - math.log(self.scale)

    def params(self) -> dict:
        return {"rho": self.rho}


NAMED_FAMILIES: dict[str, Callable[..., object]] = {
    "gaussian-pair": GaussianPairPotential,
    "quadratic-gibbs": QuadraticGibbsPotential,
    "student-t-innovation": StudentTInnovationPotential,
    "gauss-exp-mixture-innovation": MixtureInnovationPotential,
}

_FAMILY_ARITY = {"quadratic-gibbs": (2,), "student-t-innovation": (1, 2),
                 "gauss-exp-mixture-innovation": (1, 2)}


@dataclass(frozen=True)
class CliquePotential:
    scope: tuple[int, ...]
    evaluator: Callable[..., np.ndarray]

    def __call__(self, *values) -> np.ndarray:
        return self.evaluator(*values)


# ---------------------------------------------------------------------------
# query accounting


@dataclass
class QueryCounter:
    """Counts density evaluations.

    ``total`` counts full evaluations of log Phi.  ``restricted`` counts
    point evaluations of the partial sum over the cliques touching one
    sampling unit; each such point is charged as one full-query equivalent,
    so a two-point ratio costs two.
    """

    total: int = 0
    restricted: int = 0
    per_step: dict = field(default_factory=dict)
    step: int | None = None

    def add_full(self, n: int = 1) -> None:
        self.total += n
        self._bump(n)

    def add_restricted(self, n: int) -> None:
        self.restricted += n
        self._bump(n)

    def _bump(self, n: int) -> None:
        if self.step is not None:
            self.per_step[self.step] = self.per_step.get(self.step, 0) + n

    @property
    def full_equivalents(self) -> int:
        return self.total + self.restricted

    def reset(self) -> None:
        self.total = 0
        self.restricted = 0
        self.per_step = {}
        self.step = None

    def copy(self) -> "QueryCounter":
        return QueryCounter(self.total, self.restricted, dict(self.per_step), self.step)


# ---------------------------------------------------------------------------
# the factor graph


class FactorGraph:
    """An unnormalized density Phi(x) = prod_c phi_c(x_c).

    Variable ids are 1-based; arrays holding a full assignment are indexed
    0..p-1 so that ``x[v - 1]`` is the value of variable ``v``.
    """

    def __init__(self, variables: Sequence[VariableSpec], cliques: Sequence[CliquePotential],
                 counter: QueryCounter | None = None):
        self.variables = tuple(variables)
        self.p = len(self.variables)
        ids = [v.id for v in self.variables]
        if ids != list(range(1, self.p + 1)):
            raise FactorGraphError("variable ids must be 1..p in order")
        self.cliques = tuple(cliques)
        self.cliques_of: dict[int, list[int]] = {v: [] for v in ids}
        for ci, c in enumerate(self.cliques):
            if len(set(c.scope)) != len(c.scope):
                raise FactorGraphError(f"clique {ci} repeats a variable")
            for v in c.scope:
                if v not in self.cliques_of:
                    raise FactorGraphError(f"clique {ci} references unknown variable {v}")
                self.cliques_of[v].append(ci)
        lonely = [v for v, cs in self.cliques_of.items() if not cs]
        if lonely:
            raise FactorGraphError(f"variables {lonely} appear in no clique")
        self.neighbors: dict[int, set[int]] = {v: set() for v in ids}
        for c in self.cliques:
            for a, b in itertools.combinations(c.scope, 2):
                self.neighbors[a].add(b)
                self.neighbors[b].add(a)
        self.counter = counter if counter is not None else QueryCounter()

    # -- structure ---------------------------------------------------------

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {(a, b) for a in self.neighbors for b in self.neighbors[a] if a < b}

    def domain(self, v: int) -> Domain:
        return self.variables[v - 1].domain

    @property
    def is_discrete(self) -> bool:
        return all(v.is_discrete for v in self.variables)

    def level_grid(self) -> list[tuple[float, ...]]:
        if not self.is_discrete:
            raise FactorGraphError("level grid requires all-discrete variables")
        return [v.domain.levels for v in self.variables]

    # -- evaluation ----------------------------------------------------------

    def _check_domain(self, x: np.ndarray) -> None:
        for spec in self.variables:
            val = x[spec.id - 1]
            if not bool(spec.domain.contains(val)):
                raise FactorGraphError(f"value {val!r} outside the domain of variable {spec.id}")

    def _sum_cliques(self, clique_ids, x, overrides=None):
        total = 0.0
        for ci in clique_ids:
            c = self.cliques[ci]
            args = []
            for v in c.scope:
                if overrides is not None and v in overrides:
                    args.append(overrides[v])
                else:
                    args.append(x[v - 1])
            total = total + c(*args)
        return total

    def log_phi(self, x, counter: QueryCounter | None = None) -> float:
        """Return log Phi(x); one full query."""
        x = np.asarray(x, dtype=float).reshape(self.p)
        self._check_domain(x)
        (counter or self.counter).add_full(1)
        return float(self._sum_cliques(range(len(self.cliques)), x))

    def log_phi_ratio(self, x, j: int, a: float, b: float,
                      counter: QueryCounter | None = None) -> float:
        """Return log Phi(x[j<-a]) - log Phi(x[j<-b]) using only cliques with j."""
        x = np.asarray(x, dtype=float).reshape(self.p)
        dom = self.domain(j)
        for val in (a, b):
            if not bool(dom.contains(val)):
                raise FactorGraphError(f"value {val!r} outside the domain of variable {j}")
        self._check_domain(np.where(np.arange(self.p) == j - 1, a, x))
        (counter or self.counter).add_restricted(2)
        if a == b:
            return 0.0
        vals = np.array([a, b])
        out = self._sum_cliques(self.cliques_of[j], x, {j: vals})
        out = np.broadcast_to(out, (2,))
        if out[0] == out[1]:
            return 0.0
        return float(out[0] - out[1])

    def local_log_phi(self, variables: Sequence[int], x: np.ndarray,
                      overrides: Mapping[int, np.ndarray], shape: tuple[int, ...],
                      counter: QueryCounter, cliques: Sequence[int] | None = None,
                      checked: bool = False) -> np.ndarray:
        """Partial log Phi over the cliques touching ``variables``.

        ``overrides`` maps variable ids to arrays broadcastable to ``shape``;
        every other variable sits at ``x``.  Values outside a variable's
        domain give -inf.  Charged as one restricted query per grid point.
        ``cliques`` lets callers pass a precomputed clique id list; with
        ``checked`` the caller vouches that every override is in its domain.
        """
        cids = cliques if cliques is not None else sorted(
            {ci for v in variables for ci in self.cliques_of[v]})
        out = np.zeros(shape)
        for v, arr in ({} if checked else overrides).items():
            dom = self.domain(v)
            if isinstance(dom, DiscreteLevels):
                out = np.where(dom.contains(arr), out, NEG_INF)
        with np.errstate(invalid="ignore"):
            out = out + self._sum_cliques(cids, x, overrides)
        counter.add_restricted(int(np.prod(shape)))
        return np.broadcast_to(out, shape)

    def log_phi_batch(self, xs) -> np.ndarray:
        """Uncounted log Phi over rows of ``xs``; for tests and oracles."""
        xs = np.asarray(xs, dtype=float)
        cols = {v: xs[:, v - 1] for v in range(1, self.p + 1)}
        out = np.zeros(xs.shape[0])
        for c in self.cliques:
            out = out + c(*[cols[v] for v in c.scope])
        return out

    # -- conditioning ----------------------------------------------------------

    def condition(self, fixed: Mapping[int, float]) -> tuple["FactorGraph", list[int]]:
        """Freeze ``fixed`` variables into the potentials.

        Returns the smaller graph and the list mapping its ids (1-based
        positions) back to ids of this graph.
        """
        keep = [v for v in range(1, self.p + 1) if v not in fixed]
        new_id = {v: i + 1 for i, v in enumerate(keep)}
        variables = [VariableSpec(new_id[v], self.domain(v)) for v in keep]
        cliques = []
        for c in self.cliques:
            free = [v for v in c.scope if v not in fixed]
            if not free:
                continue
            if len(free) == len(c.scope):
                cliques.append(CliquePotential(tuple(new_id[v] for v in c.scope), c.evaluator))
                continue
            cliques.append(CliquePotential(tuple(new_id[v] for v in free),
                                           _Frozen(c, fixed)))
        return FactorGraph(variables, cliques), keep

    # -- serialization ----------------------------------------------------

    def to_document(self) -> dict:
        """Serialize to the JSON document format (table/named-family cliques only)."""
        variables = []
        for spec in self.variables:
            if spec.is_discrete:
                dom = {"type": "discrete", "levels": list(spec.domain.levels)}
            else:
                dom = {"type": "continuous"}
            variables.append({"id": spec.id, "domain": dom})
        cliques = []
        for c in self.cliques:
            ev = c.evaluator
            family = getattr(ev, "family", None)
            if family is None:
                raise FactorGraphError("clique evaluator has no serializable family")
            if family == "table":
                pot = {"type": "table", "levels_order": list(c.scope), **ev.params()}
            else:
                pot = {"type": family, "params": ev.params()}
            cliques.append({"scope": list(c.scope), "potential": pot})
        return {"p": self.p, "variables": variables, "cliques": cliques}


class _Frozen:
    """A clique evaluator with some scope variables held at fixed values."""

    def __init__(self, clique: CliquePotential, fixed: Mapping[int, float]):
        self.clique = clique
        self.fixed = {v: float(fixed[v]) for v in clique.scope if v in fixed}

    def __call__(self, *free_values):
        it = iter(free_values)
        args = [self.fixed[v] if v in self.fixed else next(it) for v in self.clique.scope]
        return self.clique(*args)


# ---------------------------------------------------------------------------
# JSON documents

_SCHEMA = {
    "type": "object",
    "required": ["p", "variables", "cliques"],
    "properties": {
        "p": {"type": "integer", "minimum": 1},
        "variables": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "domain"],
                "properties": {
                    "id": {"type": "integer"},
                    "domain": {
                        "type": "object",
                        "required": ["type"],
                        "properties": {
                            "type": {"enum": ["discrete", "continuous"]},
                            "levels": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                        },
                    },
                },
            },
        },
        "cliques": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["scope", "potential"],
                "properties": {
                    "scope": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                    "potential": {
                        "type": "object",
                        "required": ["type"],
                        "properties": {
                            "type": {"type": "string"},
                            "levels_order": {"type": "array", "items": {"type": "integer"}},
                            "log_values": {"type": "array",
                                           "items": {"type": ["number", "null", "string"]}},
                            "params": {"type": "object"},
                        },
                    },
                },
            },
        },
    },
}


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _log_value(v, path):
    if isinstance(v, str):
        if v in ("-inf", "-Infinity"):
            return NEG_INF
        raise FactorGraphLoadError(path, f"unrecognized log-value {v!r}")
    if v is None:
        return NEG_INF
    return float(v)


def load_factor_graph(document: str | Mapping) -> FactorGraph:
    """Parse and validate a factor-graph JSON document.

    ``document`` is JSON text or an already-parsed mapping.  Zero-mass table
    entries may be written as ``null`` or ``"-inf"``.
    """
    if isinstance(document, str):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise FactorGraphLoadError("$", f"invalid JSON: {exc}") from exc
    else:
        doc = document
    try:
        jsonschema.validate(doc, _SCHEMA)
    except jsonschema.ValidationError as exc:
        raise FactorGraphLoadError(_json_path(exc.absolute_path), exc.message) from exc

    p = doc["p"]
    if len(doc["variables"]) != p:
        raise FactorGraphLoadError("$.variables", f"expected {p} variables, got {len(doc['variables'])}")
    specs: dict[int, VariableSpec] = {}
    for i, var in enumerate(doc["variables"]):
        path = f"$.variables[{i}]"
        vid = var["id"]
        if not 1 <= vid <= p:
            raise FactorGraphLoadError(path + ".id", f"id {vid} outside 1..{p}")
        if vid in specs:
            raise FactorGraphLoadError(path + ".id", f"duplicate id {vid}")
        dom = var["domain"]
        if dom["type"] == "discrete":
            if "levels" not in dom:
                raise FactorGraphLoadError(path + ".domain", "discrete domain needs levels")
            try:
                domain: Domain = DiscreteLevels(tuple(dom["levels"]))
            except FactorGraphError as exc:
                raise FactorGraphLoadError(path + ".domain.levels", str(exc)) from exc
        else:
            domain = ContinuousReal()
        specs[vid] = VariableSpec(vid, domain)

    cliques = []
    seen: dict[frozenset, int] = {}
    for ci, cl in enumerate(doc["cliques"]):
        path = f"$.cliques[{ci}]"
        scope = tuple(cl["scope"])
        for k, v in enumerate(scope):
            if v not in specs:
                raise FactorGraphLoadError(f"{path}.scope[{k}]", f"dangling variable id {v}")
        if len(set(scope)) != len(scope):
            raise FactorGraphLoadError(path + ".scope", "repeated variable id")
        key = frozenset(scope)
        if key in seen:
            raise FactorGraphLoadError(path + ".scope", f"duplicates the scope of clique {seen[key]}")
        seen[key] = ci
        pot = cl["potential"]
        kind = pot["type"]
        if kind == "table":
            order = tuple(pot.get("levels_order", scope))
            if sorted(order) != sorted(scope):
                raise FactorGraphLoadError(path + ".potential.levels_order",
                                           "must be a permutation of the scope")
            doms = []
            for v in order:
                d = specs[v].domain
                if not isinstance(d, DiscreteLevels):
                    raise FactorGraphLoadError(path + ".potential",
                                               f"table potential over continuous variable {v}")
                doms.append(d)
            if "log_values" not in pot:
                raise FactorGraphLoadError(path + ".potential", "table needs log_values")
            vals = [_log_value(v, f"{path}.potential.log_values[{k}]")
                    for k, v in enumerate(pot["log_values"])]
            try:
                table = TableLogPotential(doms, vals)
            except FactorGraphError as exc:
                raise FactorGraphLoadError(path + ".potential.log_values", str(exc)) from exc
            if order != scope:
                perm = [order.index(v) for v in scope]
                table = TableLogPotential([doms[i] for i in perm], np.transpose(table.table, perm))
            cliques.append(CliquePotential(scope, table))
        elif kind in NAMED_FAMILIES:
            arity = _FAMILY_ARITY.get(kind)
            if arity is not None and len(scope) not in arity:
                raise FactorGraphLoadError(path + ".scope", f"{kind} takes {arity} variables")
            try:
                ev = NAMED_FAMILIES[kind](**pot.get("params", {}))
            except (TypeError, FactorGraphError) as exc:
                raise FactorGraphLoadError(path + ".potential.params", str(exc)) from exc
            if kind == "gaussian-pair" and ev.precision.shape[0] != len(scope):
                raise FactorGraphLoadError(path + ".potential.params.precision",
                                           "size must match the scope")
            cliques.append(CliquePotential(scope, ev))
        else:
            raise FactorGraphLoadError(path + ".potential.type", f"unknown potential type {kind!r}")

    try:
        return FactorGraph([specs[v] for v in range(1, p + 1)], cliques)
    except FactorGraphError as exc:
        raise FactorGraphLoadError("$.cliques", str(exc)) from exc


def dump_factor_graph(graph: FactorGraph) -> str:
    doc = graph.to_document()
    for c in doc["cliques"]:
        pot = c["potential"]
        if "log_values" in pot:
            pot["log_values"] = [None if math.isinf(v) else v for v in pot["log_values"]]
    return json.dumps(doc)
