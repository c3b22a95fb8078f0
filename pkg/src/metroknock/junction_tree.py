"""Junction trees, their validation, and the sampling order derived from them."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping

Adjacency = Mapping[int, Iterable[int]]


@dataclass(frozen=True)
class JunctionTree:
    vertices: tuple[frozenset, ...]
    tree_edges: tuple[tuple[int, int], ...]

    @property
    def width(self) -> int:
        return max((len(v) for v in self.vertices), default=0) - 1

    def neighbors(self) -> dict[int, set[int]]:
        nb: dict[int, set[int]] = {i: set() for i in range(len(self.vertices))}
        for a, b in self.tree_edges:
            nb[a].add(b)
            nb[b].add(a)
        return nb


@dataclass(frozen=True)
class Violation:
    property: int
    message: str
    witness: tuple

    def __str__(self) -> str:
        return f"property {self.property}: {self.message}"


@dataclass(frozen=True)
class EliminationOrder:
    """Sampling order and, per variable, the tree vertex active when it was
    appended (``node_of``) and its closure ``{earlier variables} | node``."""

    order: tuple[int, ...]
    node_of: Mapping[int, frozenset]
    width: int

    @property
    def position(self) -> dict[int, int]:
        return {v: i for i, v in enumerate(self.order)}

    def closure_of(self, v: int) -> frozenset:
        pos = self.position
        return frozenset(self.order[: pos[v]]) | self.node_of[v]

    def later_in_node(self, v: int) -> tuple[int, ...]:
        """Members of the node of ``v`` that come after ``v``, in sampling order."""
        pos = self.position
        return tuple(sorted((u for u in self.node_of[v] if pos[u] > pos[v]), key=pos.get))


def adjacency_of(graph) -> dict[int, set[int]]:
    """Accepts a FactorGraph, a networkx graph, or an adjacency mapping."""
    if hasattr(graph, "neighbors") and isinstance(getattr(graph, "neighbors"), dict):
        return {v: set(n) for v, n in graph.neighbors.items()}
    if hasattr(graph, "adj"):
        return {v: set(graph.adj[v]) for v in graph.nodes}
    return {v: set(n) for v, n in graph.items()}


def _graph_edges(adj: Mapping[int, Iterable[int]]):
    return sorted({(min(a, b), max(a, b)) for a in adj for b in adj[a] if a != b})


# ---------------------------------------------------------------------------
# construction


def _min_fill_cliques(adj: dict[int, set[int]]) -> list[frozenset]:
    """Eliminate vertices by min-fill (ties to the lowest id) and return the
    maximal cliques of the resulting triangulation."""
    g = {v: set(n) for v, n in adj.items()}

    def fill(v):
        nb = sorted(g[v])
        return sum(1 for a, b in itertools.combinations(nb, 2) if b not in g[a])

    score = {v: fill(v) for v in g}
    cliques: list[frozenset] = []
    while g:
        v = min(g, key=lambda u: (score[u], u))
        nb = g[v]
        cliques.append(frozenset(nb | {v}))
        touched = set(nb)
        for a, b in itertools.combinations(sorted(nb), 2):
            if b not in g[a]:
                g[a].add(b)
                g[b].add(a)
        for a in nb:
            g[a].discard(v)
        del g[v]
        del score[v]
        for a in list(touched):
            touched |= g[a]
        for a in touched:
            score[a] = fill(a)
    maximal = []
    for c in cliques:
        if not any(c < d for d in cliques) and c not in maximal:
            maximal.append(c)
    return maximal


def _max_spanning_tree(vertices: list[frozenset]) -> list[tuple[int, int]]:
    """Kruskal on separator sizes, deterministic tie-break by index pair."""
    n = len(vertices)
    cand = sorted(
        ((-len(vertices[i] & vertices[j]), i, j) for i in range(n) for j in range(i + 1, n))
    )
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edges = []
    for _, i, j in cand:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j))
            if len(edges) == n - 1:
                break
    return edges


def build_junction_tree(graph) -> JunctionTree:
    """Min-fill triangulation followed by a maximum-weight spanning tree over
    the maximal cliques.  Disconnected components are joined by
    empty-separator edges.  The result is validated before it is returned."""
    adj = adjacency_of(graph)
    if not adj:
        raise ValueError("graph has no vertices")
    cliques = _min_fill_cliques(adj)
    cliques.sort(key=lambda c: (min(c), sorted(c)))
    tree = JunctionTree(tuple(cliques), tuple(_max_spanning_tree(cliques)))
    problems = validate_junction_tree(tree, adj)
    if problems:
        raise AssertionError(f"junction tree construction failed: {problems[0]}")
    return tree


def grid_junction_tree(d1: int, d2: int) -> JunctionTree:
    """Path-shaped junction tree of width ``min(d1, d2)`` for a grid.

    Grid site ``(i, j)`` (0-based row, column) has variable id
    ``i * d2 + j + 1``.  Sites are swept row by row when ``d2 <= d1`` and
    column by column otherwise; each vertex holds ``w + 1`` consecutive sites
    of the sweep.
    """
    if d1 < 1 or d2 < 1:
        raise ValueError("grid dimensions must be positive")
    if d2 <= d1:
        sweep = [i * d2 + j + 1 for i in range(d1) for j in range(d2)]
        w = d2
    else:
        sweep = [i * d2 + j + 1 for j in range(d2) for i in range(d1)]
        w = d1
    n = d1 * d2
    if n <= w + 1:
        return JunctionTree((frozenset(sweep),), ())
    vertices = tuple(frozenset(sweep[t : t + w + 1]) for t in range(n - w))
    edges = tuple((t, t + 1) for t in range(len(vertices) - 1))
    return JunctionTree(vertices, edges)


def grid_adjacency(d1: int, d2: int) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {i * d2 + j + 1: set() for i in range(d1) for j in range(d2)}
    for i in range(d1):
        for j in range(d2):
            v = i * d2 + j + 1
            if j + 1 < d2:
                adj[v].add(v + 1)
                adj[v + 1].add(v)
            if i + 1 < d1:
                adj[v].add(v + d2)
                adj[v + d2].add(v)
    return adj


# ---------------------------------------------------------------------------
# validation


def validate_junction_tree(tree: JunctionTree, graph) -> list[Violation]:
    """Check coverage, edge coverage, and the running intersection property.

    Also reports a tree that is not connected and acyclic (property 0).
    """
    adj = adjacency_of(graph)
    out: list[Violation] = []
    n = len(tree.vertices)
    nb = tree.neighbors()

    # shape: n - 1 edges and connected
    seen = {0} if n else set()
    stack = [0] if n else []
    while stack:
        a = stack.pop()
        for b in nb[a]:
            if b not in seen:
                seen.add(b)
                stack.append(b)
    if len(tree.tree_edges) != max(n - 1, 0) or len(seen) != n:
        out.append(Violation(0, "vertex adjacency is not a spanning tree", tuple(tree.tree_edges)))
        return out

    covered = set().union(*tree.vertices) if tree.vertices else set()
    for v in sorted(adj):
        if v not in covered:
            out.append(Violation(1, f"variable {v} is in no vertex", (v,)))
    for a, b in _graph_edges(adj):
        if not any(a in V and b in V for V in tree.vertices):
            out.append(Violation(2, f"edge ({a}, {b}) is in no vertex", (a, b)))
    for v in sorted(covered):
        holders = {i for i, V in enumerate(tree.vertices) if v in V}
        # holders must induce a connected subtree
        start = min(holders)
        reach = {start}
        stack = [start]
        while stack:
            a = stack.pop()
            for b in nb[a]:
                if b in holders and b not in reach:
                    reach.add(b)
                    stack.append(b)
        if reach != holders:
            other = min(holders - reach)
            out.append(Violation(
                3, f"variable {v} is in vertices {start} and {other} but not on the path between them",
                (v, start, other)))
    return out


# ---------------------------------------------------------------------------
# ordering


def order_variables(tree: JunctionTree) -> EliminationOrder:
    """Peel leaves off the tree, appending the variables that leave with each.

    The leaf with the smallest minimum variable id goes first; its variables
    not shared with its remaining neighbour are appended in increasing id.
    Separate components of a forest are handled in order of their smallest id.
    """
    nb = tree.neighbors()
    active = set(range(len(tree.vertices)))
    order: list[int] = []
    node_of: dict[int, frozenset] = {}
    placed: set[int] = set()
    while active:
        leaves = [i for i in active if len(nb[i] & active) <= 1]
        leaf = min(leaves, key=lambda i: (min(tree.vertices[i]), i))
        V = tree.vertices[leaf]
        rest = nb[leaf] & active
        if rest:
            (other,) = rest
            new = V - tree.vertices[other]
        else:
            new = V
        for v in sorted(new):
            if v in placed:
                continue
            order.append(v)
            placed.add(v)
            node_of[v] = V
        active.remove(leaf)
        # no appended variable may remain in the active tree
        for i in active:
            assert not (tree.vertices[i] & new), "running intersection violated during peeling"
    return EliminationOrder(tuple(order), node_of, tree.width)


def check_order_properties(order: EliminationOrder, tree: JunctionTree, graph) -> list[str]:
    """Return descriptions of any failures of the three ordering lemmas.

    1. every vertex containing j is among the nodes of variables up to j;
    2. j after l with j in closure(l) implies closure(l) within closure(j);
    3. graph neighbours lie in each other's closures.
    """
    adj = adjacency_of(graph)
    pos = order.position
    problems = []
    for j in order.order:
        earlier_nodes = {order.node_of[u] for u in order.order[: pos[j] + 1]}
        for V in tree.vertices:
            if j in V and V not in earlier_nodes:
                problems.append(f"lemma 1: vertex {sorted(V)} holds {j} but is not among V_1..V_j")
    for l in order.order:
        cl = order.closure_of(l)
        for j in order.order[pos[l] + 1 :]:
            if j in cl and not cl <= order.closure_of(j):
                problems.append(f"lemma 2: closure of {l} not inside closure of {j}")
    for a, b in _graph_edges(adj):
        if b not in order.closure_of(a) or a not in order.closure_of(b):
            problems.append(f"lemma 3: neighbours {a}, {b} outside each other's closure")
    return problems


def quotient_adjacency(graph, groups) -> dict[int, set[int]]:
    """Adjacency among groups (ids 1..k): two groups touch when any of their
    members are adjacent."""
    adj = adjacency_of(graph)
    owner = {}
    for g, members in enumerate(groups, start=1):
        for v in members:
            owner[v] = g
    out: dict[int, set[int]] = {g: set() for g in range(1, len(groups) + 1)}
    for a in adj:
        for b in adj[a]:
            ga, gb = owner[a], owner[b]
            if ga != gb:
                out[ga].add(gb)
    return out
