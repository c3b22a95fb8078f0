import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metroknock.junction_tree import (JunctionTree, build_junction_tree, check_order_properties,
                                      grid_adjacency, grid_junction_tree, order_variables,
                                      validate_junction_tree)


def path_adj(p):
    return {i: {j for j in (i - 1, i + 1) if 1 <= j <= p} for i in range(1, p + 1)}


def fig2_tree():
    # 2x3 grid, ids row-major: X11=1 X12=2 X13=3 / X21=4 X22=5 X23=6
    V = [frozenset(s) for s in ({1, 2, 4}, {2, 4, 5}, {2, 3, 5}, {3, 5, 6})]
    return JunctionTree(tuple(V), ((0, 1), (1, 2), (2, 3)))


def all_graphs(p):
    pairs = list(itertools.combinations(range(1, p + 1), 2))
    for mask in range(1 << len(pairs)):
        adj = {v: set() for v in range(1, p + 1)}
        for i, (a, b) in enumerate(pairs):
            if mask >> i & 1:
                adj[a].add(b)
                adj[b].add(a)
        yield adj


class TestBuild:
    def test_path_has_width_one(self):
        assert build_junction_tree(path_adj(7)).width == 1

    def test_2x3_grid_has_width_two(self):
        t = build_junction_tree(grid_adjacency(2, 3))
        assert t.width == 2
        assert len(t.vertices) == 4 and all(len(v) == 3 for v in t.vertices)

    def test_complete_graph(self):
        k5 = {i: set(range(1, 6)) - {i} for i in range(1, 6)}
        assert build_junction_tree(k5).width == 4

    def test_disconnected_components_are_joined(self):
        adj = {1: {2}, 2: {1}, 3: {4}, 4: {3}, 5: set()}
        t = build_junction_tree(adj)
        assert validate_junction_tree(t, adj) == []
        assert len(t.tree_edges) == len(t.vertices) - 1

    @pytest.mark.parametrize("p", [1, 2, 3, 4, 5])
    def test_every_small_graph_gives_a_valid_tree_and_order(self, p):
        for adj in all_graphs(p):
            t = build_junction_tree(adj)
            assert validate_junction_tree(t, adj) == []
            o = order_variables(t)
            assert sorted(o.order) == list(range(1, p + 1))
            assert check_order_properties(o, t, adj) == []
            assert o.width == t.width

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.booleans(), min_size=15, max_size=15))
    def test_six_vertex_graphs(self, bits):
        pairs = list(itertools.combinations(range(1, 7), 2))
        adj = {v: set() for v in range(1, 7)}
        for on, (a, b) in zip(bits, pairs):
            if on:
                adj[a].add(b)
                adj[b].add(a)
        t = build_junction_tree(adj)
        assert validate_junction_tree(t, adj) == []
        assert check_order_properties(order_variables(t), t, adj) == []


class TestValidate:
    def test_fig2_tree_is_valid(self):
        assert validate_junction_tree(fig2_tree(), grid_adjacency(2, 3)) == []

    def test_uncovered_edge(self):
        t = fig2_tree()
        # drop X13 from the third vertex: edge (2, 3) is then uncovered
        V = list(t.vertices)
        V[2] = frozenset({2, 5})
        bad = validate_junction_tree(JunctionTree(tuple(V), t.tree_edges), grid_adjacency(2, 3))
        assert any(v.property == 2 and v.witness == (2, 3) for v in bad)

    def test_running_intersection(self):
        adj = {1: {2}, 2: {1, 3}, 3: {2}}
        V = (frozenset({1, 3}), frozenset({1, 2}), frozenset({2, 3}))
        bad = validate_junction_tree(JunctionTree(V, ((0, 1), (1, 2))), adj)
        assert [v.property for v in bad] == [3]
        assert 3 in bad[0].witness

    def test_missing_variable(self):
        V = (frozenset({1, 2}),)
        bad = validate_junction_tree(JunctionTree(V, ()), {1: {2}, 2: {1}, 3: set()})
        assert any(v.property == 1 for v in bad)


class TestOrder:
    def test_single_vertex(self):
        o = order_variables(JunctionTree((frozenset({1, 2, 3}),), ()))
        assert sorted(o.order) == [1, 2, 3]
        assert {o.node_of[v] for v in o.order} == {frozenset({1, 2, 3})}

    def test_fig2_peeled_left_to_right(self):
        o = order_variables(fig2_tree())
        # X11 is the only node unique to the leftmost vertex; X21 follows
        # once the second vertex becomes a leaf
        assert o.order[:2] == (1, 4)
        assert o.node_of[1] == frozenset({1, 2, 4})

    def test_path_order(self):
        adj = path_adj(5)
        o = order_variables(build_junction_tree(adj))
        assert o.order == (1, 2, 3, 4, 5)
        assert all(len(o.node_of[v]) <= 2 for v in o.order)

    def test_closure(self):
        o = order_variables(fig2_tree())
        assert o.closure_of(4) == frozenset({1, 2, 4, 5})


class TestGrid:
    def test_2x3_matches_fig2(self):
        t = grid_junction_tree(2, 3)
        assert set(t.vertices) == set(fig2_tree().vertices)
        assert t.width == 2

    @pytest.mark.parametrize("d2", [1, 2, 5])
    def test_single_row_is_a_path(self, d2):
        t = grid_junction_tree(1, d2)
        assert t.width == (1 if d2 > 1 else 0)
        assert validate_junction_tree(t, grid_adjacency(1, d2)) == []

    def test_3x3(self):
        t = grid_junction_tree(3, 3)
        assert t.width == 3
        assert validate_junction_tree(t, grid_adjacency(3, 3)) == []

    @pytest.mark.parametrize("d1,d2", [(d1, d2) for d1 in range(2, 9) for d2 in range(2, 9)])
    def test_width_is_min_dimension(self, d1, d2):
        t = grid_junction_tree(d1, d2)
        assert t.width == min(d1, d2)
        assert validate_junction_tree(t, grid_adjacency(d1, d2)) == []

    @pytest.mark.parametrize("d1,d2", [(2, 2), (3, 4), (4, 4), (4, 3)])
    def test_ordering_lemmas_on_grids(self, d1, d2):
        t = grid_junction_tree(d1, d2)
        adj = grid_adjacency(d1, d2)
        assert check_order_properties(order_variables(t), t, adj) == []

    def test_active_frontier(self):
        # d1 >= d2: row by row; while X_{i,j} is sampled the rest of its node
        # is X_{i,j+1:d2} together with X_{i+1,1:j}
        d1, d2 = 4, 3
        o = order_variables(grid_junction_tree(d1, d2))
        assert o.order == tuple(range(1, d1 * d2 + 1))
        sid = lambda i, j: (i - 1) * d2 + j  # noqa: E731
        for i in range(1, d1):
            for j in range(1, d2 + 1):
                later = {v for v in o.node_of[sid(i, j)] if v > sid(i, j)}
                want = {sid(i, c) for c in range(j + 1, d2 + 1)} | {sid(i + 1, c)
                                                                    for c in range(1, j + 1)}
                assert later == want
