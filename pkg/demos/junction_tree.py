"""Junction trees and the sampling order they induce.

On a d1 x d2 grid the generic builder (min-fill elimination plus a maximum
spanning tree over separator sizes) is compared with the hand-made path
tree of width min(d1, d2).  The order walks the tree so that each variable's
closure stays inside one tree vertex plus the variables sampled before it.
"""
from metroknock.junction_tree import (build_junction_tree, check_order_properties,
                                      grid_junction_tree, order_variables,
                                      validate_junction_tree)
from metroknock.models import IsingConfig, build_ising

model = build_ising(IsingConfig(3, 4, beta=0.3))
graph = model.graph

generic = build_junction_tree(graph)
path = grid_junction_tree(3, 4)
for name, tree in (("min-fill", generic), ("grid path", path)):
    problems = validate_junction_tree(tree, graph)
    print(f"{name:9s} width={tree.width} vertices={len(tree.vertices)} problems={problems}")

order = order_variables(path)
print("sampling order:", order.order)
print("closure of variable 6:", sorted(order.closure_of(6)))
print("order property violations:", check_order_properties(order, path, graph))
