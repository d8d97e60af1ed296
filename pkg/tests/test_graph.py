import unittest
import sys
import os

import numpy as np

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.errors import AssumptionViolation, ValidationError
from core.graph import (
    JunctionTree,
    ModifiedJunctionTree,
    TreeGraph,
    inclusion_order,
    two_color,
    two_color_adjacency,
    validate_jt,
    validate_mjt,
    validate_tree,
)
from core.problems import GridSpec, MarginalGen, euler_problem, spline_problem, wls_problem


def random_tree(n, seed):
    rng = np.random.default_rng(seed)
    return TreeGraph.from_edges([(int(rng.integers(i)), i) for i in range(1, n)])


class TestTreeGraph(unittest.TestCase):

    def test_path_coloring(self):
        part = two_color(TreeGraph.from_edges([(1, 2), (2, 3)]))
        self.assertEqual(part.s1, frozenset({1, 3}))
        self.assertEqual(part.s2, frozenset({2}))

    def test_star_coloring(self):
        part = two_color(TreeGraph.from_edges([(0, j) for j in range(1, 5)]))
        self.assertEqual(part.s1, frozenset({0}))
        self.assertEqual(part.s2, frozenset({1, 2, 3, 4}))

    def test_every_edge_crosses_partition(self):
        for seed in range(5):
            tree = random_tree(10, seed)
            part = two_color(tree)
            self.assertEqual(part.s1 | part.s2, frozenset(tree.vertices))
            for a, b in tree.edges:
                self.assertNotEqual(a in part.s1, b in part.s1)

    def test_side_alternates(self):
        part = two_color(TreeGraph.from_edges([(1, 2)]))
        self.assertEqual(part.side(1), part.s1)
        self.assertEqual(part.side(2), part.s2)
        self.assertEqual(part.other(part.s1), part.s2)

    def test_odd_cycle_rejected(self):
        with self.assertRaises(ValidationError) as ctx:
            two_color_adjacency({0: [1, 2], 1: [0, 2], 2: [0, 1]})
        self.assertEqual(ctx.exception.violations[0].rule, "bipartite")

    def test_components_and_isolates(self):
        part = two_color_adjacency({3: [2], 2: [3], 9: [], 5: [6], 6: [5, 7], 7: [6]})
        self.assertEqual(part.s1, frozenset({2, 5, 7, 9}))
        self.assertEqual(part.s2, frozenset({3, 6}))

    def test_forest_is_not_a_tree(self):
        rules = [v.rule for v in validate_tree(TreeGraph((0, 1, 2, 3), ((0, 1), (2, 3))))]
        self.assertEqual(rules, ["tree"])

    def test_diameter(self):
        self.assertEqual(TreeGraph.from_edges([(0, 1), (1, 2), (2, 3)]).diameter(), 3)
        self.assertEqual(TreeGraph.from_edges([(0, j) for j in range(1, 5)]).diameter(), 2)
        self.assertEqual(TreeGraph((7,), ()).diameter(), 0)

    def test_valid_star(self):
        tree = TreeGraph.from_edges([(0, j) for j in range(1, 4)], constrained=[1, 2, 3])
        self.assertEqual(validate_tree(tree), [])
        self.assertEqual(tree.free, (0,))

    def test_constrained_must_be_leaf(self):
        tree = TreeGraph.from_edges([(1, 2), (2, 3)], constrained=[2])
        rules = [v.rule for v in validate_tree(tree)]
        self.assertIn("constrained-leaf", rules)

    def test_constrained_edge(self):
        tree = TreeGraph.from_edges([(1, 2)], constrained=[1, 2])
        self.assertIn("constrained-edge", [v.rule for v in validate_tree(tree)])

    def test_cycle_is_not_a_tree(self):
        tree = TreeGraph.from_edges([(0, 1), (1, 2), (0, 2)])
        self.assertEqual(validate_tree(tree)[0].rule, "tree")


class TestJunctionTree(unittest.TestCase):

    def test_euler_junction_tree(self):
        inst = euler_problem(5, GridSpec(3), [2, 0, 1])
        jt = inst.mot.junction_tree
        self.assertEqual(validate_jt(jt, [c.labels for c in inst.mot.costs]), [])
        self.assertEqual(jt.tree_width(), 2)

    def test_running_intersection_violation(self):
        jt = JunctionTree.build([{1, 2}, {2, 3}, {1, 4}], [(0, 1), (1, 2)])
        out = validate_jt(jt)
        self.assertEqual(len(out), 1)
        self.assertEqual(out[0].rule, "running-intersection")
        self.assertEqual(out[0].where, (0, 2))

    def test_family_preservation(self):
        jt = JunctionTree.build([{1, 2}, {2, 3}], [(0, 1)])
        self.assertEqual([v.rule for v in validate_jt(jt, [(1, 3)])], ["family"])

    def test_single_clique_width(self):
        self.assertEqual(JunctionTree.build([{0, 1, 2, 3, 4}], []).tree_width(), 4)

    def test_separator_and_path(self):
        jt = JunctionTree.build([{1, 2}, {2, 3}, {3, 4}], [(0, 1), (1, 2)])
        self.assertEqual(jt.separator(0, 1), frozenset({2}))
        self.assertEqual(jt.path(0, 2), [0, 1, 2])


class TestModifiedJunctionTree(unittest.TestCase):

    def test_wls_structure(self):
        mjt = wls_problem(4, None, GridSpec(3), MarginalGen()).graph_local.mjt
        self.assertEqual(validate_mjt(mjt), [])
        self.assertEqual(len(mjt.separator_neighbors(0)), 4)
        self.assertEqual(mjt.tree_width(), 2)

    def test_spline_width(self):
        inst = spline_problem(3, None, GridSpec(3), GridSpec(2), MarginalGen())
        self.assertEqual(inst.graph_local.mjt.tree_width(), 3)

    def test_three_neighbour_cost_clique(self):
        mjt = ModifiedJunctionTree.build([{1, 2}], [{1}, {2}, {1, 2}], [(0, 0), (0, 1), (0, 2)])
        out = validate_mjt(mjt)
        self.assertIn("Def4.4", [v.rule for v in out])
        self.assertIn("3 separator neighbours", str(out[0]))

    def test_nested_order(self):
        mjt = ModifiedJunctionTree.build([{1, 2, 3, 4}, {1, 3, 4}, {0, 1, 3}], [{1, 3, 4}], [(0, 0), (1, 0), (2, 0)])
        order = inclusion_order(mjt, 0)
        self.assertEqual([e.clique for e in order], [0, 1, 2])
        self.assertEqual([e.position for e in order], [1, 2, 3])
        self.assertEqual(order[0].scope, frozenset({1, 3, 4}))
        self.assertEqual(order[2].labels, (1, 3))

    def test_order_ignores_neighbour_listing(self):
        cliques = [{0, 1, 3}, {1, 2, 3, 4}, {1, 3, 4}]
        mjt = ModifiedJunctionTree.build(cliques, [{1, 3, 4}], [(2, 0), (0, 0), (1, 0)])
        self.assertEqual([e.clique for e in inclusion_order(mjt, 0)], [1, 2, 0])

    def test_single_neighbour(self):
        mjt = ModifiedJunctionTree.build([{1, 2}], [{1}], [(0, 0)])
        order = inclusion_order(mjt, 0)
        self.assertEqual(len(order), 1)

    def test_non_nested(self):
        mjt = ModifiedJunctionTree.build([{1, 3}, {2, 4}], [{1, 2}], [(0, 0), (1, 0)])
        with self.assertRaises(AssumptionViolation) as ctx:
            inclusion_order(mjt, 0)
        self.assertEqual((ctx.exception.first, ctx.exception.second), (0, 1))
        self.assertIn("Assumption1", [v.rule for v in validate_mjt(mjt)])

    def test_differing_heads_need_permissive(self):
        mjt = ModifiedJunctionTree.build([{1, 2, 5}, {1, 6}], [{1, 2}], [(0, 0), (1, 0)])
        with self.assertRaises(AssumptionViolation):
            inclusion_order(mjt, 0)
        order = inclusion_order(mjt, 0, permissive=True)
        self.assertEqual([e.clique for e in order], [0, 1])

    def test_separator_adjacency(self):
        mjt = wls_problem(3, None, GridSpec(3), MarginalGen()).graph_local.mjt
        adj = mjt.separator_adjacency()
        self.assertEqual(adj[0], [1, 2, 3])
        self.assertEqual(adj[1], [0])


if __name__ == '__main__':
    unittest.main()
