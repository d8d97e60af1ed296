import unittest
import sys
import os
import warnings

import numpy as np

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.errors import ConvergenceWarning, SpecError
from core.graph_local import GraphLocalProblem
from core.mot_global import MotProblem
from core.runner import build_problem, collect_violations, run_spec, stopping_threshold
from core.spec_file import parse_spec
from core.tree_local import TreeProblem, recipe


def family_doc(family, solver, **problem):
    problem["family"] = family
    return {
        "format_version": 1,
        "problem": problem,
        "grid": {"d": 3},
        "grid_v": {"d": 2},
        "solver": {"name": solver, "epsilon": 0.5},
    }


def custom_tree_doc(mu2=(0.3, 0.7), **solver):
    opts = {"name": "tree-local", "epsilon": 0.5, "delta_prime": 1e-6}
    opts.update(solver)
    return {
        "format_version": 1,
        "problem": {
            "family": "custom",
            "structure": "tree",
            "nodes": [0, 1, 2],
            "edges": [[0, 1], [0, 2]],
            "constrained": [1, 2],
            "sizes": {"0": 2, "1": 2, "2": 2},
            "costs": [
                {"edge": [0, 1], "values": [[0, 1], [1, 0]]},
                {"edge": [0, 2], "values": [[0, 1], [1, 0]]},
            ],
        },
        "marginals": {"vectors": {"1": [0.5, 0.5], "2": list(mu2)}},
        "solver": opts,
    }


def custom_jt_doc():
    return {
        "format_version": 1,
        "problem": {
            "family": "custom",
            "structure": "junction-tree",
            "sizes": {"0": 2, "1": 2},
            "costs": [{"labels": [0, 1], "values": [0, 1, 1, 0]}],
            "constraints": [
                {"labels": [0], "values": [0.5, 0.5]},
                {"labels": [1], "values": [0.3, 0.7]},
            ],
            "cliques": [[0, 1], [0], [1]],
            "clique_edges": [[0, 1], [0, 2]],
            "constrained_cliques": [1, 2],
        },
        "solver": {"name": "global-isbp", "epsilon": 0.5, "tol": 1e-9, "schedule": "round-robin"},
    }


def custom_mjt_doc(cost_cliques, separators, edges):
    return {
        "format_version": 1,
        "problem": {
            "family": "custom",
            "structure": "modified-junction-tree",
            "sizes": {str(a): 2 for a in range(5)},
            "cost_cliques": cost_cliques,
            "separators": separators,
            "edges": edges,
        },
        "solver": {"name": "graph-local", "epsilon": 0.5},
    }


def pair(labels):
    return {"labels": labels, "values": [0.0, 1.0, 1.0, 0.0]}


class TestBuildProblem(unittest.TestCase):

    def build(self, doc):
        return build_problem(parse_spec(doc))

    def test_barycenter_forms(self):
        self.assertIsInstance(self.build(family_doc("barycenter", "tree-local", n_leaves=3)), TreeProblem)
        self.assertIsInstance(self.build(family_doc("barycenter", "graph-local", n_leaves=3)), GraphLocalProblem)
        mot = self.build(family_doc("barycenter", "global-isbp", n_leaves=3))
        self.assertIsInstance(mot, MotProblem)
        self.assertIsNotNone(mot.junction_tree)

    def test_family_forms(self):
        self.assertIsInstance(self.build(family_doc("euler", "graph-local", J=4, sigma=[2, 0, 1])), GraphLocalProblem)
        self.assertIsInstance(self.build(family_doc("euler", "dense", J=3, sigma=[2, 0, 1])), MotProblem)
        self.assertIsInstance(self.build(family_doc("wls", "graph-local", J=3)), GraphLocalProblem)
        self.assertIsInstance(self.build(family_doc("spline", "global-isbp", J=2)), MotProblem)

    def test_solver_mismatch(self):
        with self.assertRaises(SpecError):
            self.build(family_doc("wls", "tree-local", J=3))
        with self.assertRaises(SpecError):
            self.build(family_doc("euler", "graph-local", J=3, sigma=[1, 0, 2], variant="hard"))

    def test_euler_needs_sigma(self):
        with self.assertRaises(SpecError):
            self.build(family_doc("euler", "global-isbp", J=3))

    def test_spline_needs_velocity_grid(self):
        doc = family_doc("spline", "graph-local", J=2)
        del doc["grid_v"]
        with self.assertRaises(SpecError):
            self.build(doc)

    def test_custom_tree(self):
        p = self.build(custom_tree_doc())
        self.assertEqual(p.tree.constrained, frozenset({1, 2}))
        np.testing.assert_array_equal(p.costs[(0, 1)], [[0, 1], [1, 0]])

    def test_custom_tree_needs_vector_map(self):
        doc = custom_tree_doc()
        doc["marginals"] = {"vectors": [[0.5, 0.5], [0.3, 0.7]]}
        with self.assertRaises(SpecError):
            self.build(doc)

    def test_custom_cost_size_mismatch(self):
        doc = custom_tree_doc()
        doc["problem"]["costs"][0]["values"] = [0, 1, 1]
        with self.assertRaises(SpecError) as ctx:
            self.build(doc)
        self.assertIn("problem.costs[0]", str(ctx.exception))

    def test_custom_unknown_entry_key(self):
        doc = custom_tree_doc()
        doc["problem"]["costs"][0]["weight"] = 2
        with self.assertRaises(SpecError) as ctx:
            self.build(doc)
        self.assertIn("unknown key 'problem.costs[0].weight'", str(ctx.exception))

    def test_custom_junction_tree(self):
        p = self.build(custom_jt_doc())
        self.assertIsInstance(p, MotProblem)
        self.assertEqual(p.clique_constraint, {1: 0, 2: 1})


class TestCollectViolations(unittest.TestCase):

    def test_valid(self):
        self.assertEqual(collect_violations(parse_spec(custom_tree_doc())), [])

    def test_zero_marginal_names_node(self):
        out = collect_violations(parse_spec(custom_tree_doc(mu2=(1.0, 0.0))))
        self.assertEqual(len(out), 1)
        self.assertIn("node 2", str(out[0]))

    def test_clique_degree(self):
        doc = custom_mjt_doc([pair([1, 2])], [{"labels": [1]}, {"labels": [2]}, {"labels": [1, 2]}],
                             [[0, 0], [0, 1], [0, 2]])
        rules = [v.rule for v in collect_violations(parse_spec(doc))]
        self.assertIn("Def4.4", rules)

    def test_inclusion(self):
        doc = custom_mjt_doc(
            [pair([1, 3]), pair([2, 4])],
            [{"labels": [1, 2]}, {"labels": [3], "mu": [0.5, 0.5]}, {"labels": [4], "mu": [0.5, 0.5]}],
            [[0, 0], [1, 0], [0, 1], [1, 2]],
        )
        rules = [v.rule for v in collect_violations(parse_spec(doc))]
        self.assertIn("Assumption1", rules)

    def test_spec_errors_become_violations(self):
        out = collect_violations(parse_spec(family_doc("wls", "tree-local", J=3)))
        self.assertEqual(out[0].rule, "spec")


class TestRun(unittest.TestCase):

    def test_stopping_threshold(self):
        spec = parse_spec(custom_tree_doc())
        p = build_problem(spec)
        self.assertEqual(stopping_threshold(p, spec.solver), 1e-6)
        spec = parse_spec(custom_tree_doc(delta_prime=None))
        self.assertAlmostEqual(stopping_threshold(p, spec.solver), recipe(0.2, 2, 2, 1.0)[1])

    def test_tree_local_rounds(self):
        result = run_spec(parse_spec(custom_tree_doc()))
        self.assertTrue(result.report.converged)
        self.assertIsNotNone(result.report.rounded_cost)
        np.testing.assert_allclose(result.rounded[(0, 2)].sum(axis=0), [0.3, 0.7], atol=1e-12)
        np.testing.assert_allclose(result.rounded[(0, 1)].sum(axis=0), [0.5, 0.5], atol=1e-12)
        self.assertLessEqual(result.rounding.cost_delta, result.rounding.bound + 1e-12)

    def test_graph_local_on_tree(self):
        result = run_spec(parse_spec(custom_tree_doc(name="graph-local")))
        self.assertTrue(result.report.converged)
        self.assertIsNone(result.rounded)

    def test_isbp_on_junction_tree(self):
        result = run_spec(parse_spec(custom_jt_doc()))
        self.assertTrue(result.report.converged)
        np.testing.assert_allclose(result.report.plans[2].values, [0.3, 0.7], atol=1e-9)

    def test_dense(self):
        doc = custom_jt_doc()
        doc["solver"]["name"] = "dense"
        result = run_spec(parse_spec(doc))
        self.assertTrue(result.report.converged)
        self.assertEqual(result.report.solver, "dense")

    def test_isbp_needs_cliques(self):
        doc = custom_jt_doc()
        for key in ("cliques", "clique_edges", "constrained_cliques"):
            del doc["problem"][key]
        with self.assertRaises(SpecError):
            run_spec(parse_spec(doc))

    def test_max_iter(self):
        spec = parse_spec(custom_tree_doc(delta_prime=0.0, max_iter=3))
        with self.assertWarns(ConvergenceWarning):
            result = run_spec(spec)
        self.assertFalse(result.report.converged)
        self.assertEqual(result.report.iterations, 3)


if __name__ == '__main__':
    unittest.main()
