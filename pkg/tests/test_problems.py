import unittest
import sys
import os

import numpy as np
from scipy import stats

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.errors import ContractError, ValidationError
from core.graph import validate_jt
from core.problems import (
    GridSpec,
    MarginalGen,
    barycenter_problem,
    euler_problem,
    lognormal_marginals,
    make_marginals,
    position,
    spline_clique_cost,
    spline_problem,
    squared_distance,
    tree_to_graph_local,
    tree_to_mot,
    velocity,
    wls_clique_cost,
    wls_problem,
)
from core.tree_local import recipe


class TestGrid(unittest.TestCase):

    def test_points(self):
        np.testing.assert_allclose(GridSpec(3).points(), [0.0, 0.5, 1.0])
        np.testing.assert_allclose(GridSpec(1, lo=2.0, hi=3.0).points(), [2.0])

    def test_invalid(self):
        with self.assertRaises(ValidationError):
            GridSpec(0)
        with self.assertRaises(ValidationError):
            GridSpec(3, lo=1.0, hi=1.0)


class TestMarginals(unittest.TestCase):

    def test_lognormal_positive_and_normalized(self):
        for mu in make_marginals(MarginalGen(seed=3), GridSpec(10), 4):
            self.assertEqual(mu.shape, (10,))
            self.assertTrue(np.all(mu > 0))
            self.assertAlmostEqual(mu.sum(), 1.0, places=12)

    def test_lognormal_uses_cell_centres(self):
        gen = MarginalGen(seed=4, location=0.2, scale=0.7)
        got = lognormal_marginals(gen, GridSpec(5), 1)[0]
        shift = np.random.default_rng(4).uniform(-0.5, 0.5)
        x = (np.arange(5) + 0.5) / 5
        dens = stats.lognorm(s=0.7, scale=np.exp(0.2 + shift)).pdf(x)
        np.testing.assert_allclose(got, dens / dens.sum(), rtol=1e-12)
        shifted = lognormal_marginals(gen, GridSpec(5, lo=-3.0, hi=3.0), 1)[0]
        np.testing.assert_array_equal(got, shifted)

    def test_seeded(self):
        a = make_marginals(MarginalGen(seed=5), GridSpec(6), 3)
        b = make_marginals(MarginalGen(seed=5), GridSpec(6), 3)
        c = make_marginals(MarginalGen(seed=6), GridSpec(6), 3)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        self.assertFalse(np.allclose(a[0], c[0]))

    def test_explicit(self):
        gen = MarginalGen(kind="explicit", vectors=((0.5, 0.5), (0.2, 0.8)))
        out = make_marginals(gen, GridSpec(2), 2)
        np.testing.assert_array_equal(out[1], [0.2, 0.8])
        with self.assertRaises(ValidationError):
            make_marginals(gen, GridSpec(2), 3)

    def test_unknown_kind(self):
        with self.assertRaises(ValidationError):
            make_marginals(MarginalGen(kind="gaussian"), GridSpec(2), 1)


class TestBarycenter(unittest.TestCase):

    def test_star_structure(self):
        p = barycenter_problem(3, GridSpec(4), MarginalGen(), epsilon=0.1)
        self.assertEqual(p.tree.free, (0,))
        self.assertEqual(p.tree.constrained, frozenset({1, 2, 3}))
        g = GridSpec(4).points()
        np.testing.assert_allclose(p.costs[(0, 2)], squared_distance(g, g))
        self.assertEqual(p.epsilon, 0.1)

    def test_recipe_epsilon(self):
        p = barycenter_problem(3, GridSpec(5), MarginalGen(), delta=0.2)
        self.assertAlmostEqual(p.epsilon, recipe(0.2, 3, 5, 1.0)[0])

    def test_needs_two_leaves(self):
        with self.assertRaises(ContractError):
            barycenter_problem(1, GridSpec(3), MarginalGen())

    def test_conversions_validate(self):
        p = barycenter_problem(3, GridSpec(3), MarginalGen(), epsilon=0.5)
        mot = tree_to_mot(p)
        self.assertEqual(len(mot.constraints), 3)
        self.assertEqual(validate_jt(mot.junction_tree), [])
        local = tree_to_graph_local(p)
        self.assertEqual(len(local.mjt.cost_cliques), 3)
        self.assertEqual(sorted(local.mjt.constraints), [1, 2, 3])


class TestEuler(unittest.TestCase):

    def test_relaxed(self):
        inst = euler_problem(4, GridSpec(3), [2, 0, 1], epsilon=1.0)
        self.assertEqual(len(inst.mot.costs), 4)
        self.assertEqual(len(inst.mot.constraints), 4)
        self.assertIsNotNone(inst.graph_local)
        self.assertEqual(len(inst.graph_local.mjt.cost_cliques), 3)
        for mu in inst.mot.constraints:
            np.testing.assert_allclose(mu.values, np.full(3, 1 / 3))

    def test_penalty_scales_final_cost(self):
        a = euler_problem(3, GridSpec(3), [2, 0, 1], epsilon=1.0, penalty=1.0).mot
        b = euler_problem(3, GridSpec(3), [2, 0, 1], epsilon=1.0, penalty=4.0).mot
        np.testing.assert_allclose(b.costs[-1].values, 4.0 * a.costs[-1].values)

    def test_hard_variant(self):
        with self.assertLogs("core.mot_global", level="WARNING"):
            inst = euler_problem(3, GridSpec(2), [1, 0], variant="hard", epsilon=1.0)
        self.assertIsNone(inst.graph_local)
        self.assertEqual(len(inst.mot.costs), 2)
        perm = inst.mot.constraints[-1].values
        self.assertAlmostEqual(perm[0, 1], 0.5)
        self.assertLess(perm[0, 0], 1e-200)

    def test_bad_permutation(self):
        with self.assertRaises(ValidationError):
            euler_problem(3, GridSpec(3), [0, 0, 1])
        with self.assertRaises(ValidationError):
            euler_problem(3, GridSpec(3), [0, 1])

    def test_too_short(self):
        with self.assertRaises(ContractError):
            euler_problem(2, GridSpec(3), [0, 1, 2])

    def test_unknown_variant(self):
        with self.assertRaises(ValidationError):
            euler_problem(3, GridSpec(3), [0, 1, 2], variant="soft")


class TestWls(unittest.TestCase):

    def test_clique_cost(self):
        g = GridSpec(3).points()
        C = wls_clique_cost(g, 0.25, 10.0, 4)
        a, b, c = 2, 1, 0
        expected = (g[b] - 0.75 * g[a] - 0.25 * g[c]) ** 2 + 2.5 * (g[a] - g[c]) ** 2
        self.assertAlmostEqual(C[a, b, c], expected)

    def test_structure(self):
        inst = wls_problem(3, [0.0, 0.4, 1.0], GridSpec(3), MarginalGen(), epsilon=0.5)
        mjt = inst.graph_local.mjt
        self.assertEqual(mjt.separators[0], frozenset({0, 4}))
        self.assertNotIn(0, mjt.constraints)
        self.assertEqual(sorted(mjt.constraints), [1, 2, 3])
        self.assertEqual(len(inst.mot.constraints), 3)

    def test_times_checked(self):
        with self.assertRaises(ValidationError):
            wls_problem(3, [0.0, 0.5, 0.5], GridSpec(3), MarginalGen())
        with self.assertRaises(ValidationError):
            wls_problem(2, [0.0, 1.5], GridSpec(3), MarginalGen())
        with self.assertRaises(ValidationError):
            wls_problem(3, [0.0, 1.0], GridSpec(3), MarginalGen())

    def test_alpha_positive(self):
        with self.assertRaises(ValidationError):
            wls_problem(2, None, GridSpec(3), MarginalGen(), alpha=0.0)


class TestSpline(unittest.TestCase):

    def test_labels(self):
        self.assertEqual((position(0), velocity(0), position(2), velocity(2)), (0, 1, 4, 5))

    def test_straight_line_is_free(self):
        C = spline_clique_cost(np.array([0.0, 1.0]), np.array([1.0]), 1.0)
        self.assertAlmostEqual(C[0, 0, 1, 0], 0.0)
        self.assertGreater(C[0, 0, 0, 0], 0.0)

    def test_structure(self):
        inst = spline_problem(3, None, GridSpec(3), GridSpec(2), MarginalGen(), epsilon=1.0)
        mjt = inst.graph_local.mjt
        self.assertEqual(mjt.separators[1], frozenset({2, 3}))
        self.assertEqual(mjt.constraints[1].gamma, (2,))
        self.assertEqual(inst.graph_local.sizes[3], 2)

    def test_times_may_leave_unit_interval(self):
        inst = spline_problem(2, [0.0, 2.0], GridSpec(2), GridSpec(2), MarginalGen(), epsilon=1.0)
        self.assertEqual(len(inst.mot.costs), 1)

    def test_needs_two_points(self):
        with self.assertRaises(ContractError):
            spline_problem(1, None, GridSpec(3), GridSpec(2), MarginalGen())


if __name__ == '__main__':
    unittest.main()
