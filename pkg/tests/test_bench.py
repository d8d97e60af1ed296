import unittest
import sys
import os
import math
import tempfile

import numpy as np

# Add project root to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core import config
from core.bench import (
    BENCH_COLUMNS,
    BenchOrchestrator,
    BenchRow,
    complexity_scales,
    fit_log_trend,
    iteration_ratios,
)
from core.errors import SpecError
from core.spec_file import parse_spec


def bench_doc(family="barycenter", vary="d", values=(3,), fixed=2, solvers=("tree-local",), **extra):
    problem = {"family": family}
    problem.update(extra)
    return {
        "format_version": 1,
        "problem": problem,
        "grid": {"d": 4},
        "solver": {"epsilon": 0.5, "delta_prime": 1e-4},
        "bench": {"vary": vary, "values": list(values), "fixed": fixed, "seeds": [0, 1], "solvers": list(solvers)},
    }


def row(solver, value, iterations):
    return BenchRow(solver, "edges", value, value, 3, value, (0,), iterations, [True] * len(iterations),
                    None, 1.0, 1.0, 2, 1)


class TestScales(unittest.TestCase):

    def test_complexity_scales(self):
        local, global_ = complexity_scales(4, 3, 2.0, 8, 0.5)
        base = 4.0 * math.log(8) / 0.25
        self.assertAlmostEqual(local, 16 * base)
        self.assertAlmostEqual(global_, 4 * 9 * base)

    def test_fit_log_trend(self):
        values = [2, 4, 8, 16]
        means = [1.0 + 3.0 * math.log(v) for v in values]
        a, b, r2 = fit_log_trend(values, means)
        self.assertAlmostEqual(a, 1.0)
        self.assertAlmostEqual(b, 3.0)
        self.assertAlmostEqual(r2, 1.0)

    def test_iteration_ratios(self):
        rows = [row("tree-local", 3, [2, 4]), row("global-isbp", 3, [6, 12]), row("tree-local", 5, [5])]
        self.assertEqual(iteration_ratios(rows), {3: 3.0})

    def test_row_dict(self):
        d = row("tree-local", 3, [2, 4]).as_dict()
        self.assertEqual(list(d), BENCH_COLUMNS)
        self.assertEqual(d["iterations"], "2;4")
        self.assertEqual(d["mean_iterations"], 3.0)
        self.assertEqual(d["converged"], 2)


class TestBenchOrchestrator(unittest.TestCase):

    def test_needs_bench_section(self):
        doc = bench_doc()
        del doc["bench"]
        with self.assertRaises(SpecError):
            BenchOrchestrator(parse_spec(doc))

    def test_unsupported_family(self):
        with self.assertRaises(SpecError):
            BenchOrchestrator(parse_spec(bench_doc("euler", J=3, sigma=[0, 1, 2])))

    def test_point_spec(self):
        bench = BenchOrchestrator(parse_spec(bench_doc(vary="edges", values=(5,), fixed=6)))
        point = bench.point_spec("global-isbp", 5, 3)
        self.assertEqual(point.problem["n_leaves"], 5)
        self.assertEqual(point.grid.d, 6)
        self.assertEqual(point.marginals.seed, 3)
        self.assertEqual(point.solver.seed, 3)
        self.assertEqual(point.solver.name, "global-isbp")

    def test_single_point(self):
        messages = []
        bench = BenchOrchestrator(parse_spec(bench_doc()), log_fn=messages.append)
        rows = bench.run()
        self.assertEqual(len(rows), 1)
        r = rows[0]
        self.assertEqual((r.solver, r.value, r.d, r.n_edges, r.n_constrained, r.diameter), ("tree-local", 3, 3, 2, 2, 2))
        self.assertEqual(len(r.iterations), 2)
        self.assertTrue(all(r.converged))
        self.assertIsNotNone(r.iteration_bound)
        self.assertEqual(len(messages), 1)

    def test_csv_is_deterministic(self):
        spec = parse_spec(bench_doc(values=(3, 4), solvers=("tree-local", "global-isbp")))
        with tempfile.TemporaryDirectory() as tmp:
            paths = []
            for name in ("a.csv", "b.csv"):
                rows = BenchOrchestrator(spec).run()
                paths.append(BenchOrchestrator.write(rows, os.path.join(tmp, name)))
            with open(paths[0], encoding="utf-8") as fa, open(paths[1], encoding="utf-8") as fb:
                self.assertEqual(fa.read(), fb.read())

    def test_parallel_points_match_serial(self):
        doc = bench_doc(values=(3, 4), solvers=("tree-local", "global-isbp"))
        serial = BenchOrchestrator(parse_spec(doc)).run()
        doc["bench"]["parallel_points"] = True
        parallel = BenchOrchestrator(parse_spec(doc)).run()
        self.assertEqual([r.as_dict() for r in serial], [r.as_dict() for r in parallel])

    def test_wls_edges_sweep(self):
        doc = bench_doc("wls", vary="edges", values=(2, 3), fixed=3, solvers=("graph-local",), J=5)
        rows = BenchOrchestrator(parse_spec(doc)).run()
        self.assertEqual([r.n_edges for r in rows], [2, 3])
        self.assertTrue(all(all(r.converged) for r in rows))
        self.assertIsNone(rows[0].iteration_bound)
        self.assertIsNone(rows[0].diameter)
        self.assertTrue(np.isfinite(rows[0].local_scale))


@unittest.skipUnless(config.SLOW_TESTS, "set GRAPHOT_SLOW_TESTS=1 for trend runs")
class TestIterationTrends(unittest.TestCase):

    def sweep(self, vary, values, fixed):
        doc = bench_doc(vary=vary, values=values, fixed=fixed, solvers=("tree-local", "global-isbp"))
        doc["grid"] = {"d": 8}
        doc["solver"] = {"delta": 0.2, "log_domain": True}
        doc["bench"]["seeds"] = [0, 1, 2]
        doc["bench"]["parallel_points"] = True
        return BenchOrchestrator(parse_spec(doc)).run()

    def check(self, rows, values):
        self.assertTrue(all(all(r.converged) for r in rows))
        local = [r.mean_iterations for r in rows if r.solver == "tree-local"]
        _, _, r2 = fit_log_trend(values, local)
        self.assertFalse(r2 > 1.0 + 1e-9)
        ratios = iteration_ratios(rows)
        self.assertEqual(sorted(ratios), list(values))
        self.assertTrue(all(v > 0 for v in ratios.values()))

    def test_grid_size_sweep(self):
        values = (8, 16, 32, 64)
        self.check(self.sweep("d", values, 3), values)

    def test_edge_count_sweep(self):
        values = (2, 4, 6, 8)
        self.check(self.sweep("edges", values, 16), values)


if __name__ == '__main__':
    unittest.main()
