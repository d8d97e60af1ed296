# core/bench.py
# Iteration-count sweeps over d or |E|, with theoretical-bound columns.

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from core.config import FORMAT_VERSION
from core.errors import SpecError
from core.reporting import write_rows
from core.runner import build_problem, run_problem
from core.spec_file import BenchOptions, ProblemSpec
from core.tree_local import TreeProblem

logger = logging.getLogger(__name__)

LogCallback = Callable[[str], None]

BENCH_COLUMNS = [
    "format_version", "solver", "vary", "value", "n_edges", "d", "n_constrained", "seeds",
    "mean_iterations", "iterations", "converged", "iteration_bound", "local_scale", "global_scale",
    "diameter", "threads",
]

# families whose size parameter plays the role of |E|
EDGE_PARAM = {"barycenter": "n_leaves", "wls": "J"}


@dataclass
class BenchRow:
    solver: str
    vary: str
    value: int
    n_edges: int
    d: int
    n_constrained: int
    seeds: Tuple[int, ...]
    iterations: List[int]
    converged: List[bool]
    iteration_bound: Optional[float]
    local_scale: float
    global_scale: float
    diameter: Optional[int]
    threads: int

    @property
    def mean_iterations(self) -> float:
        return float(np.mean(self.iterations))

    def as_dict(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "solver": self.solver,
            "vary": self.vary,
            "value": self.value,
            "n_edges": self.n_edges,
            "d": self.d,
            "n_constrained": self.n_constrained,
            "seeds": ";".join(str(s) for s in self.seeds),
            "mean_iterations": self.mean_iterations,
            "iterations": ";".join(str(t) for t in self.iterations),
            "converged": sum(self.converged),
            "iteration_bound": self.iteration_bound,
            "local_scale": self.local_scale,
            "global_scale": self.global_scale,
            "diameter": self.diameter,
            "threads": self.threads,
        }


def complexity_scales(n_edges: int, n_constrained: int, c_inf: float, d: int, delta: float) -> Tuple[float, float]:
    """(|E|²C_∞² log d / δ², |E||Γ|²C_∞² log d / δ²): local vs global regularization."""
    base = c_inf ** 2 * math.log(max(d, 2)) / delta ** 2
    return n_edges ** 2 * base, n_edges * n_constrained ** 2 * base


def fit_log_trend(values: Sequence[float], means: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares fit means ≈ a + b·log(values); returns (a, b, R²)."""
    fit = stats.linregress(np.log(np.asarray(values, dtype=float)), np.asarray(means, dtype=float))
    return float(fit.intercept), float(fit.slope), float(fit.rvalue ** 2)


class BenchOrchestrator:
    """Runs every (solver, sweep point, seed) solve of a bench spec."""

    def __init__(self, spec: ProblemSpec, log_fn: Optional[LogCallback] = None):
        if spec.bench is None:
            raise SpecError(f"{spec.source}: no bench section")
        if spec.family not in EDGE_PARAM:
            raise SpecError(f"bench sweeps support {', '.join(EDGE_PARAM)} problems, not {spec.family}")
        self.spec = spec
        self.options: BenchOptions = spec.bench
        self.log = log_fn or (lambda msg: None)

    def point_spec(self, solver: str, value: int, seed: int) -> ProblemSpec:
        opts = self.options
        n_edges, d = (opts.fixed, value) if opts.vary == "d" else (value, opts.fixed)
        problem = dict(self.spec.problem)
        problem[EDGE_PARAM[self.spec.family]] = n_edges
        if self.spec.family == "wls":
            problem.pop("times", None)
        return replace(
            self.spec,
            problem=problem,
            grid=replace(self.spec.grid, d=d),
            marginals=replace(self.spec.marginals, seed=seed),
            solver=replace(self.spec.solver, name=solver, seed=seed),
        )

    def _reference(self, value: int) -> Any:
        """Pairwise form of the sweep point, used for C_∞, |Γ| and d(G)."""
        name = "tree-local" if self.spec.family == "barycenter" else "graph-local"
        return build_problem(self.point_spec(name, value, self.options.seeds[0]))

    def run_point(self, solver: str, value: int) -> BenchRow:
        opts = self.options
        iterations, converged, bounds = [], [], []
        for seed in opts.seeds:
            point = self.point_spec(solver, value, seed)
            result = run_problem(build_problem(point), point.solver)
            iterations.append(result.report.iterations)
            converged.append(result.report.converged)
            if result.report.iteration_bound is not None:
                bounds.append(result.report.iteration_bound)

        ref = self._reference(value)
        if isinstance(ref, TreeProblem):
            n_constrained, diameter = len(ref.tree.constrained), ref.tree.diameter()
        else:
            n_constrained, diameter = len(ref.mjt.constraints), None
        local, global_ = complexity_scales(ref.n_edges, n_constrained, ref.c_inf, ref.d, self.spec.solver.delta)
        row = BenchRow(
            solver=solver,
            vary=opts.vary,
            value=value,
            n_edges=ref.n_edges,
            d=ref.d,
            n_constrained=n_constrained,
            seeds=tuple(opts.seeds),
            iterations=iterations,
            converged=converged,
            iteration_bound=min(bounds) if bounds else None,
            local_scale=local,
            global_scale=global_,
            diameter=diameter,
            threads=self.spec.solver.threads,
        )
        self.log(f"[bench] {solver} {opts.vary}={value}: mean iterations {row.mean_iterations:.1f}")
        return row

    def run(self) -> List[BenchRow]:
        points = [(solver, value) for solver in self.options.solvers for value in self.options.values]
        logger.info("Bench sweep: %d points x %d seeds", len(points), len(self.options.seeds))
        if not self.options.parallel_points or len(points) < 2:
            return [self.run_point(s, v) for s, v in points]
        with ThreadPoolExecutor(max_workers=len(points), thread_name_prefix="graphot-bench") as pool:
            return list(pool.map(lambda sv: self.run_point(*sv), points))

    @staticmethod
    def write(rows: Sequence[BenchRow], path: str) -> str:
        return write_rows(path, BENCH_COLUMNS, [r.as_dict() for r in rows])


def iteration_ratios(rows: Sequence[BenchRow], numerator: str = "global-isbp",
                     denominator: str = "tree-local") -> Dict[int, float]:
    """Mean-iteration ratio numerator/denominator per sweep value."""
    by = {(r.solver, r.value): r.mean_iterations for r in rows}
    return {
        value: by[(numerator, value)] / by[(denominator, value)]
        for (solver, value) in sorted(by)
        if solver == denominator and (numerator, value) in by and by[(denominator, value)] > 0
    }
