# core/reporting.py
# Solve reports and CSV emission

from __future__ import annotations

import csv
import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, TextIO

from core.config import FORMAT_VERSION
from core.errors import ConvergenceWarning

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["format_version", "iteration", "residual", "dual", "elapsed"]
SUMMARY_COLUMNS = [
    "format_version", "solver", "converged", "iterations", "final_residual", "final_dual",
    "cost", "regularized_cost", "rounded_cost", "iteration_bound", "epsilon", "delta_prime",
    "threads", "wall_clock",
]


@dataclass
class SolveReport:
    """Outcome of one solver run. Index 0 of each trace is the initial state."""

    solver: str
    converged: bool = False
    iterations: int = 0
    residuals: List[float] = field(default_factory=list)
    duals: List[float] = field(default_factory=list)
    elapsed: List[float] = field(default_factory=list)
    cost: Optional[float] = None
    regularized_cost: Optional[float] = None
    rounded_cost: Optional[float] = None
    iteration_bound: Optional[float] = None
    wall_clock: float = 0.0
    threads: int = 1
    epsilon: Optional[float] = None
    delta_prime: Optional[float] = None
    plans: Dict[Any, Any] = field(default_factory=dict)
    state: Any = field(default=None, repr=False)

    @property
    def final_residual(self) -> Optional[float]:
        return self.residuals[-1] if self.residuals else None

    @property
    def final_dual(self) -> Optional[float]:
        return self.duals[-1] if self.duals else None

    def record(self, residual: float, dual: Optional[float], elapsed: float):
        self.residuals.append(float(residual))
        if dual is not None:
            self.duals.append(float(dual))
        self.elapsed.append(float(elapsed))

    def summary(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "solver": self.solver,
            "converged": int(self.converged),
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "final_dual": self.final_dual,
            "cost": self.cost,
            "regularized_cost": self.regularized_cost,
            "rounded_cost": self.rounded_cost,
            "iteration_bound": self.iteration_bound,
            "epsilon": self.epsilon,
            "delta_prime": self.delta_prime,
            "threads": self.threads,
            "wall_clock": self.wall_clock,
        }


def iteration_bound(n_edges: int, c_inf: float, delta_prime: float, epsilon: float) -> float:
    """Iteration count within which the tree-local residual drops below δ′.

    δ′ = 0 (run to max_iter) has no finite bound.
    """
    if delta_prime * epsilon <= 0:
        return float("inf")
    return 2.0 + 88.0 * n_edges * c_inf / (delta_prime * epsilon)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_rows(fh: TextIO, columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])


def write_rows(path: str, columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> str:
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        emit_rows(fh, columns, rows)
    logger.debug("Wrote %d rows to %s", len(rows), path)
    return path


def trace_rows(report: SolveReport) -> List[Dict[str, Any]]:
    rows = []
    for t, residual in enumerate(report.residuals):
        rows.append({
            "format_version": FORMAT_VERSION,
            "iteration": t,
            "residual": residual,
            "dual": report.duals[t] if t < len(report.duals) else None,
            "elapsed": report.elapsed[t] if t < len(report.elapsed) else None,
        })
    return rows


def write_trace_csv(report: SolveReport, path: str) -> str:
    return write_rows(path, TRACE_COLUMNS, trace_rows(report))


def summary_path(path: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}.summary{ext or '.csv'}"


def write_summary_csv(report: SolveReport, path: str) -> str:
    return write_rows(path, SUMMARY_COLUMNS, [report.summary()])


def log_outcome(report: SolveReport) -> None:
    if report.converged:
        logger.info("%s converged in %d iterations (residual %.3e, cost %s)",
                    report.solver, report.iterations, report.final_residual, report.cost)
        return
    logger.warning("%s stopped at max_iter=%d with residual %.3e",
                   report.solver, report.iterations, report.final_residual)
    warnings.warn(f"{report.solver} did not converge within {report.iterations} iterations",
                  ConvergenceWarning, stacklevel=3)
