# core/rounding.py
# Feasibility restoration for approximate transport plans

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Mapping, Optional, Tuple

import numpy as np

from core.errors import ContractError
from core.executor import ExecutionEngine
from core.graph import Edge
from core.tree_local import TreeProblem, transport_cost

logger = logging.getLogger(__name__)

MASS_TOL = 1e-12
DEFICIT_TOL = 1e-15


def round_bimarginal(B: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Return B̂ with rows summing to r and the column sums of B."""
    B = np.asarray(B, dtype=float)
    r = np.asarray(r, dtype=float)
    if B.ndim != 2 or r.shape != (B.shape[0],):
        raise ContractError(f"plan of shape {B.shape} and row target of shape {r.shape} do not match")
    if np.any(B < 0) or not B.any():
        raise ContractError("plan must be non-negative and non-zero")
    c = B.sum(axis=0)
    if abs(r.sum() - c.sum()) > MASS_TOL:
        raise ContractError(f"row target mass {r.sum():.15g} differs from plan mass {c.sum():.15g}")

    rows = B.sum(axis=1)
    x = np.minimum(1.0, np.divide(r, rows, out=np.ones_like(r), where=rows > 0))
    F = B * x[:, None]
    cols = F.sum(axis=0)
    y = np.minimum(1.0, np.divide(c, cols, out=np.ones_like(c), where=cols > 0))
    F = F * y[None, :]

    err_r = r - F.sum(axis=1)
    err_c = c - F.sum(axis=0)
    mass = err_r.sum()
    if mass <= DEFICIT_TOL:
        return F
    return F + np.outer(err_r, err_c) / mass


@dataclass
class RoundReport:
    mass_moved: Dict[Edge, float] = field(default_factory=dict)
    cost_delta: float = 0.0
    bound: float = 0.0


def _rows_oriented(plans: Mapping[Edge, np.ndarray], j: int, k: int) -> np.ndarray:
    return plans[(j, k)] if (j, k) in plans else plans[(k, j)].T


def deviation_bound(p: TreeProblem, plans: Mapping[Edge, np.ndarray]) -> float:
    """2C∞·(Σ_Γ‖μ_j − B1‖₁ + Σ_free Σ_k‖q̄_j − B1‖₁)."""
    total = 0.0
    for j in p.tree.vertices:
        if j in p.tree.constrained:
            k = p.constrained_neighbor(j)
            total += float(np.abs(p.marginals[j] - _rows_oriented(plans, j, k).sum(axis=1)).sum())
        else:
            qs = [_rows_oriented(plans, j, k).sum(axis=1) for k in p.tree.neighbors(j)]
            q_bar = np.mean(qs, axis=0)
            total += float(sum(np.abs(q_bar - q).sum() for q in qs))
    return 2.0 * p.c_inf * total


def _round_node(p: TreeProblem, plans: Mapping[Edge, np.ndarray], j: int) -> Dict[Edge, np.ndarray]:
    if j in p.tree.constrained:
        k = p.constrained_neighbor(j)
        return {(j, k): round_bimarginal(_rows_oriented(plans, j, k), p.marginals[j])}
    nbrs = p.tree.neighbors(j)
    oriented = {k: _rows_oriented(plans, j, k) for k in nbrs}
    q_bar = np.mean([B.sum(axis=1) for B in oriented.values()], axis=0)
    return {(j, k): round_bimarginal(B, q_bar * (B.sum() / q_bar.sum())) for k, B in oriented.items()}


def round_tree(p: TreeProblem, plans: Mapping[Edge, np.ndarray], side: Iterable[int],
               threads: Optional[int] = None) -> Tuple[Dict[Edge, np.ndarray], RoundReport]:
    """Round every plan touching the mismatched partition `side`; the other side's marginals are kept."""
    side = sorted(side)
    engine = ExecutionEngine.instance(threads)
    report = RoundReport(bound=deviation_bound(p, plans))
    results = engine.map_ordered(lambda j: _round_node(p, plans, j), side)

    out: Dict[Edge, np.ndarray] = {e: np.array(B, dtype=float) for e, B in plans.items()}
    for rounded in results:
        for (j, k), B_hat in rounded.items():
            edge = (min(j, k), max(j, k))
            canon = B_hat if j < k else B_hat.T
            report.mass_moved[edge] = float(np.abs(canon - out[edge]).sum())
            out[edge] = canon
    report.cost_delta = abs(transport_cost(p, out) - transport_cost(p, plans))
    logger.debug("Rounded %d nodes: cost delta %.3e (bound %.3e)", len(side), report.cost_delta, report.bound)
    return out, report


def round_solution(p: TreeProblem, plans: Mapping[Edge, np.ndarray], side: FrozenSet[int],
                   other: FrozenSet[int], iterations: int,
                   threads: Optional[int] = None) -> Tuple[Dict[Edge, np.ndarray], RoundReport]:
    """Round after a solve; with no completed iteration both partitions are rounded in turn."""
    if iterations == 0:
        plans = {e: B / B.sum() for e, B in plans.items()}
    rounded, report = round_tree(p, plans, side, threads)
    if iterations == 0:
        rounded, second = round_tree(p, rounded, other, threads)
        for e, moved in second.mass_moved.items():
            report.mass_moved[e] = report.mass_moved.get(e, 0.0) + moved
        report.cost_delta = abs(transport_cost(p, rounded) - transport_cost(p, plans))
    return rounded, report
