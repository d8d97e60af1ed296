# core/lp_oracle.py
# Exact unregularized optimum of small instances via linear programming

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Union

import numpy as np
from scipy.optimize import linprog

from core.errors import DenseCapError, NumericError
from core.graph import Edge
from core.mot_global import MotProblem
from core.tensor import LabeledTensor, dense_size
from core.tree_local import TreeProblem

logger = logging.getLogger(__name__)

LP_CAP = 4096


@dataclass
class OracleResult:
    cost: float
    plans: Dict


def _solve(c: np.ndarray, A_eq: np.ndarray, b_eq: np.ndarray) -> np.ndarray:
    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericError(f"LP oracle failed (status {res.status}): {res.message}")
    logger.debug("LP oracle: %d variables, %d equalities, optimum %.12g", c.size, b_eq.size, res.fun)
    return res.x


def _check_cap(n: int) -> None:
    if n > LP_CAP:
        raise DenseCapError(
            f"LP would have {n} variables (cap {LP_CAP}); shrink d or the number of marginals for oracle runs"
        )


def tree_lp(p: TreeProblem) -> OracleResult:
    """Coupled bi-marginal LP: constrained row sums, equal node marginals around free nodes, unit mass per edge."""
    edges = list(p.tree.edges)
    offsets: Dict[Edge, int] = {}
    n = 0
    for (j, k) in edges:
        offsets[(j, k)] = n
        n += p.sizes[j] * p.sizes[k]
    _check_cap(n)

    def node_marginal_rows(j: int, k: int) -> np.ndarray:
        """Matrix mapping the variables of edge {j,k} to the node-j marginal."""
        a, b = (j, k) if j < k else (k, j)
        da, db = p.sizes[a], p.sizes[b]
        rows = np.zeros((p.sizes[j], n))
        block = np.arange(da * db).reshape(da, db) + offsets[(a, b)]
        for x in range(p.sizes[j]):
            idx = block[x, :] if j == a else block[:, x]
            rows[x, idx] = 1.0
        return rows

    A: List[np.ndarray] = []
    b: List[np.ndarray] = []
    for j in p.tree.vertices:
        nbrs = p.tree.neighbors(j)
        if j in p.tree.constrained:
            A.append(node_marginal_rows(j, nbrs[0]))
            b.append(p.marginals[j])
            continue
        first = node_marginal_rows(j, nbrs[0])
        for k in nbrs[1:]:
            A.append(first - node_marginal_rows(j, k))
            b.append(np.zeros(p.sizes[j]))
    for (j, k) in edges:
        row = np.zeros((1, n))
        row[0, offsets[(j, k)]:offsets[(j, k)] + p.sizes[j] * p.sizes[k]] = 1.0
        A.append(row)
        b.append(np.ones(1))

    c = np.concatenate([p.costs[e].ravel() for e in edges])
    x = _solve(c, np.vstack(A), np.concatenate(b))
    plans = {
        (j, k): x[offsets[(j, k)]:offsets[(j, k)] + p.sizes[j] * p.sizes[k]].reshape(p.sizes[j], p.sizes[k])
        for (j, k) in edges
    }
    return OracleResult(float(c @ x), plans)


def mot_lp(p: MotProblem) -> OracleResult:
    """Dense multi-marginal LP over the full tensor."""
    labels = p.labels
    shape = tuple(p.sizes[a] for a in labels)
    n = dense_size(p.sizes, labels)
    _check_cap(n)
    full_index = np.unravel_index(np.arange(n), shape)

    A: List[np.ndarray] = []
    b: List[np.ndarray] = []
    for mu in p.constraints:
        axes = [labels.index(a) for a in mu.labels]
        sub_shape = tuple(shape[i] for i in axes)
        rows = np.ravel_multi_index(tuple(full_index[i] for i in axes), sub_shape)
        block = np.zeros((int(np.prod(sub_shape)), n))
        block[rows, np.arange(n)] = 1.0
        A.append(block)
        b.append(mu.values.ravel())

    c = p.full_cost().values.ravel()
    x = _solve(c, np.vstack(A), np.concatenate(b))
    return OracleResult(float(c @ x), {labels: LabeledTensor(labels, x.reshape(shape))})


def lp_oracle(p: Union[TreeProblem, MotProblem]) -> OracleResult:
    if isinstance(p, TreeProblem):
        return tree_lp(p)
    return mot_lp(p)
