# core/tree_local.py
# Bipartite iterative scaling on tree-structured coupled bi-marginal OT
#
# Scaling vectors are stored as logarithms in both evaluation modes; the
# mode only changes how kernel-vector products are formed.

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, FrozenSet, List, Mapping, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from core import config
from core.errors import ContractError, NumericError, Violation, raise_if
from core.executor import ExecutionEngine
from core.graph import BipartitePartition, Edge, TreeGraph, two_color, validate_tree
from core.reporting import SolveReport, iteration_bound, log_outcome
from core.tensor import LabeledTensor, rel_entropy

logger = logging.getLogger(__name__)

UNDERFLOW_WARN = 1e-290


def recipe(delta: float, n_edges: int, d: int, c_inf: float) -> Tuple[float, float]:
    """(ε, δ′) giving a δ-approximate solution after rounding."""
    if delta <= 0:
        raise ContractError("delta must be positive")
    if d < 2:
        raise ContractError("the parameter recipe needs at least two support points (log d > 0)")
    if n_edges < 1:
        raise ContractError("the parameter recipe needs at least one edge")
    epsilon = delta / (4.0 * n_edges * math.log(d))
    delta_prime = delta / (8.0 * c_inf) if c_inf > 0 else delta
    return epsilon, delta_prime


def kernel(C: np.ndarray, epsilon: float) -> np.ndarray:
    """exp(−C/ε), refusing kernels with an all-zero row or column."""
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    K = np.exp(-np.asarray(C, dtype=float) / epsilon)
    if K.size and K.max() < UNDERFLOW_WARN:
        logger.warning("Kernel max entry %.3e is near underflow; consider log-domain mode", K.max())
    for axis, name in ((1, "row"), (0, "column")):
        dead = np.flatnonzero(~K.any(axis=axis))
        if dead.size:
            raise NumericError(f"kernel {name} {int(dead[0])} underflowed to zero; use log-domain mode", (int(dead[0]),))
    return K


# ----------------------------------------------------------------
# Problem
# ----------------------------------------------------------------

@dataclass(frozen=True)
class TreeProblem:
    """Coupled bi-marginal OT on a tree. Costs are keyed by canonical edges (j < k), rows indexed by j."""

    tree: TreeGraph
    costs: Mapping[Edge, np.ndarray]
    marginals: Mapping[int, np.ndarray]
    epsilon: float

    @classmethod
    def build(cls, tree: TreeGraph, costs: Mapping[Edge, np.ndarray], marginals: Mapping[int, np.ndarray],
              epsilon: float) -> "TreeProblem":
        canon: Dict[Edge, np.ndarray] = {}
        for (j, k), C in costs.items():
            C = np.asarray(C, dtype=float)
            if j > k:
                j, k, C = k, j, C.T
            canon[(j, k)] = C
        mus = {int(j): np.asarray(m, dtype=float) for j, m in marginals.items()}
        return cls(tree, canon, mus, float(epsilon))

    def __post_init__(self):
        raise_if(validate_tree_problem(self))

    @cached_property
    def sizes(self) -> Dict[int, int]:
        out: Dict[int, int] = {}
        for (j, k), C in self.costs.items():
            out.setdefault(j, C.shape[0])
            out.setdefault(k, C.shape[1])
        return out

    @cached_property
    def c_inf(self) -> float:
        return max((float(np.abs(C).max()) for C in self.costs.values() if C.size), default=0.0)

    @property
    def n_edges(self) -> int:
        return len(self.tree.edges)

    @property
    def d(self) -> int:
        return max(self.sizes.values())

    def cost(self, j: int, k: int) -> np.ndarray:
        """C_(j,k) with rows indexed by j."""
        return self.costs[(j, k)] if j < k else self.costs[(k, j)].T

    def gamma(self, j: int) -> np.ndarray:
        if j in self.tree.constrained:
            return self.marginals[j]
        return np.ones(self.sizes[j])

    def constrained_neighbor(self, j: int) -> int:
        return self.tree.neighbors(j)[0]


def validate_tree_problem(p: TreeProblem) -> List[Violation]:
    out = validate_tree(p.tree)
    if out:
        return out
    edges = set(p.tree.edges)
    for e in sorted(edges - set(p.costs)):
        out.append(Violation("cost", f"edge {e} has no cost matrix", e))
    for e in sorted(set(p.costs) - edges):
        out.append(Violation("cost", f"cost given for {e}, which is not a tree edge", e))
    sizes: Dict[int, int] = {}
    for (j, k), C in sorted(p.costs.items()):
        if C.ndim != 2:
            out.append(Violation("cost", f"cost of edge ({j}, {k}) is not a matrix", (j, k)))
            continue
        if not np.all(np.isfinite(C)):
            out.append(Violation("cost", f"cost of edge ({j}, {k}) has a non-finite entry", (j, k)))
        for node, size in ((j, C.shape[0]), (k, C.shape[1])):
            if sizes.setdefault(node, size) != size:
                out.append(Violation("shape", f"node {node} has size {sizes[node]} and {size} on different edges", (node,)))
    if p.epsilon <= 0 or not math.isfinite(p.epsilon):
        out.append(Violation("epsilon", f"epsilon must be positive, got {p.epsilon}"))
    for j in sorted(p.tree.constrained):
        mu = p.marginals.get(j)
        if mu is None:
            out.append(Violation("marginal", f"constrained node {j} has no marginal", (j,)))
            continue
        if mu.ndim != 1 or (j in sizes and mu.shape[0] != sizes[j]):
            out.append(Violation("shape", f"marginal of node {j} has shape {mu.shape}, node size {sizes.get(j)}", (j,)))
        elif np.any(mu <= 0):
            out.append(Violation("marginal", f"marginal of node {j} has a non-positive entry", (j,)))
        elif abs(mu.sum() - 1.0) > 1e-9:
            out.append(Violation("marginal", f"marginal of node {j} has mass {mu.sum():.12g}, expected 1", (j,)))
    for j in sorted(set(p.marginals) - set(p.tree.constrained)):
        out.append(Violation("marginal", f"marginal given for unconstrained node {j}", (j,)))
    return out


# ----------------------------------------------------------------
# State
# ----------------------------------------------------------------

@dataclass
class EdgeScalingState:
    """log u per directed edge, ρ per free node and cached kernels (log kernels in log-domain mode)."""

    problem: TreeProblem
    log_u: Dict[Edge, np.ndarray]
    rho: Dict[int, float]
    kernels: Dict[Edge, np.ndarray]
    log_domain: bool = False
    iteration: int = 0
    last_updated: Optional[FrozenSet[int]] = None
    log_gamma: Dict[int, np.ndarray] = field(default_factory=dict)

    def u(self, j: int, k: int) -> np.ndarray:
        return np.exp(self.log_u[(j, k)])

    def copy(self) -> "EdgeScalingState":
        return EdgeScalingState(
            self.problem,
            {e: v.copy() for e, v in self.log_u.items()},
            dict(self.rho),
            self.kernels,
            self.log_domain,
            self.iteration,
            self.last_updated,
            self.log_gamma,
        )


def initial_state(p: TreeProblem, log_domain: Optional[bool] = None) -> EdgeScalingState:
    """u ≡ 1, ρ = 0."""
    log_domain = config.LOG_DOMAIN if log_domain is None else log_domain
    kernels: Dict[Edge, np.ndarray] = {}
    for (j, k), C in p.costs.items():
        K = -C / p.epsilon if log_domain else kernel(C, p.epsilon)
        kernels[(j, k)] = K
        kernels[(k, j)] = K.T
    log_u = {(j, k): np.zeros(p.sizes[j]) for (j, k) in p.tree.directed_edges()}
    rho = {j: 0.0 for j in p.tree.free}
    log_gamma = {j: np.log(p.gamma(j)) for j in p.tree.vertices}
    return EdgeScalingState(p, log_u, rho, kernels, bool(log_domain), log_gamma=log_gamma)


def _log_message(state: EdgeScalingState, j: int, k: int) -> np.ndarray:
    """log of K_(j,k)(u_(k,j) ⊙ γ_k)."""
    x = state.log_u[(k, j)] + state.log_gamma[k]
    K = state.kernels[(j, k)]
    if state.log_domain:
        return logsumexp(K + x[None, :], axis=1)
    w = K @ np.exp(x)
    zero = np.flatnonzero(w <= 0)
    if zero.size:
        raise NumericError(f"message into node {j} from {k} underflowed; use log-domain mode", (int(zero[0]),))
    return np.log(w)


def _log_q(state: EdgeScalingState, j: int, k: int) -> np.ndarray:
    """log q_(j,k) = log B_(j,k)1."""
    return state.log_u[(j, k)] + state.log_gamma[j] + _log_message(state, j, k)


def plan(state: EdgeScalingState, edge: Edge) -> np.ndarray:
    j, k = edge
    a = state.log_u[(j, k)] + state.log_gamma[j]
    b = state.log_u[(k, j)] + state.log_gamma[k]
    K = state.kernels[(j, k)]
    if state.log_domain:
        return np.exp(a[:, None] + K + b[None, :])
    return np.exp(a)[:, None] * K * np.exp(b)[None, :]


@dataclass(frozen=True)
class NodeUpdate:
    node: int
    log_u: Dict[Edge, np.ndarray]
    rho: Optional[float] = None


def update_constrained(state: EdgeScalingState, j: int, form: str = "scaling") -> NodeUpdate:
    p = state.problem
    if j not in p.tree.constrained:
        raise ContractError(f"node {j} is not constrained")
    k = p.constrained_neighbor(j)
    lw = _log_message(state, j, k)
    if form == "closed":
        new = -lw
    else:
        lq = state.log_u[(j, k)] + state.log_gamma[j] + lw
        new = state.log_u[(j, k)] + state.log_gamma[j] - lq
    return NodeUpdate(j, {(j, k): new})


def update_free(state: EdgeScalingState, j: int, form: str = "scaling") -> NodeUpdate:
    p = state.problem
    if j in p.tree.constrained:
        raise ContractError(f"node {j} is constrained")
    nbrs = p.tree.neighbors(j)
    lw = {k: _log_message(state, j, k) for k in nbrs}
    n = len(nbrs)
    if form == "closed":
        log_v = np.mean([lw[k] for k in nbrs], axis=0)
        log_mass = float(logsumexp(log_v))
        new = {(j, k): log_v - log_mass - lw[k] for k in nbrs}
        rho = -n * log_mass
    else:
        lq = {k: state.log_u[(j, k)] + lw[k] for k in nbrs}
        log_qj = np.mean([lq[k] for k in nbrs], axis=0)
        log_qj = log_qj - logsumexp(log_qj)
        new = {(j, k): state.log_u[(j, k)] + log_qj - lq[k] for k in nbrs}
        rho = float(np.mean(np.sum([new[(j, k)] for k in nbrs], axis=0)))
    return NodeUpdate(j, new, rho)


def update_node(state: EdgeScalingState, j: int, form: str = "scaling") -> NodeUpdate:
    if j in state.problem.tree.constrained:
        return update_constrained(state, j, form)
    return update_free(state, j, form)


def apply_updates(state: EdgeScalingState, updates: List[NodeUpdate]) -> None:
    for upd in sorted(updates, key=lambda u: u.node):
        state.log_u.update(upd.log_u)
        if upd.rho is not None:
            state.rho[upd.node] = upd.rho


# ----------------------------------------------------------------
# Residual / dual
# ----------------------------------------------------------------

@dataclass(frozen=True)
class Residual:
    constrained: float
    free: float
    per_node: Mapping[int, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.constrained + self.free


def node_residual(state: EdgeScalingState, j: int) -> float:
    p = state.problem
    if j in p.tree.constrained:
        q = np.exp(_log_q(state, j, p.constrained_neighbor(j)))
        return float(np.abs(q - p.marginals[j]).sum())
    qs = [np.exp(_log_q(state, j, k)) for k in p.tree.neighbors(j)]
    q_bar = np.mean(qs, axis=0)
    return float(sum(np.abs(q - q_bar).sum() for q in qs))


def residual(state: EdgeScalingState) -> Residual:
    p = state.problem
    per_node = {j: node_residual(state, j) for j in p.tree.vertices}
    con = sum(v for j, v in per_node.items() if j in p.tree.constrained)
    free = sum(v for j, v in per_node.items() if j not in p.tree.constrained)
    return Residual(con, free, per_node)


def dual_f(state: EdgeScalingState) -> float:
    p = state.problem
    mass = sum(float(np.exp(_log_q(state, j, k)).sum()) for (j, k) in p.tree.edges)
    con = sum(float(state.log_u[(j, p.constrained_neighbor(j))] @ p.marginals[j]) for j in p.tree.constrained)
    return mass - con - sum(state.rho.values())


def plans(state: EdgeScalingState) -> Dict[Edge, np.ndarray]:
    return {e: plan(state, e) for e in state.problem.tree.edges}


def transport_cost(p: TreeProblem, plan_map: Mapping[Edge, np.ndarray]) -> float:
    return float(sum(np.sum(p.costs[e] * B) for e, B in plan_map.items()))


def regularized_cost(p: TreeProblem, plan_map: Mapping[Edge, np.ndarray]) -> float:
    """Σ⟨C,B⟩ + ε Σ 𝓗(B | γ_j ⊗ γ_k)."""
    total = transport_cost(p, plan_map)
    for (j, k), B in plan_map.items():
        ref = LabeledTensor((j, k), np.outer(p.gamma(j), p.gamma(k)))
        total += p.epsilon * rel_entropy(LabeledTensor((j, k), B), ref)
    return total


# ----------------------------------------------------------------
# Solver
# ----------------------------------------------------------------

def step(state: EdgeScalingState, side: FrozenSet[int], engine: ExecutionEngine, form: str = "scaling") -> None:
    """Update every node of one partition from a frozen snapshot."""
    updates = engine.map_ordered(lambda j: update_node(state, j, form), sorted(side))
    apply_updates(state, updates)
    state.iteration += 1
    state.last_updated = side


def solve(p: TreeProblem, delta_prime: Optional[float] = None, max_iter: Optional[int] = None, *,
          threads: Optional[int] = None, log_domain: Optional[bool] = None, form: str = "scaling",
          callback: Optional[Callable[[EdgeScalingState], None]] = None,
          log_every: int = 100) -> Tuple[Dict[Edge, np.ndarray], SolveReport]:
    """Alternate partition updates until the residual drops below δ′ or max_iter is reached."""
    if delta_prime is None:
        delta_prime = recipe(config.DEFAULT_DELTA, max(p.n_edges, 1), max(p.d, 2), p.c_inf)[1]
    max_iter = config.MAX_ITER if max_iter is None else max_iter
    engine = ExecutionEngine.instance(threads)
    partition = two_color(p.tree)
    state = initial_state(p, log_domain)

    report = SolveReport(
        solver="tree-local",
        threads=engine.threads,
        epsilon=p.epsilon,
        delta_prime=delta_prime,
        iteration_bound=iteration_bound(p.n_edges, p.c_inf, delta_prime, p.epsilon),
    )
    start = time.perf_counter()
    res = residual(state).total
    report.record(res, dual_f(state), 0.0)

    while res >= delta_prime and state.iteration < max_iter:
        step(state, partition.side(state.iteration + 1), engine, form)
        res = residual(state).total
        report.record(res, dual_f(state), time.perf_counter() - start)
        if callback is not None:
            callback(state)
        if log_every and state.iteration % log_every == 0:
            logger.debug("tree-local t=%d residual=%.3e dual=%.6f", state.iteration, res, report.duals[-1])

    report.iterations = state.iteration
    report.converged = res < delta_prime
    report.wall_clock = time.perf_counter() - start
    report.plans = plans(state)
    report.cost = transport_cost(p, report.plans)
    report.regularized_cost = regularized_cost(p, report.plans)
    report.state = state
    log_outcome(report)
    return report.plans, report


def rounding_side(state: EdgeScalingState, partition: Optional[BipartitePartition] = None) -> FrozenSet[int]:
    """Partition left mismatched by the last iteration (S1 when nothing ran)."""
    partition = partition or two_color(state.problem.tree)
    if state.last_updated is None:
        return partition.s1
    return partition.other(state.last_updated)

