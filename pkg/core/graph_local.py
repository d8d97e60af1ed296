# core/graph_local.py
# Locally regularized coupled MOT over modified junction trees
#
# Cost cliques carry plans B_c = K_c ⊙ M_c ⊙ U_c; every separator owns one dual
# tensor per incident clique. Separators are updated a partition at a time.

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from core import config
from core.errors import NumericError, ValidationError, Violation, raise_if
from core.executor import ExecutionEngine
from core.graph import (
    BipartitePartition,
    InclusionEntry,
    ModifiedJunctionTree,
    inclusion_order,
    two_color_adjacency,
    validate_mjt,
)
from core.reporting import SolveReport, log_outcome
from core.tensor import LabeledTensor, aligned, broadcast_add, broadcast_mul, inner, log_project, project, rel_entropy
from core.tree_local import recipe

logger = logging.getLogger(__name__)

MASS_TOL = 1e-9
SepKey = Tuple[int, int]


@dataclass(frozen=True)
class GraphLocalProblem:
    """Coupled small MOT problems on the cost cliques of a modified junction tree."""

    mjt: ModifiedJunctionTree
    costs: Tuple[LabeledTensor, ...]
    sizes: Mapping[int, int]
    epsilon: float
    factors: Tuple[Tuple[int, ...], ...] = ()
    permissive: bool = False

    @classmethod
    def build(cls, mjt: ModifiedJunctionTree, costs: Sequence[LabeledTensor], sizes: Mapping[int, int],
              epsilon: float, factors: Sequence[Sequence[int]] = (), permissive: bool = False) -> "GraphLocalProblem":
        return cls(
            mjt,
            tuple(c.sorted() for c in costs),
            {int(a): int(n) for a, n in sizes.items()},
            float(epsilon),
            tuple(tuple(sorted(f)) for f in factors),
            permissive,
        )

    def __post_init__(self):
        raise_if(validate_graph_local(self))

    @cached_property
    def c_inf(self) -> float:
        return max((float(np.abs(c.values).max()) for c in self.costs if c.values.size), default=0.0)

    @property
    def n_edges(self) -> int:
        return len(self.mjt.cost_cliques)

    @property
    def d(self) -> int:
        return max(self.sizes.values())

    @cached_property
    def log_references(self) -> Dict[int, LabeledTensor]:
        """log M_c: Σ of log μ_γ over the constrained separators next to clique c."""
        out = {}
        for q, clique in enumerate(self.mjt.cost_cliques):
            t = LabeledTensor.zeros(self.sizes, sorted(clique))
            for s in self.mjt.clique_neighbors(q):
                con = self.mjt.constraints.get(s)
                if con is not None and set(con.gamma) <= clique:
                    t = broadcast_add(t, con.mu.map(np.log))
            out[q] = t
        return out

    @cached_property
    def log_kernels(self) -> Dict[int, LabeledTensor]:
        """log(K_c ⊙ M_c)."""
        return {
            q: LabeledTensor(c.labels, -c.values / self.epsilon + self.log_references[q].values)
            for q, c in enumerate(self.costs)
        }

    @cached_property
    def partition(self) -> BipartitePartition:
        return two_color_adjacency(self.mjt.separator_adjacency())


def validate_graph_local(p: GraphLocalProblem) -> List[Violation]:
    mjt = p.mjt
    out = validate_mjt(mjt, p.factors or [c.labels for c in p.costs], p.permissive)
    if out:
        return out
    if len(p.costs) != len(mjt.cost_cliques):
        out.append(Violation("cost", f"{len(p.costs)} cost tensors for {len(mjt.cost_cliques)} cost cliques"))
        return out
    for q, (c, clique) in enumerate(zip(p.costs, mjt.cost_cliques)):
        if set(c.labels) != clique:
            out.append(Violation("cost", f"cost tensor {q} is labeled {c.labels}, clique is {sorted(clique)}", (q,)))
            continue
        for label, size in c.axes:
            if p.sizes.get(label) != size:
                out.append(Violation("shape", f"cost tensor {q}: variable {label} has size {size}, "
                                              f"declared {p.sizes.get(label)}", (q,)))
        if not np.all(np.isfinite(c.values)):
            out.append(Violation("cost", f"cost tensor {q} has a non-finite entry", (q,)))
    for s, con in sorted(mjt.constraints.items()):
        mu = con.mu.values
        if tuple(con.mu.labels) != tuple(sorted(con.gamma)):
            continue
        if any(p.sizes.get(a) != n for a, n in con.mu.axes):
            out.append(Violation("shape", f"marginal on separator {s} does not match variable sizes", (s,)))
        elif np.any(mu <= 0):
            out.append(Violation("marginal", f"marginal on separator {s} (γ={list(con.gamma)}) has a non-positive entry", (s,)))
        elif abs(mu.sum() - 1.0) > MASS_TOL:
            out.append(Violation("marginal", f"marginal on separator {s} has mass {mu.sum():.12g}", (s,)))
    if p.epsilon <= 0 or not math.isfinite(p.epsilon):
        out.append(Violation("epsilon", f"epsilon must be positive, got {p.epsilon}"))
    try:
        two_color_adjacency(mjt.separator_adjacency())
    except ValidationError as exc:
        out.extend(exc.violations)
    return out


# ----------------------------------------------------------------
# State
# ----------------------------------------------------------------

@dataclass
class CliqueScalingState:
    problem: GraphLocalProblem
    orders: Dict[int, Tuple[InclusionEntry, ...]]
    log_u: Dict[SepKey, LabeledTensor]
    log_u_gamma: Dict[int, LabeledTensor]
    rho: Dict[int, float]
    log_domain: bool = False
    iteration: int = 0
    last_updated: Optional[FrozenSet[int]] = None

    @cached_property
    def kernels(self) -> Dict[int, LabeledTensor]:
        return {q: k.map(np.exp) for q, k in self.problem.log_kernels.items()}


def initial_state(p: GraphLocalProblem, log_domain: Optional[bool] = None) -> CliqueScalingState:
    log_domain = config.LOG_DOMAIN if log_domain is None else log_domain
    orders = {s: inclusion_order(p.mjt, s, p.permissive) for s in range(len(p.mjt.separators))}
    log_u = {
        (s, e.clique): LabeledTensor.zeros(p.sizes, e.labels)
        for s, order in orders.items() for e in order
    }
    log_u_gamma = {s: LabeledTensor.zeros(p.sizes, sorted(con.gamma)) for s, con in p.mjt.constraints.items()}
    rho = {s: 0.0 for s in orders if s not in p.mjt.constraints}
    return CliqueScalingState(p, orders, log_u, log_u_gamma, rho, bool(log_domain))


def _log_clique(state: CliqueScalingState, q: int) -> LabeledTensor:
    t = state.problem.log_kernels[q]
    for s in state.problem.mjt.clique_neighbors(q):
        t = broadcast_add(t, state.log_u[(s, q)])
    return t


def clique_plan(state: CliqueScalingState, q: int) -> LabeledTensor:
    if state.log_domain:
        return _log_clique(state, q).map(np.exp)
    t = state.kernels[q]
    for s in state.problem.mjt.clique_neighbors(q):
        t = broadcast_mul(t, state.log_u[(s, q)].map(np.exp))
    return t


def _log_k(state: CliqueScalingState, s: int, q: int) -> LabeledTensor:
    mjt = state.problem.mjt
    far = mjt.other_separator(q, s)
    scope = mjt.cost_cliques[q] & mjt.separators[s]
    if state.log_domain:
        t = log_project(broadcast_add(state.problem.log_kernels[q], state.log_u[(far, q)]), scope)
        if not np.all(np.isfinite(t.values)):
            raise NumericError(f"message from clique {q} to separator {s} vanished")
        return t
    t = project(broadcast_mul(state.kernels[q], state.log_u[(far, q)].map(np.exp)), scope)
    dead = np.argwhere(t.values <= 0)
    if dead.size:
        raise NumericError(f"message from clique {q} to separator {s} underflowed; use log-domain mode",
                           tuple(dead[0]))
    return t.map(np.log)


def k_message(state: CliqueScalingState, s: int, position: int) -> LabeledTensor:
    """k_i = P_{s∩c_i}(K_{c_i} ⊙ M_{c_i} ⊙ (ū_i ⊗ 1)) for the neighbour at inclusion position i (1-based)."""
    entry = state.orders[s][position - 1]
    return _log_k(state, s, entry.clique).map(np.exp)


# ----------------------------------------------------------------
# Separator update
# ----------------------------------------------------------------

@dataclass(frozen=True)
class SeparatorUpdate:
    separator: int
    log_u: Dict[SepKey, LabeledTensor]
    log_u_gamma: Optional[LabeledTensor] = None
    rho: Optional[float] = None


def _spread(t: LabeledTensor, labels: Tuple[int, ...], sizes: Mapping[int, int]) -> np.ndarray:
    shape = tuple(sizes[a] for a in labels)
    return np.broadcast_to(aligned(t, labels), shape).copy()


def separator_update(state: CliqueScalingState, s: int) -> SeparatorUpdate:
    """Exact block maximization of the dual over all variables owned by separator s."""
    p = state.problem
    sizes = p.sizes
    order = state.orders[s]
    con = p.mjt.constraints.get(s)
    lk = [_log_k(state, s, e.clique) for e in order]
    ell = len(order)

    if ell == 1:
        e = order[0]
        if con is not None:
            lv = LabeledTensor(con.mu.labels, np.log(con.mu.values) - log_project(lk[0], con.gamma).values)
            lu = LabeledTensor(e.labels, _spread(lv, e.labels, sizes))
            return SeparatorUpdate(s, {(s, e.clique): lu}, log_u_gamma=lv)
        rho = -float(logsumexp(lk[0].values))
        lu = LabeledTensor(e.labels, np.full(lk[0].shape, rho))
        return SeparatorUpdate(s, {(s, e.clique): lu}, rho=rho)

    # geometric-mean cascade over nested scopes s_2 ⊇ ... ⊇ s_ℓ
    head = lk[0]
    if order[0].scope != order[1].scope:
        head = log_project(head, order[1].scope)
    lq: Dict[int, LabeledTensor] = {2: LabeledTensor(order[1].labels, (head.values + lk[1].values) / 2.0)}
    for i in range(3, ell + 1):
        prev = log_project(lq[i - 1], order[i - 1].scope)
        lq[i] = LabeledTensor(order[i - 1].labels, ((i - 1) * prev.values + lk[i - 1].values) / i)

    last = lq[ell]
    la: Dict[int, LabeledTensor] = {}
    lv_gamma, rho = None, None
    if con is not None:
        lv_gamma = LabeledTensor(con.mu.labels,
                                 ell * (np.log(con.mu.values) - log_project(last, con.gamma).values))
        la[ell] = LabeledTensor(last.labels, last.values + aligned(lv_gamma, last.labels) / ell)
    else:
        rho = -ell * float(logsumexp(last.values))
        la[ell] = LabeledTensor(last.labels, last.values + rho / ell)
    for i in range(ell - 1, 1, -1):
        down = log_project(lq[i], order[i].scope)
        shift = LabeledTensor(la[i + 1].labels, la[i + 1].values - down.values)
        la[i] = LabeledTensor(lq[i].labels, lq[i].values + aligned(shift, lq[i].labels))

    new: Dict[SepKey, LabeledTensor] = {}
    u1 = LabeledTensor(order[1].labels, la[2].values - head.values)
    new[(s, order[0].clique)] = LabeledTensor(order[0].labels, _spread(u1, order[0].labels, sizes))
    for i in range(2, ell + 1):
        new[(s, order[i - 1].clique)] = LabeledTensor(order[i - 1].labels, la[i].values - lk[i - 1].values)
    return SeparatorUpdate(s, new, log_u_gamma=lv_gamma, rho=rho)


def apply_updates(state: CliqueScalingState, updates: List[SeparatorUpdate]) -> None:
    for upd in sorted(updates, key=lambda u: u.separator):
        state.log_u.update(upd.log_u)
        if upd.log_u_gamma is not None:
            state.log_u_gamma[upd.separator] = upd.log_u_gamma
        if upd.rho is not None:
            state.rho[upd.separator] = upd.rho


def dual_gap(state: CliqueScalingState, s: int) -> float:
    """max |Σ_i log u_i − log u_γ| (or − ρ) over the separator's largest scope."""
    order = state.orders[s]
    labels = order[0].labels
    total = np.zeros(tuple(state.problem.sizes[a] for a in labels))
    for e in order:
        total = total + aligned(state.log_u[(s, e.clique)], labels)
    if s in state.problem.mjt.constraints:
        target = aligned(state.log_u_gamma[s], labels)
    else:
        target = state.rho[s]
    return float(np.max(np.abs(total - target)))


# ----------------------------------------------------------------
# Residual / dual
# ----------------------------------------------------------------

def separator_residual(state: CliqueScalingState, s: int) -> float:
    """Disagreement of incident clique marginals on nested scopes, plus the γ-violation."""
    order = state.orders[s]
    marg = []
    for e in order:
        lm = broadcast_add(_log_k(state, s, e.clique), state.log_u[(s, e.clique)])
        marg.append(lm.map(np.exp))
    total = 0.0
    means = []
    for i, e in enumerate(order):
        group = [project(marg[j], e.scope) for j, f in enumerate(order) if e.scope <= f.scope]
        mean = np.mean([g.values for g in group], axis=0)
        means.append(LabeledTensor(e.labels, mean))
        total += float(np.abs(marg[i].values - mean).sum())
    con = state.problem.mjt.constraints.get(s)
    if con is not None:
        total += float(np.abs(project(means[-1], con.gamma).values - con.mu.values).sum())
    return total


def residual(state: CliqueScalingState) -> float:
    return sum(separator_residual(state, s) for s in sorted(state.orders))


def dual_f(state: CliqueScalingState) -> float:
    """Σ_c ‖B_c‖₁ − Σ_Γ ⟨log u_γ, μ_γ⟩ − Σ ρ."""
    p = state.problem
    mass = sum(float(clique_plan(state, q).values.sum()) for q in range(len(p.mjt.cost_cliques)))
    con = sum(inner(state.log_u_gamma[s], c.mu) for s, c in p.mjt.constraints.items())
    return mass - con - sum(state.rho.values())


def plans(state: CliqueScalingState) -> Dict[int, LabeledTensor]:
    return {q: clique_plan(state, q) for q in range(len(state.problem.mjt.cost_cliques))}


def transport_cost(p: GraphLocalProblem, plan_map: Mapping[int, LabeledTensor]) -> float:
    return float(sum(inner(p.costs[q], B) for q, B in plan_map.items()))


def regularized_cost(p: GraphLocalProblem, plan_map: Mapping[int, LabeledTensor]) -> float:
    total = transport_cost(p, plan_map)
    for q, B in plan_map.items():
        total += p.epsilon * rel_entropy(B, p.log_references[q].map(np.exp))
    return total


# ----------------------------------------------------------------
# Solver
# ----------------------------------------------------------------

def step(state: CliqueScalingState, side: FrozenSet[int], engine: ExecutionEngine) -> None:
    updates = engine.map_ordered(lambda s: separator_update(state, s), sorted(side))
    apply_updates(state, updates)
    state.iteration += 1
    state.last_updated = side


def solve(p: GraphLocalProblem, delta_prime: Optional[float] = None, max_iter: Optional[int] = None, *,
          threads: Optional[int] = None, log_domain: Optional[bool] = None,
          callback: Optional[Callable[[CliqueScalingState], None]] = None,
          log_every: int = 100) -> Tuple[Dict[int, LabeledTensor], SolveReport]:
    """Alternate separator-partition updates until the residual drops below δ′."""
    if delta_prime is None:
        delta_prime = recipe(config.DEFAULT_DELTA, p.n_edges, max(p.d, 2), p.c_inf)[1]
    max_iter = config.MAX_ITER if max_iter is None else max_iter
    engine = ExecutionEngine.instance(threads)
    partition = p.partition
    state = initial_state(p, log_domain)

    report = SolveReport(
        solver="graph-local",
        threads=engine.threads,
        epsilon=p.epsilon,
        delta_prime=delta_prime,
    )
    start = time.perf_counter()
    res = residual(state)
    report.record(res, dual_f(state), 0.0)

    while res >= delta_prime and state.iteration < max_iter:
        step(state, partition.side(state.iteration + 1), engine)
        res = residual(state)
        report.record(res, dual_f(state), time.perf_counter() - start)
        if callback is not None:
            callback(state)
        if log_every and state.iteration % log_every == 0:
            logger.debug("graph-local t=%d residual=%.3e", state.iteration, res)

    report.iterations = state.iteration
    report.converged = res < delta_prime
    report.wall_clock = time.perf_counter() - start
    report.plans = plans(state)
    report.cost = transport_cost(p, report.plans)
    report.regularized_cost = regularized_cost(p, report.plans)
    report.state = state
    log_outcome(report)
    return report.plans, report
