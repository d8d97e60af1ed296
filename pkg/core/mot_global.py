# core/mot_global.py
# Globally regularized multi-marginal OT
#
# sinkhorn_full scales the dense J-mode tensor; isbp runs the same scaling on a
# junction tree, computing each projection by message passing.

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from core import config
from core.errors import ContractError, NumericError, Violation, raise_if
from core.graph import JunctionTree, validate_jt
from core.reporting import SolveReport, log_outcome
from core.tensor import (
    LabeledTensor,
    broadcast_add,
    broadcast_mul,
    ensure_dense,
    inner,
    log_project,
    project,
    rel_entropy,
    total_mass,
)

logger = logging.getLogger(__name__)

MASS_TOL = 1e-9


class SweepOrder(str, Enum):
    ROUND_ROBIN = "round-robin"
    RANDOM = "random"


# ----------------------------------------------------------------
# Problem
# ----------------------------------------------------------------

@dataclass(frozen=True)
class MotProblem:
    """Factorized MOT: Σ_α C_α cost terms, marginal constraints μ_α, optional junction tree."""

    sizes: Mapping[int, int]
    costs: Tuple[LabeledTensor, ...]
    constraints: Tuple[LabeledTensor, ...]
    epsilon: float
    junction_tree: Optional[JunctionTree] = None
    allow_zero: bool = False

    @classmethod
    def build(cls, sizes: Mapping[int, int], costs: Sequence[LabeledTensor], constraints: Sequence[LabeledTensor],
              epsilon: float, junction_tree: Optional[JunctionTree] = None, allow_zero: bool = False) -> "MotProblem":
        cons = []
        for mu in constraints:
            mu = mu.sorted()
            if allow_zero and np.any(mu.values <= 0):
                clamped = np.maximum(mu.values, config.ZERO_FLOOR)
                logger.warning("Clamped zero entries of marginal on %s to %.1e", mu.labels, config.ZERO_FLOOR)
                mu = LabeledTensor(mu.labels, clamped / clamped.sum())
            cons.append(mu)
        return cls(
            {int(a): int(n) for a, n in sizes.items()},
            tuple(c.sorted() for c in costs),
            tuple(cons),
            float(epsilon),
            junction_tree,
            allow_zero,
        )

    def __post_init__(self):
        raise_if(validate_mot_problem(self))

    @property
    def labels(self) -> Tuple[int, ...]:
        return tuple(sorted(self.sizes))

    @cached_property
    def c_inf(self) -> float:
        """Upper bound on max |C| over the full tensor."""
        return float(sum(np.abs(c.values).max() for c in self.costs if c.values.size))

    @property
    def n_edges(self) -> int:
        return max(len(self.costs), 1)

    @property
    def d(self) -> int:
        return max(self.sizes.values())

    @cached_property
    def clique_constraint(self) -> Dict[int, int]:
        """Constrained clique index → constraint index."""
        jt = self.junction_tree
        out: Dict[int, int] = {}
        if jt is None:
            return out
        for i in sorted(jt.constrained):
            for a, mu in enumerate(self.constraints):
                if frozenset(mu.labels) == jt.cliques[i] and a not in out.values():
                    out[i] = a
                    break
        return out

    @cached_property
    def clique_costs(self) -> Dict[int, List[int]]:
        """Each cost factor is assigned to the first clique that holds it, preferring free cliques."""
        jt = self.junction_tree
        out: Dict[int, List[int]] = {i: [] for i in range(len(jt.cliques))} if jt else {}
        if jt is None:
            return out
        order = [i for i in range(len(jt.cliques)) if i not in jt.constrained] + sorted(jt.constrained)
        for a, c in enumerate(self.costs):
            home = next(i for i in order if set(c.labels) <= jt.cliques[i])
            out[home].append(a)
        return out

    def clique_log_kernel(self, i: int) -> LabeledTensor:
        labels = tuple(sorted(self.junction_tree.cliques[i]))
        log_k = LabeledTensor.zeros(self.sizes, labels)
        for a in self.clique_costs[i]:
            log_k = broadcast_add(log_k, self.costs[a].map(lambda v: -v / self.epsilon))
        return log_k

    # dense path

    def full_cost(self) -> LabeledTensor:
        ensure_dense(self.sizes, self.labels, config.DENSE_CAP)
        total = LabeledTensor.zeros(self.sizes, self.labels)
        for c in self.costs:
            total = broadcast_add(total, c)
        return total

    def full_log_reference(self) -> LabeledTensor:
        ensure_dense(self.sizes, self.labels, config.DENSE_CAP)
        total = LabeledTensor.zeros(self.sizes, self.labels)
        for mu in self.constraints:
            total = broadcast_add(total, mu.map(np.log))
        return total


def validate_mot_problem(p: MotProblem) -> List[Violation]:
    out: List[Violation] = []
    for a, n in p.sizes.items():
        if n < 1:
            out.append(Violation("shape", f"variable {a} has size {n}", (a,)))
    for kind, group in (("cost", p.costs), ("marginal", p.constraints)):
        for t in group:
            for label, size in t.axes:
                if label not in p.sizes:
                    out.append(Violation("label", f"{kind} on {t.labels} uses unknown variable {label}", t.labels))
                elif p.sizes[label] != size:
                    out.append(Violation("shape", f"{kind} on {t.labels}: variable {label} has size {size}, "
                                                  f"declared {p.sizes[label]}", t.labels))
    for c in p.costs:
        if not np.all(np.isfinite(c.values)):
            out.append(Violation("cost", f"cost on {c.labels} has a non-finite entry", c.labels))
    for mu in p.constraints:
        if np.any(mu.values < 0):
            out.append(Violation("marginal", f"marginal on {mu.labels} has a negative entry", mu.labels))
        elif np.any(mu.values == 0) and not p.allow_zero:
            out.append(Violation("marginal", f"marginal on {mu.labels} has a zero entry", mu.labels))
        if abs(mu.values.sum() - 1.0) > MASS_TOL:
            out.append(Violation("marginal", f"marginal on {mu.labels} has mass {mu.values.sum():.12g}", mu.labels))
    if not p.constraints:
        out.append(Violation("marginal", "problem has no marginal constraints"))
    if p.epsilon <= 0:
        out.append(Violation("epsilon", f"epsilon must be positive, got {p.epsilon}"))
    jt = p.junction_tree
    if jt is None or out:
        return out
    out.extend(validate_jt(jt, [c.labels for c in p.costs] + [m.labels for m in p.constraints]))
    if out:
        return out
    missing = set(p.sizes) - jt.variables
    if missing:
        out.append(Violation("family", f"variables {sorted(missing)} appear in no clique"))
    for i in sorted(jt.constrained):
        if len(jt.neighbors(i)) > 1:
            out.append(Violation("constrained-leaf", f"constrained clique {i} is not a leaf", (i,)))
        if i not in p.clique_constraint:
            out.append(Violation("constraint", f"constrained clique {i} matches no marginal", (i,)))
    housed = set(p.clique_constraint.values())
    for a, mu in enumerate(p.constraints):
        if a not in housed:
            out.append(Violation("constraint", f"marginal on {mu.labels} has no constrained clique", mu.labels))
    return out


def dense_cost(p: MotProblem, B: LabeledTensor) -> float:
    return inner(p.full_cost(), B)


# ----------------------------------------------------------------
# Dense iterative scaling
# ----------------------------------------------------------------

def sinkhorn_full(p: MotProblem, tol: float, max_iter: Optional[int] = None, *,
                  log_domain: Optional[bool] = None, log_every: int = 100) -> Tuple[LabeledTensor, SolveReport]:
    """Cyclic scaling of the full tensor; one iteration is one sweep over all constraints."""
    log_domain = config.LOG_DOMAIN if log_domain is None else log_domain
    max_iter = config.MAX_ITER if max_iter is None else max_iter
    log_km = broadcast_add(p.full_cost().map(lambda v: -v / p.epsilon), p.full_log_reference())
    km = None if log_domain else log_km.map(np.exp)
    log_u = [LabeledTensor.zeros(p.sizes, mu.labels) for mu in p.constraints]
    log_mu = [mu.map(np.log) for mu in p.constraints]

    def assemble() -> LabeledTensor:
        if log_domain:
            t = log_km
            for lu in log_u:
                t = broadcast_add(t, lu)
            return t
        t = km
        for lu in log_u:
            t = broadcast_mul(t, lu.map(np.exp))
        return t

    def plan() -> LabeledTensor:
        t = assemble()
        return t.map(np.exp) if log_domain else t

    def measure(B: LabeledTensor) -> Tuple[float, float]:
        res = sum(float(np.abs(project(B, mu.labels).values - mu.values).sum()) for mu in p.constraints)
        dual = p.epsilon * (sum(inner(lu, mu) for lu, mu in zip(log_u, p.constraints)) - total_mass(B))
        return res, dual

    report = SolveReport(solver="dense", epsilon=p.epsilon, delta_prime=tol)
    start = time.perf_counter()
    res, dual = measure(plan())
    report.record(res, dual, 0.0)
    sweeps = 0
    while res > tol and sweeps < max_iter:
        for a, mu in enumerate(p.constraints):
            t = assemble()
            if log_domain:
                lp = log_project(t, mu.labels)
            else:
                proj = project(t, mu.labels)
                dead = np.argwhere(proj.values <= 0)
                if dead.size:
                    raise NumericError(f"projection onto {mu.labels} underflowed; use a larger epsilon "
                                       "or log-domain mode", tuple(dead[0]))
                lp = proj.map(np.log)
            log_u[a] = LabeledTensor(mu.labels, log_u[a].values + log_mu[a].values - lp.values)
        sweeps += 1
        res, dual = measure(plan())
        report.record(res, dual, time.perf_counter() - start)
        if log_every and sweeps % log_every == 0:
            logger.debug("dense sweep=%d residual=%.3e dual=%.6f", sweeps, res, dual)

    B = plan()
    report.iterations = sweeps
    report.converged = res <= tol
    report.wall_clock = time.perf_counter() - start
    report.cost = dense_cost(p, B)
    report.regularized_cost = report.cost + p.epsilon * rel_entropy(B, p.full_log_reference().map(np.exp))
    report.plans = {p.labels: B}
    report.state = log_u
    log_outcome(report)
    return B, report


# ----------------------------------------------------------------
# Iterative scaling belief propagation
# ----------------------------------------------------------------

Message = Tuple[LabeledTensor, float]


@dataclass
class MessageState:
    """Leaf factors of the constrained cliques, each stored normalized with its log scale.

    Free-clique messages are recomputed from the leaf factors on demand.
    """

    problem: MotProblem
    factors: Dict[int, LabeledTensor]
    scales: Dict[int, float]
    log_domain: bool = False
    iteration: int = 0
    residuals: List[float] = field(default_factory=list)

    @cached_property
    def log_kernels(self) -> Dict[int, LabeledTensor]:
        return {i: self.problem.clique_log_kernel(i) for i in range(len(self.problem.junction_tree.cliques))}

    @cached_property
    def kernels(self) -> Dict[int, LabeledTensor]:
        return {i: k.map(np.exp) for i, k in self.log_kernels.items()}


def initial_message_state(p: MotProblem, log_domain: Optional[bool] = None) -> MessageState:
    if p.junction_tree is None:
        raise ContractError("isbp needs a junction tree")
    log_domain = config.LOG_DOMAIN if log_domain is None else log_domain
    factors, scales = {}, {}
    for i, a in p.clique_constraint.items():
        mu = p.constraints[a]
        factors[i] = mu.map(np.log) if log_domain else mu
        scales[i] = 0.0
    return MessageState(p, factors, scales, bool(log_domain))


def _base(state: MessageState, i: int) -> Message:
    if state.log_domain:
        t = state.log_kernels[i]
        if i in state.factors:
            t = broadcast_add(t, state.factors[i])
    else:
        t = state.kernels[i]
        if i in state.factors:
            t = broadcast_mul(t, state.factors[i])
    return t, state.scales.get(i, 0.0)


def _absorb(state: MessageState, base: Message, incoming: Sequence[Message]) -> Message:
    t, scale = base
    for m, s in incoming:
        t = broadcast_add(t, m) if state.log_domain else broadcast_mul(t, m)
        scale += s
    return t, scale


def _normalize(state: MessageState, t: LabeledTensor, scale: float, where: str) -> Message:
    if state.log_domain:
        z = float(logsumexp(t.values))
        if not np.isfinite(z):
            raise NumericError(f"message {where} vanished")
        return t.map(lambda v: v - z), scale + z
    z = total_mass(t)
    if z <= 0:
        raise NumericError(f"message {where} underflowed; use a larger epsilon or log-domain mode")
    return t.map(lambda v: v / z), scale + float(np.log(z))


def _message(state: MessageState, i: int, j: int, memo: Dict[Tuple[int, int], Message]) -> Message:
    """m_{i→j} over the separator of cliques i and j, normalized, with its log scale."""
    key = (i, j)
    if key in memo:
        return memo[key]
    jt = state.problem.junction_tree
    incoming = [_message(state, k, i, memo) for k in jt.neighbors(i) if k != j]
    t, scale = _absorb(state, _base(state, i), incoming)
    sep = jt.separator(i, j)
    t = log_project(t, sep) if state.log_domain else project(t, sep)
    memo[key] = _normalize(state, t, scale, f"{i}->{j}")
    return memo[key]


def _belief(state: MessageState, i: int, memo: Dict[Tuple[int, int], Message]) -> Message:
    jt = state.problem.junction_tree
    incoming = [_message(state, k, i, memo) for k in jt.neighbors(i)]
    return _absorb(state, _base(state, i), incoming)


def _as_plan(state: MessageState, belief: Message) -> LabeledTensor:
    t, scale = belief
    if state.log_domain:
        return t.map(lambda v: np.exp(v + scale))
    return t.map(lambda v: v * np.exp(scale))


def projection_via_messages(state: MessageState, c: int,
                            memo: Optional[Dict[Tuple[int, int], Message]] = None) -> LabeledTensor:
    """Marginal of K⊙U⊙M on the variables of clique c, computed by messages toward c."""
    memo = {} if memo is None else memo
    return _as_plan(state, _belief(state, c, memo))


def clique_plans(state: MessageState) -> Dict[int, LabeledTensor]:
    memo: Dict[Tuple[int, int], Message] = {}
    return {i: projection_via_messages(state, i, memo) for i in range(len(state.problem.junction_tree.cliques))}


def update_leaf(state: MessageState, i: int) -> None:
    """Rescale the factor of constrained clique i so its plan marginal equals μ_i."""
    p = state.problem
    mu = p.constraints[p.clique_constraint[i]]
    memo: Dict[Tuple[int, int], Message] = {}
    incoming = [_message(state, k, i, memo) for k in p.junction_tree.neighbors(i)]
    if state.log_domain:
        rest, scale = _absorb(state, (state.log_kernels[i], 0.0), incoming)
        f = LabeledTensor(mu.labels, np.log(mu.values) - rest.transposed(mu.labels).values)
    else:
        rest, scale = _absorb(state, (state.kernels[i], 0.0), incoming)
        denom = rest.transposed(mu.labels).values
        dead = np.argwhere(denom <= 0)
        if dead.size:
            raise NumericError(f"projection onto clique {i} underflowed; use log-domain mode", tuple(dead[0]))
        f = LabeledTensor(mu.labels, mu.values / denom)
    f, f_scale = _normalize(state, f, -scale, f"factor {i}")
    state.factors[i] = f
    state.scales[i] = f_scale
    state.iteration += 1


def isbp_residual(state: MessageState, memo: Optional[Dict[Tuple[int, int], Message]] = None) -> float:
    p = state.problem
    memo = {} if memo is None else memo
    total = 0.0
    for i, a in sorted(p.clique_constraint.items()):
        mu = p.constraints[a]
        B = projection_via_messages(state, i, memo).transposed(mu.labels)
        total += float(np.abs(B.values - mu.values).sum())
    return total


def isbp_dual(state: MessageState, memo: Optional[Dict[Tuple[int, int], Message]] = None) -> float:
    """ε(Σ⟨log u_c, μ_c⟩ − ‖B‖₁)."""
    p = state.problem
    memo = {} if memo is None else memo
    total = 0.0
    for i, a in p.clique_constraint.items():
        mu = p.constraints[a]
        f = state.factors[i].values if state.log_domain else np.log(state.factors[i].values)
        total += float(np.sum((f + state.scales[i] - np.log(mu.values)) * mu.values))
    mass = total_mass(projection_via_messages(state, 0, memo))
    return p.epsilon * (total - mass)


def isbp(p: MotProblem, schedule: SweepOrder = SweepOrder.ROUND_ROBIN, tol: float = 1e-9,
         max_iter: Optional[int] = None, *, seed: int = 0, log_domain: Optional[bool] = None,
         log_every: int = 100) -> Tuple[Dict[int, LabeledTensor], SolveReport]:
    """One iteration is one constrained-clique update; the residual is checked after every sweep."""
    schedule = SweepOrder(schedule)
    max_iter = config.MAX_ITER if max_iter is None else max_iter
    state = initial_message_state(p, log_domain)
    leaves = sorted(p.clique_constraint)
    n = len(leaves)
    rng = np.random.default_rng(seed)

    report = SolveReport(solver="global-isbp", epsilon=p.epsilon, delta_prime=tol)
    start = time.perf_counter()

    def measure():
        memo: Dict[Tuple[int, int], Message] = {}
        res = isbp_residual(state, memo)
        state.residuals.append(res)
        report.record(res, isbp_dual(state, memo), time.perf_counter() - start)
        return res

    res = measure()
    while res > tol and state.iteration < max_iter:
        if schedule is SweepOrder.RANDOM:
            leaf = leaves[int(rng.integers(n))]
        else:
            leaf = leaves[state.iteration % n]
        update_leaf(state, leaf)
        if state.iteration % n == 0 or state.iteration >= max_iter:
            res = measure()
            if log_every and (state.iteration // n) % log_every == 0:
                logger.debug("isbp t=%d residual=%.3e", state.iteration, res)

    report.iterations = state.iteration
    report.converged = res <= tol
    report.wall_clock = time.perf_counter() - start
    report.plans = clique_plans(state)
    report.cost = isbp_cost(p, report.plans)
    report.state = state
    log_outcome(report)
    return report.plans, report


def isbp_cost(p: MotProblem, plans: Mapping[int, LabeledTensor]) -> float:
    """Σ_α ⟨C_α, P_α(B)⟩ using the clique each cost term is assigned to."""
    total = 0.0
    for i, idx in p.clique_costs.items():
        for a in idx:
            c = p.costs[a]
            total += inner(c, project(plans[i], c.labels))
    return total
