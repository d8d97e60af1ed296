# core/runner.py
# Builds the problem a spec describes and runs the selected solver on it.

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from core import graph_local, tree_local
from core.errors import AssumptionViolation, GraphOTError, SpecError, ValidationError, Violation
from core.graph import (
    RULE_NESTED_SCOPES,
    JunctionTree,
    ModifiedJunctionTree,
    SeparatorConstraint,
    TreeGraph,
    two_color,
)
from core.graph_local import GraphLocalProblem
from core.mot_global import MotProblem, SweepOrder, isbp, sinkhorn_full
from core.problems import (
    barycenter_problem,
    euler_problem,
    resolve_epsilon,
    spline_problem,
    tree_to_graph_local,
    tree_to_mot,
    wls_problem,
)
from core.reporting import SolveReport
from core.rounding import RoundReport, round_solution
from core.spec_file import ProblemSpec, SolverOptions
from core.tensor import LabeledTensor
from core.tree_local import TreeProblem, recipe, rounding_side

logger = logging.getLogger(__name__)

Problem = Union[TreeProblem, GraphLocalProblem, MotProblem]

# Below this ratio of epsilon to C_inf plain kernels lose most entries to underflow
LOG_DOMAIN_HINT = 1e-2


@dataclass
class RunResult:
    problem: Problem
    report: SolveReport
    rounded: Optional[Dict[Any, np.ndarray]] = None
    rounding: Optional[RoundReport] = None


# ----------------------------------------------------------------
# Custom structures
# ----------------------------------------------------------------

def _entry(item: Any, allowed: Sequence[str], where: str) -> Dict[str, Any]:
    if not isinstance(item, dict):
        raise SpecError(f"{where} must be an object")
    unknown = sorted(set(item) - set(allowed))
    if unknown:
        raise SpecError(f"unknown key '{where}.{unknown[0]}'")
    return item


def _sizes(problem: Mapping[str, Any]) -> Dict[int, int]:
    if "sizes" not in problem:
        raise SpecError("problem.sizes is required for custom structures")
    try:
        return {int(a): int(n) for a, n in problem["sizes"].items()}
    except (TypeError, ValueError):
        raise SpecError("problem.sizes must map integer labels to integer sizes") from None


def _reshape(values: Any, shape: Sequence[int], where: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).ravel()
    expected = int(np.prod(shape)) if len(shape) else 1
    if arr.size != expected:
        raise SpecError(f"{where}: {arr.size} values given for shape {tuple(shape)}")
    return arr.reshape(tuple(shape))


def _labeled(item: Mapping[str, Any], sizes: Mapping[int, int], where: str, key: str = "values") -> LabeledTensor:
    labels = [int(a) for a in item.get("labels", ())]
    missing = [a for a in labels if a not in sizes]
    if missing:
        raise SpecError(f"{where}: label {missing[0]} has no declared size")
    return LabeledTensor(labels, _reshape(item.get(key, ()), [sizes[a] for a in labels], where))


def _custom_tree(spec: ProblemSpec) -> TreeProblem:
    problem = spec.problem
    sizes = _sizes(problem)
    tree = TreeGraph.from_edges(problem.get("edges", ()), problem.get("constrained", ()), problem.get("nodes"))
    costs = {}
    for i, raw in enumerate(problem.get("costs", ())):
        item = _entry(raw, ("edge", "values"), f"problem.costs[{i}]")
        j, k = (int(v) for v in item.get("edge", ()))
        for node in (j, k):
            if node not in sizes:
                raise SpecError(f"problem.costs[{i}]: node {node} has no declared size")
        costs[(j, k)] = _reshape(item["values"], (sizes[j], sizes[k]), f"problem.costs[{i}]")
    vectors = spec.raw.get("marginals", {}).get("vectors")
    if not isinstance(vectors, dict):
        raise SpecError("custom trees need explicit marginals.vectors keyed by node")
    marginals = {int(j): np.asarray(v, dtype=float) for j, v in vectors.items()}
    c_inf = max((float(np.abs(C).max()) for C in costs.values() if C.size), default=0.0)
    eps = resolve_epsilon(spec.solver.epsilon, spec.solver.delta, max(len(costs), 1), max(sizes.values()), c_inf)
    return TreeProblem.build(tree, costs, marginals, eps)


def _custom_jt(spec: ProblemSpec) -> MotProblem:
    problem = spec.problem
    sizes = _sizes(problem)
    costs = [_labeled(_entry(c, ("labels", "values"), f"problem.costs[{i}]"), sizes, f"problem.costs[{i}]")
             for i, c in enumerate(problem.get("costs", ()))]
    constraints = [
        _labeled(_entry(c, ("labels", "values"), f"problem.constraints[{i}]"), sizes, f"problem.constraints[{i}]")
        for i, c in enumerate(problem.get("constraints", ()))
    ]
    jt = None
    if "cliques" in problem:
        jt = JunctionTree.build(problem["cliques"], problem.get("clique_edges", ()),
                                problem.get("constrained_cliques", ()))
    c_inf = float(sum(np.abs(c.values).max() for c in costs if c.values.size))
    eps = resolve_epsilon(spec.solver.epsilon, spec.solver.delta, max(len(costs), 1), max(sizes.values()), c_inf)
    return MotProblem.build(sizes, costs, constraints, eps, jt, allow_zero=bool(problem.get("allow_zero", False)))


def _custom_mjt(spec: ProblemSpec) -> GraphLocalProblem:
    problem = spec.problem
    sizes = _sizes(problem)
    costs = [
        _labeled(_entry(c, ("labels", "values"), f"problem.cost_cliques[{i}]"), sizes, f"problem.cost_cliques[{i}]")
        for i, c in enumerate(problem.get("cost_cliques", ()))
    ]
    separators, constraints = [], {}
    for s, raw in enumerate(problem.get("separators", ())):
        where = f"problem.separators[{s}]"
        item = _entry(raw, ("labels", "gamma", "mu"), where)
        separators.append(frozenset(int(a) for a in item.get("labels", ())))
        if "mu" in item:
            gamma = tuple(sorted(int(a) for a in item.get("gamma", item.get("labels", ()))))
            mu = _labeled({"labels": gamma, "values": item["mu"]}, sizes, where)
            constraints[s] = SeparatorConstraint(gamma, mu)
    mjt = ModifiedJunctionTree.build([frozenset(c.labels) for c in costs], separators,
                                     problem.get("edges", ()), constraints)
    c_inf = max((float(np.abs(c.values).max()) for c in costs if c.values.size), default=0.0)
    eps = resolve_epsilon(spec.solver.epsilon, spec.solver.delta, max(len(costs), 1), max(sizes.values()), c_inf)
    return GraphLocalProblem.build(mjt, costs, sizes, eps, permissive=bool(problem.get("permissive", False)))


# ----------------------------------------------------------------
# Problem construction
# ----------------------------------------------------------------

def _mismatch(spec: ProblemSpec) -> SpecError:
    kind = spec.family if spec.family != "custom" else f"custom {spec.problem.get('structure')}"
    return SpecError(f"solver '{spec.solver.name}' does not apply to {kind} problems")


def build_problem(spec: ProblemSpec) -> Problem:
    """Instantiate the problem in the form the selected solver works on."""
    name, problem, opts = spec.solver.name, spec.problem, spec.solver
    structure = problem.get("structure")

    if spec.family == "barycenter" or structure == "tree":
        if spec.family == "barycenter":
            tp = barycenter_problem(int(problem.get("n_leaves", 3)), spec.grid, spec.marginals, opts.epsilon, opts.delta)
        else:
            tp = _custom_tree(spec)
        if name == "tree-local":
            return tp
        if name == "graph-local":
            return tree_to_graph_local(tp)
        return tree_to_mot(tp)

    if name == "tree-local":
        raise _mismatch(spec)

    if spec.family == "euler":
        if "sigma" not in problem:
            raise SpecError("problem.sigma is required for Euler flow")
        inst = euler_problem(int(problem.get("J", 3)), spec.grid, problem["sigma"], problem.get("variant", "relaxed"),
                             opts.epsilon, opts.delta, float(problem.get("penalty", 1.0)))
        if name == "graph-local":
            if inst.graph_local is None:
                raise SpecError("the hard Euler variant has no graph-local form; use global-isbp or dense")
            return inst.graph_local
        return inst.mot

    if spec.family in ("wls", "spline"):
        if spec.family == "wls":
            inst = wls_problem(int(problem.get("J", 3)), problem.get("times"), spec.grid, spec.marginals,
                               float(problem.get("alpha", 10.0)), opts.epsilon, opts.delta)
        else:
            if spec.grid_v is None:
                raise SpecError("grid_v section is required for splines")
            inst = spline_problem(int(problem.get("J", 3)), problem.get("times"), spec.grid, spec.grid_v,
                                  spec.marginals, opts.epsilon, opts.delta)
        return inst.graph_local if name == "graph-local" else inst.mot

    if structure == "junction-tree":
        if name == "graph-local":
            raise _mismatch(spec)
        return _custom_jt(spec)
    if name != "graph-local":
        raise _mismatch(spec)
    return _custom_mjt(spec)


def collect_violations(spec: ProblemSpec) -> List[Violation]:
    """Run every structural validator by building the problem; nothing is solved."""
    try:
        build_problem(spec)
    except ValidationError as exc:
        return exc.violations
    except AssumptionViolation as exc:
        return [Violation(RULE_NESTED_SCOPES, str(exc))]
    except SpecError as exc:
        return [Violation("spec", str(exc))]
    except GraphOTError as exc:
        return [Violation(type(exc).__name__, str(exc))]
    return []


# ----------------------------------------------------------------
# Solving
# ----------------------------------------------------------------

def stopping_threshold(problem: Problem, opts: SolverOptions) -> float:
    """δ′ from the spec, or δ/(8 C_∞) by the parameter recipe."""
    if opts.delta_prime is not None:
        return float(opts.delta_prime)
    return recipe(opts.delta, max(problem.n_edges, 1), max(problem.d, 2), problem.c_inf)[1]


def run_problem(problem: Problem, opts: SolverOptions) -> RunResult:
    delta_prime = stopping_threshold(problem, opts)
    logger.info("Solving with %s (epsilon=%.4g, delta'=%.4g, threads=%d)",
                opts.name, problem.epsilon, delta_prime, opts.threads)
    if not opts.log_domain and problem.epsilon < LOG_DOMAIN_HINT * problem.c_inf:
        logger.warning("epsilon %.3g is below %.0e*C_inf (C_inf=%.3g); log-domain mode is recommended",
                       problem.epsilon, LOG_DOMAIN_HINT, problem.c_inf)

    if isinstance(problem, TreeProblem):
        plans, report = tree_local.solve(problem, delta_prime, opts.max_iter,
                                         threads=opts.threads, log_domain=opts.log_domain)
        partition = two_color(problem.tree)
        side = rounding_side(report.state, partition)
        rounded, rounding = round_solution(problem, plans, side, partition.other(side), report.iterations,
                                           opts.threads)
        report.rounded_cost = tree_local.transport_cost(problem, rounded)
        logger.info("Rounded cost %.6f (moved cost %.3e, bound %.3e)",
                    report.rounded_cost, rounding.cost_delta, rounding.bound)
        return RunResult(problem, report, rounded, rounding)

    if isinstance(problem, GraphLocalProblem):
        _, report = graph_local.solve(problem, delta_prime, opts.max_iter,
                                      threads=opts.threads, log_domain=opts.log_domain)
        return RunResult(problem, report)

    tol = float(opts.tol) if opts.tol is not None else delta_prime
    if opts.name == "dense":
        _, report = sinkhorn_full(problem, tol, opts.max_iter, log_domain=opts.log_domain)
        return RunResult(problem, report)
    if problem.junction_tree is None:
        raise SpecError("global-isbp needs a junction tree; give problem.cliques or use the dense solver")
    _, report = isbp(problem, SweepOrder(opts.schedule), tol, opts.max_iter,
                     seed=opts.seed, log_domain=opts.log_domain)
    return RunResult(problem, report)


def run_spec(spec: ProblemSpec) -> RunResult:
    return run_problem(build_problem(spec), spec.solver)
