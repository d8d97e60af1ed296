# core/spec_file.py
# Problem-spec documents (JSON, format_version 1)

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

from core import config
from core.errors import SpecError
from core.problems import GridSpec, MarginalGen

logger = logging.getLogger(__name__)

FAMILIES = ("barycenter", "euler", "wls", "spline", "custom")
SOLVERS = ("tree-local", "graph-local", "global-isbp", "dense")
STRUCTURES = ("tree", "junction-tree", "modified-junction-tree")
VERBOSITY = ("summary", "trace", "quiet")

NUM = (int, float)

# key → allowed types; nested dicts describe sections
SCHEMA: Dict[str, Any] = {
    "format_version": (int,),
    "problem": {
        "family": (str,),
        "n_leaves": (int,),
        "J": (int,),
        "sigma": (list,),
        "variant": (str,),
        "penalty": NUM,
        "times": (list,),
        "alpha": NUM,
        "structure": (str,),
        "nodes": (list,),
        "edges": (list,),
        "constrained": (list,),
        "sizes": (dict,),
        "costs": (list,),
        "constraints": (list,),
        "cliques": (list,),
        "clique_edges": (list,),
        "constrained_cliques": (list,),
        "cost_cliques": (list,),
        "separators": (list,),
        "permissive": (bool,),
        "allow_zero": (bool,),
    },
    "grid": {"d": (int,), "lo": NUM, "hi": NUM},
    "grid_v": {"d": (int,), "lo": NUM, "hi": NUM},
    "marginals": {
        "kind": (str,),
        "seed": (int,),
        "location": NUM,
        "scale": NUM,
        "vectors": (list, dict),
    },
    "solver": {
        "name": (str,),
        "epsilon": NUM,
        "delta": NUM,
        "delta_prime": NUM,
        "tol": NUM,
        "max_iter": (int,),
        "schedule": (str,),
        "threads": (int,),
        "seed": (int,),
        "log_domain": (bool,),
    },
    "output": {"csv": (str,), "verbosity": (str,)},
    "bench": {
        "vary": (str,),
        "values": (list,),
        "fixed": (int,),
        "seeds": (list,),
        "solvers": (list,),
        "parallel_points": (bool,),
    },
}


@dataclass(frozen=True)
class SolverOptions:
    name: str = "tree-local"
    epsilon: Optional[float] = None
    delta: float = config.DEFAULT_DELTA
    delta_prime: Optional[float] = None
    tol: Optional[float] = None
    max_iter: int = config.MAX_ITER
    schedule: str = "random"
    threads: int = config.THREADS
    seed: int = 0
    log_domain: bool = config.LOG_DOMAIN


@dataclass(frozen=True)
class OutputOptions:
    csv: Optional[str] = None
    verbosity: str = "summary"


@dataclass(frozen=True)
class BenchOptions:
    vary: str
    values: Tuple[int, ...]
    fixed: int
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    solvers: Tuple[str, ...] = ("tree-local", "global-isbp")
    parallel_points: bool = False


@dataclass(frozen=True)
class ProblemSpec:
    family: str
    problem: Dict[str, Any]
    grid: Optional[GridSpec]
    grid_v: Optional[GridSpec]
    marginals: MarginalGen
    solver: SolverOptions
    output: OutputOptions
    bench: Optional[BenchOptions] = None
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)
    source: str = "<memory>"

    def with_overrides(self, threads: Optional[int] = None, seed: Optional[int] = None,
                       out: Optional[str] = None, log_domain: Optional[bool] = None,
                       max_iter: Optional[int] = None) -> "ProblemSpec":
        """Command-line flags win over spec values."""
        solver, marginals, output = self.solver, self.marginals, self.output
        if threads is not None:
            solver = replace(solver, threads=threads)
        if seed is not None:
            solver = replace(solver, seed=seed)
            marginals = replace(marginals, seed=seed)
        if log_domain:
            solver = replace(solver, log_domain=True)
        if max_iter is not None:
            solver = replace(solver, max_iter=max_iter)
        if out is not None:
            output = replace(output, csv=out)
        return replace(self, solver=solver, marginals=marginals, output=output)


def _check(doc: Dict[str, Any], schema: Dict[str, Any], path: str, errors: List[str]) -> None:
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            errors.append(f"unknown key '{where}'")
            continue
        rule = schema[key]
        if isinstance(rule, dict):
            if not isinstance(value, dict):
                errors.append(f"'{where}' must be a section")
            else:
                _check(value, rule, where, errors)
            continue
        if value is None and rule is NUM:
            continue
        if isinstance(value, bool) and bool not in rule:
            errors.append(f"'{where}' has type bool")
        elif not isinstance(value, rule):
            errors.append(f"'{where}' has type {type(value).__name__}")


def _grid(section: Optional[Dict[str, Any]]) -> Optional[GridSpec]:
    if section is None:
        return None
    return GridSpec(int(section.get("d", 10)), float(section.get("lo", 0.0)), float(section.get("hi", 1.0)))


def parse_spec(doc: Dict[str, Any], source: str = "<memory>") -> ProblemSpec:
    if not isinstance(doc, dict):
        raise SpecError(f"{source}: top level must be an object")
    errors: List[str] = []
    _check(doc, SCHEMA, "", errors)
    version = doc.get("format_version")
    if version != config.FORMAT_VERSION:
        errors.append(f"format_version must be {config.FORMAT_VERSION}, got {version!r}")
    problem = doc.get("problem")
    if not isinstance(problem, dict) or problem.get("family") not in FAMILIES:
        errors.append(f"problem.family must be one of {', '.join(FAMILIES)}")
    elif problem["family"] == "custom" and problem.get("structure") not in STRUCTURES:
        errors.append(f"problem.structure must be one of {', '.join(STRUCTURES)}")
    elif problem["family"] != "custom" and "grid" not in doc:
        errors.append("grid section is required")
    solver = doc.get("solver", {})
    if isinstance(solver, dict) and solver.get("name", "tree-local") not in SOLVERS:
        errors.append(f"solver.name must be one of {', '.join(SOLVERS)}")
    if isinstance(solver, dict) and solver.get("schedule", "random") not in ("random", "round-robin"):
        errors.append("solver.schedule must be 'random' or 'round-robin'")
    if isinstance(solver, dict) and isinstance(solver.get("delta_prime"), (int, float)) and solver["delta_prime"] < 0:
        errors.append("solver.delta_prime must be >= 0 (0 runs to max_iter)")
    output = doc.get("output", {})
    if isinstance(output, dict) and output.get("verbosity", "summary") not in VERBOSITY:
        errors.append(f"output.verbosity must be one of {', '.join(VERBOSITY)}, got {output.get('verbosity')!r}")
    bench = doc.get("bench")
    if isinstance(bench, dict):
        if bench.get("vary") not in ("d", "edges"):
            errors.append("bench.vary must be 'd' or 'edges'")
        if not bench.get("values"):
            errors.append("bench.values must be a non-empty list")
        if "fixed" not in bench:
            errors.append("bench.fixed is required")
    if errors:
        raise SpecError(f"{source}: " + "; ".join(errors))

    gen_doc = dict(doc.get("marginals", {}))
    vectors = gen_doc.pop("vectors", None)
    marginals = MarginalGen(
        kind=gen_doc.get("kind", "lognormal" if vectors is None else "explicit"),
        seed=int(gen_doc.get("seed", 0)),
        location=float(gen_doc.get("location", 0.0)),
        scale=float(gen_doc.get("scale", 1.0)),
        vectors=tuple(tuple(v) for v in vectors) if isinstance(vectors, list) else None,
    )
    solver_opts = SolverOptions(**{k: v for k, v in solver.items() if v is not None})
    bench_opts = None
    if isinstance(bench, dict):
        bench_opts = BenchOptions(
            vary=bench["vary"],
            values=tuple(int(v) for v in bench["values"]),
            fixed=int(bench["fixed"]),
            seeds=tuple(int(s) for s in bench.get("seeds", (0, 1, 2, 3, 4))),
            solvers=tuple(bench.get("solvers", ("tree-local", "global-isbp"))),
            parallel_points=bool(bench.get("parallel_points", False)),
        )
    return ProblemSpec(
        family=problem["family"],
        problem=problem,
        grid=_grid(doc.get("grid")),
        grid_v=_grid(doc.get("grid_v")),
        marginals=marginals,
        solver=solver_opts,
        output=OutputOptions(**doc.get("output", {})),
        bench=bench_opts,
        raw=doc,
        source=source,
    )


def load_spec(path: str) -> ProblemSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise SpecError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON ({exc})") from None
    logger.debug("Loaded problem spec %s", path)
    return parse_spec(doc, path)
