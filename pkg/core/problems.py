# core/problems.py
# Builders for the example problem families

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import stats

from core import config
from core.errors import ContractError, ValidationError, Violation
from core.graph import JunctionTree, ModifiedJunctionTree, SeparatorConstraint, TreeGraph
from core.graph_local import GraphLocalProblem
from core.mot_global import MotProblem
from core.tensor import LabeledTensor, broadcast_add
from core.tree_local import TreeProblem, recipe

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    d: int
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError([Violation("grid", f"grid needs at least one point, got d={self.d}")])
        if not self.lo < self.hi:
            raise ValidationError([Violation("grid", f"grid interval [{self.lo}, {self.hi}] is empty")])

    def points(self) -> np.ndarray:
        if self.d == 1:
            return np.array([self.lo])
        return np.linspace(self.lo, self.hi, self.d)


@dataclass(frozen=True)
class MarginalGen:
    kind: str = "lognormal"
    seed: int = 0
    location: float = 0.0
    scale: float = 1.0
    vectors: Optional[Tuple[Tuple[float, ...], ...]] = None


def lognormal_marginals(gen: MarginalGen, grid: GridSpec, count: int) -> List[np.ndarray]:
    """Normalized log-normal densities, one random location shift in [−0.5, 0.5] per marginal.

    Densities are evaluated at the cell centres (i + 0.5)/d of (0, 1), not at
    `grid.points()` and independent of `grid.lo`/`grid.hi`: the default grid starts
    at 0, where the log-normal density vanishes, and zero marginal entries are rejected.
    """
    if count < 1:
        raise ContractError("count must be at least 1")
    rng = np.random.default_rng(gen.seed)
    x = (np.arange(grid.d) + 0.5) / grid.d
    out = []
    for _ in range(count):
        shift = rng.uniform(-0.5, 0.5)
        dens = stats.lognorm(s=gen.scale, scale=np.exp(gen.location + shift)).pdf(x)
        dens = np.maximum(dens, np.finfo(float).tiny)
        out.append(dens / dens.sum())
    return out


def make_marginals(gen: MarginalGen, grid: GridSpec, count: int) -> List[np.ndarray]:
    if gen.kind == "lognormal":
        return lognormal_marginals(gen, grid, count)
    if gen.kind != "explicit":
        raise ValidationError([Violation("marginals", f"unknown marginal generator '{gen.kind}'")])
    vectors = [np.asarray(v, dtype=float) for v in (gen.vectors or ())]
    if len(vectors) != count:
        raise ValidationError([Violation("marginals", f"{len(vectors)} explicit marginals given, {count} needed")])
    return vectors


def squared_distance(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return (gx[:, None] - gy[None, :]) ** 2


def resolve_epsilon(epsilon: Optional[float], delta: float, n_edges: int, d: int, c_inf: float) -> float:
    if epsilon is not None:
        return float(epsilon)
    return recipe(delta, n_edges, d, c_inf)[0]


def _cost_on(sizes: Mapping[int, int], labels: Sequence[int], *terms: LabeledTensor) -> LabeledTensor:
    t = LabeledTensor.zeros(sizes, labels)
    for term in terms:
        t = broadcast_add(t, term)
    return t


# ----------------------------------------------------------------
# Barycenter
# ----------------------------------------------------------------

def barycenter_problem(n_leaves: int, grid: GridSpec, gen: MarginalGen, epsilon: Optional[float] = None,
                       delta: float = config.DEFAULT_DELTA) -> TreeProblem:
    """Star with free centre 0 and constrained leaves 1..n, squared-distance costs."""
    if n_leaves < 2:
        raise ContractError(f"barycenter needs at least two leaves, got {n_leaves}")
    pts = grid.points()
    C = squared_distance(pts, pts)
    tree = TreeGraph.from_edges([(0, j) for j in range(1, n_leaves + 1)], constrained=range(1, n_leaves + 1))
    mus = make_marginals(gen, grid, n_leaves)
    eps = resolve_epsilon(epsilon, delta, n_leaves, grid.d, float(C.max()))
    return TreeProblem.build(
        tree,
        {(0, j): C for j in range(1, n_leaves + 1)},
        {j: mus[j - 1] for j in range(1, n_leaves + 1)},
        eps,
    )


# ----------------------------------------------------------------
# Conversions
# ----------------------------------------------------------------

def tree_to_mot(p: TreeProblem) -> MotProblem:
    """Same marginals and costs under global regularization: edge cliques plus one leaf per constraint."""
    tree = p.tree
    edges = list(tree.edges)
    index = {e: i for i, e in enumerate(edges)}
    root = min(tree.vertices)
    jt_edges: List[Tuple[int, int]] = []

    parent_edge: Dict[int, int] = {}
    for v, children in nx.bfs_successors(tree.graph, root, sort_neighbors=sorted):
        for w in children:
            e = index[(min(v, w), max(v, w))]
            parent_edge[w] = e
            hub = parent_edge.get(v)
            if hub is None:
                hub = index[(min(v, children[0]), max(v, children[0]))]
            if hub != e:
                jt_edges.append((hub, e))

    cliques = [frozenset(e) for e in edges]
    constrained = []
    for j in sorted(tree.constrained):
        k = p.constrained_neighbor(j)
        cliques.append(frozenset((j,)))
        constrained.append(len(cliques) - 1)
        jt_edges.append((index[(min(j, k), max(j, k))], len(cliques) - 1))

    jt = JunctionTree.build(cliques, jt_edges, constrained)
    costs = [LabeledTensor(e, p.costs[e]) for e in edges]
    cons = [LabeledTensor((j,), p.marginals[j]) for j in sorted(tree.constrained)]
    return MotProblem.build(p.sizes, costs, cons, p.epsilon, jt)


def tree_to_graph_local(p: TreeProblem) -> GraphLocalProblem:
    """Edges become cost cliques, nodes become separators (in sorted node order)."""
    vertices = list(p.tree.vertices)
    sep_index = {v: i for i, v in enumerate(vertices)}
    constraints = {
        sep_index[j]: SeparatorConstraint((j,), LabeledTensor((j,), p.marginals[j]))
        for j in p.tree.constrained
    }
    edges = []
    for q, (j, k) in enumerate(p.tree.edges):
        edges.append((q, sep_index[j]))
        edges.append((q, sep_index[k]))
    mjt = ModifiedJunctionTree.build(
        [frozenset(e) for e in p.tree.edges],
        [frozenset((v,)) for v in vertices],
        edges,
        constraints,
    )
    costs = [LabeledTensor(e, p.costs[e]) for e in p.tree.edges]
    return GraphLocalProblem.build(mjt, costs, p.sizes, p.epsilon)


# ----------------------------------------------------------------
# Euler flow
# ----------------------------------------------------------------

@dataclass(frozen=True)
class EulerInstance:
    mot: MotProblem
    graph_local: Optional[GraphLocalProblem]


def _check_permutation(sigma: Sequence[int], d: int) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=int)
    if sigma.shape != (d,) or sorted(sigma.tolist()) != list(range(d)):
        raise ValidationError([Violation("permutation", f"sigma {sigma.tolist()} is not a permutation of 0..{d - 1}")])
    return sigma


def euler_problem(J: int, grid: GridSpec, sigma: Sequence[int], variant: str = "relaxed",
                  epsilon: Optional[float] = None, delta: float = config.DEFAULT_DELTA,
                  penalty: float = 1.0) -> EulerInstance:
    """Generalized incompressible flow on J time steps; labels are 1..J, sigma is 0-based."""
    if J < 3:
        raise ContractError(f"Euler flow needs J >= 3, got {J}")
    if variant not in ("hard", "relaxed"):
        raise ValidationError([Violation("variant", f"unknown Euler variant '{variant}'")])
    d = grid.d
    sigma = _check_permutation(sigma, d)
    g = grid.points()
    C = squared_distance(g, g)
    C_sigma = penalty * squared_distance(g[sigma], g)
    sizes = {j: d for j in range(1, J + 1)}
    uniform = np.full(d, 1.0 / d)

    pair_costs = [LabeledTensor((j, j + 1), C) for j in range(1, J)]
    costs = list(pair_costs)
    if variant == "relaxed":
        costs.append(LabeledTensor((1, J), C_sigma))
    c_inf = float(C.max()) * (J - 1) + (float(C_sigma.max()) if variant == "relaxed" else 0.0)
    eps = resolve_epsilon(epsilon, delta, len(costs), d, c_inf)

    constraints = [LabeledTensor((j,), uniform) for j in range(1, J + 1)]
    chain = [frozenset((1, j, j + 1)) for j in range(2, J)]
    jt_edges = [(i, i + 1) for i in range(len(chain) - 1)]
    cliques = list(chain)
    leaves = []
    for j in range(1, J + 1):
        home = 0 if j <= 2 else j - 3
        cliques.append(frozenset((j,)))
        leaves.append(len(cliques) - 1)
        jt_edges.append((home, len(cliques) - 1))
    if variant == "hard":
        perm = np.zeros((d, d))
        perm[np.arange(d), sigma] = 1.0 / d
        constraints.append(LabeledTensor((1, J), perm))
        cliques.append(frozenset((1, J)))
        leaves.append(len(cliques) - 1)
        jt_edges.append((len(chain) - 1, len(cliques) - 1))
    jt = JunctionTree.build(cliques, jt_edges, leaves)
    mot = MotProblem.build(sizes, costs, constraints, eps, jt, allow_zero=(variant == "hard"))

    if variant == "hard":
        return EulerInstance(mot, None)

    # cost cliques {1,2}, {1,j,j+1}; separators {1} and {1,j} housing γ = {j}
    cost_cliques = [frozenset((1, 2))] + [frozenset((1, j, j + 1)) for j in range(2, J)]
    separators = [frozenset((1,))] + [frozenset((1, j)) for j in range(2, J + 1)]
    mjt_edges = []
    for q in range(len(cost_cliques)):
        mjt_edges.append((q, q))
        mjt_edges.append((q, q + 1))
    cons = {0: SeparatorConstraint((1,), LabeledTensor((1,), uniform))}
    for j in range(2, J + 1):
        cons[j - 1] = SeparatorConstraint((j,), LabeledTensor((j,), uniform))
    mjt = ModifiedJunctionTree.build(cost_cliques, separators, mjt_edges, cons)
    clique_costs = [LabeledTensor((1, 2), C)]
    for j in range(2, J):
        terms = [pair_costs[j - 1]]
        if j + 1 == J:
            terms.append(LabeledTensor((1, J), C_sigma))
        clique_costs.append(_cost_on(sizes, (1, j, j + 1), *terms))
    local = GraphLocalProblem.build(mjt, clique_costs, sizes, eps, factors=[c.labels for c in costs])
    return EulerInstance(mot, local)


# ----------------------------------------------------------------
# Wasserstein least squares
# ----------------------------------------------------------------

@dataclass(frozen=True)
class FamilyInstance:
    graph_local: GraphLocalProblem
    mot: MotProblem


def _check_times(times: Sequence[float], count: int, closed_unit: bool) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    out = []
    if t.shape != (count,):
        out.append(Violation("times", f"{t.size} time points given, {count} needed"))
    elif np.any(np.diff(t) <= 0):
        out.append(Violation("times", f"time points {t.tolist()} are not strictly increasing"))
    elif closed_unit and (t.min() < 0 or t.max() > 1):
        out.append(Violation("times", f"time points {t.tolist()} leave [0, 1]"))
    if out:
        raise ValidationError(out)
    return t


def wls_clique_cost(grid: np.ndarray, t: float, alpha: float, J: int) -> np.ndarray:
    """Cost over (x_0, x_j, x_{J+1}): interpolation residual plus an α/J share of the endpoint penalty."""
    x0 = grid[:, None, None]
    xj = grid[None, :, None]
    x1 = grid[None, None, :]
    return (xj - (1.0 - t) * x0 - t * x1) ** 2 + (alpha / J) * (x0 - x1) ** 2


def wls_problem(J: int, times: Optional[Sequence[float]], grid: GridSpec, gen: MarginalGen, alpha: float = 10.0,
                epsilon: Optional[float] = None, delta: float = config.DEFAULT_DELTA) -> FamilyInstance:
    """Variables 0..J+1; x_0 and x_{J+1} are the regression endpoints, x_j observed at t_j."""
    if J < 1:
        raise ContractError(f"WLS needs J >= 1, got {J}")
    if alpha <= 0:
        raise ValidationError([Violation("alpha", f"alpha must be positive, got {alpha}")])
    t = _check_times(np.linspace(0.0, 1.0, J) if times is None else times, J, closed_unit=True)
    g = grid.points()
    end = J + 1
    sizes = {a: grid.d for a in range(J + 2)}
    rhos = make_marginals(gen, grid, J)
    costs = [LabeledTensor((0, j, end), wls_clique_cost(g, t[j - 1], alpha, J)) for j in range(1, J + 1)]
    eps = resolve_epsilon(epsilon, delta, J, grid.d, max(float(c.values.max()) for c in costs))

    separators = [frozenset((0, end))] + [frozenset((j,)) for j in range(1, J + 1)]
    mjt_edges = [(j - 1, 0) for j in range(1, J + 1)] + [(j - 1, j) for j in range(1, J + 1)]
    cons = {j: SeparatorConstraint((j,), LabeledTensor((j,), rhos[j - 1])) for j in range(1, J + 1)}
    mjt = ModifiedJunctionTree.build([c.labels for c in costs], separators, mjt_edges, cons)
    local = GraphLocalProblem.build(mjt, costs, sizes, eps)

    cliques = [frozenset(c.labels) for c in costs] + [frozenset((j,)) for j in range(1, J + 1)]
    jt_edges = [(i, i + 1) for i in range(J - 1)] + [(j - 1, J + j - 1) for j in range(1, J + 1)]
    jt = JunctionTree.build(cliques, jt_edges, range(J, 2 * J))
    constraints = [LabeledTensor((j,), rhos[j - 1]) for j in range(1, J + 1)]
    mot = MotProblem.build(sizes, costs, constraints, eps, jt)
    return FamilyInstance(local, mot)


# ----------------------------------------------------------------
# Splines in measure space
# ----------------------------------------------------------------

def position(j: int) -> int:
    return 2 * j


def velocity(j: int) -> int:
    return 2 * j + 1


def spline_clique_cost(gx: np.ndarray, gv: np.ndarray, dt: float) -> np.ndarray:
    """Cost over (x_j, v_j, x_{j+1}, v_{j+1}) of one cubic segment of length dt."""
    xa = gx[:, None, None, None]
    va = gv[None, :, None, None]
    xb = gx[None, None, :, None]
    vb = gv[None, None, None, :]
    slope = (xb - xa) / dt - va
    dv = vb - va
    return (12.0 * slope ** 2 - 12.0 * slope * dv + 4.0 * dv ** 2) / dt


def spline_problem(J: int, times: Optional[Sequence[float]], grid_x: GridSpec, grid_v: GridSpec, gen: MarginalGen,
                   epsilon: Optional[float] = None, delta: float = config.DEFAULT_DELTA) -> FamilyInstance:
    """J time points; position x_j has label 2j and velocity v_j label 2j+1."""
    if J < 2:
        raise ContractError(f"spline needs at least two time points, got {J}")
    t = _check_times(np.linspace(0.0, 1.0, J) if times is None else times, J, closed_unit=False)
    gx, gv = grid_x.points(), grid_v.points()
    sizes: Dict[int, int] = {}
    for j in range(J):
        sizes[position(j)] = grid_x.d
        sizes[velocity(j)] = grid_v.d
    rhos = make_marginals(gen, grid_x, J)
    costs = [
        LabeledTensor((position(j), velocity(j), position(j + 1), velocity(j + 1)),
                      spline_clique_cost(gx, gv, float(t[j + 1] - t[j])))
        for j in range(J - 1)
    ]
    eps = resolve_epsilon(epsilon, delta, J - 1, max(grid_x.d, grid_v.d), max(float(np.abs(c.values).max()) for c in costs))

    separators = [frozenset((position(0),))]
    separators += [frozenset((position(j), velocity(j))) for j in range(1, J - 1)]
    separators.append(frozenset((position(J - 1),)))
    mjt_edges = [(j, j) for j in range(J - 1)] + [(j, j + 1) for j in range(J - 1)]
    cons = {
        j: SeparatorConstraint((position(j),), LabeledTensor((position(j),), rhos[j]))
        for j in range(J)
    }
    mjt = ModifiedJunctionTree.build([frozenset(c.labels) for c in costs], separators, mjt_edges, cons)
    local = GraphLocalProblem.build(mjt, costs, sizes, eps)

    cliques = [frozenset(c.labels) for c in costs] + [frozenset((position(j),)) for j in range(J)]
    jt_edges = [(i, i + 1) for i in range(J - 2)]
    jt_edges += [(max(j - 1, 0), J - 1 + j) for j in range(J)]
    jt = JunctionTree.build(cliques, jt_edges, range(J - 1, 2 * J - 1))
    constraints = [LabeledTensor((position(j),), rhos[j]) for j in range(J)]
    mot = MotProblem.build(sizes, costs, constraints, eps, jt)
    return FamilyInstance(local, mot)
