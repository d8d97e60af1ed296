# Random problem instances shared by the test modules.

import sys
import os

import numpy as np

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.graph import TreeGraph
from core.tree_local import TreeProblem, recipe


def random_distribution(rng, n, floor=0.05):
    v = rng.random(n) + floor
    return v / v.sum()


def random_tree_problem(seed, max_edges=6, max_d=6, min_d=2, epsilon=None, delta=0.2, min_edges=2):
    """Random tree with every leaf constrained, costs uniform in [0, 1)."""
    rng = np.random.default_rng(seed)
    n_edges = int(rng.integers(min_edges, max_edges + 1))
    edges = [(int(rng.integers(i)), i) for i in range(1, n_edges + 1)]
    shape = TreeGraph.from_edges(edges)
    leaves = [v for v in shape.vertices if shape.degree(v) == 1]
    tree = TreeGraph.from_edges(edges, constrained=leaves)
    sizes = {v: int(rng.integers(min_d, max_d + 1)) for v in tree.vertices}
    costs = {(a, b): rng.random((sizes[a], sizes[b])) for a, b in tree.edges}
    marginals = {j: random_distribution(rng, sizes[j]) for j in leaves}
    if epsilon is None:
        c_inf = max(float(C.max()) for C in costs.values())
        epsilon = recipe(delta, n_edges, max(sizes.values()), c_inf)[0]
    return TreeProblem.build(tree, costs, marginals, epsilon)


def dual_feasible_state(state, seed, spread=1.0):
    """Randomize log u on every directed edge, keeping Σ_k log u_(j,k) constant at free nodes."""
    rng = np.random.default_rng(seed)
    p = state.problem
    for (j, k) in p.tree.directed_edges():
        state.log_u[(j, k)] = spread * rng.standard_normal(p.sizes[j])
    for j in p.tree.free:
        nbrs = p.tree.neighbors(j)
        rho = float(spread * rng.standard_normal())
        rest = np.sum([state.log_u[(j, k)] for k in nbrs[:-1]], axis=0) if len(nbrs) > 1 else 0.0
        state.log_u[(j, nbrs[-1])] = rho - rest
        state.rho[j] = rho
    return state
