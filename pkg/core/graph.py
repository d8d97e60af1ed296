# core/graph.py
# Problem graphs: trees, junction trees, modified junction trees

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Dict, FrozenSet, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx

from core.errors import AssumptionViolation, ValidationError, Violation
from core.tensor import LabeledTensor

Edge = Tuple[int, int]

# Rule ids for the two structural conditions of a modified junction tree
RULE_CLIQUE_DEGREE = "Def4.4"
RULE_NESTED_SCOPES = "Assumption1"


def _adjacency(vertices: Iterable[int], edges: Iterable[Edge]) -> Dict[int, List[int]]:
    adj: Dict[int, List[int]] = {v: [] for v in vertices}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    for v in adj:
        adj[v].sort()
    return adj


def as_nx(adj: Mapping[Hashable, Sequence[Hashable]]) -> nx.Graph:
    """Undirected networkx view of an adjacency map; nodes keep the map's order."""
    g = nx.Graph()
    g.add_nodes_from(adj)
    g.add_edges_from((v, w) for v, nbrs in adj.items() for w in nbrs)
    return g


# ----------------------------------------------------------------
# Trees
# ----------------------------------------------------------------

@dataclass(frozen=True)
class TreeGraph:
    """Undirected tree on marginal indices; `constrained` is the set Γ."""

    vertices: Tuple[int, ...]
    edges: Tuple[Edge, ...]
    constrained: FrozenSet[int] = frozenset()

    @classmethod
    def from_edges(cls, edges: Iterable[Sequence[int]], constrained: Iterable[int] = (),
                   vertices: Optional[Iterable[int]] = None) -> "TreeGraph":
        norm = tuple(sorted((min(a, b), max(a, b)) for a, b in edges))
        if vertices is None:
            vertices = {v for e in norm for v in e}
        return cls(tuple(sorted(set(vertices))), norm, frozenset(constrained))

    @cached_property
    def adjacency(self) -> Dict[int, List[int]]:
        return _adjacency(self.vertices, self.edges)

    def neighbors(self, j: int) -> List[int]:
        return self.adjacency[j]

    def degree(self, j: int) -> int:
        return len(self.adjacency[j])

    @property
    def free(self) -> Tuple[int, ...]:
        return tuple(v for v in self.vertices if v not in self.constrained)

    def directed_edges(self) -> List[Edge]:
        return [(a, b) for a, b in self.edges] + [(b, a) for a, b in self.edges]

    @cached_property
    def graph(self) -> nx.Graph:
        return as_nx(self.adjacency)

    def diameter(self) -> int:
        """Longest shortest-path length d(G)."""
        if len(self.vertices) < 2:
            return 0
        return nx.diameter(self.graph)


def validate_tree(tree: TreeGraph) -> List[Violation]:
    out: List[Violation] = []
    vs = set(tree.vertices)
    if not vs:
        return [Violation("tree", "graph has no vertices")]
    if len(set(tree.edges)) != len(tree.edges):
        out.append(Violation("tree", "duplicate edge"))
    for a, b in tree.edges:
        if a == b:
            out.append(Violation("tree", f"self-loop at {a}", (a,)))
        if a not in vs or b not in vs:
            out.append(Violation("tree", f"edge ({a}, {b}) references an unknown vertex", (a, b)))
    if out:
        return out
    if not nx.is_tree(tree.graph):
        out.append(Violation("tree", f"{len(vs)} vertices and {len(tree.edges)} edges do not form a tree"))
    for j in sorted(tree.constrained):
        if j not in vs:
            out.append(Violation("constrained", f"constrained node {j} is not a vertex", (j,)))
        elif tree.degree(j) != 1:
            out.append(Violation("constrained-leaf", f"constrained node {j} has degree {tree.degree(j)}", (j,)))
    for a, b in tree.edges:
        if a in tree.constrained and b in tree.constrained:
            out.append(Violation("constrained-edge", f"edge ({a}, {b}) joins two constrained nodes", (a, b)))
    return out


@dataclass(frozen=True)
class BipartitePartition:
    s1: FrozenSet[int]
    s2: FrozenSet[int]

    def side(self, t: int) -> FrozenSet[int]:
        """Nodes updated at iteration t (odd → S1, even → S2)."""
        return self.s1 if t % 2 == 1 else self.s2

    def other(self, part: FrozenSet[int]) -> FrozenSet[int]:
        return self.s2 if part == self.s1 else self.s1


def two_color_adjacency(adj: Mapping[int, Sequence[int]]) -> BipartitePartition:
    """2-colouring where the smallest id of each component lands in S1 (isolated nodes too)."""
    g = as_nx({v: adj[v] for v in sorted(adj)})
    try:
        color = nx.bipartite.color(g)
    except nx.NetworkXError:
        cycle = [v for v, _ in nx.find_cycle(g)]
        raise ValidationError([Violation("bipartite", f"not 2-colourable (cycle through {cycle})", tuple(cycle))]) from None
    s1 = frozenset(v for v in g if color[v] == 1 or g.degree(v) == 0)
    return BipartitePartition(s1, frozenset(g) - s1)


def two_color(tree: TreeGraph) -> BipartitePartition:
    return two_color_adjacency(tree.adjacency)


# ----------------------------------------------------------------
# Junction trees (global formulation)
# ----------------------------------------------------------------

@dataclass(frozen=True)
class JunctionTree:
    cliques: Tuple[FrozenSet[int], ...]
    edges: Tuple[Edge, ...]
    constrained: FrozenSet[int] = frozenset()

    @classmethod
    def build(cls, cliques: Iterable[Iterable[int]], edges: Iterable[Sequence[int]],
              constrained: Iterable[int] = ()) -> "JunctionTree":
        return cls(
            tuple(frozenset(c) for c in cliques),
            tuple(sorted((min(a, b), max(a, b)) for a, b in edges)),
            frozenset(constrained),
        )

    @cached_property
    def adjacency(self) -> Dict[int, List[int]]:
        return _adjacency(range(len(self.cliques)), self.edges)

    @cached_property
    def graph(self) -> nx.Graph:
        return as_nx(self.adjacency)

    def neighbors(self, i: int) -> List[int]:
        return self.adjacency[i]

    def separator(self, i: int, j: int) -> FrozenSet[int]:
        return self.cliques[i] & self.cliques[j]

    def path(self, i: int, j: int) -> List[int]:
        return nx.shortest_path(self.graph, i, j)

    @property
    def variables(self) -> FrozenSet[int]:
        return frozenset().union(*self.cliques) if self.cliques else frozenset()

    def tree_width(self) -> int:
        return max(len(c) for c in self.cliques) - 1


def validate_jt(jt: JunctionTree, factors: Iterable[Iterable[int]] = ()) -> List[Violation]:
    out: List[Violation] = []
    n = len(jt.cliques)
    if n == 0:
        return [Violation("jt-tree", "junction tree has no cliques")]
    for a, b in jt.edges:
        if not (0 <= a < n and 0 <= b < n) or a == b:
            out.append(Violation("jt-tree", f"invalid clique edge ({a}, {b})", (a, b)))
    if out:
        return out
    if not nx.is_tree(jt.graph):
        out.append(Violation("jt-tree", f"{n} cliques and {len(jt.edges)} edges do not form a tree"))
        return out
    for alpha in factors:
        alpha = frozenset(alpha)
        if not any(alpha <= c for c in jt.cliques):
            out.append(Violation("family", f"factor {sorted(alpha)} is not contained in any clique", tuple(sorted(alpha))))
    for i, j in combinations(range(n), 2):
        shared = jt.cliques[i] & jt.cliques[j]
        if not shared:
            continue
        for k in jt.path(i, j)[1:-1]:
            if not shared <= jt.cliques[k]:
                out.append(Violation(
                    "running-intersection",
                    f"clique {k} on the path between {i} and {j} misses {sorted(shared - jt.cliques[k])}",
                    (i, j),
                ))
                break
    for c in sorted(jt.constrained):
        if not 0 <= c < n:
            out.append(Violation("constrained", f"constrained clique {c} does not exist", (c,)))
    return out


# ----------------------------------------------------------------
# Modified junction trees (local formulation)
# ----------------------------------------------------------------

@dataclass(frozen=True)
class SeparatorConstraint:
    """Marginal constraint μ_γ housed by a separator; `mu` is labeled over sorted γ."""

    gamma: Tuple[int, ...]
    mu: LabeledTensor


@dataclass(frozen=True)
class ModifiedJunctionTree:
    """Bipartite tree alternating cost cliques and separators.

    Edges are (cost clique index, separator index) pairs. `constraints` maps a
    separator index to the marginal constraint it houses.
    """

    cost_cliques: Tuple[FrozenSet[int], ...]
    separators: Tuple[FrozenSet[int], ...]
    edges: Tuple[Edge, ...]
    constraints: Mapping[int, SeparatorConstraint] = field(default_factory=dict)

    @classmethod
    def build(cls, cost_cliques, separators, edges, constraints=None) -> "ModifiedJunctionTree":
        return cls(
            tuple(frozenset(c) for c in cost_cliques),
            tuple(frozenset(s) for s in separators),
            tuple(sorted((int(q), int(s)) for q, s in edges)),
            dict(constraints or {}),
        )

    @cached_property
    def _clique_adj(self) -> Dict[int, List[int]]:
        adj: Dict[int, List[int]] = {q: [] for q in range(len(self.cost_cliques))}
        for q, s in self.edges:
            adj.setdefault(q, []).append(s)
        return {q: sorted(v) for q, v in adj.items()}

    @cached_property
    def _sep_adj(self) -> Dict[int, List[int]]:
        adj: Dict[int, List[int]] = {s: [] for s in range(len(self.separators))}
        for q, s in self.edges:
            adj.setdefault(s, []).append(q)
        return {s: sorted(v) for s, v in adj.items()}

    def clique_neighbors(self, q: int) -> List[int]:
        return self._clique_adj.get(q, [])

    def separator_neighbors(self, s: int) -> List[int]:
        return self._sep_adj.get(s, [])

    def other_separator(self, q: int, s: int) -> int:
        a, b = self.clique_neighbors(q)
        return b if a == s else a

    def separator_adjacency(self) -> Dict[int, List[int]]:
        """Separators are adjacent when they share a cost clique."""
        adj: Dict[int, set] = {s: set() for s in range(len(self.separators))}
        for q in range(len(self.cost_cliques)):
            nbrs = self.clique_neighbors(q)
            for a in nbrs:
                adj[a].update(b for b in nbrs if b != a)
        return {s: sorted(v) for s, v in adj.items()}

    def _node_adjacency(self) -> Dict[Tuple[str, int], List[Tuple[str, int]]]:
        adj = {("q", q): [] for q in range(len(self.cost_cliques))}
        adj.update({("s", s): [] for s in range(len(self.separators))})
        for q, s in self.edges:
            adj[("q", q)].append(("s", s))
            adj[("s", s)].append(("q", q))
        return {k: sorted(v) for k, v in adj.items()}

    @property
    def variables(self) -> FrozenSet[int]:
        return frozenset().union(*self.cost_cliques) if self.cost_cliques else frozenset()

    def tree_width(self) -> int:
        return max(len(c) for c in self.cost_cliques) - 1


@dataclass(frozen=True)
class InclusionEntry:
    position: int
    clique: int
    scope: FrozenSet[int]

    @property
    def labels(self) -> Tuple[int, ...]:
        return tuple(sorted(self.scope))


def inclusion_order(mjt: ModifiedJunctionTree, s: int, permissive: bool = False) -> Tuple[InclusionEntry, ...]:
    """Order the neighbours of separator s by decreasing intersection with s.

    Intersections must nest; the two largest must coincide unless `permissive`.
    """
    sep = mjt.separators[s]
    scoped = sorted(
        ((q, mjt.cost_cliques[q] & sep) for q in mjt.separator_neighbors(s)),
        key=lambda e: (-len(e[1]), e[0]),
    )
    for (qa, a), (qb, b) in zip(scoped, scoped[1:]):
        if not b <= a:
            raise AssumptionViolation(
                f"separator {s}: intersections with cliques {qa} and {qb} do not nest", qa, qb
            )
    if len(scoped) >= 2 and scoped[0][1] != scoped[1][1] and not permissive:
        qa, qb = scoped[0][0], scoped[1][0]
        raise AssumptionViolation(
            f"separator {s}: two largest intersections (cliques {qa}, {qb}) differ", qa, qb
        )
    return tuple(InclusionEntry(i + 1, q, frozenset(c)) for i, (q, c) in enumerate(scoped))


def validate_mjt(mjt: ModifiedJunctionTree, factors: Iterable[Iterable[int]] = (),
                 permissive: bool = False) -> List[Violation]:
    out: List[Violation] = []
    nq, ns = len(mjt.cost_cliques), len(mjt.separators)
    if nq == 0 or ns == 0:
        return [Violation("alternation", "needs at least one cost clique and one separator")]
    for q, s in mjt.edges:
        if not (0 <= q < nq and 0 <= s < ns):
            out.append(Violation("alternation", f"edge ({q}, {s}) does not join a cost clique to a separator", (q, s)))
    if len(set(mjt.edges)) != len(mjt.edges):
        out.append(Violation("alternation", "duplicate clique-separator edge"))
    if out:
        return out
    g = as_nx(mjt._node_adjacency())
    if not nx.is_tree(g):
        out.append(Violation("mjt-tree", f"{nq} cliques, {ns} separators and {len(mjt.edges)} edges do not form a tree"))
        return out
    for alpha in factors:
        alpha = frozenset(alpha)
        if not any(alpha <= c for c in mjt.cost_cliques):
            out.append(Violation("family", f"factor {sorted(alpha)} is not contained in any cost clique", tuple(sorted(alpha))))
    for i, j in combinations(range(nq), 2):
        shared = mjt.cost_cliques[i] & mjt.cost_cliques[j]
        if not shared:
            continue
        for kind, k in nx.shortest_path(g, ("q", i), ("q", j))[1:-1]:
            scope = mjt.cost_cliques[k] if kind == "q" else mjt.separators[k]
            if not shared <= scope:
                out.append(Violation(
                    "running-intersection",
                    f"{'clique' if kind == 'q' else 'separator'} {k} on the path between cliques {i} and {j} "
                    f"misses {sorted(shared - scope)}",
                    (i, j),
                ))
                break
    for q in range(nq):
        deg = len(mjt.clique_neighbors(q))
        if deg != 2:
            out.append(Violation(RULE_CLIQUE_DEGREE, f"cost clique {q} has {deg} separator neighbours (needs 2)", (q,)))
    for s in range(ns):
        if not mjt.separator_neighbors(s):
            out.append(Violation("separator", f"separator {s} has no cost clique neighbour", (s,)))
            continue
        try:
            order = inclusion_order(mjt, s, permissive)
        except AssumptionViolation as exc:
            out.append(Violation(RULE_NESTED_SCOPES, str(exc), (s,)))
            continue
        con = mjt.constraints.get(s)
        if con is not None:
            gamma = frozenset(con.gamma)
            if tuple(con.mu.labels) != tuple(sorted(gamma)):
                out.append(Violation("constraint", f"separator {s}: μ labels {con.mu.labels} differ from γ {sorted(gamma)}", (s,)))
            if not gamma <= order[-1].scope:
                out.append(Violation(
                    "constraint",
                    f"separator {s}: γ {sorted(gamma)} not inside the smallest intersection {sorted(order[-1].scope)}",
                    (s,),
                ))
    for s in mjt.constraints:
        if not 0 <= s < ns:
            out.append(Violation("constraint", f"constraint housed by unknown separator {s}", (s,)))
    return out
