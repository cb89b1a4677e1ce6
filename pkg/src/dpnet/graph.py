"""Graph algorithms: moralization, vertex elimination, constrained triangulation.

Undirected graphs are adjacency maps ``{vertex: set(neighbours)}``. Vertex
ids must be hashable and mutually sortable; sorting is the final tie-break
everywhere so every result is deterministic.
"""

from __future__ import annotations

import graphlib
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Hashable, Iterable, Mapping, Sequence

from .errors import CycleError, GraphError

HEURISTICS = ("min-weight", "min-fill", "given-order")


def edge(u, v) -> tuple:
    """Canonical unordered pair."""
    return (u, v) if u <= v else (v, u)


class UGraph:
    """Simple undirected graph without self-loops."""

    def __init__(self, vertices: Iterable[Hashable] = (), edges: Iterable[tuple] = ()):
        self.adj: dict[Hashable, set] = {v: set() for v in vertices}
        for u, v in edges:
            self.add_edge(u, v)

    def add_vertex(self, v):
        self.adj.setdefault(v, set())

    def add_edge(self, u, v):
        if u == v:
            raise GraphError(f"self-loop on {u!r}")
        self.adj.setdefault(u, set()).add(v)
        self.adj.setdefault(v, set()).add(u)

    def has_edge(self, u, v) -> bool:
        return v in self.adj.get(u, ())

    def neighbors(self, v) -> set:
        try:
            return self.adj[v]
        except KeyError:
            raise GraphError(f"vertex {v!r} not in graph") from None

    @property
    def vertices(self) -> list:
        return sorted(self.adj)

    def edges(self) -> set[tuple]:
        return {edge(u, v) for u in self.adj for v in self.adj[u]}

    def __contains__(self, v):
        return v in self.adj

    def __len__(self):
        return len(self.adj)

    def copy(self) -> "UGraph":
        g = UGraph()
        g.adj = {v: set(n) for v, n in self.adj.items()}
        return g

    def subgraph(self, vertices: Iterable[Hashable]) -> "UGraph":
        keep = set(vertices)
        g = UGraph()
        g.adj = {v: self.adj[v] & keep for v in self.adj if v in keep}
        return g

    def union(self, other: "UGraph") -> "UGraph":
        g = self.copy()
        for v, nbrs in other.adj.items():
            g.add_vertex(v)
            for u in nbrs:
                g.add_edge(u, v)
        return g

    def make_complete(self, vertices: Iterable[Hashable]):
        for u, v in combinations(sorted(set(vertices)), 2):
            self.add_edge(u, v)

    def components(self) -> list[set]:
        seen, out = set(), []
        for s in self.vertices:
            if s in seen:
                continue
            comp, stack = {s}, [s]
            while stack:
                for w in self.adj[stack.pop()]:
                    if w not in comp:
                        comp.add(w)
                        stack.append(w)
            seen |= comp
            out.append(comp)
        return out

    def __eq__(self, other):
        return isinstance(other, UGraph) and self.adj == other.adj

    def __repr__(self):
        return f"UGraph(|V|={len(self.adj)}, |E|={len(self.edges())})"


def topological_order(parents: Mapping[Hashable, Iterable[Hashable]]) -> list:
    """Vertices ordered parents-first; ties resolved by vertex id."""
    ts = graphlib.TopologicalSorter({v: tuple(ps) for v, ps in parents.items()})
    try:
        ts.prepare()
    except graphlib.CycleError as exc:
        raise CycleError(f"directed cycle through {exc.args[1]}") from None
    out = []
    while ts.is_active():
        ready = sorted(ts.get_ready())
        out.extend(ready)
        ts.done(*ready)
    return out


def moralize(parents: Mapping[Hashable, Iterable[Hashable]]) -> UGraph:
    """Moral graph of a DAG given as ``{child: parents}``.

    Parents that never appear as keys are treated as root vertices.
    """
    topological_order(parents)
    g = UGraph()
    for child, ps in parents.items():
        ps = list(ps)
        g.add_vertex(child)
        for p in ps:
            g.add_edge(p, child)
        g.make_complete(ps)
    return g


def eliminate(g: UGraph, v) -> tuple[UGraph, set[tuple]]:
    """Eliminate ``v``: complete its neighbourhood, then delete it."""
    nbrs = g.neighbors(v)
    fills = {edge(a, b) for a, b in combinations(sorted(nbrs), 2) if not g.has_edge(a, b)}
    out = g.copy()
    for a, b in fills:
        out.add_edge(a, b)
    for u in nbrs:
        out.adj[u].discard(v)
    del out.adj[v]
    return out, fills


def is_complete(g: UGraph, vertices: Iterable[Hashable]) -> bool:
    vs = list(vertices)
    return all(g.has_edge(a, b) for a, b in combinations(vs, 2))


def fill_in(g: UGraph, order: Sequence[Hashable]) -> set[tuple]:
    """Fill edges ``T(G_#)`` produced by eliminating in ``order``."""
    if sorted(order) != g.vertices:
        raise GraphError("order is not a bijection onto the vertex set")
    work = g.copy()
    fills: set[tuple] = set()
    for v in order:
        nbrs = sorted(work.adj[v])
        for a, b in combinations(nbrs, 2):
            if b not in work.adj[a]:
                work.add_edge(a, b)
                fills.add(edge(a, b))
        for u in nbrs:
            work.adj[u].discard(v)
        del work.adj[v]
    return fills


def fill_characterization_check(g: UGraph, order: Sequence[Hashable], pair: tuple) -> bool:
    """True iff some path joins the pair through vertices numbered below both ends.

    This is exactly the membership test for ``E ∪ T(G_#)``.
    """
    a, b = pair
    if a == b or a not in g or b not in g:
        raise GraphError(f"invalid pair {pair!r}")
    num = {v: i for i, v in enumerate(order)}
    bound = min(num[a], num[b])
    seen, stack = {a}, [a]
    while stack:
        for w in g.adj[stack.pop()]:
            if w == b:
                return True
            if w not in seen and num[w] < bound:
                seen.add(w)
                stack.append(w)
    return False


@dataclass
class Triangulation:
    """Result of eliminating every vertex of a graph in ``order``."""

    fill_edges: set
    order: list
    cliques: list  # frozensets, in creation order
    graph: UGraph = field(repr=False)  # (V, E ∪ fill_edges)


def _step_costs(work: UGraph, v, weights):
    nbrs = work.adj[v]
    fill = 0
    ordered = sorted(nbrs)
    for i, a in enumerate(ordered):
        na = work.adj[a]
        for b in ordered[i + 1:]:
            if b not in na:
                fill += 1
    weight = weights.get(v, 2) * math.prod(weights.get(u, 2) for u in nbrs)
    return weight, fill


def greedy_order(
    g: UGraph,
    blocks: Sequence[Iterable[Hashable]] | None = None,
    heuristic: str = "min-weight",
    weights: Mapping[Hashable, int] | None = None,
    prefix: Sequence[Hashable] = (),
) -> list:
    """Greedy elimination order respecting ``blocks`` (oldest block first).

    ``prefix`` vertices are eliminated first, in the given sequence, and must
    form a union of leading blocks.
    """
    weights = weights or {}
    if heuristic not in ("min-weight", "min-fill"):
        raise GraphError(f"unknown heuristic {heuristic!r}")
    blocks = [set(b) for b in blocks] if blocks is not None else [set(g.adj)]
    _check_partition(g, blocks)
    work = g.copy()
    order = list(prefix)
    done = set(prefix)
    for v in prefix:
        work, _ = eliminate(work, v)
    for block in blocks:
        todo = block - done
        while todo:
            best, best_key = None, None
            for v in todo:
                w, f = _step_costs(work, v, weights)
                key = (w, f, v) if heuristic == "min-weight" else (f, w, v)
                if best_key is None or key < best_key:
                    best, best_key = v, key
            order.append(best)
            todo.discard(best)
            done.add(best)
            nbrs = sorted(work.adj[best])
            for a, b in combinations(nbrs, 2):
                work.add_edge(a, b)
            for u in nbrs:
                work.adj[u].discard(best)
            del work.adj[best]
    return order


def _check_partition(g: UGraph, blocks: list[set]):
    seen: set = set()
    for b in blocks:
        if seen & b:
            raise GraphError("blocks overlap")
        seen |= b
    if seen != set(g.adj):
        raise GraphError("blocks do not partition the vertex set")


def respects_blocks(order: Sequence[Hashable], blocks: Sequence[Iterable[Hashable]]) -> bool:
    rank = {v: i for i, b in enumerate(blocks) for v in b}
    ranks = [rank[v] for v in order]
    return ranks == sorted(ranks)


def triangulate_constrained(
    g: UGraph,
    blocks: Sequence[Iterable[Hashable]] | None = None,
    heuristic: str = "min-weight",
    weights: Mapping[Hashable, int] | None = None,
    order: Sequence[Hashable] | None = None,
    prefix: Sequence[Hashable] = (),
) -> Triangulation:
    """Triangulate ``g`` with an elimination order constrained by ``blocks``.

    Args:
        g: Graph to triangulate (not modified).
        blocks: Ordered partition of the vertices; every vertex of an earlier
            block is eliminated before any vertex of a later one. ``None``
            means a single block.
        heuristic: ``"min-weight"`` (clique state-space size, ties by fill
            count), ``"min-fill"`` (fill count, ties by weight), or
            ``"given-order"`` to use ``order`` verbatim.
        weights: State-space size per vertex (default 2).
        order: Required for ``"given-order"``.
        prefix: Vertices to eliminate first in the given sequence.
    """
    if heuristic not in HEURISTICS:
        raise GraphError(f"unknown heuristic {heuristic!r}")
    block_sets = [set(b) for b in blocks] if blocks is not None else [set(g.adj)]
    _check_partition(g, block_sets)
    if heuristic == "given-order":
        if order is None:
            raise GraphError("given-order heuristic needs an explicit order")
        order = list(order)
        if sorted(order) != g.vertices:
            raise GraphError("order is not a bijection onto the vertex set")
        if not respects_blocks(order, block_sets):
            raise GraphError("order violates the block constraint")
    else:
        order = greedy_order(g, block_sets, heuristic, weights, prefix)
    fills = fill_in(g, order)
    filled = g.copy()
    for a, b in fills:
        filled.add_edge(a, b)
    return Triangulation(fills, order, maximal_cliques(filled, order), filled)


def maximal_cliques(g: UGraph, order: Sequence[Hashable]) -> list[frozenset]:
    """Maximal cliques of a triangulated graph, in order of creation.

    Raises:
        GraphError: ``order`` is not a perfect elimination order of ``g``.
    """
    num = {v: i for i, v in enumerate(order)}
    if len(num) != len(g) or set(num) != set(g.adj):
        raise GraphError("order is not a bijection onto the vertex set")
    candidates = []
    for v in order:
        later = [u for u in g.adj[v] if num[u] > num[v]]
        if not is_complete(g, later):
            raise GraphError(f"order is not perfect: neighbours of {v!r} are not complete")
        candidates.append(frozenset(later) | {v})
    cliques = []
    for i, c in enumerate(candidates):
        if not any(c < d for d in candidates) and c not in cliques:
            cliques.append(c)
    return cliques
