"""Junction trees: construction, potential attachment, Hugin propagation, queries."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from . import potential as pt
from .errors import JunctionTreeError, NotCalibratedError, ZeroMassError
from .graph import UGraph, triangulate_constrained
from .potential import PotentialTable

CALIBRATION_TOL = 1e-10


@dataclass
class PropagationResult:
    """Outcome of one propagation.

    ``normalization`` is the total mass found at the root before rescaling;
    on a freshly built tree with proper CPTs it is the probability of the
    entered evidence.
    """

    normalization: float
    calibrated: bool


@dataclass(frozen=True)
class Finding:
    var: Hashable
    state: int | None = None
    likelihood: tuple | None = None


class JunctionTree:
    """Cliques with potentials, joined by sepsets that carry their own tables.

    The represented (unnormalized) distribution is the product of the clique
    tables divided by the product of the sepset tables. ``log_mass`` records
    the log of every normalization constant divided out during propagation,
    so ``exp(log_mass)`` times the current total mass is the probability of
    all evidence entered since construction.
    """

    def __init__(self, cliques: Sequence[Iterable[Hashable]], cards: Mapping[Hashable, int],
                 edges: Iterable[tuple[int, int]] = ()):
        self.cliques: list[frozenset] = [frozenset(c) for c in cliques]
        self.cards = dict(cards)
        self.potentials: list[PotentialTable] = [self._unity(c) for c in self.cliques]
        self.sepsets: dict[tuple[int, int], PotentialTable] = {}
        self.adj: list[set[int]] = [set() for _ in self.cliques]
        for i, j in edges:
            self.add_edge(i, j)
        self.journal: list[Finding] = []
        self.calibrated = False
        self.log_mass = 0.0
        self.root = 0

    # construction helpers

    def _unity(self, vertices) -> PotentialTable:
        vs = sorted(vertices)
        return pt.unity([(v, self.cards[v]) for v in vs])

    def add_edge(self, i: int, j: int, table: PotentialTable | None = None):
        key = (min(i, j), max(i, j))
        if key in self.sepsets or i == j:
            raise JunctionTreeError(f"bad or duplicate edge {key}")
        self.sepsets[key] = table if table is not None else self._unity(self.cliques[i] & self.cliques[j])
        self.adj[i].add(j)
        self.adj[j].add(i)

    def add_clique(self, vertices, table: PotentialTable | None = None) -> int:
        self.cliques.append(frozenset(vertices))
        self.potentials.append(table if table is not None else self._unity(vertices))
        self.adj.append(set())
        return len(self.cliques) - 1

    def sepset(self, i: int, j: int) -> PotentialTable:
        return self.sepsets[(min(i, j), max(i, j))]

    def set_sepset(self, i: int, j: int, table: PotentialTable):
        self.sepsets[(min(i, j), max(i, j))] = table

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted(self.sepsets)

    @property
    def variables(self) -> set:
        return set().union(*self.cliques) if self.cliques else set()

    def copy(self) -> "JunctionTree":
        # tables are never mutated in place, so sharing them is safe
        t = copy.copy(self)
        t.cliques = list(self.cliques)
        t.cards = dict(self.cards)
        t.potentials = list(self.potentials)
        t.sepsets = dict(self.sepsets)
        t.adj = [set(a) for a in self.adj]
        t.journal = list(self.journal)
        return t

    def total_cells(self) -> int:
        return sum(p.size for p in self.potentials) + sum(s.size for s in self.sepsets.values())

    # structure checks

    def is_tree(self) -> bool:
        n = len(self.cliques)
        if n == 0:
            return True
        if len(self.sepsets) != n - 1:
            return False
        seen, stack = {0}, [0]
        while stack:
            for j in self.adj[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return len(seen) == n

    def has_junction_property(self) -> bool:
        """Every variable's host cliques form a connected subtree."""
        for v in self.variables:
            hosts = {i for i, c in enumerate(self.cliques) if v in c}
            start = next(iter(hosts))
            seen, stack = {start}, [start]
            while stack:
                for j in self.adj[stack.pop()]:
                    if j in hosts and j not in seen:
                        seen.add(j)
                        stack.append(j)
            if seen != hosts:
                return False
        return True

    def path(self, i: int, j: int) -> list[int]:
        prev = {i: None}
        stack = [i]
        while stack:
            a = stack.pop()
            for b in self.adj[a]:
                if b not in prev:
                    prev[b] = a
                    stack.append(b)
        if j not in prev:
            raise JunctionTreeError(f"cliques {i} and {j} are not connected")
        out = [j]
        while out[-1] != i:
            out.append(prev[out[-1]])
        return out[::-1]

    # potentials and evidence

    def host_of(self, variables: Iterable[Hashable]) -> int:
        """Earliest-created clique containing all ``variables``."""
        vs = set(variables)
        for i, c in enumerate(self.cliques):
            if vs <= c:
                return i
        raise JunctionTreeError(f"no clique contains {sorted(vs, key=repr)}")

    def attach(self, table: PotentialTable) -> int:
        i = self.host_of(table.vars)
        self.potentials[i] = pt.multiply(self.potentials[i], table)
        self.calibrated = False
        return i

    def enter_evidence(self, var, state: int | None = None, likelihood=None):
        i = self.host_of([var])
        self.potentials[i] = pt.reduce_by_evidence(self.potentials[i], var, state, likelihood)
        self.journal.append(Finding(var, state, None if likelihood is None else tuple(likelihood)))
        self.calibrated = False

    # propagation

    def default_root(self) -> int:
        return self.root if self.root < len(self.cliques) else 0

    def _rooted(self, root: int, members: set[int]) -> list[tuple[int, int | None]]:
        order = [(root, None)]
        seen = {root}
        k = 0
        while k < len(order):
            a = order[k][0]
            for b in sorted(self.adj[a]):
                if b in members and b not in seen:
                    seen.add(b)
                    order.append((b, a))
            k += 1
        return order

    def _pass(self, src: int, dst: int):
        sep = self.sepset(src, dst)
        new = pt.marginalize(self.potentials[src], sep.vars)
        self.potentials[dst] = pt.multiply(self.potentials[dst], pt.divide(new, sep))
        self.set_sepset(src, dst, new)

    def propagate(self, root: int | None = None, subset: Iterable[int] | None = None) -> PropagationResult:
        """Collect to ``root`` then distribute from it.

        With ``subset`` only messages between cliques of that (connected)
        subtree are passed and no rescaling happens; the flag ``calibrated``
        is left untouched.

        Raises:
            ZeroMassError: the evidence has probability zero.
        """
        if not self.cliques:
            return PropagationResult(1.0, True)
        members = set(range(len(self.cliques))) if subset is None else set(subset)
        if root is None:
            root = self.default_root() if self.default_root() in members else min(members)
        order = self._rooted(root, members)
        if len(order) != len(members):
            raise JunctionTreeError("subset does not induce a connected subtree")
        for node, parent in reversed(order[1:]):
            self._pass(node, parent)
        mass = self.potentials[root].total()
        if not mass > 0:
            raise ZeroMassError("evidence has zero probability under the model")
        for node, parent in order[1:]:
            self._pass(parent, node)
        if subset is not None:
            return PropagationResult(mass, self.calibrated)
        inv = 1.0 / mass
        self.potentials = [pt.scale(p, inv) for p in self.potentials]
        self.sepsets = {k: pt.scale(s, inv) for k, s in self.sepsets.items()}
        self.log_mass += math.log(mass)
        self.calibrated = True
        return PropagationResult(mass, True)

    def is_calibrated(self, tol: float = CALIBRATION_TOL) -> bool:
        """Check, numerically, that both ends of every sepset agree."""
        for (i, j), sep in self.sepsets.items():
            a = pt.marginalize(self.potentials[i], sep.vars)
            b = pt.marginalize(self.potentials[j], sep.vars)
            if not np.allclose(a.values, b.reorder(a.vars).values, rtol=0, atol=tol):
                return False
        return True

    # queries

    def marginal(self, variables: Iterable[Hashable], normalized: bool = True) -> PotentialTable:
        vs = set(variables)
        i = self.host_of(vs)
        m = pt.marginalize(self.potentials[i], vs).canonical()
        return pt.normalize(m)[0] if normalized else m

    def query_marginal(self, variables: Iterable[Hashable]) -> PotentialTable:
        """Normalized marginal over variables held jointly by one clique."""
        if not self.calibrated:
            raise NotCalibratedError("propagate before querying")
        return self.marginal(variables)

    def sample(self, rng: np.random.Generator, n: int) -> dict[Hashable, np.ndarray]:
        """Draw ``n`` joint configurations from a calibrated tree.

        Samples the root clique from its table, then each neighbour from its
        table conditioned on the sepset configuration already drawn.
        """
        if not self.calibrated:
            raise NotCalibratedError("propagate before sampling")
        out: dict[Hashable, np.ndarray] = {}
        for node, parent in self._rooted(0, set(range(len(self.cliques)))):
            tab = self.potentials[node]
            given = [v for v in tab.vars if v in out]
            free = [v for v in tab.vars if v not in out]
            if not free:
                continue
            arr = tab.reorder(given + free).values.reshape(
                math.prod(self.cards[v] for v in given), -1)
            row = np.zeros(n, dtype=np.int64)
            for v in given:
                row = row * self.cards[v] + out[v]
            cum = np.cumsum(arr, axis=1)
            u = rng.random(n) * cum[row, -1]
            flat = np.minimum((cum[row] <= u[:, None]).sum(axis=1), arr.shape[1] - 1)
            for v in reversed(free):
                c = self.cards[v]
                out[v] = flat % c
                flat = flat // c
        return out


def build_tree(cliques: Sequence[Iterable[Hashable]], cards: Mapping[Hashable, int],
               prefer: Iterable[tuple[frozenset, frozenset]] = ()) -> JunctionTree:
    """Maximum-weight spanning tree over clique intersections.

    Edge weight is ``|C ∩ D|``; ties go to the larger intersection state
    space, then to pairs listed in ``prefer``, then to lower clique indices.
    Cliques with empty intersections are joined by empty sepsets so the
    result is always a single tree.

    Raises:
        JunctionTreeError: the cliques admit no junction tree.
    """
    cl = [frozenset(c) for c in cliques]
    if len(set(cl)) != len(cl):
        raise JunctionTreeError("duplicate cliques")
    preferred = {frozenset(p) for p in prefer}
    cand = []
    for i in range(len(cl)):
        for j in range(i + 1, len(cl)):
            s = cl[i] & cl[j]
            space = math.prod(cards[v] for v in s)
            cand.append((-len(s), -space, frozenset((cl[i], cl[j])) not in preferred, i, j))
    cand.sort()
    parent = list(range(len(cl)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edges = []
    for *_, i, j in cand:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j))
    tree = JunctionTree(cl, cards, edges)
    if not tree.has_junction_property():
        raise JunctionTreeError("clique set admits no junction tree (input not triangulated?)")
    return tree


def is_jointly_calibrated(t1: JunctionTree, t2: JunctionTree, shared: Iterable[Hashable],
                          tol: float = CALIBRATION_TOL) -> bool:
    """Both trees calibrated and agreeing on the normalized marginal of ``shared``."""
    shared = set(shared)
    m1, m2 = t1.marginal(shared), t2.marginal(shared)
    if not (t1.is_calibrated(tol) and t2.is_calibrated(tol)):
        return False
    return bool(np.allclose(m1.values, m2.reorder(m1.vars).values, rtol=0, atol=tol))


def compile_network(factors: Sequence[PotentialTable], cards: Mapping[Hashable, int] | None = None,
                    heuristic: str = "min-weight") -> JunctionTree:
    """Junction tree for a static network given its factors (e.g. CPT tables).

    The interaction graph completes every factor domain, which for CPTs is
    the moral graph.
    """
    if cards is None:
        cards = {v: c for f in factors for v, c in f.domain}
    g = UGraph(cards)
    for f in factors:
        g.make_complete(f.vars)
    tri = triangulate_constrained(g, heuristic=heuristic, weights=cards)
    tree = build_tree(tri.cliques, cards)
    for f in factors:
        tree.attach(f)
    return tree
