"""Sliding-window junction tree: expansion, reduction and the archived model series.

The window holds a junction tree over slices ``t_low..t_high``. Its graph is
triangulated with an elimination order that removes older slices first, so
every slice interface is a complete separator and dropping the oldest slices
amounts to cutting the tree apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

from . import potential as pt
from .errors import DpnError, ModelError, NotCalibratedError, ResourceLimitError
from .graph import UGraph, is_complete, triangulate_constrained
from .jtree import JunctionTree, PropagationResult, build_tree
from .model import DpnModel, Evidence, SliceSpec, _validate_slice, cpt_table, validate_model

DEFAULT_MAX_CELLS = 10 ** 7


class WindowError(DpnError, ValueError):
    """A slice index falls outside the current window."""


@dataclass
class WindowState:
    """The current model: a junction tree over slices ``t_low..t_high``."""

    model: DpnModel
    tree: JunctionTree
    graph: UGraph  # triangulated graph of the window
    order: list  # perfect elimination order of ``graph``
    t_low: int
    t_high: int
    slice_specs: dict[int, SliceSpec]
    heuristic: str = "min-weight"
    max_cells: int | None = None
    last_fold: dict = field(default_factory=dict, repr=False)

    @property
    def width(self) -> int:
        return self.t_high - self.t_low + 1

    @property
    def vertices(self) -> list:
        return self.graph.vertices

    def slice_vertices(self, t: int) -> list:
        return [(t, v) for v in self.slice_specs[t].variables]

    def interface(self, t: int) -> frozenset:
        """Vertices of slice ``t`` adjacent to slice ``t - 1``."""
        if t == 0:
            return frozenset()
        return frozenset((t, v) for v in self.slice_specs[t].interface())

    def card(self, vertex) -> int:
        return self.model.card(vertex[1])

    def copy(self) -> "WindowState":
        return WindowState(self.model, self.tree.copy(), self.graph.copy(), list(self.order),
                           self.t_low, self.t_high, dict(self.slice_specs), self.heuristic,
                           self.max_cells)

    # tree helpers

    def _set_root(self):
        iface = self.interface(self.t_high)
        self.tree.root = self.tree.host_of(iface) if iface else 0

    def propagate(self) -> PropagationResult:
        return self.tree.propagate(self.tree.root)

    def contains(self, t: int) -> bool:
        return self.t_low <= t <= self.t_high

    def enter_evidence(self, ev: Evidence):
        if not self.contains(ev.t):
            raise WindowError(f"slice {ev.t} is outside the window [{self.t_low}, {self.t_high}]")
        if ev.variable not in self.slice_specs[ev.t].variables:
            raise ModelError(f"variable {ev.variable!r} does not exist in slice {ev.t}")
        self.tree.enter_evidence(ev.vertex, ev.state, ev.likelihood)

    def marginal(self, t: int, variable: str):
        if not self.tree.calibrated:
            raise NotCalibratedError("window must be propagated before querying")
        return self.tree.marginal([(t, variable)])

    # expansion

    def _check_cells(self, cliques: Iterable[frozenset]):
        if self.max_cells is None:
            return
        cells = sum(math.prod(self.card(v) for v in c) for c in cliques)
        if cells > self.max_cells:
            raise ResourceLimitError(
                f"junction tree would need {cells} table cells (cap {self.max_cells}); "
                "raise the cap, narrow the window, or use the monte-carlo or linear forecast")

    def expand(self, k: int, override: SliceSpec | None = None):
        """Add ``k`` slices after ``t_high`` and rebuild the tree around the old one.

        Old clique and sepset tables that survive unchanged are reused; the
        tables of redundant old cliques are multiplied into a containing new
        clique and redundant old sepset tables are divided out of the clique
        that absorbed one of their endpoints, so the represented joint is
        exactly the old joint times the new CPTs. The tree is left
        uncalibrated.
        """
        if k < 1:
            raise ValueError("expansion needs k >= 1")
        model = self.model
        new_ts = list(range(self.t_high + 1, self.t_high + k + 1))
        specs = dict(self.slice_specs)
        for t in new_ts:
            spec = override if override is not None else model.slice_spec(t)
            if override is not None:
                report: list[str] = []
                _validate_slice(model, spec, f"override slice {t}",
                                set(specs[t - 1].variables), report)
                if report:
                    raise ModelError("; ".join(report))
            specs[t] = spec

        hybrid = self.graph.copy()
        new_vertices = []
        families = []
        for t in new_ts:
            for v in specs[t].variables:
                new_vertices.append((t, v))
                cpt = specs[t].cpts[v]
                fam = [(t - lag, p) for p, lag in cpt.parents] + [(t, v)]
                families.append((cpt, t))
                hybrid.add_vertex((t, v))
                hybrid.make_complete(fam)
            hybrid.make_complete((t, v) for v in specs[t].interface())

        cards = {v: self.card(v) for v in hybrid.vertices}
        old_vertices = set(self.graph.vertices)
        blocks = [old_vertices] + [{(t, v) for v in specs[t].variables} for t in new_ts]
        tri = triangulate_constrained(hybrid, blocks, self.heuristic, cards, prefix=self.order)
        self._check_cells(tri.cliques)

        old = self.tree
        old_index = {c: i for i, c in enumerate(old.cliques)}
        old_edges = {frozenset((old.cliques[i], old.cliques[j])): (i, j) for i, j in old.edges}
        new = build_tree(tri.cliques, cards, prefer=old_edges)

        # surviving cliques and intersections keep their tables
        survivors = {}
        for j, c in enumerate(new.cliques):
            if c in old_index:
                survivors[old_index[c]] = j
                new.potentials[j] = old.potentials[old_index[c]]
        kept_edges = set()
        for a, b in new.edges:
            key = frozenset((new.cliques[a], new.cliques[b]))
            if key in old_edges:
                new.set_sepset(a, b, old.sepset(*old_edges[key]))
                kept_edges.add(key)

        # fold redundant old cliques into containing new cliques
        host = dict(survivors)
        for i, c in enumerate(old.cliques):
            if i in survivors:
                continue
            j = new.host_of(c)
            new.potentials[j] = pt.multiply(new.potentials[j], old.potentials[i])
            host[i] = j
        # redundant old sepsets come out of the clique that absorbed an endpoint
        for key, (a, b) in old_edges.items():
            if key in kept_edges:
                continue
            j = host[min(a, b)]
            new.potentials[j] = pt.divide(new.potentials[j], old.sepset(a, b))

        for cpt, t in families:
            new.attach(cpt_table(model, cpt, t))

        new.log_mass = old.log_mass
        new.journal = list(old.journal)
        new.calibrated = False
        self.last_fold = {"survivors": survivors, "host": host, "kept_edges": kept_edges,
                          "old_cliques": list(old.cliques)}
        self.tree = new
        self.graph = tri.graph
        self.order = tri.order
        self.slice_specs = specs
        self.t_high = new_ts[-1]
        self._set_root()

    # reduction

    def reduce(self, k: int) -> "ArchivedModel":
        """Cut the ``k`` oldest slices off the window and return them as an archived model."""
        if k < 1 or k >= self.width:
            raise ValueError(f"reduction needs 1 <= k < width ({self.width}), got {k}")
        tree = self.tree
        if not tree.calibrated:
            raise NotCalibratedError("window must be calibrated before reduction")
        t_new = self.t_low + k
        iface = self.interface(t_new)
        removed = {v for v in self.graph.vertices if v[0] < t_new}
        n = len(tree.cliques)
        gone = [i for i in range(n) if tree.cliques[i] & removed]
        kept = [i for i in range(n) if i not in set(gone)]
        gone_set = set(gone)
        boundary = [i for i in kept if tree.adj[i] & gone_set]
        iface_table = tree.marginal(iface, normalized=False) if iface else None

        archive = _archive_tree(tree, gone, iface, iface_table)
        current = _cut_tree(tree, kept, boundary, iface, iface_table)

        incoming = self.interface(self.t_low)
        archived = ArchivedModel(archive, self.t_low, t_new - 1, incoming, iface,
                                 {t: s for t, s in self.slice_specs.items() if t < t_new})
        survivors = [v for v in self.graph.vertices if v not in removed]
        self.graph = self.graph.subgraph(survivors)
        self.order = [v for v in self.order if v not in removed]
        self.slice_specs = {t: s for t, s in self.slice_specs.items() if t >= t_new}
        self.t_low = t_new
        self.tree = current
        self._set_root()
        return archived


def _induced(tree: JunctionTree, members: list[int]) -> tuple[JunctionTree, dict[int, int]]:
    remap = {old: new for new, old in enumerate(members)}
    sub = JunctionTree([tree.cliques[i] for i in members], tree.cards)
    sub.potentials = [tree.potentials[i] for i in members]
    for (a, b), table in tree.sepsets.items():
        if a in remap and b in remap:
            sub.add_edge(remap[a], remap[b], table)
    sub.log_mass = tree.log_mass
    sub.calibrated = tree.calibrated
    return sub, remap


def _rebuild_calibrated(cliques: list[frozenset], tables: list, cards) -> JunctionTree:
    """Junction tree over calibrated clique tables, sepsets set to matching marginals."""
    out = build_tree(cliques, cards)
    out.potentials = list(tables)
    for a, b in out.edges:
        out.set_sepset(a, b, pt.marginalize(out.potentials[a], out.cliques[a] & out.cliques[b]))
    out.calibrated = True
    return out


def _archive_tree(tree, gone, iface, iface_table) -> JunctionTree:
    sub, _ = _induced(tree, gone)
    has_iface = any(iface <= c for c in sub.cliques)
    if sub.is_tree() and has_iface and sub.has_junction_property():
        sub.journal = [f for f in tree.journal if f.var in sub.variables]
        sub.root = sub.host_of(iface)
        return sub
    cliques = list(sub.cliques)
    tables = list(sub.potentials)
    if not has_iface:
        cliques.append(frozenset(iface))
        tables.append(iface_table)
    out = _rebuild_calibrated(cliques, tables, tree.cards)
    out.log_mass = tree.log_mass
    out.journal = [f for f in tree.journal if f.var in out.variables]
    out.root = out.host_of(iface)
    return out


def _cut_tree(tree, kept, boundary, iface, iface_table) -> JunctionTree:
    """Detach the surviving cliques and reconnect them through the interface."""
    sub, remap = _induced(tree, kept)
    bnd = [remap[i] for i in boundary]
    hub = next((b for b in bnd if iface <= sub.cliques[b]), None)
    if hub is None and not iface:
        hub = bnd[0] if bnd else 0
    if hub is None:
        hub = sub.add_clique(iface, iface_table.reorder(sorted(iface)))
    parent = list(range(len(sub.cliques)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in sub.edges:
        parent[find(a)] = find(b)
    for b in bnd:
        if find(b) != find(hub):
            parent[find(b)] = find(hub)
            sub.add_edge(b, hub, pt.marginalize(sub.potentials[b], sub.cliques[b] & sub.cliques[hub]))
    if not (sub.is_tree() and sub.has_junction_property()):
        sub = _rebuild_calibrated(list(sub.cliques), list(sub.potentials), tree.cards)
    sub.log_mass = tree.log_mass
    sub.journal = [f for f in tree.journal if f.var in sub.variables]
    sub.calibrated = True
    return sub


@dataclass
class ArchivedModel:
    """A past model ``P_n``: a calibrated tree over slices ``t_low..t_high``.

    ``outgoing`` is the interface of slice ``t_high + 1`` shared with the next
    model; ``incoming`` is the interface of ``t_low`` (empty for the first
    model). ``tree`` is frozen at reduction time; smoothing works on
    ``working``.
    """

    tree: JunctionTree
    t_low: int
    t_high: int
    incoming: frozenset
    outgoing: frozenset
    slice_specs: dict[int, SliceSpec] = field(repr=False)
    working: JunctionTree | None = None
    smoothed_version: int = -1

    def view(self) -> JunctionTree:
        return self.working if self.working is not None else self.tree


class ModelSeries:
    """Archived models ``P_1..P_{N-1}`` followed by the current window ``P_N``."""

    def __init__(self, model: DpnModel, current: WindowState, archived: list[ArchivedModel] | None = None):
        self.model = model
        self.current = current
        self.archived: list[ArchivedModel] = archived or []
        self.version = 0

    @property
    def N(self) -> int:
        return len(self.archived) + 1

    def model_range(self, n: int) -> tuple[int, int]:
        """Slice range ``(t_low, t_high)`` owned by model ``n`` (1-based)."""
        if not 1 <= n <= self.N:
            raise IndexError(f"model index {n} outside 1..{self.N}")
        if n == self.N:
            return self.current.t_low, self.current.t_high
        a = self.archived[n - 1]
        return a.t_low, a.t_high

    def owner(self, t: int) -> int:
        for n, a in enumerate(self.archived, start=1):
            if a.t_low <= t <= a.t_high:
                return n
        if self.current.contains(t):
            return self.N
        raise WindowError(f"slice {t} is not represented (current range 0..{self.current.t_high})")

    def enter_evidence(self, ev: Evidence):
        if ev.t < self.current.t_low:
            raise WindowError(
                f"evidence for slice {ev.t} is behind the window (oldest window slice "
                f"{self.current.t_low}); archived slices only receive information by smoothing")
        self.current.enter_evidence(ev)
        self.version += 1

    def propagate(self) -> PropagationResult:
        return self.current.propagate()

    @property
    def evidence_mass(self) -> float:
        """Probability of all evidence entered so far (current window calibrated)."""
        return math.exp(self.current.tree.log_mass)


def _window_from_scratch(model: DpnModel, width: int, heuristic: str, max_cells) -> WindowState:
    specs = {t: model.slice_spec(t) for t in range(width)}
    g = UGraph()
    for t in range(width):
        for v in specs[t].variables:
            cpt = specs[t].cpts[v]
            g.add_vertex((t, v))
            g.make_complete([(t - lag, p) for p, lag in cpt.parents] + [(t, v)])
        if t > 0:
            g.make_complete((t, v) for v in specs[t].interface())
    cards = {v: model.card(v[1]) for v in g.vertices}
    blocks = [{(t, v) for v in specs[t].variables} for t in range(width)]
    tri = triangulate_constrained(g, blocks, heuristic, cards)
    state = WindowState(model, None, tri.graph, tri.order, 0, width - 1, specs, heuristic, max_cells)
    state._check_cells(tri.cliques)
    tree = build_tree(tri.cliques, cards)
    for t in range(width):
        for v in specs[t].variables:
            tree.attach(cpt_table(model, specs[t].cpts[v], t))
    state.tree = tree
    state._set_root()
    return state


def init(model: DpnModel, width: int = 1, heuristic: str = "min-weight",
         max_cells: int | None = None) -> ModelSeries:
    """Build ``P_1`` over slices ``0..width-1`` and calibrate it."""
    if width < 1:
        raise ValueError("window width must be at least 1")
    report = validate_model(model)
    if report:
        raise ModelError("invalid model: " + "; ".join(report))
    state = _window_from_scratch(model, width, heuristic, max_cells)
    state.propagate()
    return ModelSeries(model, state)


def expand(series: ModelSeries, k: int, override: SliceSpec | None = None, propagate: bool = False):
    series.current.expand(k, override)
    series.version += 1
    if propagate:
        series.current.propagate()


def reduce(series: ModelSeries, k: int) -> ArchivedModel:
    archived = series.current.reduce(k)
    series.archived.append(archived)
    return archived


def advance(series: ModelSeries, k: int = 1):
    """Move the window ``k`` slices forward, keeping its width."""
    if k < 0:
        raise ValueError("cannot move the window backwards")
    if k == 0:
        return
    expand(series, k)
    series.current.propagate()
    reduce(series, k)


def check_interfaces_complete(state: WindowState) -> bool:
    """Every interior slice interface of the window is complete in its graph."""
    return all(is_complete(state.graph, state.interface(t))
               for t in range(state.t_low + 1, state.t_high + 1))


def old_cliques_contained(old: Iterable[frozenset], new: Iterable[frozenset]) -> bool:
    new = list(new)
    return all(any(c <= d for d in new) for c in old)

