"""Dynamic network definition: variables, slice templates, CPTs, unrolling.

An unrolled vertex is the pair ``(t, name)``; tuples sort by slice first,
which is the canonical vertex order used throughout the package.

CPT layout: the flat table lists parents slowest, in declared order, and the
child state fastest. A parent is ``(name, lag)`` with lag 0 for the same
slice and lag 1 for the previous one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CycleError, ModelError
from .graph import UGraph, moralize, topological_order
from .potential import PotentialTable

ROW_SUM_TOL = 1e-12

Vertex = tuple  # (t, name)


@dataclass(frozen=True)
class Variable:
    name: str
    states: tuple[str, ...]

    @property
    def card(self) -> int:
        return len(self.states)

    def state_index(self, label: str) -> int:
        try:
            return self.states.index(label)
        except ValueError:
            raise ModelError(f"variable {self.name!r} has no state {label!r}") from None


@dataclass(frozen=True)
class Cpt:
    """``p(child | parents)`` with a flat table in the package's CPT layout."""

    child: str
    parents: tuple[tuple[str, int], ...]
    table: np.ndarray = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple((str(p), int(lag)) for p, lag in self.parents))
        object.__setattr__(self, "table", np.asarray(self.table, dtype=np.float64).reshape(-1))

    @property
    def temporal_parents(self) -> tuple[str, ...]:
        return tuple(p for p, lag in self.parents if lag == 1)

    @property
    def intra_parents(self) -> tuple[str, ...]:
        return tuple(p for p, lag in self.parents if lag == 0)


@dataclass
class SliceSpec:
    """Variables present in one slice and their CPTs.

    Edges are derived from the CPT parent lists, so a CPT's conditioning set
    always equals its graph parents.
    """

    variables: tuple[str, ...]
    cpts: dict[str, Cpt]

    @property
    def intra_edges(self) -> list[tuple[str, str]]:
        return [(p, c.child) for c in self.cpts.values() for p in c.intra_parents]

    @property
    def temporal_edges(self) -> list[tuple[str, str]]:
        return [(p, c.child) for c in self.cpts.values() for p in c.temporal_parents]

    def topological(self) -> list[str]:
        """Slice variables ordered parents-first (intra-slice edges only)."""
        return topological_order({v: self.cpts[v].intra_parents if v in self.cpts else ()
                                  for v in self.variables})

    def interface(self) -> frozenset[str]:
        """Slice variables adjacent to the previous slice in the moral graph.

        These are the receivers of temporal edges together with their
        same-slice co-parents, which marriage links to the previous slice.
        """
        out = set()
        for c in self.cpts.values():
            if c.temporal_parents:
                out.add(c.child)
                out.update(c.intra_parents)
        return frozenset(out)


# A transition slice is a SliceSpec whose CPTs may carry lag-1 parents.
TransitionSpec = SliceSpec


@dataclass
class DpnModel:
    variables: tuple[Variable, ...]
    initial: SliceSpec
    transition: SliceSpec

    def __post_init__(self):
        self.variables = tuple(self.variables)
        self._by_name = {v.name: v for v in self.variables}

    def var(self, name: str) -> Variable:
        try:
            return self._by_name[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def card(self, name: str) -> int:
        return self.var(name).card

    def slice_spec(self, t: int) -> SliceSpec:
        return self.initial if t == 0 else self.transition


@dataclass(frozen=True)
class Evidence:
    """A finding for one variable at slice ``t``: hard state index or likelihood."""

    t: int
    variable: str
    state: int | None = None
    likelihood: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.t < 0:
            raise ModelError(f"negative slice index {self.t}")
        if (self.state is None) == (self.likelihood is None):
            raise ModelError("evidence needs exactly one of state or likelihood")
        if self.likelihood is not None:
            lk = tuple(float(x) for x in self.likelihood)
            if any(x < 0 or not math.isfinite(x) for x in lk) or not any(x > 0 for x in lk):
                raise ModelError(f"likelihood for {self.variable!r}@{self.t} needs a positive entry")
            object.__setattr__(self, "likelihood", lk)

    @property
    def vertex(self) -> Vertex:
        return (self.t, self.variable)


def _expected_rows(model: DpnModel, cpt: Cpt) -> int | None:
    try:
        return math.prod(model.card(p) for p, _ in cpt.parents)
    except ModelError:
        return None


def _validate_slice(model: DpnModel, spec: SliceSpec, label: str, prev_vars, report: list[str]):
    declared = {v.name for v in model.variables}
    for v in spec.variables:
        if v not in declared:
            report.append(f"{label}: slice lists undeclared variable {v!r}")
    present = set(spec.variables)
    for v in spec.variables:
        if v not in spec.cpts:
            report.append(f"{label}: variable {v!r} has no CPT")
    for child, cpt in spec.cpts.items():
        if child != cpt.child:
            report.append(f"{label}: CPT keyed {child!r} is for {cpt.child!r}")
        if child not in present:
            report.append(f"{label}: CPT for {child!r} which is not in the slice")
        names = [p for p, _ in cpt.parents]
        if len(set(cpt.parents)) != len(cpt.parents):
            report.append(f"{label}: CPT for {child!r} repeats a parent")
        for p, lag in cpt.parents:
            if lag not in (0, 1):
                report.append(f"{label}: edge {p}(t-{lag}) -> {child}(t) violates the "
                              f"first-order Markov restriction (lag must be 0 or 1)")
            elif lag == 1 and prev_vars is None:
                report.append(f"{label}: initial slice cannot have temporal parent {p!r} of {child!r}")
            elif lag == 1 and p not in prev_vars:
                report.append(f"{label}: temporal parent {p!r} of {child!r} absent from previous slice")
            elif lag == 0 and p not in present:
                report.append(f"{label}: parent {p!r} of {child!r} not in the slice")
        if child not in declared or any(p not in declared for p in names):
            continue
        rows = _expected_rows(model, cpt)
        card = model.card(child)
        if cpt.table.size != rows * card:
            report.append(f"{label}: CPT for {child!r} has {cpt.table.size} entries, "
                          f"expected {rows * card}")
            continue
        tab = cpt.table.reshape(rows, card)
        if np.any(~np.isfinite(tab)) or np.any(tab < 0) or np.any(tab > 1):
            report.append(f"{label}: CPT for {child!r} has entries outside [0, 1]")
        sums = tab.sum(axis=1)
        parent_cards = [model.card(p) for p, _ in cpt.parents]
        for r in np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL):
            config = np.unravel_index(r, parent_cards) if parent_cards else ()
            desc = ", ".join(f"{p}{'(t-1)' if lag else ''}={model.var(p).states[s]}"
                             for (p, lag), s in zip(cpt.parents, config))
            report.append(f"{label}: CPT for {child!r} row [{desc or 'no parents'}] "
                          f"sums to {float(sums[r]):.12g}, not 1")
    try:
        topological_order({c.child: c.intra_parents for c in spec.cpts.values()})
    except CycleError as exc:
        report.append(f"{label}: intra-slice edges are cyclic ({exc})")


def validate_model(model: DpnModel) -> list[str]:
    """List every structural or numerical violation; empty when the model is valid."""
    report: list[str] = []
    names = [v.name for v in model.variables]
    if len(set(names)) != len(names):
        report.append("variable names are not unique")
    for v in model.variables:
        if len(v.states) < 1:
            report.append(f"variable {v.name!r} has no states")
        if len(set(v.states)) != len(v.states):
            report.append(f"variable {v.name!r} repeats a state label")
    _validate_slice(model, model.initial, "initial", None, report)
    _validate_slice(model, model.transition, "transition", set(model.initial.variables), report)
    # slice 2 onwards: temporal parents must also exist in the transition slice
    trans_vars = set(model.transition.variables)
    for p, child in model.transition.temporal_edges:
        if p not in trans_vars and p in set(model.initial.variables):
            report.append(f"transition: temporal parent {p!r} of {child!r} absent from "
                          f"the transition slice")
    return report


def cpt_table(model: DpnModel, cpt: Cpt, t: int) -> PotentialTable:
    """The CPT of ``cpt.child`` at slice ``t`` as a table over unrolled vertices."""
    vertices = [(t - lag, p) for p, lag in cpt.parents] + [(t, cpt.child)]
    cards = [model.card(name) for _, name in vertices]
    return PotentialTable(vertices, cards, cpt.table)


@dataclass
class UnrolledNetwork:
    """Composite DAG over slices ``t_first..t_last``."""

    model: DpnModel
    t_first: int
    t_last: int
    vertices: list[Vertex]
    parents: dict[Vertex, tuple[Vertex, ...]]
    cpts: dict[Vertex, Cpt]
    dangling: list[tuple[Vertex, Vertex]]  # (absent parent, child)

    @property
    def edges(self) -> list[tuple[Vertex, Vertex]]:
        return [(p, c) for c, ps in self.parents.items() for p in ps]

    @property
    def temporal_edges(self) -> list[tuple[Vertex, Vertex]]:
        return [(p, c) for p, c in self.edges if p[0] != c[0]]

    @property
    def cards(self) -> dict[Vertex, int]:
        return {v: self.model.card(v[1]) for v in self.vertices}

    def factors(self) -> list[PotentialTable]:
        return [cpt_table(self.model, self.cpts[v], v[0]) for v in self.vertices]

    def moral_graph(self) -> UGraph:
        g = moralize({v: self.parents[v] for v in self.vertices})
        return g.subgraph(self.vertices)


def slice_family(spec: SliceSpec, t: int):
    """Parents (unrolled) of every vertex in slice ``t`` built from ``spec``."""
    return {(t, v): tuple((t - lag, p) for p, lag in spec.cpts[v].parents) for v in spec.variables}


def unroll(model: DpnModel, t_first: int, t_last: int) -> UnrolledNetwork:
    if not 0 <= t_first <= t_last:
        raise ModelError(f"invalid slice range [{t_first}, {t_last}]")
    vertices, parents, cpts, dangling = [], {}, {}, []
    for t in range(t_first, t_last + 1):
        spec = model.slice_spec(t)
        fam = slice_family(spec, t)
        for v in spec.variables:
            vertices.append((t, v))
            cpts[(t, v)] = spec.cpts[v]
            parents[(t, v)] = fam[(t, v)]
            for p in fam[(t, v)]:
                if p[0] < t_first:
                    dangling.append((p, (t, v)))
    return UnrolledNetwork(model, t_first, t_last, vertices, parents, cpts, dangling)


def interface_of(model: DpnModel, t: int) -> frozenset[Vertex]:
    """Interface of slice ``t``: its vertices adjacent to slice ``t-1`` in the moral graph.

    Empty for the initial slice.
    """
    if t < 0:
        raise ModelError("slice index must be non-negative")
    if t == 0:
        return frozenset()
    return frozenset((t, v) for v in model.slice_spec(t).interface())


def temporal_children(model: DpnModel, t: int) -> frozenset[Vertex]:
    """Slice-``t`` endpoints of temporal edges (a subset of the interface)."""
    if t == 0:
        return frozenset()
    return frozenset((t, c) for _, c in model.slice_spec(t).temporal_edges)


def model_from_dict(doc: dict) -> DpnModel:
    """Build a model from the JSON document layout used by the CLI.

    ``edges`` entries are ``[child, parent, ...]``; ``temporal_edges`` entries
    are ``[prev_var, cur_var]`` with an optional third element giving the lag.
    Transition CPTs list intra-slice parents first (in ``edges`` order), then
    previous-slice parents in ``temporal_edges`` order.
    """
    try:
        variables = tuple(Variable(str(v["name"]), tuple(str(s) for s in v["states"]))
                          for v in doc["variables"])
        names = tuple(v.name for v in variables)
        initial = _slice_from_dict(doc["initial"], names)
        transition = _slice_from_dict(doc["transition"], names)
    except (KeyError, TypeError, IndexError) as exc:
        raise ModelError(f"malformed model document: {exc!r}") from None
    return DpnModel(variables, initial, transition)


def _slice_from_dict(doc: dict, names: Sequence[str]) -> SliceSpec:
    parents: dict[str, list[tuple[str, int]]] = {v: [] for v in names}
    for entry in doc.get("edges", []):
        child, *ps = entry
        parents.setdefault(child, []).extend((p, 0) for p in ps)
    # an initial slice declaring temporal edges is kept so validation can report it
    for prev, cur, *lag in doc.get("temporal_edges", []):
        parents.setdefault(cur, []).append((prev, int(lag[0]) if lag else 1))
    variables = tuple(doc.get("variables", names))
    cpts = {}
    for child, table in doc.get("cpts", {}).items():
        cpts[child] = Cpt(child, tuple(parents.get(child, ())), np.asarray(table, dtype=np.float64))
    return SliceSpec(variables, cpts)


def model_to_dict(model: DpnModel) -> dict:
    def slice_doc(spec: SliceSpec, temporal: bool):
        d = {
            "edges": [[c.child, *c.intra_parents] for c in spec.cpts.values() if c.intra_parents],
            "cpts": {k: c.table.tolist() for k, c in spec.cpts.items()},
        }
        if temporal:
            d["temporal_edges"] = [[p, c.child] if lag == 1 else [p, c.child, lag]
                                   for c in spec.cpts.values() for p, lag in c.parents if lag != 0]
        if tuple(spec.variables) != tuple(v.name for v in model.variables):
            d["variables"] = list(spec.variables)
        return d

    return {
        "variables": [{"name": v.name, "states": list(v.states)} for v in model.variables],
        "initial": slice_doc(model.initial, False),
        "transition": slice_doc(model.transition, True),
    }


def check_parent_order(spec: SliceSpec) -> bool:
    """True when every CPT lists intra-slice parents before temporal ones.

    The JSON layout can only express that ordering.
    """
    for c in spec.cpts.values():
        lags = [lag for _, lag in c.parents]
        if lags != sorted(lags):
            return False
    return True


def make_slice(cpts: Iterable[Cpt], variables: Sequence[str] | None = None) -> SliceSpec:
    cpts = list(cpts)
    return SliceSpec(tuple(variables) if variables is not None else tuple(c.child for c in cpts),
                     {c.child: c for c in cpts})
