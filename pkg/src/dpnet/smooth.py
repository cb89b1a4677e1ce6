"""Backward smoothing across the archived model series via interface cliques."""

from __future__ import annotations

from dataclasses import dataclass

from . import potential as pt
from .errors import ModelError
from .jtree import JunctionTree
from .potential import PotentialTable
from .window import ModelSeries, WindowError


@dataclass(frozen=True)
class InterfaceCliquePair:
    """Cliques of models ``n-1`` and ``n`` that both hold the shared interface."""

    older_model: int
    older_clique: int  # index into the older tree, holds the outgoing interface
    newer_model: int
    newer_clique: int  # index into the newer tree, holds the incoming interface
    shared: frozenset


def _smallest_host(tree: JunctionTree, shared: frozenset) -> int:
    best = None
    for i, c in enumerate(tree.cliques):
        if shared <= c and (best is None or len(c) < len(tree.cliques[best])):
            best = i
    if best is None:
        raise ModelError(f"no clique holds the interface {sorted(shared)}")
    return best


def _tree(series: ModelSeries, n: int) -> JunctionTree:
    if n == series.N:
        return series.current.tree
    a = series.archived[n - 1]
    if a.working is None:
        a.working = a.tree.copy()
    return a.working


def interface_cliques(series: ModelSeries, n: int) -> InterfaceCliquePair:
    """Interface cliques linking model ``n-1`` to model ``n`` (``2 <= n <= N``).

    Picks the smallest qualifying clique on each side, earliest-created on ties.
    """
    if not 2 <= n <= series.N:
        raise IndexError(f"interface cliques need 2 <= n <= {series.N}, got {n}")
    shared = frozenset(series.archived[n - 2].outgoing)
    older = series.archived[n - 2].view()
    newer = series.current.tree if n == series.N else series.archived[n - 1].view()
    return InterfaceCliquePair(n - 1, _smallest_host(older, shared),
                               n, _smallest_host(newer, shared), shared)


def smooth_to(series: ModelSeries, n: int):
    """Pass the current evidence back from ``P_N`` to ``P_n``.

    For each ``i`` from ``N`` down to ``n + 1`` the older model's interface
    clique is multiplied by the ratio of the newer and older interface
    marginals, then the older model is propagated.
    """
    if not 1 <= n < series.N:
        raise IndexError(f"smoothing target must satisfy 1 <= n < {series.N}, got {n}")
    if not series.current.tree.calibrated:
        series.current.propagate()
    for i in range(series.N, n, -1):
        pair = interface_cliques(series, i)
        newer = _tree(series, i)
        older = _tree(series, i - 1)
        shared = pair.shared
        ic_old = older.potentials[pair.older_clique]
        num = pt.marginalize(newer.potentials[pair.newer_clique], shared)
        den = pt.marginalize(ic_old, shared)
        older.potentials[pair.older_clique] = pt.multiply(ic_old, pt.divide(num, den))
        older.calibrated = False
        older.propagate(older.root)
        series.archived[i - 2].smoothed_version = series.version


def is_stale(series: ModelSeries, n: int) -> bool:
    return series.archived[n - 1].smoothed_version != series.version


def query_smoothed(series: ModelSeries, t: int, variable: str) -> PotentialTable:
    """Posterior of ``variable`` at slice ``t`` given all evidence entered so far."""
    if t < 0:
        raise WindowError(f"negative slice index {t}")
    n = series.owner(t)
    if n == series.N:
        if not series.current.tree.calibrated:
            series.current.propagate()
        return series.current.marginal(t, variable)
    arch = series.archived[n - 1]
    if variable not in arch.slice_specs[t].variables:
        raise ModelError(f"variable {variable!r} does not exist in slice {t}")
    if is_stale(series, n):
        smooth_to(series, n)
    return _tree(series, n).marginal([(t, variable)])
