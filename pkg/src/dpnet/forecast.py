"""Forecasts beyond the window: exact expansion, Monte-Carlo sampling, linear approximation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import potential as pt
from .errors import JunctionTreeError, ModelError, NotCalibratedError
from .window import DEFAULT_MAX_CELLS, ModelSeries, WindowState

METHODS = ("exact", "monte-carlo", "linear")
RNG_NAME = "numpy.random.Philox"


@dataclass
class ForecastQuery:
    """Targets are ``(offset, variable)`` with offset ``1..horizon`` past ``t_high``.

    ``targets=None`` means every variable of every forecast slice.
    """

    horizon: int
    targets: list[tuple[int, str]] | None = None
    method: str = "exact"
    sample_count: int = 10_000
    seed: int = 0

    def resolve(self, series: ModelSeries) -> list[tuple[int, str]]:
        if self.horizon < 1:
            raise ValueError("forecast horizon must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"unknown forecast method {self.method!r}; choose from {METHODS}")
        if self.method == "monte-carlo" and self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")
        t_high = series.current.t_high
        if self.targets is None:
            return [(j, v) for j in range(1, self.horizon + 1)
                    for v in series.model.slice_spec(t_high + j).variables]
        for j, v in self.targets:
            if not 1 <= j <= self.horizon:
                raise ValueError(f"target offset {j} outside 1..{self.horizon}")
            if v not in series.model.slice_spec(t_high + j).variables:
                raise ModelError(f"unknown forecast variable {v!r}")
        return list(self.targets)


@dataclass
class ForecastResult:
    distributions: dict[tuple[int, str], np.ndarray]
    method: str
    approximate: bool = False
    metadata: dict = field(default_factory=dict)
    stderr: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)


def _require_calibrated(state: WindowState):
    if not state.tree.calibrated:
        raise NotCalibratedError("forecasting needs a calibrated window; propagate first")


def forecast_exact(series: ModelSeries, q: ForecastQuery, max_cells: int | None = DEFAULT_MAX_CELLS) -> ForecastResult:
    """Expand a working copy of the window by ``horizon`` slices and propagate it."""
    targets = q.resolve(series)
    state = series.current
    _require_calibrated(state)
    work = state.copy()
    work.max_cells = max_cells
    work.expand(q.horizon)
    work.propagate()
    t_high = state.t_high
    dists = {(j, v): work.marginal(t_high + j, v).values.copy() for j, v in targets}
    return ForecastResult(dists, "exact", metadata={"method": "exact", "horizon": q.horizon})


def _draw(rng: np.random.Generator, probs: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Sample one state per entry of ``rows`` from ``probs[rows]``."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(rows.size) * cum[rows, -1]
    out = (cum[rows] <= u[:, None]).sum(axis=1)
    return np.minimum(out, probs.shape[1] - 1)


def _sample_boundary(state: WindowState, vertices: list, rng, n: int) -> dict:
    tree = state.tree
    if not vertices:
        return {}
    try:
        host = tree.host_of(vertices)
    except JunctionTreeError:
        joint = tree.sample(rng, n)
        return {v: joint[v] for v in vertices}
    m = pt.marginalize(tree.potentials[host], vertices).reorder(vertices)
    flat = _draw(rng, m.flat[None, :], np.zeros(n, dtype=np.int64))
    out = {}
    for v, c in zip(reversed(m.vars), reversed(m.cards)):
        out[v] = flat % c
        flat = flat // c
    return out


def forecast_mc(series: ModelSeries, q: ForecastQuery) -> ForecastResult:
    """Forward-sample ``sample_count`` trajectories from the window boundary.

    The previous-slice parents of the first forecast slice are drawn jointly
    from the calibrated window; later slices use ancestral sampling through
    the slice CPTs. Output is a deterministic function of ``seed``.
    """
    targets = q.resolve(series)
    state = series.current
    _require_calibrated(state)
    model = series.model
    n = q.sample_count
    rng = np.random.Generator(np.random.Philox(q.seed))
    t_high = state.t_high
    first = model.slice_spec(t_high + 1)
    boundary = sorted({(t_high, p) for _, p in first.temporal_edges})
    values = _sample_boundary(state, boundary, rng, n)
    for j in range(1, q.horizon + 1):
        t = t_high + j
        spec = model.slice_spec(t)
        for v in spec.topological():
            cpt = spec.cpts[v]
            row = np.zeros(n, dtype=np.int64)
            for p, lag in cpt.parents:
                row = row * model.card(p) + values[(t - lag, p)]
            probs = cpt.table.reshape(-1, model.card(v))
            values[(t, v)] = _draw(rng, probs, row)
    dists, errs = {}, {}
    for j, v in targets:
        counts = np.bincount(values[(t_high + j, v)], minlength=model.card(v))
        p = counts / n
        dists[(j, v)] = p
        errs[(j, v)] = np.sqrt(p * (1 - p) / n)
    meta = {"method": "monte-carlo", "sample_count": n, "seed": q.seed, "rng": RNG_NAME}
    return ForecastResult(dists, "monte-carlo", approximate=True, metadata=meta, stderr=errs)


def forecast_linear(series: ModelSeries, q: ForecastQuery) -> ForecastResult:
    """Propagate single-variable marginals forward, treating parents as independent.

    Each forecast variable gets ``sum_pa p(x | pa) * prod_b p(x_b)`` with
    parents computed before children; slice ``t_high`` is seeded from the
    window's per-variable marginals.
    """
    targets = q.resolve(series)
    state = series.current
    _require_calibrated(state)
    model = series.model
    t_high = state.t_high
    marg = {(t_high, v): state.marginal(t_high, v).values for v in state.slice_specs[t_high].variables}
    for j in range(1, q.horizon + 1):
        t = t_high + j
        spec = model.slice_spec(t)
        for v in spec.topological():
            cpt = spec.cpts[v]
            shape = [model.card(p) for p, _ in cpt.parents] + [model.card(v)]
            out = cpt.table.reshape(shape)
            for p, lag in cpt.parents:
                out = np.tensordot(marg[(t - lag, p)], out, axes=(0, 0))
            marg[(t, v)] = out / out.sum()
    dists = {(j, v): np.array(marg[(t_high + j, v)]) for j, v in targets}
    return ForecastResult(dists, "linear", approximate=True, metadata={"method": "linear"})


def forecast(series: ModelSeries, q: ForecastQuery, max_cells: int | None = DEFAULT_MAX_CELLS) -> ForecastResult:
    if q.method == "exact":
        return forecast_exact(series, q, max_cells)
    if q.method == "monte-carlo":
        return forecast_mc(series, q)
    if q.method == "linear":
        return forecast_linear(series, q)
    raise ValueError(f"unknown forecast method {q.method!r}; choose from {METHODS}")


def total_variation(p: np.ndarray, r: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(r)).sum())


def rms_error(estimates: list[np.ndarray], exact: np.ndarray) -> float:
    err = np.array([np.asarray(e) - exact for e in estimates])
    return math.sqrt(float(np.mean(err ** 2)))
