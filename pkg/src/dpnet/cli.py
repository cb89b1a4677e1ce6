"""Command-line driver: validate a model, or filter, smooth and forecast an evidence stream.

Marginals go to standard output, one record per line (JSON lines or CSV);
diagnostics go to standard error. Exit status is 0 on success, 1 for invalid
input, 2 for an inference failure and 3 for an I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field

from . import io
from . import window as win
from .errors import DpnError, ModelError, SeriesFormatError, ZeroMassError
from .forecast import METHODS, ForecastQuery, forecast
from .model import DpnModel, Evidence, validate_model
from .smooth import query_smoothed
from .window import DEFAULT_MAX_CELLS, ModelSeries, WindowError

EXIT_OK, EXIT_INVALID, EXIT_INFERENCE, EXIT_IO = 0, 1, 2, 3
HEURISTICS = ("min-weight", "min-fill")
CAP_ENV = "DPN_RESOURCE_CAP"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # exit status 2 is reserved for inference errors, so usage errors map to 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


@dataclass
class SessionConfig:
    model_path: str
    width: int = 2
    heuristic: str = "min-weight"
    max_cells: int | None = DEFAULT_MAX_CELLS
    fmt: str = "jsonl"
    seed: int = 0

    def __post_init__(self):
        if self.width < 1:
            raise UsageError("--width must be at least 1")
        if self.heuristic not in HEURISTICS:
            raise UsageError(f"unknown heuristic {self.heuristic!r}")


@dataclass
class MarginalRecord:
    t: int
    variable: str
    mode: str
    distribution: list
    evidence_mass: float | None = None
    metadata: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {"t": self.t, "variable": self.variable, "mode": self.mode, "distribution": self.distribution}
        if self.evidence_mass is not None:
            d["evidence_mass"] = self.evidence_mass
        if self.metadata:
            d["metadata"] = self.metadata
        return d


class Emitter:
    """Writes records as JSON lines or as CSV rows (one row per state)."""

    def __init__(self, out, fmt: str):
        self.out = out
        self.fmt = fmt
        self.csv = None
        if fmt == "csv":
            self.csv = csv.writer(out, lineterminator="\n")
            self.csv.writerow(["t", "variable", "mode", "state", "probability", "evidence_mass"])

    def __call__(self, rec: MarginalRecord):
        if self.csv is None:
            self.out.write(json.dumps(rec.as_dict()) + "\n")
            return
        mass = "" if rec.evidence_mass is None else repr(rec.evidence_mass)
        for label, p in rec.distribution:
            self.csv.writerow([rec.t, rec.variable, rec.mode, label, repr(p), mass])


def _distribution(model: DpnModel, variable: str, probs) -> list:
    return [[s, float(p)] for s, p in zip(model.var(variable).states, probs)]


def resource_cap(flag: int | None) -> int | None:
    """Cell cap: the ``--max-cells`` flag, else ``DPN_RESOURCE_CAP``, else the default."""
    if flag is not None:
        return flag
    raw = os.environ.get(CAP_ENV)
    if raw is None or not raw.strip():
        return DEFAULT_MAX_CELLS
    try:
        cap = int(raw)
    except ValueError:
        raise UsageError(f"{CAP_ENV} must be an integer, got {raw!r}") from None
    if cap < 1:
        raise UsageError(f"{CAP_ENV} must be positive")
    return cap


def _load_model(path: str) -> DpnModel:
    model = io.load_model(path)
    report = validate_model(model)
    if report:
        raise ModelError("invalid model:\n  " + "\n  ".join(report))
    return model


class FilterSession:
    """Drives the window over an evidence stream, emitting one record per variable per slice."""

    def __init__(self, model: DpnModel, cfg: SessionConfig, emit=None):
        self.model = model
        self.emit = emit
        self.series: ModelSeries = win.init(model, cfg.width, cfg.heuristic, cfg.max_cells)
        self.cursor = 0  # next slice whose filtered marginals are due
        self.last_t = None

    def _reach(self, t: int):
        cur = self.series.current
        if t > cur.t_high:
            win.advance(self.series, t - cur.t_high)

    def _propagate(self, t: int):
        try:
            self.series.propagate()
        except ZeroMassError:
            where = t if self.last_t is None else self.last_t
            raise ZeroMassError(f"contradictory evidence at slice {where}: "
                                "the evidence entered so far has zero probability") from None

    def finish(self, t: int):
        self._reach(t)
        self._propagate(t)
        if self.emit is not None:
            mass = self.series.evidence_mass
            for v in self.model.slice_spec(t).variables:
                probs = self.series.current.marginal(t, v).values
                self.emit(MarginalRecord(t, v, "filtered", _distribution(self.model, v, probs), mass))

    def feed(self, ev: Evidence):
        while self.cursor < ev.t:
            self.finish(self.cursor)
            self.cursor += 1
        if ev.t < self.series.current.t_low:
            raise WindowError(f"evidence for slice {ev.t} arrived after that slice left the window "
                              f"(oldest window slice is {self.series.current.t_low}); "
                              "archived slices only change through smoothing")
        self._reach(ev.t)
        self.series.enter_evidence(ev)
        self.last_t = ev.t

    def run(self, evidence: list[Evidence], last: int) -> ModelSeries:
        """Process ``evidence`` in file order and emit slices ``0..last``."""
        for ev in evidence:
            self.feed(ev)
        while self.cursor <= last:
            self.finish(self.cursor)
            self.cursor += 1
        if not self.series.current.tree.calibrated:
            self._propagate(self.cursor - 1)
        return self.series


def _horizon(evidence: list[Evidence], steps: int | None) -> int:
    last = max((e.t for e in evidence), default=0)
    if steps is not None:
        last = max(last, steps - 1)
    return last


def _targets(spec: list[str] | None, model: DpnModel, last: int) -> list[tuple[int, str]]:
    if not spec:
        return [(t, v) for t in range(last + 1) for v in model.slice_spec(t).variables]
    out = []
    for item in spec:
        for part in item.split(","):
            part = part.strip()
            if not part:
                continue
            t_txt, _, name = part.partition(":")
            try:
                t = int(t_txt)
            except ValueError:
                raise ModelError(f"bad target {part!r}; expected T or T:VARIABLE") from None
            if not 0 <= t <= last:
                raise ModelError(f"target slice {t} outside the evidence horizon 0..{last}")
            names = [name] if name else list(model.slice_spec(t).variables)
            for v in names:
                if v not in model.slice_spec(t).variables:
                    raise ModelError(f"unknown target variable {v!r} at slice {t}")
                out.append((t, v))
    return out


def cmd_validate(args) -> int:
    try:
        model = io.load_model(args.model)
    except ModelError as exc:
        print(json.dumps({"valid": False, "violations": [str(exc)]}))
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    report = validate_model(model)
    print(json.dumps({"valid": not report, "violations": report}))
    for line in report:
        print(line, file=sys.stderr)
    return EXIT_OK if not report else EXIT_INVALID


def _session(args, emit=None):
    cfg = SessionConfig(args.model, args.width, args.heuristic, resource_cap(args.max_cells))
    model = _load_model(args.model)
    evidence = io.load_evidence(args.evidence, model) if args.evidence else []
    last = _horizon(evidence, args.steps)
    series = FilterSession(model, cfg, emit).run(evidence, last)
    return model, series, last, cfg


def _save(args, series):
    if args.save:
        io.save_series(series, args.save)


def cmd_filter(args, emit) -> int:
    _, series, _, _ = _session(args, emit)
    _save(args, series)
    return EXIT_OK


def cmd_smooth(args, emit) -> int:
    model, series, last, _ = _session(args)
    targets = _targets(args.targets, model, last)
    for t, v in targets:
        probs = query_smoothed(series, t, v).values
        emit(MarginalRecord(t, v, "smoothed", _distribution(model, v, probs)))
    _save(args, series)
    return EXIT_OK


def cmd_forecast(args, emit) -> int:
    if args.horizon < 1:
        raise UsageError("--horizon must be at least 1")
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    model, series, last, cfg = _session(args)
    cur = series.current
    mode = f"forecast:{args.method}"
    # slices after the evidence that are already inside the window are answered by the window itself
    inside = min(cur.t_high, last + args.horizon)
    for t in range(last + 1, inside + 1):
        for v in model.slice_spec(t).variables:
            probs = cur.marginal(t, v).values
            emit(MarginalRecord(t, v, mode, _distribution(model, v, probs), metadata={"source": "window"}))
    k = last + args.horizon - cur.t_high
    if k > 0:
        q = ForecastQuery(k, method=args.method, sample_count=args.samples, seed=args.seed)
        res = forecast(series, q, cfg.max_cells)
        for (j, v), probs in res.distributions.items():
            meta = dict(res.metadata)
            if res.stderr:
                meta["stderr"] = [float(x) for x in res.stderr[(j, v)]]
            emit(MarginalRecord(cur.t_high + j, v, mode, _distribution(model, v, probs), metadata=meta))
    _save(args, series)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check a model file")
    v.add_argument("model")

    def session(sp):
        sp.add_argument("model", help="JSON model file")
        sp.add_argument("evidence", nargs="?", help="JSON-lines evidence file (omit for none)")
        sp.add_argument("--width", type=int, default=2, help="window width in slices (default 2)")
        sp.add_argument("--heuristic", choices=HEURISTICS, default="min-weight")
        sp.add_argument("--steps", type=int, default=None,
                        help="process at least this many slices even without evidence")
        sp.add_argument("--max-cells", type=int, default=None,
                        help=f"table-cell cap (default: ${CAP_ENV} or {DEFAULT_MAX_CELLS})")
        sp.add_argument("--format", dest="fmt", choices=("jsonl", "csv"), default="jsonl")
        sp.add_argument("--save", metavar="PATH", help="write the final model series to PATH")
        return sp

    session(sub.add_parser("filter", help="emit filtered marginals slice by slice"))
    s = session(sub.add_parser("smooth", help="emit smoothed marginals after all evidence"))
    s.add_argument("--targets", nargs="*", metavar="T[:VAR]",
                   help="slices or slice:variable pairs (default: everything)")
    f = session(sub.add_parser("forecast", help="emit forecasts past the last evidence slice"))
    f.add_argument("--horizon", type=int, required=True)
    f.add_argument("--method", choices=METHODS, default="exact")
    f.add_argument("--samples", type=int, default=10_000)
    f.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None, stdout=None) -> int:
    args = build_parser().parse_args(argv)
    out = stdout if stdout is not None else sys.stdout
    try:
        if args.command == "validate":
            return cmd_validate(args)
        emit = Emitter(out, args.fmt)
        handler = {"filter": cmd_filter, "smooth": cmd_smooth, "forecast": cmd_forecast}[args.command]
        return handler(args, emit)
    except UsageError as exc:
        print(f"dpnet: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, SeriesFormatError) as exc:
        print(f"dpnet: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ModelError as exc:
        print(f"dpnet: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DpnError, ValueError) as exc:
        print(f"dpnet: inference error: {exc}", file=sys.stderr)
        return EXIT_INFERENCE


if __name__ == "__main__":
    sys.exit(main())
