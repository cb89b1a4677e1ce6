"""File formats: JSON model documents, JSON-lines evidence, and the binary series file.

Series file layout (all integers little-endian)::

    b"DPNS"  u16 major  u16 minor  u32 header_len  header (UTF-8 JSON)
    u64 n_doubles  n_doubles * <f8  u32 crc32(everything before the checksum)

The JSON header describes structure; every table value lives in the double
block and is referenced by offset, so potentials survive a round trip bit
for bit.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ModelError, SeriesFormatError
from .graph import UGraph
from .jtree import Finding, JunctionTree
from .model import Cpt, DpnModel, Evidence, SliceSpec, Variable, model_from_dict
from .potential import PotentialTable
from .window import ArchivedModel, ModelSeries, WindowState

MAGIC = b"DPNS"
FORMAT_VERSION = (1, 0)


# model and evidence documents

def load_model(path: str | Path) -> DpnModel:
    """Read a JSON model document.

    Raises:
        OSError: the file cannot be read.
        ModelError: invalid JSON (with line and column) or a malformed layout.
    """
    text = Path(path).read_text(encoding="utf-8")
    return parse_model(text, str(path))


def parse_model(text: str, source: str = "<model>") -> DpnModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{source}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ModelError(f"{source}: top level must be a JSON object")
    return model_from_dict(doc)


def parse_evidence(lines, model: DpnModel, source: str = "<evidence>") -> list[Evidence]:
    """Turn JSON-lines evidence records into :class:`Evidence` items.

    Each non-blank line holds ``{"t", "var", "state"}`` with a state label or
    ``{"t", "var", "likelihood"}`` with one weight per state.
    """
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{source}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{where}: invalid JSON at column {exc.colno}: {exc.msg}") from None
        if not isinstance(rec, dict) or "t" not in rec or "var" not in rec:
            raise ModelError(f"{where}: evidence record needs keys 't' and 'var'")
        t, name = rec["t"], rec["var"]
        if not isinstance(t, int) or isinstance(t, bool):
            raise ModelError(f"{where}: slice index must be an integer")
        if ("state" in rec) == ("likelihood" in rec):
            raise ModelError(f"{where}: give exactly one of 'state' or 'likelihood'")
        try:
            var = model.var(name)
            if "state" in rec:
                out.append(Evidence(t, name, state=var.state_index(rec["state"])))
            else:
                lik = rec["likelihood"]
                if not isinstance(lik, list) or len(lik) != var.card:
                    raise ModelError(f"likelihood for {name!r} needs {var.card} entries")
                out.append(Evidence(t, name, likelihood=tuple(lik)))
        except ModelError as exc:
            raise ModelError(f"{where}: {exc}") from None
    return out


def load_evidence(path: str | Path, model: DpnModel) -> list[Evidence]:
    with open(path, encoding="utf-8") as fh:
        return parse_evidence(fh, model, str(path))


# binary series file

class _Writer:
    def __init__(self):
        self.chunks: list[np.ndarray] = []
        self.n = 0

    def put(self, arr) -> int:
        a = np.ascontiguousarray(arr, dtype="<f8").reshape(-1)
        off = self.n
        self.chunks.append(a)
        self.n += a.size
        return off

    def table(self, p: PotentialTable) -> dict:
        return {"vars": [_key(v) for v in p.vars], "cards": list(p.cards), "at": self.put(p.values)}


def _key(v):
    # vertices are (t, name) tuples; JSON has no tuples
    return list(v) if isinstance(v, tuple) else v


def _unkey(v):
    return tuple(v) if isinstance(v, list) else v


def _spec_doc(spec: SliceSpec, w: _Writer) -> dict:
    return {"variables": list(spec.variables),
            "cpts": [{"child": c.child, "parents": [list(p) for p in c.parents],
                      "at": w.put(c.table), "n": int(c.table.size)} for c in spec.cpts.values()]}


def _tree_doc(tree: JunctionTree, w: _Writer) -> dict:
    return {
        "cliques": [sorted(_key(v) for v in c) for c in tree.cliques],
        "cards": [[_key(v), c] for v, c in sorted(tree.cards.items())],
        "potentials": [w.table(p) for p in tree.potentials],
        "sepsets": [[i, j, w.table(s)] for (i, j), s in sorted(tree.sepsets.items())],
        "journal": [[_key(f.var), f.state, None if f.likelihood is None else w.put(f.likelihood)]
                    for f in tree.journal],
        "calibrated": tree.calibrated,
        "log_mass": w.put([tree.log_mass]),
        "root": tree.root,
    }


def _specs_ref(specs: dict[int, SliceSpec], pool: list, ids: dict, w: _Writer) -> list:
    out = []
    for t in sorted(specs):
        s = specs[t]
        if id(s) not in ids:
            ids[id(s)] = len(pool)
            pool.append(_spec_doc(s, w))
        out.append([t, ids[id(s)]])
    return out


def series_to_bytes(series: ModelSeries) -> bytes:
    w = _Writer()
    pool: list = []
    ids: dict = {}
    model = series.model
    for s in (model.initial, model.transition):
        ids[id(s)] = len(pool)
        pool.append(_spec_doc(s, w))
    cur = series.current
    header = {
        "variables": [{"name": v.name, "states": list(v.states)} for v in model.variables],
        "version": series.version,
        "current": {
            "t_low": cur.t_low, "t_high": cur.t_high, "heuristic": cur.heuristic,
            "max_cells": cur.max_cells, "order": [_key(v) for v in cur.order],
            "vertices": [_key(v) for v in cur.graph.vertices],
            "edges": [[_key(a), _key(b)] for a, b in cur.graph.edges()],
            "specs": _specs_ref(cur.slice_specs, pool, ids, w),
            "tree": _tree_doc(cur.tree, w),
        },
        "archived": [{
            "t_low": a.t_low, "t_high": a.t_high,
            "incoming": sorted(_key(v) for v in a.incoming),
            "outgoing": sorted(_key(v) for v in a.outgoing),
            "specs": _specs_ref(a.slice_specs, pool, ids, w),
            "tree": _tree_doc(a.tree, w),
            "working": None if a.working is None else _tree_doc(a.working, w),
            "smoothed_version": a.smoothed_version,
        } for a in series.archived],
        "slices": pool,  # entries 0 and 1 are the model's initial and transition slices
    }
    blob = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    doubles = np.concatenate(w.chunks) if w.chunks else np.zeros(0, dtype="<f8")
    body = (MAGIC + struct.pack("<HHI", *FORMAT_VERSION, len(blob)) + blob
            + struct.pack("<Q", doubles.size) + doubles.astype("<f8").tobytes())
    return body + struct.pack("<I", zlib.crc32(body))


def save_series(series: ModelSeries, path: str | Path):
    Path(path).write_bytes(series_to_bytes(series))


class _Reader:
    def __init__(self, doubles: np.ndarray):
        self.d = doubles

    def get(self, at: int, n: int) -> np.ndarray:
        if at < 0 or at + n > self.d.size:
            raise SeriesFormatError("table reference points outside the data block")
        return self.d[at:at + n].astype(np.float64)

    def table(self, doc: dict) -> PotentialTable:
        cards = tuple(int(c) for c in doc["cards"])
        n = math.prod(cards)
        return PotentialTable([_unkey(v) for v in doc["vars"]], cards, self.get(doc["at"], n).reshape(cards))


def _spec_from(doc: dict, r: _Reader) -> SliceSpec:
    cpts = {}
    for c in doc["cpts"]:
        cpts[c["child"]] = Cpt(c["child"], tuple((p, lag) for p, lag in c["parents"]), r.get(c["at"], c["n"]))
    return SliceSpec(tuple(doc["variables"]), cpts)


def _tree_from(doc: dict, r: _Reader) -> JunctionTree:
    cards = {_unkey(v): int(c) for v, c in doc["cards"]}
    tree = JunctionTree([[_unkey(v) for v in c] for c in doc["cliques"]], cards)
    tree.potentials = [r.table(p) for p in doc["potentials"]]
    for i, j, s in doc["sepsets"]:
        tree.add_edge(i, j, r.table(s))
    for var, state, lik in doc["journal"]:
        n = cards[_unkey(var)]
        tree.journal.append(Finding(_unkey(var), state, None if lik is None else tuple(r.get(lik, n).tolist())))
    tree.calibrated = bool(doc["calibrated"])
    tree.log_mass = float(r.get(doc["log_mass"], 1)[0])
    tree.root = int(doc["root"])
    return tree


def series_from_bytes(data: bytes) -> ModelSeries:
    """Decode a series file.

    Raises:
        SeriesFormatError: wrong magic, unsupported major version, truncation
            or checksum mismatch.
    """
    if len(data) < 12 or data[:4] != MAGIC:
        raise SeriesFormatError("not a model-series file (bad magic)")
    major, minor, hlen = struct.unpack_from("<HHI", data, 4)
    if major != FORMAT_VERSION[0]:
        raise SeriesFormatError(f"unsupported series format version {major}.{minor}; "
                                f"this build reads {FORMAT_VERSION[0]}.x")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    pos = 12 + hlen
    if len(body) < pos + 8:
        raise SeriesFormatError("truncated series file")
    (n,) = struct.unpack_from("<Q", body, pos)
    if len(body) != pos + 8 + 8 * n:
        raise SeriesFormatError("truncated series file (size does not match header)")
    if zlib.crc32(body) != crc:
        raise SeriesFormatError("checksum mismatch: series file is corrupt")
    try:
        header = json.loads(body[12:pos].decode("utf-8"))
        r = _Reader(np.frombuffer(body, dtype="<f8", count=n, offset=pos + 8))
        return _series_from(header, r)
    except SeriesFormatError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise SeriesFormatError(f"inconsistent series file: {exc!r}") from None


def _series_from(h: dict, r: _Reader) -> ModelSeries:
    pool = [_spec_from(d, r) for d in h["slices"]]
    variables = tuple(Variable(v["name"], tuple(v["states"])) for v in h["variables"])
    model = DpnModel(variables, pool[0], pool[1])

    def specs(ref):
        return {int(t): pool[k] for t, k in ref}

    c = h["current"]
    g = UGraph()
    for v in c["vertices"]:
        g.add_vertex(_unkey(v))
    for a, b in c["edges"]:
        g.add_edge(_unkey(a), _unkey(b))
    cur = WindowState(model, _tree_from(c["tree"], r), g, [_unkey(v) for v in c["order"]],
                      c["t_low"], c["t_high"], specs(c["specs"]), c["heuristic"], c["max_cells"])
    archived = [ArchivedModel(_tree_from(a["tree"], r), a["t_low"], a["t_high"],
                              frozenset(_unkey(v) for v in a["incoming"]),
                              frozenset(_unkey(v) for v in a["outgoing"]),
                              specs(a["specs"]),
                              None if a["working"] is None else _tree_from(a["working"], r),
                              a["smoothed_version"])
                for a in h["archived"]]
    series = ModelSeries(model, cur, archived)
    series.version = h["version"]
    return series


def load_series(path: str | Path) -> ModelSeries:
    return series_from_bytes(Path(path).read_bytes())
