"""Bulk loaders: an LPG CSV dialect and an N-Triples subset.

Both loaders feed a GraphStore in batched transactions and report
throughput per statement class. The CSV dialect is documented in the
package README; in short:

* nodes file      header ``id[,label][,<prop>...]``; one vertex per row,
                  the label and every non-empty property cell become VP
                  statements.
* edges file      header ``[id,]src,dst,label[,<prop>...]``; each row is a
                  topology statement and its property cells attach to that
                  statement. ``src``/``dst`` cells carrying an ``edge:<id>``
                  reference point at an earlier edge row, which switches the
                  relation to LME/RME/ME and the property cells to the
                  matching container relation.
* edge-properties long-format header ``edge,key,value``; extra properties
                  for edges by id.
* meta-properties long-format header ``node,key,metakey,value``; attaches an
                  MVP statement to the VP produced by the nodes file for
                  (node, key).

Cell typing is conservative: ``true``/``false``, strict integers and strict
decimals; anything else stays a string. The N-Triples subset accepts IRIs,
blank nodes and plain/typed/language-tagged literals, one triple per line.
"""

from __future__ import annotations

import csv
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LoadError, StoreError
from .gid import RelTag, tag_of
from .engine import Ref

logger = logging.getLogger(__name__)

FORMATS = ("lpg-csv", "ntriples")
DEFAULT_BATCH = 100_000

# inverse of the container map: topology relation -> its property relation
_PROP_REL = {
    RelTag.E: RelTag.EP,
    RelTag.LME: RelTag.LMEP,
    RelTag.ME: RelTag.MEP,
    RelTag.RME: RelTag.RMEP,
}

_EDGE_REF = "edge:"
_LABEL_PRED = "label"

_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(?:\d+\.\d*|\.\d+|\d+[eE][+-]?\d+|\d+\.\d*[eE][+-]?\d+)$")


@dataclass
class LoadSpec:
    """What to load and how; `format` selects the dialect."""

    format: str
    nodes: Path | str | None = None
    edges: Path | str | None = None
    edge_props: Path | str | None = None
    meta_props: Path | str | None = None
    triples: Sequence[Path | str] = ()
    base_iri: str = ""
    batch: int = DEFAULT_BATCH
    on_error: str = "skip"          # or "abort"
    threads: int = 1

    def __post_init__(self):
        if self.format not in FORMATS:
            raise LoadError(f"unknown load format {self.format!r}")
        if self.on_error not in ("skip", "abort"):
            raise LoadError("on_error must be 'skip' or 'abort'")
        if self.batch < 1:
            raise LoadError("batch must be positive")
        if self.format == "lpg-csv":
            if not (self.nodes or self.edges):
                raise LoadError("lpg-csv load needs a nodes and/or edges file")
        elif not self.triples:
            raise LoadError("ntriples load needs at least one input file")


@dataclass
class LoadSummary:
    statements: int = 0
    edges: int = 0
    property_values: int = 0
    vertices: int = 0
    seconds: float = 0.0
    batches: int = 0
    skipped: list[tuple[str, int, str]] = field(default_factory=list)

    @property
    def edges_per_sec(self) -> float:
        return self.edges / self.seconds if self.seconds > 0 else 0.0

    @property
    def props_per_sec(self) -> float:
        return self.property_values / self.seconds if self.seconds > 0 else 0.0

    def lines(self) -> list[str]:
        out = [
            f"statements        {self.statements}",
            f"edges             {self.edges}",
            f"property values   {self.property_values}",
            f"vertices minted   {self.vertices}",
            f"batches           {self.batches}",
            f"wall time         {self.seconds:.3f} s",
            f"edges/sec         {self.edges_per_sec:,.0f}",
            f"property values/sec {self.props_per_sec:,.0f}",
        ]
        if self.skipped:
            out.append(f"skipped lines     {len(self.skipped)}")
            for fname, lineno, why in self.skipped[:20]:
                out.append(f"  {fname}:{lineno}: {why}")
            if len(self.skipped) > 20:
                out.append(f"  ... and {len(self.skipped) - 20} more")
        return out


def load(engine, spec: LoadSpec) -> LoadSummary:
    """Run one load described by spec against an open engine."""
    if spec.base_iri and engine.base_iri and spec.base_iri != engine.base_iri:
        raise LoadError("spec base IRI does not match the store's")
    if spec.format == "lpg-csv" and not (engine.base_iri or spec.base_iri):
        raise LoadError("lpg-csv loads require a base IRI")
    t0 = time.perf_counter()
    loader = _Loader(engine, spec)
    if spec.format == "lpg-csv":
        loader.run_lpg_csv()
    else:
        loader.run_ntriples()
    summary = loader.summary
    summary.seconds = time.perf_counter() - t0
    logger.info("load done: %d statements in %.2fs", summary.statements,
                summary.seconds)
    return summary


def typed_cell(cell: str):
    """Conservative scalar typing shared by the CSV and N-Triples paths."""
    if cell == "true":
        return True
    if cell == "false":
        return False
    if _INT_RE.match(cell):
        v = int(cell)
        if -(1 << 63) <= v < (1 << 63):
            return v
        return cell
    if _FLOAT_RE.match(cell):
        return float(cell)
    return cell


class _Loader:
    """Single coordinator: parses rows, owns the transaction lifecycle.

    Plain resource triples buffer per predicate and flush through the
    bulk edge path, which applies partition groups on spec.threads
    workers; everything else inserts row by row.
    """

    def __init__(self, engine, spec: LoadSpec):
        self.engine = engine
        self.spec = spec
        self.summary = LoadSummary()
        self.handle = None
        self.in_batch = 0
        self.edge_sids: dict[str, int] = {}
        self.vp_sids: dict[tuple[str, str], int] = {}
        self.edge_buf: dict[int, tuple[list[int], list[int]]] = {}
        self.seen_vertices: set[int] = set()

    # -- transaction/batching ---------------------------------------------------------

    def _handle(self):
        if self.handle is None:
            self.handle = self.engine.begin()
            self.in_batch = 0
        return self.handle

    def _tick(self, n: int = 1) -> None:
        self.summary.statements += n
        self.in_batch += n
        if self.in_batch >= self.spec.batch:
            self._commit()

    def _commit(self) -> None:
        self._flush_edges()
        if self.handle is None:
            return
        self.engine.commit(self.handle)
        self.handle = None
        self.summary.batches += 1

    def finish(self) -> None:
        self._commit()

    def _fail(self, fname: str, lineno: int, why: str) -> None:
        if self.spec.on_error == "abort":
            if self.handle is not None:
                self.engine.abort(self.handle)
                self.handle = None
            raise LoadError(f"{fname}:{lineno}: {why}")
        self.summary.skipped.append((fname, lineno, why))

    # -- vertex/value helpers ---------------------------------------------------------

    def _vertex(self, lexical: str, local: bool) -> int:
        gui = self.engine.vertex(lexical, local=local)
        if gui not in self.seen_vertices:
            self.seen_vertices.add(gui)
            self.summary.vertices += 1
        return gui

    def _insert(self, rel: RelTag, s: int, p: int, o) -> int:
        sid = self.engine.insert(self._handle(), rel, s, p, o)
        if rel in _PROP_REL:
            self.summary.edges += 1
        else:
            self.summary.property_values += 1
        self._tick()
        return sid

    # -- buffered plain edges ---------------------------------------------------------

    def _buffer_edge(self, p_gui: int, s_gui: int, o_gui: int) -> None:
        buf = self.edge_buf.get(p_gui)
        if buf is None:
            buf = self.edge_buf[p_gui] = ([], [])
        buf[0].append(s_gui)
        buf[1].append(o_gui)
        self.summary.edges += 1
        self._tick()

    def _flush_edges(self) -> None:
        if not self.edge_buf:
            return
        handle = self._handle()
        for p_gui, (s_list, o_list) in self.edge_buf.items():
            self.engine.bulk_insert_edges(
                handle, p_gui,
                np.array(s_list, dtype=np.uint64),
                np.array(o_list, dtype=np.uint64),
                threads=self.spec.threads)
        self.edge_buf.clear()

    # -- LPG CSV ------------------------------------------------------------------

    def run_lpg_csv(self) -> None:
        spec = self.spec
        try:
            if spec.nodes:
                self._load_nodes(Path(spec.nodes))
            if spec.edges:
                self._load_edges(Path(spec.edges))
            if spec.edge_props:
                self._load_edge_props(Path(spec.edge_props))
            if spec.meta_props:
                self._load_meta_props(Path(spec.meta_props))
            self.finish()
        except StoreError:
            if self.handle is not None:
                self.engine.abort(self.handle)
                self.handle = None
            raise

    def _rows(self, path: Path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise LoadError(f"{path.name}: empty file")
            yield [h.strip() for h in header]
            yield from reader

    def _load_nodes(self, path: Path) -> None:
        rows = self._rows(path)
        header = next(rows)
        if not header or header[0] != "id":
            raise LoadError(f"{path.name}: first column must be 'id'")
        prop_cols = header[1:]
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c for c in row):
                continue
            if len(row) > len(header) or not row[0]:
                self._fail(path.name, lineno, "bad node row shape")
                continue
            v = self._vertex(row[0], True)
            for name, cell in zip(prop_cols, row[1:]):
                if not cell:
                    continue
                # labels stay strings even when they look numeric
                value = cell if name == _LABEL_PRED else typed_cell(cell)
                sid = self._insert(RelTag.VP, v, self._vertex(name, True), value)
                self.vp_sids[(row[0], name)] = sid

    def _endpoint(self, cell: str):
        """Resolve an edge endpoint cell to (gui, is_statement)."""
        if cell.startswith(_EDGE_REF):
            key = cell[len(_EDGE_REF):]
            sid = self.edge_sids.get(key)
            if sid is None:
                raise LoadError(f"unknown edge reference {key!r}")
            return sid, True
        return self._vertex(cell, True), False

    def _load_edges(self, path: Path) -> None:
        rows = self._rows(path)
        header = next(rows)
        has_id = bool(header) and header[0] == "id"
        fixed = ["id", "src", "dst", "label"] if has_id else ["src", "dst", "label"]
        if header[:len(fixed)] != fixed:
            raise LoadError(
                f"{path.name}: header must start with {','.join(fixed)}")
        prop_cols = header[len(fixed):]
        base = len(fixed)
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c for c in row):
                continue
            if len(row) < base or len(row) > len(header):
                self._fail(path.name, lineno, "bad edge row shape")
                continue
            eid = row[0] if has_id else None
            src_c, dst_c, label = row[base - 3], row[base - 2], row[base - 1]
            if not (src_c and dst_c and label):
                self._fail(path.name, lineno, "src, dst and label are required")
                continue
            try:
                s, s_meta = self._endpoint(src_c)
                o, o_meta = self._endpoint(dst_c)
            except LoadError as exc:
                self._fail(path.name, lineno, str(exc))
                continue
            rel = (RelTag.ME if s_meta and o_meta
                   else RelTag.LME if s_meta
                   else RelTag.RME if o_meta
                   else RelTag.E)
            p = self._vertex(label, True)
            props = [(name, cell) for name, cell in zip(prop_cols, row[base:]) if cell]
            if rel is RelTag.E and eid is None and not props:
                self._buffer_edge(p, s, o)
                continue
            try:
                sid = self._insert(rel, s, p, o)
            except LoadError:
                raise
            except StoreError as exc:
                self._fail(path.name, lineno, str(exc))
                continue
            if eid is not None:
                if eid in self.edge_sids:
                    self._fail(path.name, lineno, f"duplicate edge id {eid!r}")
                    continue
                self.edge_sids[eid] = sid
            prop_rel = _PROP_REL[rel]
            for name, cell in props:
                self._insert(prop_rel, sid, self._vertex(name, True), typed_cell(cell))

    def _load_edge_props(self, path: Path) -> None:
        rows = self._rows(path)
        header = next(rows)
        if header[:3] != ["edge", "key", "value"]:
            raise LoadError(f"{path.name}: header must be edge,key,value")
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c for c in row):
                continue
            if len(row) != 3 or not all(row[:2]):
                self._fail(path.name, lineno, "bad edge property row")
                continue
            eid, key, value = row
            sid = self.edge_sids.get(eid)
            if sid is None:
                self._fail(path.name, lineno, f"unknown edge id {eid!r}")
                continue
            rel = _PROP_REL[tag_of(sid)]
            self._insert(rel, sid, self._vertex(key, True), typed_cell(value))

    def _load_meta_props(self, path: Path) -> None:
        rows = self._rows(path)
        header = next(rows)
        if header[:4] != ["node", "key", "metakey", "value"]:
            raise LoadError(f"{path.name}: header must be node,key,metakey,value")
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c for c in row):
                continue
            if len(row) != 4 or not all(row[:3]):
                self._fail(path.name, lineno, "bad meta property row")
                continue
            node, key, metakey, value = row
            sid = self.vp_sids.get((node, key))
            if sid is None:
                self._fail(path.name, lineno,
                           f"no property {key!r} loaded for node {node!r}")
                continue
            self._insert(RelTag.MVP, sid, self._vertex(metakey, True),
                         typed_cell(value))

    # -- N-Triples subset --------------------------------------------------------------

    def run_ntriples(self) -> None:
        try:
            for path in self.spec.triples:
                self._load_nt_file(Path(path))
            self.finish()
        except StoreError:
            if self.handle is not None:
                self.engine.abort(self.handle)
                self.handle = None
            raise

    def _load_nt_file(self, path: Path) -> None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                try:
                    self._load_nt_line(stripped)
                except LoadError as exc:
                    self._fail(path.name, lineno, str(exc))

    def _load_nt_line(self, line: str) -> None:
        m = _TRIPLE_RE.match(line)
        if m is None:
            raise LoadError("not a triple")
        s_iri, s_bnode, p_iri, o_iri, o_bnode, lit, dtype, lang = m.groups()
        s = self._resource(s_iri, s_bnode)
        p = self._iri_vertex(p_iri)
        if lit is None:
            self._buffer_edge(p, s, self._resource(o_iri, o_bnode))
            return
        self._insert(RelTag.VP, s, p, self._literal(_unescape(lit), dtype, lang))

    def _resource(self, iri: str | None, bnode: str | None) -> int:
        if bnode is not None:
            return self._vertex(f"_:{bnode}", False)
        return self._iri_vertex(iri)

    def _iri_vertex(self, iri: str) -> int:
        base = self.engine.base_iri
        if base and iri.startswith(base + "/") and len(iri) > len(base) + 1:
            return self._vertex(iri[len(base) + 1:], True)
        return self._vertex(iri, False)

    def _literal(self, lex: str, dtype: str | None, lang: str | None):
        if lang is not None:
            return Ref(self.engine.literal(lex, f"@{lang}"))
        if dtype is None:
            return lex
        if dtype.startswith(_XSD):
            local = dtype[len(_XSD):]
            if local in _XSD_INTS:
                if not _INT_RE.match(lex):
                    raise LoadError(f"bad {local} literal {lex!r}")
                v = int(lex)
                if not -(1 << 63) <= v < (1 << 63):
                    raise LoadError(f"{local} literal {lex!r} does not fit int64")
                return v
            if local in _XSD_FLOATS:
                try:
                    return float(lex)
                except ValueError:
                    raise LoadError(f"bad {local} literal {lex!r}") from None
            if local == "boolean":
                if lex in ("true", "1"):
                    return True
                if lex in ("false", "0"):
                    return False
                raise LoadError(f"bad boolean literal {lex!r}")
            if local == "string":
                return lex
        return Ref(self.engine.literal(lex, dtype))


_XSD = "http://www.w3.org/2001/XMLSchema#"
_XSD_INTS = frozenset({
    "integer", "long", "int", "short", "byte",
    "nonNegativeInteger", "positiveInteger", "nonPositiveInteger",
    "negativeInteger", "unsignedLong", "unsignedInt", "unsignedShort",
    "unsignedByte",
})
_XSD_FLOATS = frozenset({"double", "float", "decimal"})

_IRI = r"<([^<>\"{}|^`\\\x00-\x20]*)>"
_BNODE = r"_:([A-Za-z0-9][A-Za-z0-9._\-]*)"
_LIT = r'"((?:[^"\\\n\r]|\\.)*)"(?:\^\^<([^<>"]*)>|@([A-Za-z]+(?:-[A-Za-z0-9]+)*))?'
_TRIPLE_RE = re.compile(
    rf"^(?:{_IRI}|{_BNODE})\s+{_IRI}\s+(?:{_IRI}|{_BNODE}|{_LIT})\s*\.$")

_ESC_MAP = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f",
            '"': '"', "'": "'", "\\": "\\"}
_ESC_RE = re.compile(r"\\(?:u([0-9A-Fa-f]{4})|U([0-9A-Fa-f]{8})|(.))")


def _unescape(lex: str) -> str:
    def one(m: re.Match) -> str:
        if m.group(1):
            return chr(int(m.group(1), 16))
        if m.group(2):
            return chr(int(m.group(2), 16))
        ch = m.group(3)
        try:
            return _ESC_MAP[ch]
        except KeyError:
            raise LoadError(f"bad escape \\{ch}") from None
    return _ESC_RE.sub(one, lex)
