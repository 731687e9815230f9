"""Store facade: dictionaries, relation heaps, transactions and the log.

GraphStore ties the pieces together and owns the statement write path:
domain checking, object encoding, partition routing, undo registration and
log records. It also implements the replay hooks the recovery module drives
and a canonical dump whose lines are independent of statement identifiers
and of the partitioning configuration, so stores loaded under different
grids can be compared for logical equality.
"""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import wal as wal_mod
from .errors import (
    ConflictError,
    CorruptionError,
    ModelError,
    NotFoundError,
    StateError,
    UnsupportedError,
)
from .gid import (
    DICT_TAGS,
    O_DOMAIN,
    S_DOMAIN,
    SID_LOCAL_MASK,
    SID_PART_MAX,
    SID_PART_SHIFT,
    STATEMENT_TAGS,
    TAG_SHIFT,
    TOPOLOGY_RELATIONS,
    Dictionary,
    RelTag,
    is_sid,
    make_sid,
    sid_local,
    sid_partition,
    tag_of,
)
from .relstore import (
    CTRL_FREE,
    CTRL_VERSION,
    REF_SLOT_BITS,
    REL_KIND,
    TUPLES_PER_ZONE,
    GridConfig,
    RelationStore,
)
from .txn import (
    OP_DELETE,
    OP_INSERT,
    OP_INSERT_RANGE,
    Snapshot,
    TxnManager,
    VersionRec,
    visible,
)
from .values import (
    F_NULL,
    F_RES_GUI,
    F_SID_REF,
    F_STR_GUI,
    GROUP_COMPOSITE,
    T_RES_GUI,
    T_SID_REF,
    T_STR_GUI,
    base_type,
    decode_value,
    encode_inline,
    is_composite,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Ref:
    """Explicit GUI-valued property object (resource or literal reference)."""

    gui: int


class GraphStore:
    def __init__(self, config: GridConfig | None = None, base_iri: str = "",
                 txn_table: int = 256):
        self.config = config or GridConfig()
        self.base_iri = base_iri
        self.verts = Dictionary(RelTag.VERT, self.config.dict_parts, base_iri)
        self.lits = Dictionary(RelTag.LIT, self.config.dict_parts, base_iri)
        self.store = RelationStore(self.config)
        self.txns = TxnManager(txn_table, wal=None)
        self.wal: wal_mod.WalWriter | None = None
        self.data_dir: Path | None = None
        self.last_recovery: wal_mod.RecoveryReport | None = None
        self._logged: set[int] = set()  # dictionary GUIs known durable in the log

    # -- persistence lifecycle -------------------------------------------------

    @classmethod
    def open(
        cls,
        data_dir: str | Path,
        config: GridConfig | None = None,
        base_iri: str | None = None,
        nstreams: int | None = None,
        sync: str = "flush",
        wal_enabled: bool = True,
        txn_table: int = 256,
        car_bytes: int = wal_mod.CAR_BYTES,
        flush_interval: float = wal_mod.FLUSH_INTERVAL,
        rate_limit: int | None = None,
    ) -> "GraphStore":
        """Open a store directory, recovering any prior state."""
        data_dir = Path(data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        cfg_path = data_dir / "config.json"
        stored = json.loads(cfg_path.read_text()) if cfg_path.exists() else {}
        if config is None and "grid" in stored:
            config = GridConfig.from_json(stored["grid"])
        if base_iri is None:
            base_iri = stored.get("base_iri", "")
        if nstreams is None:
            nstreams = stored.get("nstreams", wal_mod.DEFAULT_STREAMS)

        eng = cls(config=config, base_iri=base_iri, txn_table=txn_table)
        eng.data_dir = data_dir
        report = wal_mod.recover(eng, data_dir)
        eng.last_recovery = report
        eng.txns.bump_epochs(report.max_epoch + 1)
        if report.committed or report.checkpoint or report.truncated:
            log.info(
                "recovered %s: checkpoint=%s committed=%d aborted=%d "
                "incomplete=%d reshaped=%s truncated=%s",
                data_dir, report.checkpoint_ts, report.committed,
                report.aborted, report.incomplete, report.reshaped,
                report.truncated,
            )
        if wal_enabled:
            eng.wal = wal_mod.WalWriter(
                data_dir,
                nstreams=nstreams,
                sync=sync,
                car_bytes=car_bytes,
                flush_interval=flush_interval,
                rate_limit=rate_limit,
                start_seq=report.max_seq,
            )
            eng.txns.wal = eng.wal
        cfg_path.write_text(json.dumps(
            {"grid": eng.config.to_json(), "base_iri": base_iri, "nstreams": nstreams},
            indent=1,
        ))
        if report.reshaped and wal_enabled:
            # the log tails on disk describe the old layout; checkpoint now so
            # they are never replayed again
            eng.checkpoint()
        return eng

    def checkpoint(self) -> Path:
        if self.data_dir is None:
            raise StateError("store has no data directory")
        return wal_mod.write_checkpoint(self, self.data_dir)

    def close(self) -> None:
        if self.wal is not None:
            self.wal.close()
            self.wal = None
            self.txns.wal = None

    # -- dictionary surface ------------------------------------------------------

    def vertex(self, lexical: str, local: bool = False) -> int:
        return self.verts.encode(lexical, local)

    def literal(self, lexical: str, hint: str | None = None) -> int:
        return self.lits.encode(lexical, False, hint)

    def install_binding(self, tag: RelTag, lexical: str, is_local: bool,
                        gui: int, hint: str | None = None) -> None:
        d = self.verts if tag is RelTag.VERT else self.lits
        d.install(lexical, is_local, gui, hint)
        self._logged.add(gui)

    # -- transactions -------------------------------------------------------------

    def begin(self, read_only: bool = False):
        return self.txns.begin(read_only)

    def commit(self, handle) -> int:
        entry = self.txns.entry(handle)
        mints = entry.pending_mints
        ts = self.txns.commit(handle)
        if self.wal is not None and mints:
            self._logged.update(mints)
        return ts

    def abort(self, handle) -> None:
        self.txns.abort(handle)

    def snapshot_of(self, handle=None) -> Snapshot:
        if handle is None:
            return self.txns.read_snapshot()
        return self.txns.snapshot(handle)

    # -- queries ----------------------------------------------------------------

    def query(self, expr, args: dict | None = None, handle=None,
              limit: int | None = None, force: str | None = None,
              stats=None, trace: bool = False):
        """Parse, plan and run one access pattern expression."""
        from . import apl, executor

        if isinstance(expr, str):
            expr = apl.parse(expr)
        comp_args = {}
        for path, spec in (args or {}).items():
            if isinstance(spec, apl.ComponentArgs):
                comp_args[path] = spec
            else:
                comp_args[path] = apl.ComponentArgs(
                    constants=spec.get("constants"),
                    frontier=(np.array(spec["frontier"], dtype=np.uint64)
                              if spec.get("frontier") is not None else None))
        request = apl.AplRequest(expr, comp_args)
        plan = apl.Planner(self.store, stats=stats, force=force).plan(
            request, limit=limit)
        snap = self.snapshot_of(handle)
        return executor.run_plan(self, plan, request, snap, trace=trace)

    def explain(self, expr, args: dict | None = None, limit: int | None = None,
                force: str | None = None, stats=None) -> str:
        from . import apl

        if isinstance(expr, str):
            expr = apl.parse(expr)
        comp_args = {path: spec if isinstance(spec, apl.ComponentArgs)
                     else apl.ComponentArgs(
                         constants=spec.get("constants"),
                         frontier=(np.array(spec["frontier"], dtype=np.uint64)
                                   if spec.get("frontier") is not None else None))
                     for path, spec in (args or {}).items()}
        request = apl.AplRequest(expr, comp_args)
        plan = apl.Planner(self.store, stats=stats, force=force).plan(
            request, limit=limit)
        return plan.describe()

    # -- write path ---------------------------------------------------------------

    def _require_visible_sid(self, sid: int, snap: Snapshot) -> None:
        rel = tag_of(sid)
        part = self.store.get(rel, sid_partition(sid))
        ref = part.iindex.lookup(sid_local(sid)) if part is not None else -1
        if ref < 0 or not part.slot_visible(ref, snap):
            raise NotFoundError(f"statement 0x{sid:016x} is not visible")

    def _encode_object(self, rel: RelTag, o, snap: Snapshot) -> tuple[int, int, int | None]:
        """Returns (flag, o64, o_key); o_key is the GUI posted to the O index."""
        domain = O_DOMAIN[rel]
        if rel in TOPOLOGY_RELATIONS:
            if not isinstance(o, int):
                raise ModelError(f"{rel.name} objects must be GUIs")
            tag = tag_of(o)
            if tag not in domain:
                raise ModelError(f"{tag.name} GUI cannot be the object of {rel.name}")
            if tag in STATEMENT_TAGS:
                self._require_visible_sid(o, snap)
                return F_SID_REF, o, o
            self.verts.decode(o)
            return F_RES_GUI, o, o
        if isinstance(o, Ref):
            tag = tag_of(o.gui)
            if tag not in domain:
                raise ModelError(f"{tag.name} GUI cannot be the object of {rel.name}")
            if tag is RelTag.VERT:
                self.verts.decode(o.gui)
                return F_RES_GUI, o.gui, o.gui
            self.lits.decode(o.gui)
            return F_STR_GUI, o.gui, o.gui
        if o is None:
            return F_NULL, 0, None
        inline = encode_inline(o)
        if inline is not None:
            return inline[0], inline[1], None
        return F_STR_GUI, (g := self.lits.encode(o)), g

    def _comp(self, entry, gui: int) -> bytes:
        """Log component for a GUI: a mint while the binding may not be durable."""
        tag = tag_of(gui)
        if tag in DICT_TAGS and gui not in self._logged:
            if tag is RelTag.VERT:
                e = self.verts.decode(gui)
                entry.pending_mints.add(gui)
                return wal_mod.comp_mint_vert(gui, e.lexical, e.is_local)
            e = self.lits.decode(gui)
            entry.pending_mints.add(gui)
            return wal_mod.comp_mint_lit(gui, e.lexical, e.datatype_hint)
        return wal_mod.comp_gui(gui)

    def insert(self, handle, rel: RelTag, s: int, p: int, o) -> int:
        """Insert one statement; returns its SID.

        o is a GUI for topology relations and a Python value (or Ref) for
        value relations.
        """
        if rel is RelTag.VSS:
            raise UnsupportedError("vector similarity statements are recognized but not storable")
        if rel not in REL_KIND:
            raise ModelError(f"{getattr(rel, 'name', rel)} is not a storable relation")
        entry = self.txns.entry(handle)
        snap = Snapshot(entry.read_ts, entry)
        if tag_of(p) is not RelTag.VERT:
            raise ModelError("predicates must be vertex dictionary GUIs")
        self.verts.decode(p)
        s_tag = tag_of(s)
        if s_tag not in S_DOMAIN[rel]:
            raise ModelError(f"{s_tag.name} GUI cannot be the subject of {rel.name}")
        if s_tag in STATEMENT_TAGS:
            self._require_visible_sid(s, snap)
        else:
            self.verts.decode(s)
        flag, bits, o_key = self._encode_object(rel, o, snap)

        pid = self.store.route(rel, s, o_key if rel in TOPOLOGY_RELATIONS else None)
        part = self.store.partition(rel, pid)
        with part.lock:
            sid, ref = part.insert(s, p, flag, bits, o_key, entry)
        entry.record_undo((OP_INSERT, part, ref, entry))
        if self.wal is not None:
            o_comp = (self._comp(entry, bits) if is_composite(flag)
                      else wal_mod.comp_inline(flag, bits))
            self.wal.append_insert(entry, rel, pid, self._comp(entry, s),
                                   self._comp(entry, p), o_comp, sid)
        return sid

    def delete(self, handle, sid: int) -> None:
        entry = self.txns.entry(handle)
        snap = Snapshot(entry.read_ts, entry)
        rel = tag_of(sid)
        if rel not in REL_KIND:
            raise ModelError(f"0x{sid:016x} is not a statement GUI")
        pid = sid_partition(sid)
        part = self.store.get(rel, pid)
        ref = part.iindex.lookup(sid_local(sid)) if part is not None else -1
        if part is None or ref < 0:
            raise NotFoundError(f"statement 0x{sid:016x} does not exist")
        with part.lock:
            val = part.versions.get(ref)
            if isinstance(val, VersionRec) and val.del_ is not None:
                if val.del_ is entry:
                    return  # already deleted by this transaction
                # first committer wins: a pending or later-committed delete
                # exists, so this writer loses
                raise ConflictError(f"statement 0x{sid:016x} has a competing delete")
            page, slot = part.page_slot(ref)
            if page.ctrl[slot] & CTRL_FREE:
                raise NotFoundError(f"statement 0x{sid:016x} does not exist")
            if val is not None and not visible(val, snap):
                raise NotFoundError(f"statement 0x{sid:016x} is not visible")
            part.mark_delete(ref, entry)
        entry.record_undo((OP_DELETE, part, ref, entry))
        if self.wal is not None:
            self.wal.append_delete(entry, rel, pid, sid)

    # -- bulk write path -----------------------------------------------------------

    def bulk_insert_edges(self, handle, p_gui: int, s_arr: np.ndarray,
                          o_arr: np.ndarray, threads: int = 1) -> np.ndarray:
        """Insert many E statements; returns their SIDs in input order.

        Subjects and objects must be already-minted vertex GUIs. Tuples are
        grouped by partition; each group allocates a contiguous tail range,
        writes columns vectorized and logs one box car. With threads > 1 the
        per-partition groups apply on a worker pool.
        """
        entry = self.txns.entry(handle)
        if tag_of(p_gui) is not RelTag.VERT:
            raise ModelError("predicates must be vertex dictionary GUIs")
        self.verts.decode(p_gui)
        s_arr = np.ascontiguousarray(s_arr, dtype=np.uint64)
        o_arr = np.ascontiguousarray(o_arr, dtype=np.uint64)
        n = len(s_arr)
        sids = np.zeros(n, dtype=np.uint64)
        if n == 0:
            return sids
        rows = np.uint64(self.config.rows - 1)
        cols = np.uint64(self.config.cols - 1)
        pid_arr = (s_arr & rows) * np.uint64(self.config.cols) + (o_arr & cols)
        order = np.argsort(pid_arr, kind="stable")
        sorted_pids = pid_arr[order]
        starts = np.flatnonzero(np.diff(sorted_pids)) + 1
        bounds = [0, *starts.tolist(), n]
        comp_cache: dict[int, bytes] = {}

        def apply_group(span):
            a, b = span
            grp = order[a:b]
            pid = int(sorted_pids[a])
            part = self.store.partition(RelTag.E, pid)
            with part.lock:
                sids[grp] = self._bulk_edges_partition(
                    entry, part, p_gui, s_arr[grp], o_arr[grp], comp_cache)

        _run_groups(apply_group, list(zip(bounds, bounds[1:])), threads)
        return sids

    def _bulk_edges_partition(self, entry, part, p_gui, s, o, comp_cache) -> np.ndarray:
        n = len(s)
        uniq, inv = np.unique(np.concatenate([s, o]), return_inverse=True)
        code_map = np.fromiter(
            (part.vertex_codes.code(int(g)) for g in uniq.tolist()),
            dtype=np.uint32, count=len(uniq))
        all_codes = code_map[inv]
        s_codes, o_codes = all_codes[:n], all_codes[n:]
        pcode = part.pred_codes.code(p_gui)

        refs = np.empty(n, dtype=np.int64)
        chunks = part.alloc_tail_range(n)
        pos = 0
        for page, start, take in chunks:
            sl = slice(start, start + take)
            end = pos + take
            page.s[sl] = s_codes[pos:end]
            page.o[sl] = o_codes[pos:end]
            page.p[sl] = pcode
            page.ctrl[sl] = CTRL_VERSION
            zones = np.arange(start, start + take) // TUPLES_PER_ZONE
            counts = np.bincount(zones - zones[0]).astype(np.uint16)
            page.zone_ver[zones[0]: zones[0] + len(counts)] += counts
            page.version_total += take
            refs[pos:end] = (page.index << REF_SLOT_BITS) | np.arange(start, start + take)
            entry.record_undo((OP_INSERT_RANGE, part,
                               part.ref(page.index, start), take, entry))
            pos = end

        refs_list = refs.tolist()
        first_local = part.iindex.mint_range(refs_list)
        locals_arr = np.arange(first_local, first_local + n, dtype=np.uint64)
        pos = 0
        for page, start, take in chunks:
            page.i[start: start + take] = locals_arr[pos: pos + take]
            pos += take

        part.versions.update(zip(refs_list, itertools.repeat(entry)))
        _post_grouped(part.sindex, s, refs)
        _post_grouped(part.oindex, o, refs)
        part.tuple_count += n

        base = np.uint64(make_sid(RelTag.E, part.pid, 0))
        out = base + locals_arr
        if self.wal is not None:
            def comp_of(g: int) -> bytes:
                c = comp_cache.get(g)
                if c is None:
                    c = self._comp(entry, g)
                    comp_cache[g] = c
                return c

            p_comp = comp_of(p_gui)
            recs = [
                (comp_of(int(sg)), p_comp, comp_of(int(og)), int(sid))
                for sg, og, sid in zip(s.tolist(), o.tolist(), out.tolist())
            ]
            self.wal.append_insert_batch(entry, RelTag.E, part.pid, recs)
        return out

    def bulk_insert_props(self, handle, p_gui: int, s_arr: np.ndarray,
                          flags: np.ndarray, bits: np.ndarray,
                          o_keys: np.ndarray | None = None,
                          rel: RelTag = RelTag.VP,
                          threads: int = 1) -> np.ndarray:
        """Insert many VP or EP statements; returns their SIDs in input order.

        VP subjects are minted vertex GUIs; EP subjects must be edge SIDs
        visible to this transaction (typically minted by it). Objects
        arrive pre-encoded as (flag, bits) pairs; composite objects
        (dictionary or reference GUIs) repeat their GUI in o_keys, zero
        means inline.
        """
        if rel not in (RelTag.VP, RelTag.EP):
            raise ModelError("bulk property inserts cover VP and EP only")
        entry = self.txns.entry(handle)
        if tag_of(p_gui) is not RelTag.VERT:
            raise ModelError("predicates must be vertex dictionary GUIs")
        self.verts.decode(p_gui)
        s_arr = np.ascontiguousarray(s_arr, dtype=np.uint64)
        flags = np.ascontiguousarray(flags, dtype=np.uint8)
        bits = np.ascontiguousarray(bits, dtype=np.uint64)
        n = len(s_arr)
        sids = np.zeros(n, dtype=np.uint64)
        if n == 0:
            return sids
        if o_keys is None:
            o_keys = np.zeros(n, dtype=np.uint64)
        if rel is RelTag.EP:
            if np.any((s_arr >> np.uint64(TAG_SHIFT)) != np.uint64(RelTag.E)):
                raise ModelError("bulk EP subjects must all be E statement GUIs")
            pid_arr = (s_arr >> np.uint64(SID_PART_SHIFT)) & np.uint64(SID_PART_MAX)
        else:
            pid_arr = s_arr & np.uint64(self.config.parts1d - 1)
        order = np.argsort(pid_arr, kind="stable")
        sorted_pids = pid_arr[order]
        starts = np.flatnonzero(np.diff(sorted_pids)) + 1
        bounds = [0, *starts.tolist(), n]
        comp_cache: dict[int, bytes] = {}

        def apply_group(span):
            a, b = span
            grp = order[a:b]
            pid = int(sorted_pids[a])
            part = self.store.partition(rel, pid)
            with part.lock:
                sids[grp] = self._bulk_props_partition(
                    entry, part, rel, p_gui, s_arr[grp], flags[grp],
                    bits[grp], o_keys[grp], comp_cache)

        _run_groups(apply_group, list(zip(bounds, bounds[1:])), threads)
        return sids

    def _bulk_props_partition(self, entry, part, rel, p_gui, s, flags, bits,
                              o_keys, comp_cache) -> np.ndarray:
        n = len(s)
        if rel is RelTag.EP:
            e_part = self.store.get(RelTag.E, part.pid)
            limit = e_part.iindex.next_local if e_part is not None else 0
            s_codes = (s & np.uint64(SID_LOCAL_MASK)).astype(np.uint32)
            if int(s_codes.max(initial=0)) >= limit:
                raise NotFoundError("bulk EP subject names an unknown edge")
        else:
            uniq, inv = np.unique(s, return_inverse=True)
            code_map = np.fromiter(
                (part.vertex_codes.code(int(g)) for g in uniq.tolist()),
                dtype=np.uint32, count=len(uniq))
            s_codes = code_map[inv]
        pcode = part.pred_codes.code(p_gui)

        refs = np.empty(n, dtype=np.int64)
        chunks = part.alloc_tail_range(n)
        pos = 0
        for page, start, take in chunks:
            sl = slice(start, start + take)
            end = pos + take
            page.s[sl] = s_codes[pos:end]
            page.f[sl] = flags[pos:end]
            page.o[sl] = bits[pos:end]
            page.p[sl] = pcode
            page.ctrl[sl] = CTRL_VERSION
            zones = np.arange(start, start + take) // TUPLES_PER_ZONE
            counts = np.bincount(zones - zones[0]).astype(np.uint16)
            page.zone_ver[zones[0]: zones[0] + len(counts)] += counts
            page.version_total += take
            refs[pos:end] = (page.index << REF_SLOT_BITS) | np.arange(start, start + take)
            entry.record_undo((OP_INSERT_RANGE, part,
                               part.ref(page.index, start), take, entry))
            pos = end

        refs_list = refs.tolist()
        first_local = part.iindex.mint_range(refs_list)
        locals_arr = np.arange(first_local, first_local + n, dtype=np.uint64)
        pos = 0
        for page, start, take in chunks:
            page.i[start: start + take] = locals_arr[pos: pos + take]
            pos += take

        part.versions.update(zip(refs_list, itertools.repeat(entry)))
        _post_grouped(part.sindex, s, refs)
        composite = o_keys != 0
        if composite.any():
            _post_grouped(part.oindex, o_keys[composite], refs[composite])
        part.tuple_count += n

        base = np.uint64(make_sid(rel, part.pid, 0))
        out = base + locals_arr
        if self.wal is not None:
            def comp_of(g: int) -> bytes:
                c = comp_cache.get(g)
                if c is None:
                    c = self._comp(entry, g)
                    comp_cache[g] = c
                return c

            p_comp = comp_of(p_gui)
            recs = []
            for k in range(n):
                o_comp = (comp_of(int(bits[k])) if o_keys[k]
                          else wal_mod.comp_inline(int(flags[k]), int(bits[k])))
                recs.append((comp_of(int(s[k])), p_comp, o_comp, int(out[k])))
            self.wal.append_insert_batch(entry, rel, part.pid, recs)
        return out

    # -- reads ----------------------------------------------------------------------

    def statement(self, sid: int, snap: Snapshot):
        """Resolve a SID to (rel, s_gui, p_gui, flag, o_bits) or None."""
        rel = tag_of(sid)
        part = self.store.get(rel, sid_partition(sid))
        if part is None:
            return None
        ref = part.iindex.lookup(sid_local(sid))
        if ref < 0 or not part.slot_visible(ref, snap):
            return None
        return (rel, *part.read_row(ref))

    def decode_object(self, flag: int, bits: int):
        """Property object as a Python value; references come back as Ref."""
        base = base_type(flag)
        if base == T_STR_GUI:
            return self.lits.decode(bits).lexical
        if base in (T_RES_GUI, T_SID_REF):
            return Ref(bits)
        return decode_value(flag, bits)

    # -- canonical dump ----------------------------------------------------------------

    def dump(self, handle=None) -> list[str]:
        """Sorted statement lines with SIDs recursively expanded.

        Two stores hold the same graph exactly when their dumps are equal,
        whatever their grids, page sizes or statement numbering.
        """
        snap = self.snapshot_of(handle)
        memo: dict[int, str] = {}
        lines: list[str] = []
        for part in self.store.all_partitions():
            for page in part.pages:
                mask = part.visible_mask(page, snap)
                for slot in np.nonzero(mask)[0].tolist():
                    ref = part.ref(page.index, slot)
                    s, p, flag, bits = part.read_row(ref)
                    lines.append(self._stmt_repr(part.rel, s, p, flag, bits, snap, memo))
        lines.sort()
        return lines

    def _stmt_repr(self, rel: RelTag, s: int, p: int, flag: int, bits: int,
                   snap: Snapshot, memo: dict[int, str]) -> str:
        s_repr = self._gui_repr(s, snap, memo)
        p_repr = self._gui_repr(p, snap, memo)
        if is_composite(flag):
            o_repr = self._gui_repr(bits, snap, memo)
        else:
            o_repr = _inline_repr(flag, bits)
        return f"{rel.name}({s_repr} {p_repr} {o_repr})"

    def _gui_repr(self, gui: int, snap: Snapshot, memo: dict[int, str]) -> str:
        tag = tag_of(gui)
        if tag is RelTag.VERT:
            return f"<{self.verts.effective_lexical(self.verts.decode(gui))}>"
        if tag is RelTag.LIT:
            e = self.lits.decode(gui)
            text = json.dumps(e.lexical, ensure_ascii=False)
            return f"{text}^^{e.datatype_hint}" if e.datatype_hint else text
        cached = memo.get(gui)
        if cached is None:
            row = self.statement(gui, snap)
            cached = ("#gone" if row is None
                      else self._stmt_repr(row[0], row[1], row[2], row[3], row[4], snap, memo))
            memo[gui] = cached
        return cached

    # -- replay hooks (driven by recovery) ------------------------------------------------

    def replay_insert(self, rec, sid_map: dict[int, int], remap: bool = False) -> None:
        rel = rec.rel
        s_gui = _comp_gui(rec.s_comp)
        p_gui = _comp_gui(rec.p_comp)
        flag, bits, o_key = self._comp_object(rec.o_comp)
        if remap:
            if is_sid(s_gui):
                s_gui = _remap(sid_map, s_gui)
            if flag == F_SID_REF:
                bits = o_key = _remap(sid_map, bits)
            pid = self.store.route(rel, s_gui,
                                   o_key if rel in TOPOLOGY_RELATIONS else None)
            part = self.store.partition(rel, pid)
            with part.lock:
                new_sid, _ = part.insert(s_gui, p_gui, flag, bits, o_key, None,
                                         versioned=False)
            sid_map[rec.sid] = new_sid
        else:
            part = self.store.partition(rel, sid_partition(rec.sid))
            with part.lock:
                sid, _ = part.insert(s_gui, p_gui, flag, bits, o_key, None,
                                     local=sid_local(rec.sid), versioned=False)
            if sid != rec.sid:
                raise CorruptionError(f"replayed SID mismatch 0x{sid:016x} != 0x{rec.sid:016x}")

    def replay_delete(self, rec, sid_map: dict[int, int]) -> None:
        sid = sid_map.get(rec.sid, rec.sid)
        rel = tag_of(sid)
        part = self.store.get(rel, sid_partition(sid))
        ref = part.iindex.lookup(sid_local(sid)) if part is not None else -1
        if ref < 0:
            raise CorruptionError(f"replayed delete names unknown SID 0x{rec.sid:016x}")
        part.expunge(ref)

    def replay_insert_logical(self, item, sid_map: dict[int, int]) -> bool:
        """Reshape support: re-route one checkpoint row; False defers it."""
        rel, s_gui, p_gui, flag, bits, o_key, old_sid = item
        if is_sid(s_gui):
            mapped = sid_map.get(s_gui)
            if mapped is None:
                return False
            s_gui = mapped
        if flag == F_SID_REF:
            mapped = sid_map.get(bits)
            if mapped is None:
                return False
            bits = o_key = mapped
        pid = self.store.route(rel, s_gui, o_key if rel in TOPOLOGY_RELATIONS else None)
        part = self.store.partition(rel, pid)
        with part.lock:
            new_sid, _ = part.insert(s_gui, p_gui, flag, bits, o_key, None,
                                     versioned=False)
        sid_map[old_sid] = new_sid
        return True

    def _comp_object(self, comp) -> tuple[int, int, int | None]:
        if comp[0] == "inline":
            return comp[1], comp[2], None
        gui = comp[1]
        tag = tag_of(gui)
        if tag is RelTag.VERT:
            return F_RES_GUI, gui, gui
        if tag is RelTag.LIT:
            return F_STR_GUI, gui, gui
        return F_SID_REF, gui, gui

    def install_rows_direct(self, part, rows) -> None:
        """Checkpoint load: append pre-encoded rows and rebuild the indexes."""
        s, p, f, o, i, ctrl = rows
        n = len(s)
        if n == 0:
            return
        chunks = part.alloc_tail_range(n)
        pos = 0
        for page, start, take in chunks:
            sl = slice(start, start + take)
            end = pos + take
            page.s[sl] = s[pos:end]
            page.p[sl] = p[pos:end]
            if page.f is not None:
                page.f[sl] = f[pos:end]
            page.o[sl] = o[pos:end]
            page.i[sl] = i[pos:end]
            page.ctrl[sl] = ctrl[pos:end]
            idx = np.arange(start, start + take)
            refs = (page.index << REF_SLOT_BITS) | idx
            for local, ref in zip(i[pos:end].tolist(), refs.tolist()):
                part.iindex.install(local, ref)
            _post_grouped(part.sindex, part.recon_s(page, idx), refs)
            flags_o, bits_o = part.recon_o(page, idx)
            composite = (flags_o & GROUP_COMPOSITE) != 0
            if composite.any():
                _post_grouped(part.oindex, bits_o[composite], refs[composite])
            pos = end
        part.tuple_count += n


def _run_groups(apply_group, spans: list, threads: int) -> None:
    """Apply disjoint per-partition spans, on a pool when threads > 1."""
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(spans))) as pool:
            for _ in pool.map(apply_group, spans):
                pass
    else:
        for span in spans:
            apply_group(span)


def _post_grouped(index, keys: np.ndarray, refs: np.ndarray) -> None:
    if len(keys) == 0:
        return
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    sorted_refs = refs[order]
    starts = np.concatenate(
        ([0], np.flatnonzero(sorted_keys[1:] != sorted_keys[:-1]) + 1))
    bounds = np.concatenate((starts[1:], [len(sorted_keys)]))
    singles = (bounds - starts) == 1
    if singles.any():
        pos = starts[singles]
        index.post_singletons(sorted_keys[pos], sorted_refs[pos])
    for a, b in zip(starts[~singles].tolist(), bounds[~singles].tolist()):
        index.post_many(int(sorted_keys[a]), sorted_refs[a:b])


def _comp_gui(comp) -> int:
    if comp[0] == "inline":
        raise CorruptionError("inline value in a GUI position")
    return comp[1]


def _remap(sid_map: dict[int, int], sid: int) -> int:
    mapped = sid_map.get(sid)
    if mapped is None:
        raise CorruptionError(f"no remapping for SID 0x{sid:016x}")
    return mapped


def _inline_repr(flag: int, bits: int) -> str:
    if flag == F_NULL:
        return "null"
    value = decode_value(flag, bits)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    return repr(value)
