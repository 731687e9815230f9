"""Partitioned in-memory relation heaps.

Statements live in one heap per (relation, partition). Topology relations
are partitioned on a 2D grid: the row is selected by the low bits of S, the
column by the low bits of O, so a lookup bound on both sides names exactly
one partition. Vertex properties are partitioned 1D by the low bits of S.
Property relations are conformal: a property statement lives in the
partition named by its subject SID, which co-locates each property relation
with the relation it describes (the container pairs).

Pages hold a fixed number of tuple slots (the page byte budget divided by
the serialized tuple width, rounded down to whole zones of 1024 slots) and
store each column in its own array, so a scan touches only the columns it
reads. Slots carry two control bits: free and versioned. Zones keep a count
of versioned slots so clean zones skip per-slot visibility checks. Dead
slots thread an intrusive free list through their S column.

Column contents by relation kind:
  topology (E):        s28/o28 partition-local vertex codes, p32 predicate
                       code, i28 local statement number        (16 B/row)
  property (VP, EP):   s28 vertex code or subject-SID local
                       number (+ chain control bit), 8-bit
                       value flag, 64-bit value word           (21 B/row)
  meta relations:      full 64-bit S, flag, 64-bit O, i28      (28 B/row)
"""

from __future__ import annotations

import threading
from collections import deque
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .adjindex import IIndex, VertexIndex
from .errors import CapacityError, ConfigError
from .gid import (
    CONTAINER_LEFT,
    RelTag,
    SID_LOCAL_MAX,
    TOPOLOGY_RELATIONS,
    make_sid,
    sid_local,
    sid_partition,
    tag_of,
)
from .txn import Snapshot, TxnEntry, VersionRec, visible
from .values import F_RES_GUI, F_SID_REF

CTRL_FREE = 0x01
CTRL_VERSION = 0x02
CTRL_SCHAIN = 0x04

REF_SLOT_BITS = 18
REF_SLOT_MASK = (1 << REF_SLOT_BITS) - 1

TUPLES_PER_ZONE = 1024
MAX_PAGES_PER_PARTITION = 2048
MAX_LOCALS_PER_PARTITION = SID_LOCAL_MAX + 1
MAX_VERTEX_CODES = 1 << 28
MAX_PRED_CODES = 1 << 32

TOPO_WIDTH = 16
PROP_WIDTH = 21
META_WIDTH = 28

KIND_TOPO = "topo"
KIND_PROP = "prop"
KIND_META = "meta"

REL_KIND = {
    RelTag.E: KIND_TOPO,
    RelTag.LME: KIND_META,
    RelTag.ME: KIND_META,
    RelTag.RME: KIND_META,
    RelTag.EP: KIND_PROP,
    RelTag.LMEP: KIND_META,
    RelTag.MEP: KIND_META,
    RelTag.RMEP: KIND_META,
    RelTag.VP: KIND_PROP,
    RelTag.MVP: KIND_META,
}

KIND_WIDTH = {KIND_TOPO: TOPO_WIDTH, KIND_PROP: PROP_WIDTH, KIND_META: META_WIDTH}

_FREE_END = 0xFFFFFFFF  # free-list terminator stored in the S column


def _is_pow2(n: int) -> bool:
    return n > 0 and not n & (n - 1)


@dataclass(frozen=True)
class GridConfig:
    """Partitioning and page geometry for a store."""

    rows: int = 4
    cols: int = 4
    parts1d: int = 4
    page_bytes: int = 2 * 1024 * 1024
    dict_parts: int | None = None

    def __post_init__(self):
        for name in ("rows", "cols", "parts1d"):
            if not _is_pow2(getattr(self, name)):
                raise ConfigError(f"{name} must be a power of two")
        if self.page_bytes < 64 * 1024:
            raise ConfigError("page_bytes must be at least 64 KiB")
        if self.dict_parts is None:
            object.__setattr__(self, "dict_parts", self.parts1d)
        if not _is_pow2(self.dict_parts):
            raise ConfigError("dict_parts must be a power of two")

    def page_capacity(self, kind: str) -> int:
        cap = (self.page_bytes // KIND_WIDTH[kind]) // TUPLES_PER_ZONE * TUPLES_PER_ZONE
        return max(cap, TUPLES_PER_ZONE)

    def npartitions(self, rel: RelTag) -> int:
        left = CONTAINER_LEFT.get(rel, rel)
        if left in TOPOLOGY_RELATIONS:
            return self.rows * self.cols
        return self.parts1d

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "parts1d": self.parts1d,
            "page_bytes": self.page_bytes,
            "dict_parts": self.dict_parts,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GridConfig":
        return cls(**obj)


class CodeTable:
    """Append-only GUI <-> dense code table (per partition, per role)."""

    __slots__ = ("_map", "_arr", "_len", "_max")

    def __init__(self, max_codes: int):
        self._map: dict[int, int] = {}
        self._arr = np.zeros(64, dtype=np.uint64)
        self._len = 0
        self._max = max_codes

    def __len__(self) -> int:
        return self._len

    def code(self, gui: int) -> int:
        c = self._map.get(gui)
        if c is not None:
            return c
        if self._len >= self._max:
            raise CapacityError("code table exhausted")
        if self._len >= len(self._arr):
            grown = np.zeros(len(self._arr) * 2, dtype=np.uint64)
            grown[: self._len] = self._arr[: self._len]
            self._arr = grown
        c = self._len
        self._arr[c] = gui
        self._len = c + 1
        self._map[gui] = c
        return c

    def get_code(self, gui: int) -> int:
        return self._map.get(gui, -1)

    def gui(self, code: int) -> int:
        return int(self._arr[code])

    def gui_array(self) -> np.ndarray:
        return self._arr[: self._len]


class Page:
    """Fixed-capacity slot array with per-column storage.

    Column access for scans goes through column(), which feeds the
    instrumentation counters when enabled so tests can verify that scans
    touch only the columns they need.
    """

    instrument = False

    __slots__ = ("index", "kind", "cap", "count", "free_head", "n_free",
                 "version_total", "zone_ver", "touches",
                 "s", "p", "o", "i", "f", "ctrl")

    def __init__(self, index: int, kind: str, cap: int):
        self.index = index
        self.kind = kind
        self.cap = cap
        self.count = 0
        self.free_head = -1
        self.n_free = 0
        self.version_total = 0
        self.zone_ver = np.zeros(cap // TUPLES_PER_ZONE, dtype=np.uint16)
        self.touches: dict[str, int] = {}
        if kind == KIND_TOPO:
            self.s = np.zeros(cap, dtype=np.uint32)
            self.o = np.zeros(cap, dtype=np.uint32)
            self.f = None
        elif kind == KIND_PROP:
            self.s = np.zeros(cap, dtype=np.uint32)
            self.o = np.zeros(cap, dtype=np.uint64)
            self.f = np.zeros(cap, dtype=np.uint8)
        else:
            self.s = np.zeros(cap, dtype=np.uint64)
            self.o = np.zeros(cap, dtype=np.uint64)
            self.f = np.zeros(cap, dtype=np.uint8)
        self.p = np.zeros(cap, dtype=np.uint32)
        self.i = np.zeros(cap, dtype=np.uint32)
        self.ctrl = np.zeros(cap, dtype=np.uint8)

    def column(self, name: str) -> np.ndarray:
        if Page.instrument:
            self.touches[name] = self.touches.get(name, 0) + 1
        return getattr(self, name)


class Partition:
    """One relation heap plus its per-partition access structures."""

    def __init__(self, rel: RelTag, pid: int, config: GridConfig):
        self.rel = rel
        self.pid = pid
        self.config = config
        self.kind = REL_KIND[rel]
        self.page_cap = config.page_capacity(self.kind)
        if self.page_cap > (1 << REF_SLOT_BITS):
            raise ConfigError("page capacity exceeds slot ref width")
        self.lock = threading.RLock()
        self.pages: list[Page] = []
        self._free_pages: list[int] = []
        self.vertex_codes = CodeTable(MAX_VERTEX_CODES) if self.kind != KIND_META else None
        self.pred_codes = CodeTable(MAX_PRED_CODES)
        self.iindex = IIndex()
        self.sindex = VertexIndex()
        self.oindex = VertexIndex()
        self.versions: dict[int, TxnEntry | VersionRec] = {}
        self.tuple_count = 0

    # -- geometry ------------------------------------------------------------

    def coord(self) -> tuple[int, ...]:
        left = CONTAINER_LEFT.get(self.rel, self.rel)
        if left in TOPOLOGY_RELATIONS:
            return divmod(self.pid, self.config.cols)
        return (self.pid,)

    def ref(self, page_idx: int, slot: int) -> int:
        return (page_idx << REF_SLOT_BITS) | slot

    def page_slot(self, ref: int) -> tuple[Page, int]:
        return self.pages[ref >> REF_SLOT_BITS], ref & REF_SLOT_MASK

    # -- slot allocation -------------------------------------------------------

    def _new_page(self) -> Page:
        if len(self.pages) >= MAX_PAGES_PER_PARTITION:
            raise CapacityError(
                f"partition {self.rel.name}/{self.pid} exceeds {MAX_PAGES_PER_PARTITION} pages"
            )
        page = Page(len(self.pages), self.kind, self.page_cap)
        self.pages.append(page)
        return page

    def alloc_slot(self) -> tuple[int, Page, int]:
        while self._free_pages:
            idx = self._free_pages[-1]
            page = self.pages[idx]
            if page.free_head < 0:
                self._free_pages.pop()
                continue
            slot = page.free_head
            nxt = int(page.s[slot])
            page.free_head = -1 if nxt == _FREE_END else nxt
            page.n_free -= 1
            if page.free_head < 0:
                self._free_pages.pop()
            return self.ref(page.index, slot), page, slot
        page = self.pages[-1] if self.pages else self._new_page()
        if page.count >= page.cap:
            page = self._new_page()
        slot = page.count
        page.count += 1
        return self.ref(page.index, slot), page, slot

    def alloc_tail_range(self, n: int) -> list[tuple[Page, int, int]]:
        """Reserve n tail slots; returns (page, start, count) chunks."""
        chunks = []
        while n > 0:
            page = self.pages[-1] if self.pages else self._new_page()
            if page.count >= page.cap:
                page = self._new_page()
            take = min(n, page.cap - page.count)
            chunks.append((page, page.count, take))
            page.count += take
            n -= take
        return chunks

    def _free_slot(self, page: Page, slot: int) -> None:
        page.s[slot] = page.free_head if page.free_head >= 0 else _FREE_END
        page.ctrl[slot] = CTRL_FREE
        if page.free_head < 0:
            self._free_pages.append(page.index)
        page.free_head = slot
        page.n_free += 1
        self.tuple_count -= 1

    def _mint_local(self) -> int:
        if self.iindex.next_local >= MAX_LOCALS_PER_PARTITION:
            raise CapacityError(
                f"partition {self.rel.name}/{self.pid} exceeds {MAX_LOCALS_PER_PARTITION} statements"
            )
        return self.iindex.next_local

    # -- write path ------------------------------------------------------------

    def _set_version(self, page: Page, slot: int) -> None:
        if not page.ctrl[slot] & CTRL_VERSION:
            page.ctrl[slot] |= CTRL_VERSION
            page.zone_ver[slot // TUPLES_PER_ZONE] += 1
            page.version_total += 1

    def _clear_version(self, page: Page, slot: int) -> None:
        if page.ctrl[slot] & CTRL_VERSION:
            page.ctrl[slot] &= ~CTRL_VERSION & 0xFF
            page.zone_ver[slot // TUPLES_PER_ZONE] -= 1
            page.version_total -= 1

    def insert(
        self,
        s_gui: int,
        p_gui: int,
        flag: int,
        o_bits: int,
        o_key: int | None,
        entry: TxnEntry | None,
        local: int | None = None,
        versioned: bool = True,
    ) -> tuple[int, int]:
        """Write one tuple; returns (sid, ref). Caller holds the lock for
        transactional inserts; replay passes versioned=False."""
        if local is None:
            local = self._mint_local()
        ref, page, slot = self.alloc_slot()
        pcode = self.pred_codes.code(p_gui)
        ctrl = 0
        if self.kind == KIND_TOPO:
            page.s[slot] = self.vertex_codes.code(s_gui)
            page.o[slot] = self.vertex_codes.code(o_key)
        elif self.kind == KIND_PROP:
            if self.rel is RelTag.VP:
                page.s[slot] = self.vertex_codes.code(s_gui)
            else:
                page.s[slot] = sid_local(s_gui)
                if tag_of(s_gui) is self.rel:
                    ctrl |= CTRL_SCHAIN
            page.f[slot] = flag
            page.o[slot] = o_bits
        else:
            page.s[slot] = s_gui
            page.f[slot] = flag
            page.o[slot] = o_bits
        page.p[slot] = pcode
        page.i[slot] = local
        page.ctrl[slot] = ctrl
        if versioned:
            self._set_version(page, slot)
            self.versions[ref] = entry
        if local == self.iindex.next_local:
            self.iindex.mint(ref)
        else:
            self.iindex.install(local, ref)
        self.sindex.post(s_gui, ref)
        if o_key is not None:
            self.oindex.post(o_key, ref)
        self.tuple_count += 1
        return make_sid(self.rel, self.pid, local), ref

    def mark_delete(self, ref: int, deleter: TxnEntry) -> None:
        page, slot = self.page_slot(ref)
        val = self.versions.get(ref)
        if val is None:
            self.versions[ref] = VersionRec(None, deleter)
        elif isinstance(val, TxnEntry):
            self.versions[ref] = VersionRec(val, deleter)
        else:
            val.del_ = deleter
        self._set_version(page, slot)

    def unmark_delete(self, ref: int, deleter: TxnEntry) -> None:
        val = self.versions.get(ref)
        if isinstance(val, VersionRec) and val.del_ is deleter:
            val.del_ = None
            if val.ins is None:
                del self.versions[ref]
                page, slot = self.page_slot(ref)
                self._clear_version(page, slot)
            else:
                self.versions[ref] = val.ins

    # -- purge hooks (called by the transaction manager) -----------------------

    def _expunge_slot(self, ref: int) -> None:
        page, slot = self.page_slot(ref)
        local = int(page.i[slot])
        self._recon_keys_and_unlink(page, slot, ref)
        self.iindex.clear(local)
        self._clear_version(page, slot)
        self.versions.pop(ref, None)
        self._free_slot(page, slot)

    def _recon_keys_and_unlink(self, page: Page, slot: int, ref: int) -> None:
        s_gui = self._recon_s_one(page, slot)
        self.sindex.mark_deleted(s_gui, ref)
        o_key = self._recon_o_key_one(page, slot)
        if o_key is not None:
            self.oindex.mark_deleted(o_key, ref)

    def purge_insert(self, ref: int, vrec_owner: TxnEntry, aborted: bool) -> int:
        with self.lock:
            val = self.versions.get(ref)
            if aborted:
                if val is vrec_owner or (isinstance(val, VersionRec) and val.ins is vrec_owner):
                    self._expunge_slot(ref)
                    return 1
                return 0
            if val is vrec_owner:
                del self.versions[ref]
                page, slot = self.page_slot(ref)
                self._clear_version(page, slot)
                return 1
            if isinstance(val, VersionRec) and val.ins is vrec_owner:
                val.ins = None
                if val.del_ is None:
                    del self.versions[ref]
                    page, slot = self.page_slot(ref)
                    self._clear_version(page, slot)
                return 1
            return 0

    def purge_insert_range(self, start_ref: int, count: int, owner: TxnEntry, aborted: bool) -> int:
        if aborted:
            n = 0
            for ref in range(start_ref, start_ref + count):
                n += self.purge_insert(ref, owner, aborted)
            return n
        # committed ranges: nearly every slot still carries the plain owner
        # entry, so split them out and clear their version bits vectorized
        with self.lock:
            refs = range(start_ref, start_ref + count)
            got = list(map(self.versions.get, refs))
            if all(v is owner for v in got):
                simple: Sequence[int] = refs
                slots = (np.arange(start_ref, start_ref + count,
                                   dtype=np.int64) & REF_SLOT_MASK)
                other: list[int] = []
            else:
                simple = [r for r, v in zip(refs, got) if v is owner]
                other = [r for r, v in zip(refs, got)
                         if v is not None and v is not owner]
                slots = np.array(simple, dtype=np.int64) & REF_SLOT_MASK
            deque(map(self.versions.pop, simple), maxlen=0)
            if len(slots):
                page = self.pages[start_ref >> REF_SLOT_BITS]
                slots = slots[(page.ctrl[slots] & CTRL_VERSION) != 0]
                page.ctrl[slots] &= ~CTRL_VERSION & 0xFF
                dec = np.bincount(slots // TUPLES_PER_ZONE)
                nz = np.flatnonzero(dec)
                page.zone_ver[nz] -= dec[nz].astype(np.uint16)
                page.version_total -= len(slots)
            n = len(simple)
            for ref in other:
                n += self.purge_insert(ref, owner, aborted)
            return n

    def purge_delete(self, ref: int, owner: TxnEntry) -> int:
        with self.lock:
            val = self.versions.get(ref)
            if isinstance(val, VersionRec) and val.del_ is owner:
                self._expunge_slot(ref)
                return 1
            return 0

    def expunge(self, ref: int) -> None:
        """Physically remove one slot (replay path, no version bookkeeping)."""
        with self.lock:
            self._expunge_slot(ref)

    # -- visibility and reconstruction -----------------------------------------

    def visible_mask(self, page: Page, snap: Snapshot) -> np.ndarray:
        n = page.count
        ctrl = page.column("ctrl")[:n]
        mask = (ctrl & CTRL_FREE) == 0
        if page.version_total:
            for slot in np.nonzero(ctrl & CTRL_VERSION)[0].tolist():
                val = self.versions.get(self.ref(page.index, slot))
                if val is not None and not visible(val, snap):
                    mask[slot] = False
        return mask

    def slot_visible(self, ref: int, snap: Snapshot) -> bool:
        page, slot = self.page_slot(ref)
        c = int(page.ctrl[slot])
        if c & CTRL_FREE:
            return False
        if c & CTRL_VERSION:
            val = self.versions.get(ref)
            if val is not None:
                return visible(val, snap)
        return True

    def _recon_s_one(self, page: Page, slot: int) -> int:
        if self.kind == KIND_META:
            return int(page.s[slot])
        if self.kind == KIND_TOPO or self.rel is RelTag.VP:
            return self.vertex_codes.gui(int(page.s[slot]))
        tag = self.rel if page.ctrl[slot] & CTRL_SCHAIN else CONTAINER_LEFT[self.rel]
        return make_sid(tag, self.pid, int(page.s[slot]))

    def _recon_o_key_one(self, page: Page, slot: int) -> int | None:
        if self.kind == KIND_TOPO:
            return self.vertex_codes.gui(int(page.o[slot]))
        flag = int(page.f[slot])
        if flag & 0x40:  # composite group: o holds a GUI
            return int(page.o[slot])
        return None

    def read_row(self, ref: int) -> tuple[int, int, int, int]:
        """Reconstruct one tuple as (s_gui, p_gui, flag, o_bits)."""
        page, slot = self.page_slot(ref)
        s = self._recon_s_one(page, slot)
        p = self.pred_codes.gui(int(page.p[slot]))
        if self.kind == KIND_TOPO:
            return s, p, F_RES_GUI, self.vertex_codes.gui(int(page.o[slot]))
        return s, p, int(page.f[slot]), int(page.o[slot])

    def recon_s(self, page: Page, idx: np.ndarray) -> np.ndarray:
        if self.kind == KIND_META:
            return page.column("s")[idx]
        s_codes = page.column("s")[idx]
        if self.kind == KIND_TOPO or self.rel is RelTag.VP:
            return self.vertex_codes.gui_array()[s_codes]
        left = CONTAINER_LEFT[self.rel]
        base_left = np.uint64(make_sid(left, self.pid, 0))
        base_chain = np.uint64(make_sid(self.rel, self.pid, 0))
        chained = (page.column("ctrl")[idx] & CTRL_SCHAIN) != 0
        out = s_codes.astype(np.uint64) + base_left
        out[chained] = s_codes[chained].astype(np.uint64) + base_chain
        return out

    def recon_p(self, page: Page, idx: np.ndarray) -> np.ndarray:
        return self.pred_codes.gui_array()[page.column("p")[idx]]

    def recon_o(self, page: Page, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == KIND_TOPO:
            bits = self.vertex_codes.gui_array()[page.column("o")[idx]]
            return np.full(len(idx), F_RES_GUI, dtype=np.uint8), bits
        return page.column("f")[idx], page.column("o")[idx]

    def recon_i(self, page: Page, idx: np.ndarray) -> np.ndarray:
        base = np.uint64(make_sid(self.rel, self.pid, 0))
        return page.column("i")[idx].astype(np.uint64) + base

    def iter_visible(self, snap: Snapshot):
        """Yield (s, p, flags, bits, sid) column arrays per page."""
        for page in self.pages:
            mask = self.visible_mask(page, snap)
            idx = np.nonzero(mask)[0]
            if len(idx) == 0:
                continue
            flags, bits = self.recon_o(page, idx)
            yield (
                self.recon_s(page, idx),
                self.recon_p(page, idx),
                flags,
                bits,
                self.recon_i(page, idx),
            )

    def read_zone(self, page_idx: int, zone: int, snap: Snapshot) -> list[int]:
        """Slots of one zone visible under snap (test and debugging surface)."""
        page = self.pages[page_idx]
        lo = zone * TUPLES_PER_ZONE
        hi = min(lo + TUPLES_PER_ZONE, page.count)
        out = []
        for slot in range(lo, hi):
            if self.slot_visible(self.ref(page_idx, slot), snap):
                out.append(slot)
        return out

    def zone_version_count(self, page_idx: int, zone: int) -> int:
        return int(self.pages[page_idx].zone_ver[zone])


class RelationStore:
    """All partitions of all storable relations."""

    def __init__(self, config: GridConfig):
        self.config = config
        self._parts: dict[tuple[RelTag, int], Partition] = {}
        self._lock = threading.Lock()

    def route(self, rel: RelTag, s_gui: int, o_gui: int | None = None) -> int:
        if rel in TOPOLOGY_RELATIONS:
            row = s_gui & (self.config.rows - 1)
            col = (o_gui if o_gui is not None else 0) & (self.config.cols - 1)
            return row * self.config.cols + col
        if rel is RelTag.VP:
            return s_gui & (self.config.parts1d - 1)
        return sid_partition(s_gui)  # conformal property relations

    def partition(self, rel: RelTag, pid: int) -> Partition:
        key = (rel, pid)
        part = self._parts.get(key)
        if part is None:
            with self._lock:
                part = self._parts.get(key)
                if part is None:
                    if pid >= self.config.npartitions(rel):
                        raise ConfigError(f"partition id {pid} out of range for {rel.name}")
                    part = Partition(rel, pid, self.config)
                    self._parts[key] = part
        return part

    def existing(self, rel: RelTag) -> list[Partition]:
        return [p for (r, _), p in sorted(self._parts.items()) if r is rel]

    def get(self, rel: RelTag, pid: int) -> Partition | None:
        return self._parts.get((rel, pid))

    def all_partitions(self) -> list[Partition]:
        return [p for _, p in sorted(self._parts.items())]

    def tuple_count(self, rel: RelTag | None = None) -> int:
        if rel is None:
            return sum(p.tuple_count for p in self._parts.values())
        return sum(p.tuple_count for (r, _), p in self._parts.items() if r is rel)
