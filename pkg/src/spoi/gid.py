"""Graph unified identifiers (GUIs) and dictionary encoding.

Every value the engine stores is a 64-bit tagged identifier. The top nibble
is the relation tag; the remaining 60 bits take one of two forms:

  dictionary form (VERT, LIT):
      [59..45] dictionary partition (15 bits)
      [44]     localFlag (lexical is graph-local, logically prefixed by the
               base IRI; only the flag is stored)
      [43..0]  id44 = collision counter (28 bits) << 16 | murmur16(lexical)

  statement form (all statement relations):
      [59..28] storage partition id (32 bits)
      [27..0]  partition-local statement number

Dictionaries are partitioned by the low bits of murmur16 and mint ids under
a per-partition lock; the collision counter counts distinct lexicals that
share a murmur16 value, capacity 2^28 per (partition, hash) bucket.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass

from .errors import CapacityError, ConfigError, CorruptionError, NotFoundError, WrongKindError
from .hashing import murmur16

MASK64 = (1 << 64) - 1

TAG_SHIFT = 60
DICT_PART_SHIFT = 45
DICT_PART_BITS = 15
LOCAL_FLAG_BIT = 44
ID44_MASK = (1 << 44) - 1
COUNTER_BITS = 28
COUNTER_MAX = (1 << COUNTER_BITS) - 1

SID_PART_SHIFT = 28
SID_PART_BITS = 32
SID_LOCAL_BITS = 28
SID_LOCAL_MASK = (1 << SID_LOCAL_BITS) - 1
SID_PART_MAX = (1 << SID_PART_BITS) - 1
SID_LOCAL_MAX = SID_LOCAL_MASK

NULL_GUI = MASK64  # tag 15 is never assigned; used as a null sentinel


class RelTag(enum.IntEnum):
    """Relation tags; the enum value is the GUI tag nibble."""

    E = 0  # edges: vertex -> vertex
    LME = 1  # left meta edges: statement -> vertex
    ME = 2  # meta edges: statement -> statement
    RME = 3  # right meta edges: vertex -> statement
    EP = 4  # edge properties
    LMEP = 5  # left meta edge properties
    MEP = 6  # meta edge properties
    RMEP = 7  # right meta edge properties
    VP = 8  # vertex properties
    MVP = 9  # vertex meta properties
    VSS = 10  # vector similarity statements (recognized, storage rejected)
    VERT = 11  # vertex dictionary entries (IRIs / blank nodes)
    LIT = 12  # literal dictionary entries


STATEMENT_TAGS = frozenset(
    {RelTag.E, RelTag.LME, RelTag.ME, RelTag.RME, RelTag.EP, RelTag.LMEP,
     RelTag.MEP, RelTag.RMEP, RelTag.VP, RelTag.MVP, RelTag.VSS}
)
DICT_TAGS = frozenset({RelTag.VERT, RelTag.LIT})

# storable statement relations (VSS is rejected at insert)
STORED_RELATIONS = (
    RelTag.E, RelTag.LME, RelTag.ME, RelTag.RME, RelTag.EP,
    RelTag.LMEP, RelTag.MEP, RelTag.RMEP, RelTag.VP, RelTag.MVP,
)

TOPOLOGY_RELATIONS = frozenset({RelTag.E, RelTag.LME, RelTag.ME, RelTag.RME})
VALUE_RELATIONS = frozenset(
    {RelTag.EP, RelTag.LMEP, RelTag.MEP, RelTag.RMEP, RelTag.VP, RelTag.MVP}
)

# property relation -> the topology/property relation it is co-located with
CONTAINER_LEFT = {
    RelTag.EP: RelTag.E,
    RelTag.LMEP: RelTag.LME,
    RelTag.MEP: RelTag.ME,
    RelTag.RMEP: RelTag.RME,
    RelTag.MVP: RelTag.VP,
}
CONTAINER_NAMES = {
    "C_E": (RelTag.E, RelTag.EP),
    "C_Lme": (RelTag.LME, RelTag.LMEP),
    "C_Me": (RelTag.ME, RelTag.MEP),
    "C_Rme": (RelTag.RME, RelTag.RMEP),
    "C_V": (RelTag.VP, RelTag.MVP),
}

# Table of S domains: which GUI tags may appear in the S position.
S_DOMAIN = {
    RelTag.E: frozenset({RelTag.VERT}),
    RelTag.LME: frozenset(STATEMENT_TAGS - {RelTag.VSS}),
    RelTag.ME: frozenset(STATEMENT_TAGS - {RelTag.VSS}),
    RelTag.RME: frozenset({RelTag.VERT}),
    RelTag.EP: frozenset({RelTag.E, RelTag.EP}),
    RelTag.LMEP: frozenset({RelTag.LME, RelTag.LMEP}),
    RelTag.MEP: frozenset({RelTag.ME, RelTag.MEP}),
    RelTag.RMEP: frozenset({RelTag.RME, RelTag.RMEP}),
    RelTag.VP: frozenset({RelTag.VERT}),
    RelTag.MVP: frozenset({RelTag.VP, RelTag.MVP}),
}

# O domains: VERT means IRI/BNode; LIT stands for any literal (dictionary or
# inline); SIDs are spelled per relation.
O_DOMAIN = {
    RelTag.E: frozenset({RelTag.VERT}),
    RelTag.LME: frozenset({RelTag.VERT}),
    RelTag.ME: frozenset(STATEMENT_TAGS - {RelTag.VSS}),
    RelTag.RME: frozenset(STATEMENT_TAGS - {RelTag.VSS}),
    RelTag.EP: frozenset({RelTag.VERT, RelTag.LIT}),
    RelTag.LMEP: frozenset({RelTag.VERT, RelTag.LIT}),
    RelTag.MEP: frozenset({RelTag.VERT, RelTag.LIT}),
    RelTag.RMEP: frozenset({RelTag.VERT, RelTag.LIT}),
    RelTag.VP: frozenset({RelTag.VERT, RelTag.LIT}),
    RelTag.MVP: frozenset({RelTag.VERT, RelTag.LIT}),
}

# Relationship-family statement tags: what an APL `s` restriction selects.
EDGE_FAMILY_TAGS = frozenset(
    {RelTag.E, RelTag.LME, RelTag.ME, RelTag.RME, RelTag.EP, RelTag.LMEP,
     RelTag.MEP, RelTag.RMEP}
)


def tag_of(gui: int) -> RelTag:
    nibble = (gui >> TAG_SHIFT) & 0xF
    try:
        return RelTag(nibble)
    except ValueError:
        raise WrongKindError(f"invalid GUI tag nibble {nibble} in 0x{gui:016x}")


def is_sid(gui: int) -> bool:
    return ((gui >> TAG_SHIFT) & 0xF) <= RelTag.VSS


def is_dict_gui(gui: int) -> bool:
    return ((gui >> TAG_SHIFT) & 0xF) in (RelTag.VERT, RelTag.LIT)


def make_sid(rel: RelTag, partition: int, local: int) -> int:
    if not 0 <= partition <= SID_PART_MAX:
        raise CapacityError(f"partition id {partition} out of range")
    if not 0 <= local <= SID_LOCAL_MAX:
        raise CapacityError(f"local statement id {local} out of range")
    return (int(rel) << TAG_SHIFT) | (partition << SID_PART_SHIFT) | local


def sid_partition(sid: int) -> int:
    return (sid >> SID_PART_SHIFT) & SID_PART_MAX


def sid_local(sid: int) -> int:
    return sid & SID_LOCAL_MASK


def make_dict_gui(tag: RelTag, partition: int, is_local: bool, counter: int, m16: int) -> int:
    gui = (int(tag) << TAG_SHIFT) | (partition << DICT_PART_SHIFT) | (counter << 16) | m16
    if is_local:
        gui |= 1 << LOCAL_FLAG_BIT
    return gui


def dict_partition(gui: int) -> int:
    return (gui >> DICT_PART_SHIFT) & ((1 << DICT_PART_BITS) - 1)


def dict_local_flag(gui: int) -> bool:
    return bool(gui & (1 << LOCAL_FLAG_BIT))


def dict_murmur16(gui: int) -> int:
    return gui & 0xFFFF


def dict_counter(gui: int) -> int:
    return (gui >> 16) & COUNTER_MAX


@dataclass(frozen=True)
class GuiInfo:
    """Decoded structural view of a GUI, for diagnostics and tests."""

    tag: RelTag
    partition: int
    local: int | None = None  # statement form
    is_local: bool | None = None  # dictionary form
    counter: int | None = None
    murmur16: int | None = None


def classify(gui: int) -> GuiInfo:
    tag = tag_of(gui)
    if tag in DICT_TAGS:
        return GuiInfo(
            tag=tag,
            partition=dict_partition(gui),
            is_local=dict_local_flag(gui),
            counter=dict_counter(gui),
            murmur16=dict_murmur16(gui),
        )
    return GuiInfo(tag=tag, partition=sid_partition(gui), local=sid_local(gui))


@dataclass(frozen=True)
class DictEntry:
    gui: int
    lexical: str
    is_local: bool = False
    datatype_hint: str | None = None


class _DictPart:
    __slots__ = ("lock", "by_key", "by_gui", "buckets")

    def __init__(self) -> None:
        self.lock = threading.Lock()
        self.by_key: dict[tuple[bool, str], int] = {}
        self.by_gui: dict[int, DictEntry] = {}
        self.buckets: dict[int, int] = {}


class Dictionary:
    """Partitioned lexical dictionary for one GUI tag (VERT or LIT).

    Minting is reserve-then-publish under the partition lock, so concurrent
    encodes of the same lexical converge on one GUI. Entries are never
    removed; transaction aborts do not un-mint.
    """

    def __init__(self, tag: RelTag, nparts: int = 1, base_iri: str = ""):
        if tag not in DICT_TAGS:
            raise ConfigError(f"{tag.name} is not a dictionary tag")
        if nparts < 1 or nparts & (nparts - 1):
            raise ConfigError("dictionary partition count must be a power of two")
        if nparts > (1 << DICT_PART_BITS):
            raise CapacityError(f"dictionary partition count {nparts} exceeds 2^{DICT_PART_BITS}")
        self.tag = tag
        self.nparts = nparts
        self.part_mask = nparts - 1
        self.base_iri = base_iri
        self._parts = [_DictPart() for _ in range(nparts)]

    def encode(self, lexical: str, is_local: bool = False, datatype_hint: str | None = None) -> int:
        """Return the GUI for a lexical, minting it on first sight."""
        m16 = murmur16(lexical.encode("utf-8"))
        part = self._parts[m16 & self.part_mask]
        key = (is_local, lexical)
        gui = part.by_key.get(key)
        if gui is not None:
            return gui
        with part.lock:
            gui = part.by_key.get(key)
            if gui is not None:
                return gui
            counter = part.buckets.get(m16, 0)
            if counter > COUNTER_MAX:
                raise CapacityError("collision counter exhausted for murmur16 bucket")
            gui = make_dict_gui(self.tag, m16 & self.part_mask, is_local, counter, m16)
            entry = DictEntry(gui=gui, lexical=lexical, is_local=is_local, datatype_hint=datatype_hint)
            part.buckets[m16] = counter + 1
            part.by_gui[gui] = entry
            part.by_key[key] = gui
        return gui

    def lookup(self, lexical: str, is_local: bool = False) -> int | None:
        """Return the GUI for a lexical if already minted, else None."""
        m16 = murmur16(lexical.encode("utf-8"))
        return self._parts[m16 & self.part_mask].by_key.get((is_local, lexical))

    def decode(self, gui: int) -> DictEntry:
        if tag_of(gui) is not self.tag:
            raise WrongKindError(f"GUI 0x{gui:016x} is not a {self.tag.name} entry")
        part = self._parts[dict_murmur16(gui) & self.part_mask]
        entry = part.by_gui.get(gui)
        if entry is None:
            raise NotFoundError(f"unknown {self.tag.name} GUI 0x{gui:016x}")
        return entry

    def effective_lexical(self, entry: DictEntry) -> str:
        """Lexical with the base-IRI prefix applied for graph-local entries."""
        if entry.is_local:
            return f"{self.base_iri}/{entry.lexical}"
        return entry.lexical

    def install(self, lexical: str, is_local: bool, gui: int, datatype_hint: str | None = None) -> None:
        """Install a known (lexical, GUI) binding during replay.

        Order independent: the bucket counter is bumped past the installed
        counter so later mints never collide with replayed ids.
        """
        m16 = murmur16(lexical.encode("utf-8"))
        if dict_murmur16(gui) != m16 or tag_of(gui) is not self.tag or dict_local_flag(gui) != is_local:
            raise CorruptionError(f"binding {lexical!r} does not match GUI 0x{gui:016x}")
        part = self._parts[m16 & self.part_mask]
        with part.lock:
            existing = part.by_key.get((is_local, lexical))
            if existing is not None:
                if existing != gui:
                    raise CorruptionError(f"conflicting replayed binding for {lexical!r}")
                return
            part.by_key[(is_local, lexical)] = gui
            part.by_gui[gui] = DictEntry(gui=gui, lexical=lexical, is_local=is_local, datatype_hint=datatype_hint)
            part.buckets[m16] = max(part.buckets.get(m16, 0), dict_counter(gui) + 1)

    def __len__(self) -> int:
        return sum(len(p.by_gui) for p in self._parts)

    def entries(self):
        for part in self._parts:
            yield from part.by_gui.values()
