"""Secondary access paths per partition: S-, O- and I-indexes.

S- and O-indexes map a GUI to an adjacency list of tuple slot references.
Lists grow by factor two from capacity four and are published by whole-array
replacement, so readers that captured an older array keep a consistent
(possibly stale) superset that MVCC visibility re-filters. Deletes set a
marker bit in place; compaction drops markers, sorts the survivors and
records the sorted prefix length.

The I-index is a dense per-partition array from local statement number to
slot reference with -1 tombstones; local numbers are minted monotonically
and never reused.
"""

from __future__ import annotations

import numpy as np

INITIAL_CAPACITY = 4
GROWTH_FACTOR = 2
MARK = 1 << 62  # delete marker bit on stored refs


class AdjacencyList:
    """Append-mostly list of slot refs with tombstone markers.

    The backing array keeps its logical length in element 0 so a reader
    obtains (entries, length) from a single object reference; appends write
    the entry before publishing the new length.
    """

    __slots__ = ("_arr", "marker_count", "sorted_prefix_len")

    def __init__(self) -> None:
        self._arr = np.zeros(1 + INITIAL_CAPACITY, dtype=np.int64)
        self.marker_count = 0
        self.sorted_prefix_len = 0

    def __len__(self) -> int:
        return int(self._arr[0])

    @property
    def capacity(self) -> int:
        return len(self._arr) - 1

    def live_count(self) -> int:
        return len(self) - self.marker_count

    def append(self, ref: int) -> None:
        arr = self._arr
        n = int(arr[0])
        if n >= len(arr) - 1 or self.marker_count * 2 > n:
            arr = self._compact_grow(extra=1)
            n = int(arr[0])
        arr[1 + n] = ref
        arr[0] = n + 1

    def extend(self, refs: np.ndarray) -> None:
        arr = self._arr
        n = int(arr[0])
        k = len(refs)
        if n + k > len(arr) - 1 or self.marker_count * 2 > n:
            arr = self._compact_grow(extra=k)
            n = int(arr[0])
        arr[1 + n : 1 + n + k] = refs
        arr[0] = n + k

    def _compact_grow(self, extra: int) -> np.ndarray:
        old = self._arr
        n = int(old[0])
        live = old[1 : 1 + n]
        if self.marker_count:
            live = live[(live & MARK) == 0]
        live = np.sort(live)
        need = len(live) + extra
        cap = max(INITIAL_CAPACITY, self.capacity)
        while cap < need:
            cap *= GROWTH_FACTOR
        fresh = np.zeros(1 + cap, dtype=np.int64)
        fresh[1 : 1 + len(live)] = live
        fresh[0] = len(live)
        self.sorted_prefix_len = len(live)
        self.marker_count = 0
        self._arr = fresh  # publish by replacement
        return fresh

    def mark(self, ref: int) -> bool:
        """Set the delete marker on one occurrence of ref; True if found."""
        arr = self._arr
        n = int(arr[0])
        view = arr[1 : 1 + n]
        hits = np.nonzero(view == ref)[0]
        if len(hits) == 0:
            return False
        view[hits[0]] |= MARK
        self.marker_count += 1
        return True

    def snapshot(self) -> np.ndarray:
        """Live refs (markers dropped); safe to read concurrently."""
        arr = self._arr
        n = int(arr[0])
        view = arr[1 : 1 + n]
        if self.marker_count:
            return view[(view & MARK) == 0]
        return view.copy()

    def compact(self) -> None:
        self._compact_grow(extra=0)


class _SingletonCount:
    """live_count view shared by every one-entry key."""

    __slots__ = ()

    @staticmethod
    def live_count() -> int:
        return 1


_SINGLETON = _SingletonCount()


class VertexIndex:
    """GUI -> adjacency map for one side (S or O) of a partition.

    Keys with exactly one posting store the bare ref; a second posting
    promotes the entry to an AdjacencyList. Bulk loads of unique keys
    (notably SID-keyed property indexes) stay one dict store per key.
    """

    __slots__ = ("_map",)

    def __init__(self) -> None:
        self._map: dict[int, int | AdjacencyList] = {}

    def post(self, gui: int, ref: int) -> None:
        cur = self._map.get(gui)
        if cur is None:
            self._map[gui] = ref
        elif type(cur) is int:
            lst = AdjacencyList()
            lst.append(cur)
            lst.append(ref)
            self._map[gui] = lst
        else:
            cur.append(ref)

    def post_singletons(self, guis: np.ndarray, refs: np.ndarray) -> None:
        """Post one ref per key; keys may repeat across calls, not within."""
        m = self._map
        gl = guis.tolist()
        rl = refs.tolist()
        # blind update would clobber keys seen in earlier batches
        hit = m.keys() & set(gl) if m else ()
        if hit:
            for g, r in zip(gl, rl):
                if g in hit:
                    self.post(g, r)
                else:
                    m[g] = r
        else:
            m.update(zip(gl, rl))

    def post_many(self, gui: int, refs: np.ndarray) -> None:
        cur = self._map.get(gui)
        if cur is None:
            if len(refs) == 1:
                self._map[gui] = int(refs[0])
                return
            lst = self._map[gui] = AdjacencyList()
        elif type(cur) is int:
            lst = AdjacencyList()
            lst.append(cur)
            self._map[gui] = lst
        else:
            lst = cur
        lst.extend(refs)

    def mark_deleted(self, gui: int, ref: int) -> None:
        cur = self._map.get(gui)
        if cur is None:
            return
        if type(cur) is int:
            if cur == ref:
                del self._map[gui]
            return
        cur.mark(ref)

    def probe(self, gui: int) -> np.ndarray | None:
        cur = self._map.get(gui)
        if cur is None:
            return None
        if type(cur) is int:
            return np.array([cur], dtype=np.int64)
        return cur.snapshot()

    def list_for(self, gui: int):
        """Count view for a key: anything with live_count(), or None."""
        cur = self._map.get(gui)
        if type(cur) is int:
            return _SINGLETON
        return cur

    def __len__(self) -> int:
        return len(self._map)

    def keys(self):
        return self._map.keys()


class IIndex:
    """Dense local-statement-number -> slot ref array with tombstones."""

    __slots__ = ("_slots",)

    def __init__(self) -> None:
        self._slots: list[int] = []

    @property
    def next_local(self) -> int:
        return len(self._slots)

    def mint(self, ref: int) -> int:
        self._slots.append(ref)
        return len(self._slots) - 1

    def mint_range(self, refs) -> int:
        """Append refs (a list of ints) in order; returns the first minted
        local number."""
        first = len(self._slots)
        self._slots.extend(refs)
        return first

    def lookup(self, local: int) -> int:
        if 0 <= local < len(self._slots):
            return self._slots[local]
        return -1

    def clear(self, local: int) -> None:
        self._slots[local] = -1

    def install(self, local: int, ref: int) -> None:
        """Replay support: set a specific local number, padding gaps."""
        if local >= len(self._slots):
            self._slots.extend([-1] * (local + 1 - len(self._slots)))
        self._slots[local] = ref

    def pad_to(self, watermark: int) -> None:
        """Advance next_local past numbers consumed by now-deleted tuples."""
        if watermark > len(self._slots):
            self._slots.extend([-1] * (watermark - len(self._slots)))

    def live_locals(self):
        for local, ref in enumerate(self._slots):
            if ref >= 0:
                yield local, ref
