"""Multi-version concurrency control.

Design summary:

- A fixed-size transaction table hands out handles (table index + epoch).
- One atomic counter provides both timestamp kinds: begin reads the counter
  for readTs, commit increments it for commitTs.
- Writers record undo in 4 KiB blocks owned exclusively by their
  transaction; a tuple's version chain holds at most an insert and a delete
  (depth two).
- The oldest-active-transaction boundary (OAT) is the minimum readTs over
  active transactions, tracked by refcount. When a refcount hits zero the
  manager purges committed transactions whose commitTs lies below OAT
  (aborted transactions purge unconditionally), returning slots to free
  lists and clearing version bits.
- Write-write conflicts are first-committer-wins, detected at write time:
  deleting a tuple with a pending or invisible committed delete aborts the
  second writer.
- Read-only transactions are never logged and release their table slot at
  commit.
- Commit visibility flips in commitTs order, and only after the logical log
  reports the records durable.
"""

from __future__ import annotations

import enum
import heapq
import threading

from .errors import ConflictError, StateError, ThrottleError

UNDO_BLOCK_BYTES = 4096
_UNDO_RECORD_BYTES = 16
UNDO_BLOCK_CAPACITY = UNDO_BLOCK_BYTES // _UNDO_RECORD_BYTES

OP_INSERT = 1
OP_DELETE = 2
OP_INSERT_RANGE = 3


class TxnState(enum.IntEnum):
    FREE = 0
    IN_PROGRESS = 1
    COMMITTED = 2
    ABORTING = 3  # undo applied, awaiting purge
    TERMINATING = 4  # committed, purge in progress


class UndoBlock:
    """Fixed-capacity undo record block, exclusively owned by one txn."""

    __slots__ = ("records", "prev")

    def __init__(self, prev: "UndoBlock | None" = None):
        self.records: list[tuple] = []
        self.prev = prev


class VersionRec:
    """Per-tuple version info: creating and deleting transaction entries.

    Chain depth is structurally at most two (insert + delete). A bare
    TxnEntry stored in a partition's version map is shorthand for an
    insert-only VersionRec; deletes upgrade it.
    """

    __slots__ = ("ins", "del_")

    def __init__(self, ins: "TxnEntry | None" = None, del_: "TxnEntry | None" = None):
        self.ins = ins
        self.del_ = del_

    def depth(self) -> int:
        return (self.ins is not None) + (self.del_ is not None)


class TxnEntry:
    __slots__ = (
        "index", "epoch", "state", "read_ts", "commit_ts", "read_only",
        "undo_head", "undo_count", "wal_futures", "wal_records", "pending_mints",
        "lock",
    )

    def __init__(self, index: int, epoch: int):
        self.index = index
        self.epoch = epoch
        self.state = TxnState.FREE
        self.read_ts = 0
        self.commit_ts = 0
        self.read_only = False
        self.undo_head: UndoBlock | None = None
        self.undo_count = 0
        self.wal_futures: list = []
        self.wal_records = 0
        self.pending_mints: set[int] = set()
        # serializes undo/log bookkeeping when bulk apply fans out per partition
        self.lock = threading.Lock()

    def record_undo(self, rec: tuple) -> None:
        with self.lock:
            head = self.undo_head
            if head is None or len(head.records) >= UNDO_BLOCK_CAPACITY:
                head = UndoBlock(prev=head)
                self.undo_head = head
            head.records.append(rec)
            self.undo_count += 1

    def undo_records(self):
        block = self.undo_head
        while block is not None:
            yield from reversed(block.records)
            block = block.prev

    def undo_chain_len(self) -> int:
        n = 0
        block = self.undo_head
        while block is not None:
            n += 1
            block = block.prev
        return n


class TxnHandle:
    __slots__ = ("index", "epoch")

    def __init__(self, index: int, epoch: int):
        self.index = index
        self.epoch = epoch

    def __repr__(self) -> str:
        return f"TxnHandle({self.index}, {self.epoch})"


class Snapshot:
    __slots__ = ("read_ts", "entry")

    def __init__(self, read_ts: int, entry: TxnEntry | None = None):
        self.read_ts = read_ts
        self.entry = entry


def _ins_visible(ins: TxnEntry | None, snap: Snapshot) -> bool:
    if ins is None:
        return True
    if ins is snap.entry:
        return True
    if ins.state in (TxnState.COMMITTED, TxnState.TERMINATING):
        return ins.commit_ts <= snap.read_ts
    return False


def visible(vrec, snap: Snapshot) -> bool:
    """Snapshot visibility for a version map value (VersionRec or TxnEntry)."""
    if isinstance(vrec, TxnEntry):
        return _ins_visible(vrec, snap)
    if not _ins_visible(vrec.ins, snap):
        return False
    d = vrec.del_
    if d is None:
        return True
    if d is snap.entry:
        return False
    if d.state in (TxnState.COMMITTED, TxnState.TERMINATING):
        return d.commit_ts > snap.read_ts
    return True


class _OatTracker:
    """Refcounted minimum over active read timestamps."""

    def __init__(self) -> None:
        self._counts: dict[int, int] = {}
        self._heap: list[int] = []

    def acquire(self, ts: int) -> None:
        n = self._counts.get(ts, 0)
        self._counts[ts] = n + 1
        if n == 0:
            heapq.heappush(self._heap, ts)

    def release(self, ts: int) -> bool:
        """Returns True when the refcount for ts dropped to zero."""
        n = self._counts[ts] - 1
        if n:
            self._counts[ts] = n
            return False
        del self._counts[ts]
        return True

    def oat(self) -> int | None:
        heap = self._heap
        while heap and heap[0] not in self._counts:
            heapq.heappop(heap)
        return heap[0] if heap else None


class TxnManager:
    def __init__(self, table_size: int = 256, wal=None):
        self.table_size = table_size
        self.wal = wal
        self._table = [TxnEntry(i, 0) for i in range(table_size)]
        self._free = list(range(table_size - 1, -1, -1))
        self._lock = threading.Lock()
        self._ts = 0  # single counter: readTs = value, commitTs = increment
        self._flip_cond = threading.Condition()
        self._next_flip = 1
        self._oat = _OatTracker()
        self._pending_commit: list[tuple[int, TxnEntry]] = []  # heap by commitTs
        self._pending_abort: list[TxnEntry] = []
        self.purged_versions = 0

    # -- lifecycle ---------------------------------------------------------

    def begin(self, read_only: bool = False) -> TxnHandle:
        with self._lock:
            if not self._free:
                raise ThrottleError("transaction table full")
            idx = self._free.pop()
            entry = self._table[idx]
            entry.state = TxnState.IN_PROGRESS
            entry.read_ts = self._ts
            entry.commit_ts = 0
            entry.read_only = read_only
            entry.undo_head = None
            entry.undo_count = 0
            entry.wal_futures = []
            entry.wal_records = 0
            entry.pending_mints = set()
            self._oat.acquire(entry.read_ts)
            return TxnHandle(idx, entry.epoch)

    def entry(self, handle: TxnHandle) -> TxnEntry:
        e = self._table[handle.index]
        if e.epoch != handle.epoch or e.state is not TxnState.IN_PROGRESS:
            raise StateError(f"{handle!r} does not name an in-progress transaction")
        return e

    def snapshot(self, handle: TxnHandle) -> Snapshot:
        e = self.entry(handle)
        return Snapshot(e.read_ts, e)

    def read_snapshot(self) -> Snapshot:
        """Unregistered snapshot of the latest committed state (no OAT pin)."""
        return Snapshot(self._ts, None)

    def oat(self) -> int | None:
        with self._lock:
            return self._oat.oat()

    # -- commit / abort ----------------------------------------------------

    def commit(self, handle: TxnHandle) -> int:
        entry = self.entry(handle)
        if entry.read_only or entry.undo_count == 0:
            # nothing written: never logged, slot recycles immediately
            read_ts = entry.read_ts
            with self._lock:
                entry.state = TxnState.FREE
                entry.epoch += 1
                self._free.append(entry.index)
                zero = self._oat.release(read_ts)
            if zero:
                self.purge()
            return read_ts

        with self._lock:
            self._ts += 1
            commit_ts = self._ts
            future = self.wal.append_commit(entry, commit_ts) if self.wal else None
        try:
            if self.wal is not None:
                for f in entry.wal_futures:
                    f.wait_durable()
                future.wait_durable()
        except Exception:
            self._advance_flip(commit_ts)
            raise
        # flip to Committed in commitTs order so snapshots always see a
        # contiguous committed prefix
        with self._flip_cond:
            while self._next_flip != commit_ts:
                self._flip_cond.wait()
            entry.commit_ts = commit_ts
            entry.state = TxnState.COMMITTED
            self._next_flip = commit_ts + 1
            self._flip_cond.notify_all()
        with self._lock:
            zero = self._oat.release(entry.read_ts)
            heapq.heappush(self._pending_commit, (commit_ts, entry))
        if zero:
            self.purge()
        return commit_ts

    def _advance_flip(self, commit_ts: int) -> None:
        with self._flip_cond:
            while self._next_flip != commit_ts:
                self._flip_cond.wait()
            self._next_flip = commit_ts + 1
            self._flip_cond.notify_all()

    def abort(self, handle: TxnHandle) -> None:
        entry = self.entry(handle)
        self._abort_entry(entry)

    def _abort_entry(self, entry: TxnEntry) -> None:
        entry.state = TxnState.ABORTING
        if self.wal is not None and not entry.read_only and entry.undo_count:
            self.wal.append_abort(entry)
        for rec in entry.undo_records():
            op, partition = rec[0], rec[1]
            if op == OP_DELETE:
                partition.unmark_delete(rec[2], rec[3])
        with self._lock:
            zero = self._oat.release(entry.read_ts)
            if entry.undo_count:
                self._pending_abort.append(entry)
            else:
                entry.state = TxnState.FREE
                entry.epoch += 1
                self._free.append(entry.index)
        if zero:
            self.purge()

    # -- purge -------------------------------------------------------------

    def purge(self) -> int:
        """Expunge version info no active snapshot can need.

        Committed transactions purge once commitTs < OAT (all of them when
        no transaction is active); aborted ones purge unconditionally, which
        is safe because their writes are invisible to every snapshot.
        Returns the number of expunged version references.
        """
        expunged = 0
        while True:
            with self._lock:
                oat = self._oat.oat()
                entry = None
                if self._pending_abort:
                    entry = self._pending_abort.pop()
                elif self._pending_commit and (
                    oat is None or self._pending_commit[0][0] < oat
                ):
                    entry = heapq.heappop(self._pending_commit)[1]
                if entry is None:
                    break
                if entry.state is TxnState.COMMITTED:
                    entry.state = TxnState.TERMINATING
            expunged += self._purge_entry(entry)
            with self._lock:
                entry.state = TxnState.FREE
                entry.epoch += 1
                entry.undo_head = None
                self._free.append(entry.index)
        self.purged_versions += expunged
        return expunged

    def _purge_entry(self, entry: TxnEntry) -> int:
        aborted = entry.state is TxnState.ABORTING
        n = 0
        for rec in entry.undo_records():
            op, partition = rec[0], rec[1]
            if op == OP_INSERT:
                n += partition.purge_insert(rec[2], rec[3], aborted)
            elif op == OP_INSERT_RANGE:
                n += partition.purge_insert_range(rec[2], rec[3], rec[4], aborted)
            elif op == OP_DELETE:
                if not aborted:
                    n += partition.purge_delete(rec[2], rec[3])
        return n

    # -- stats -------------------------------------------------------------

    def active_count(self) -> int:
        with self._lock:
            return sum(1 for e in self._table if e.state is TxnState.IN_PROGRESS)

    def set_counter(self, value: int) -> None:
        """Recovery support: restart the timestamp counter past replayed commits."""
        with self._lock:
            self._ts = max(self._ts, value)
            with self._flip_cond:
                self._next_flip = self._ts + 1

    def bump_epochs(self, min_epoch: int) -> None:
        """Recovery support: handle keys (index, epoch) appear in the log, so
        a restarted table must not reissue keys the log tail already uses."""
        with self._lock:
            for e in self._table:
                if e.epoch < min_epoch:
                    e.epoch = min_epoch
