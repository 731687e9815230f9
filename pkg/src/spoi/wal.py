"""Durable logical log, box-car group commit, checkpoints and recovery.

The log is logical: insert records carry lexical forms for dictionary
entries minted by that insert (paired with the minted GUI so replay
installs bindings by value, independent of stream interleaving) and raw
GUIs thereafter. Records are length-prefixed with a crc32 (IEEE) over the
payload; a mismatch or short tail truncates that stream at the last valid
record. Each record carries a global sequence number so streams can be
merge-ordered when recovering into a different partitioning configuration.

Records route to one of N streams by storage partition id, except Commit,
Abort and CheckpointMark records which go to stream 0. Appends buffer into
box cars; a flusher thread writes sealed cars and resolves their durability
futures, so one sync acknowledges every commit sharing the car.

Checkpoints are directories: manifest.json (commitTs, grid, stream offsets,
next-local watermarks), a dictionary file, and one binary file per
partition holding the live rows in the page codec plus the partition's
code tables. Recovery loads the newest valid checkpoint and replays the
stream tails: one pass collects transaction fates and installs dictionary
bindings (aborts do not un-mint), a second applies the statements of
committed transactions, stream-parallel when the configuration matches the
checkpoint and merge-ordered with SID remapping when it does not.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec
from .errors import CorruptionError
from .gid import CONTAINER_LEFT, RelTag, make_sid
from .relstore import CTRL_SCHAIN, KIND_META, KIND_PROP, KIND_TOPO, REL_KIND
from .values import F_RES_GUI

REC_INSERT = 1
REC_DELETE = 2
REC_COMMIT = 3
REC_ABORT = 4
REC_CHECKPOINT = 5

COMP_GUI = 0
COMP_MINT_VERT = 1
COMP_MINT_LIT = 2
COMP_INLINE = 3

_HEADER = struct.Struct("<II")  # payload length, crc32
_PREFIX = struct.Struct("<BQHI")  # kind, seq, handle index, handle epoch

DEFAULT_STREAMS = 4
CAR_BYTES = 256 * 1024
FLUSH_INTERVAL = 0.002


class _SetFuture:
    def wait_durable(self) -> None:
        return None


_DONE = _SetFuture()


class CarFuture:
    __slots__ = ("_event", "error")

    def __init__(self) -> None:
        self._event = threading.Event()
        self.error: BaseException | None = None

    def set(self, error: BaseException | None = None) -> None:
        self.error = error
        self._event.set()

    def wait_durable(self) -> None:
        self._event.wait()
        if self.error is not None:
            raise self.error


class _BoxCar:
    __slots__ = ("buf", "future")

    def __init__(self) -> None:
        self.buf = bytearray()
        self.future = CarFuture()


class LogStream:
    """One append-only log file with box-car group flushing."""

    def __init__(
        self,
        path: Path,
        sync: str = "flush",
        car_bytes: int = CAR_BYTES,
        flush_interval: float = FLUSH_INTERVAL,
        rate_limit: int | None = None,
    ):
        if sync not in ("none", "flush", "fsync"):
            raise ValueError(f"unknown sync mode {sync!r}")
        self.path = path
        self.sync = sync
        self.car_bytes = car_bytes
        self.flush_interval = flush_interval
        self.rate_limit = rate_limit
        self._fh = open(path, "ab")
        self.durable_len = self._fh.tell()
        self._cond = threading.Condition()
        self._car = _BoxCar()
        self._sealed: list[_BoxCar] = []
        self._closed = False
        self._tokens = float(rate_limit or 0)
        self._token_time = time.monotonic()
        self._flusher = threading.Thread(target=self._run, daemon=True)
        self._flusher.start()

    def append(self, record: bytes) -> CarFuture | _SetFuture:
        with self._cond:
            if self._closed:
                raise CorruptionError(f"stream {self.path.name} is closed")
            car = self._car
            car.buf += record
            future = car.future
            if len(car.buf) >= self.car_bytes:
                self._sealed.append(car)
                self._car = _BoxCar()
                self._cond.notify_all()
            elif self.sync != "none":
                # someone may wait on this car: wake the flusher now; records
                # appended while it writes still share the next car
                self._cond.notify_all()
        return _DONE if self.sync == "none" else future

    def _take_cars(self) -> list[_BoxCar]:
        cars = self._sealed
        self._sealed = []
        if self._car.buf:
            cars.append(self._car)
            self._car = _BoxCar()
        return cars

    def _throttle(self, nbytes: int) -> None:
        if not self.rate_limit:
            return
        while True:
            now = time.monotonic()
            self._tokens = min(
                float(self.rate_limit),
                self._tokens + (now - self._token_time) * self.rate_limit,
            )
            self._token_time = now
            if self._tokens >= nbytes:
                self._tokens -= nbytes
                return
            time.sleep((nbytes - self._tokens) / self.rate_limit)

    def _write_cars(self, cars: list[_BoxCar]) -> None:
        for car in cars:
            err: BaseException | None = None
            try:
                self._throttle(len(car.buf))
                self._fh.write(car.buf)
                self._fh.flush()
                if self.sync == "fsync":
                    os.fsync(self._fh.fileno())
                self.durable_len += len(car.buf)
            except BaseException as exc:  # pragma: no cover - disk errors
                err = exc
            car.future.set(err)

    def _run(self) -> None:
        while True:
            with self._cond:
                if self._closed and not self._sealed and not self._car.buf:
                    return
                if not self._sealed and not (self._car.buf and self.sync != "none"):
                    self._cond.wait(self.flush_interval)
                cars = self._take_cars()
            if cars:
                self._write_cars(cars)

    def flush_now(self) -> None:
        with self._cond:
            cars = self._take_cars()
        if cars:
            self._write_cars(cars)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        self._flusher.join()
        self.flush_now()
        self._fh.close()


# -- payload builders ---------------------------------------------------------


def comp_gui(gui: int) -> bytes:
    return struct.pack("<BQ", COMP_GUI, gui)


def comp_mint_vert(gui: int, lexical: str, is_local: bool) -> bytes:
    raw = lexical.encode("utf-8")
    return struct.pack("<BBQI", COMP_MINT_VERT, int(is_local), gui, len(raw)) + raw


def comp_mint_lit(gui: int, lexical: str, hint: str | None) -> bytes:
    raw = lexical.encode("utf-8")
    head = struct.pack("<BBQI", COMP_MINT_LIT, int(hint is not None), gui, len(raw)) + raw
    if hint is not None:
        hraw = hint.encode("utf-8")
        head += struct.pack("<I", len(hraw)) + hraw
    return head


def comp_inline(flag: int, bits: int) -> bytes:
    return struct.pack("<BBQ", COMP_INLINE, flag, bits)


def _parse_comp(view: memoryview, pos: int):
    ckind = view[pos]
    pos += 1
    if ckind == COMP_GUI:
        (gui,) = struct.unpack_from("<Q", view, pos)
        return ("gui", gui), pos + 8
    if ckind == COMP_MINT_VERT:
        is_local, gui, ln = struct.unpack_from("<BQI", view, pos)
        pos += 13
        lex = bytes(view[pos : pos + ln]).decode("utf-8")
        return ("vert", gui, lex, bool(is_local)), pos + ln
    if ckind == COMP_MINT_LIT:
        has_hint, gui, ln = struct.unpack_from("<BQI", view, pos)
        pos += 13
        lex = bytes(view[pos : pos + ln]).decode("utf-8")
        pos += ln
        hint = None
        if has_hint:
            (hlen,) = struct.unpack_from("<I", view, pos)
            pos += 4
            hint = bytes(view[pos : pos + hlen]).decode("utf-8")
            pos += hlen
        return ("lit", gui, lex, hint), pos
    if ckind == COMP_INLINE:
        flag, bits = struct.unpack_from("<BQ", view, pos)
        return ("inline", flag, bits), pos + 9
    raise CorruptionError(f"unknown component kind {ckind}")


@dataclass
class LogRecord:
    kind: int
    seq: int
    handle: tuple[int, int]
    rel: RelTag | None = None
    sid: int = 0
    s_comp: tuple = ()
    p_comp: tuple = ()
    o_comp: tuple = ()
    commit_ts: int = 0
    expected: int = 0  # Commit: number of statement records the txn logged


def parse_stream(data: bytes) -> tuple[list[LogRecord], int]:
    """Parse records until the first invalid one; returns (records, valid_len)."""
    records: list[LogRecord] = []
    view = memoryview(data)
    pos = 0
    n = len(data)
    while pos + _HEADER.size <= n:
        length, crc = _HEADER.unpack_from(view, pos)
        start = pos + _HEADER.size
        end = start + length
        if end > n:
            break
        payload = view[start:end]
        if zlib.crc32(payload) != crc:
            break
        records.append(_parse_payload(payload))
        pos = end
    return records, pos


def _parse_payload(payload: memoryview) -> LogRecord:
    kind, seq, hidx, hepoch = _PREFIX.unpack_from(payload, 0)
    pos = _PREFIX.size
    rec = LogRecord(kind=kind, seq=seq, handle=(hidx, hepoch))
    if kind == REC_INSERT:
        rec.rel = RelTag(payload[pos])
        pos += 1
        rec.s_comp, pos = _parse_comp(payload, pos)
        rec.p_comp, pos = _parse_comp(payload, pos)
        rec.o_comp, pos = _parse_comp(payload, pos)
        (rec.sid,) = struct.unpack_from("<Q", payload, pos)
    elif kind == REC_DELETE:
        rec.rel = RelTag(payload[pos])
        pos += 1
        (rec.sid,) = struct.unpack_from("<Q", payload, pos)
    elif kind == REC_COMMIT:
        rec.commit_ts, rec.expected = struct.unpack_from("<QI", payload, pos)
    elif kind == REC_CHECKPOINT:
        (rec.commit_ts,) = struct.unpack_from("<Q", payload, pos)
    elif kind == REC_ABORT:
        pass
    else:
        raise CorruptionError(f"unknown record kind {kind}")
    return rec


class WalWriter:
    """Multi-stream logical log writer."""

    def __init__(
        self,
        directory: str | Path,
        nstreams: int = DEFAULT_STREAMS,
        sync: str = "flush",
        car_bytes: int = CAR_BYTES,
        flush_interval: float = FLUSH_INTERVAL,
        rate_limit: int | None = None,
        start_seq: int = 0,
    ):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.nstreams = nstreams
        self.streams = [
            LogStream(
                self.dir / f"wal-{i}.log",
                sync=sync,
                car_bytes=car_bytes,
                flush_interval=flush_interval,
                rate_limit=rate_limit,
            )
            for i in range(nstreams)
        ]
        self._seq = start_seq
        self._seq_lock = threading.Lock()

    def _next_seq(self) -> int:
        with self._seq_lock:
            self._seq += 1
            return self._seq

    def route(self, rel: RelTag, pid: int) -> int:
        return (int(rel) << 32 | pid) % self.nstreams

    def _frame(self, payload: bytes) -> bytes:
        return _HEADER.pack(len(payload), zlib.crc32(payload)) + payload

    def _append(self, stream_idx: int, kind: int, entry, body: bytes):
        payload = _PREFIX.pack(kind, self._next_seq(), entry.index if entry else 0,
                               entry.epoch if entry else 0) + body
        return self.streams[stream_idx].append(self._frame(payload))

    def append_insert(self, entry, rel: RelTag, pid: int, s_comp: bytes,
                      p_comp: bytes, o_comp: bytes, sid: int):
        body = bytes([int(rel)]) + s_comp + p_comp + o_comp + struct.pack("<Q", sid)
        fut = self._append(self.route(rel, pid), REC_INSERT, entry, body)
        with entry.lock:
            entry.wal_futures.append(fut)
            entry.wal_records += 1
        return fut

    def append_insert_batch(self, entry, rel: RelTag, pid: int, recs: list):
        """Append many inserts for one partition as a single box-car write.

        recs holds (s_comp, p_comp, o_comp, sid) tuples; every record still
        gets its own sequence number and frame.
        """
        with self._seq_lock:
            base = self._seq
            self._seq += len(recs)
        buf = bytearray()
        for k, (s_comp, p_comp, o_comp, sid) in enumerate(recs):
            body = bytes([int(rel)]) + s_comp + p_comp + o_comp + struct.pack("<Q", sid)
            payload = _PREFIX.pack(REC_INSERT, base + k + 1, entry.index, entry.epoch) + body
            buf += self._frame(payload)
        fut = self.streams[self.route(rel, pid)].append(bytes(buf))
        with entry.lock:
            entry.wal_futures.append(fut)
            entry.wal_records += len(recs)
        return fut

    def append_delete(self, entry, rel: RelTag, pid: int, sid: int):
        body = bytes([int(rel)]) + struct.pack("<Q", sid)
        fut = self._append(self.route(rel, pid), REC_DELETE, entry, body)
        with entry.lock:
            entry.wal_futures.append(fut)
            entry.wal_records += 1
        return fut

    def append_commit(self, entry, commit_ts: int):
        # the record count lets recovery reject transactions whose commit
        # record survived a crash but whose statement records did not
        return self._append(0, REC_COMMIT, entry,
                            struct.pack("<QI", commit_ts, entry.wal_records))

    def append_abort(self, entry):
        return self._append(0, REC_ABORT, entry, b"")

    def append_checkpoint_mark(self, commit_ts: int):
        fut = self._append(0, REC_CHECKPOINT, None, struct.pack("<Q", commit_ts))
        self.streams[0].flush_now()
        return fut

    def flush_all(self) -> None:
        for s in self.streams:
            s.flush_now()

    def durable_lens(self) -> list[int]:
        return [s.durable_len for s in self.streams]

    def close(self) -> None:
        for s in self.streams:
            s.close()


# -- checkpointing -------------------------------------------------------------

_PART_HEADER = struct.Struct("<BIIII")  # rel, pid, nrows, n vertex codes, n pred codes
_DICT_ENTRY = struct.Struct("<BBQI")  # tag, flags, gui, lexical length


def write_checkpoint(engine, data_dir: str | Path) -> Path:
    """Write a checkpoint of the committed state; requires quiescence."""
    if engine.txns.active_count():
        raise CorruptionError("checkpoint requires quiescence (active transactions exist)")
    if engine.wal is not None:
        engine.wal.flush_all()
    snap = engine.txns.read_snapshot()
    commit_ts = snap.read_ts
    root = Path(data_dir) / f"checkpoint-{commit_ts}-{int(time.time() * 1000)}"
    root.mkdir(parents=True, exist_ok=False)

    with open(root / "dict.bin", "wb") as fh:
        for dictionary in (engine.verts, engine.lits):
            for entry in dictionary.entries():
                lex = entry.lexical.encode("utf-8")
                flags = int(entry.is_local) | (2 if entry.datatype_hint else 0)
                fh.write(_DICT_ENTRY.pack(int(dictionary.tag), flags, entry.gui, len(lex)))
                fh.write(lex)
                if entry.datatype_hint:
                    hint = entry.datatype_hint.encode("utf-8")
                    fh.write(struct.pack("<I", len(hint)))
                    fh.write(hint)

    files = ["dict.bin"]
    next_locals = {}
    for part in engine.store.all_partitions():
        name = f"part-{int(part.rel)}-{part.pid}.bin"
        next_locals[f"{int(part.rel)}:{part.pid}"] = part.iindex.next_local
        rows = _gather_live_rows(part, snap)
        with open(root / name, "wb") as fh:
            vcodes = part.vertex_codes.gui_array() if part.vertex_codes else np.zeros(0, np.uint64)
            pcodes = part.pred_codes.gui_array()
            fh.write(_PART_HEADER.pack(int(part.rel), part.pid, len(rows[0]),
                                       len(vcodes), len(pcodes)))
            fh.write(vcodes.astype("<u8").tobytes())
            fh.write(pcodes.astype("<u8").tobytes())
            fh.write(_pack_rows(part.kind, rows))
        files.append(name)

    streams = []
    if engine.wal is not None:
        for idx, length in enumerate(engine.wal.durable_lens()):
            streams.append({"file": f"wal-{idx}.log", "offset": length})
    manifest = {
        "commit_ts": commit_ts,
        "grid": engine.config.to_json(),
        "streams": streams,
        "files": files,
        "next_locals": next_locals,
        "seq": engine.wal._seq if engine.wal is not None else 0,
    }
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1))
    tmp.rename(root / "manifest.json")
    if engine.wal is not None:
        engine.wal.append_checkpoint_mark(commit_ts)
    return root


def _gather_live_rows(part, snap):
    cols_s, cols_p, cols_f, cols_o, cols_i, cols_c = [], [], [], [], [], []
    for page in part.pages:
        mask = part.visible_mask(page, snap)
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            continue
        cols_s.append(page.s[idx])
        cols_p.append(page.p[idx])
        cols_o.append(page.o[idx])
        cols_i.append(page.i[idx])
        cols_c.append((page.ctrl[idx] & codec_ctrl_mask()))
        if part.kind != KIND_TOPO:
            cols_f.append(page.f[idx])
    if not cols_s:
        z32, z64, z8 = np.zeros(0, np.uint32), np.zeros(0, np.uint64), np.zeros(0, np.uint8)
        s = z32 if part.kind != KIND_META else z64
        o = z32 if part.kind == KIND_TOPO else z64
        return (s, z32.copy(), z8.copy(), o, z32.copy(), z8.copy())
    return (
        np.concatenate(cols_s),
        np.concatenate(cols_p),
        np.concatenate(cols_f) if cols_f else np.zeros(0, np.uint8),
        np.concatenate(cols_o),
        np.concatenate(cols_i),
        np.concatenate(cols_c),
    )


def codec_ctrl_mask() -> int:
    # only the chain bit survives serialization; free/version state is
    # runtime-only (checkpoints hold live committed rows)
    return CTRL_SCHAIN


def _pack_rows(kind: str, rows) -> bytes:
    s, p, f, o, i, ctrl = rows
    if kind == KIND_TOPO:
        return codec.pack_topo_page(s, p, o, i, ctrl)
    if kind == KIND_PROP:
        return codec.pack_prop_page(s, p, f, o, i, ctrl)
    return codec.pack_meta_page(s, p, f, o, i, ctrl)


def _unpack_rows(kind: str, buf: bytes, n: int):
    if kind == KIND_TOPO:
        s, p, o, i, ctrl = codec.unpack_topo_page(buf)
        return s, p, np.zeros(n, np.uint8), o, i, ctrl
    if kind == KIND_PROP:
        return codec.unpack_prop_page(buf, n)
    return codec.unpack_meta_page(buf, n)


def find_latest_checkpoint(data_dir: str | Path) -> Path | None:
    root = Path(data_dir)
    if not root.exists():
        return None
    best: tuple[int, Path] | None = None
    for child in root.iterdir():
        if not child.name.startswith("checkpoint-") or not (child / "manifest.json").exists():
            continue
        try:
            manifest = json.loads((child / "manifest.json").read_text())
        except (OSError, json.JSONDecodeError):
            continue
        key = int(manifest["commit_ts"])
        if best is None or key > best[0]:
            best = (key, child)
    return best[1] if best else None


@dataclass
class RecoveryReport:
    checkpoint: Path | None = None
    checkpoint_ts: int = 0
    committed: int = 0
    aborted: int = 0
    incomplete: int = 0  # commit record present, statement records missing
    reshaped: bool = False
    truncated: dict[str, int] = field(default_factory=dict)
    max_commit_ts: int = 0
    max_seq: int = 0
    max_epoch: int = 0


def recover(engine, data_dir: str | Path, truncate: bool = True) -> RecoveryReport:
    """Rebuild engine state from the newest checkpoint plus the log tails."""
    report = RecoveryReport()
    data_dir = Path(data_dir)
    ckpt = find_latest_checkpoint(data_dir)
    offsets: dict[str, int] = {}
    sid_map: dict[int, int] = {}
    if ckpt is not None:
        manifest = json.loads((ckpt / "manifest.json").read_text())
        report.checkpoint = ckpt
        report.checkpoint_ts = int(manifest["commit_ts"])
        report.max_seq = int(manifest.get("seq", 0))
        same_grid = manifest["grid"] == engine.config.to_json()
        report.reshaped = not same_grid
        _load_dictionary(engine, ckpt / "dict.bin")
        if same_grid:
            _load_checkpoint_direct(engine, ckpt, manifest)
        else:
            sid_map = _load_checkpoint_reshape(engine, ckpt, manifest)
        for entry in manifest.get("streams", []):
            offsets[entry["file"]] = int(entry["offset"])

    stream_paths = sorted(data_dir.glob("wal-*.log"))
    parsed: list[tuple[Path, list[LogRecord], int, int]] = []
    for path in stream_paths:
        data = path.read_bytes()
        start = min(offsets.get(path.name, 0), len(data))
        records, valid = parse_stream(data[start:])
        valid_abs = start + valid
        if valid_abs < len(data):
            report.truncated[path.name] = len(data) - valid_abs
            if truncate:
                with open(path, "r+b") as fh:
                    fh.truncate(valid_abs)
        parsed.append((path, records, start, valid_abs))

    # pass 1: fates and dictionary bindings, regardless of transaction fate
    fates: dict[tuple[int, int], tuple[int, int] | str] = {}
    counted: dict[tuple[int, int], int] = {}
    for _, records, _, _ in parsed:
        for rec in records:
            report.max_seq = max(report.max_seq, rec.seq)
            report.max_epoch = max(report.max_epoch, rec.handle[1])
            if rec.kind == REC_COMMIT:
                fates[rec.handle] = (rec.commit_ts, rec.expected)
                report.max_commit_ts = max(report.max_commit_ts, rec.commit_ts)
            elif rec.kind == REC_ABORT:
                fates[rec.handle] = "abort"
            elif rec.kind == REC_INSERT:
                counted[rec.handle] = counted.get(rec.handle, 0) + 1
                for comp in (rec.s_comp, rec.p_comp, rec.o_comp):
                    if comp[0] == "vert":
                        engine.install_binding(RelTag.VERT, comp[2], comp[3], comp[1])
                    elif comp[0] == "lit":
                        engine.install_binding(RelTag.LIT, comp[2], False, comp[1], comp[3])
            elif rec.kind == REC_DELETE:
                counted[rec.handle] = counted.get(rec.handle, 0) + 1

    # a commit counts only if every statement record it covers survived;
    # commit records land on stream 0 and can outlive a lost tail elsewhere
    complete: set[tuple[int, int]] = set()
    for handle, fate in fates.items():
        if isinstance(fate, tuple):
            if counted.get(handle, 0) == fate[1]:
                complete.add(handle)
                report.committed += 1
            else:
                report.incomplete += 1
        else:
            report.aborted += 1

    def committed(rec: LogRecord) -> bool:
        if rec.handle not in complete:
            return False
        return fates[rec.handle][0] > report.checkpoint_ts

    # pass 2: apply committed statements
    if not report.reshaped:
        def apply_stream(records: list[LogRecord]) -> None:
            for rec in records:
                if rec.kind == REC_INSERT and committed(rec):
                    engine.replay_insert(rec, sid_map)
                elif rec.kind == REC_DELETE and committed(rec):
                    engine.replay_delete(rec, sid_map)

        threads = [
            threading.Thread(target=apply_stream, args=(records,))
            for _, records, _, _ in parsed
            if records
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    else:
        merged = sorted(
            (rec for _, records, _, _ in parsed for rec in records
             if rec.kind in (REC_INSERT, REC_DELETE)),
            key=lambda r: r.seq,
        )
        for rec in merged:
            if not committed(rec):
                continue
            if rec.kind == REC_INSERT:
                engine.replay_insert(rec, sid_map, remap=True)
            else:
                engine.replay_delete(rec, sid_map)

    engine.txns.set_counter(max(report.checkpoint_ts, report.max_commit_ts))
    return report


def _load_dictionary(engine, path: Path) -> None:
    data = path.read_bytes()
    view = memoryview(data)
    pos = 0
    while pos < len(data):
        tag, flags, gui, ln = _DICT_ENTRY.unpack_from(view, pos)
        pos += _DICT_ENTRY.size
        lex = bytes(view[pos : pos + ln]).decode("utf-8")
        pos += ln
        hint = None
        if flags & 2:
            (hlen,) = struct.unpack_from("<I", view, pos)
            pos += 4
            hint = bytes(view[pos : pos + hlen]).decode("utf-8")
            pos += hlen
        engine.install_binding(RelTag(tag), lex, bool(flags & 1), gui, hint)


def _read_partition_file(path: Path):
    data = path.read_bytes()
    rel_v, pid, nrows, nv, npred = _PART_HEADER.unpack_from(data, 0)
    pos = _PART_HEADER.size
    vcodes = np.frombuffer(data, dtype="<u8", count=nv, offset=pos).copy()
    pos += 8 * nv
    pcodes = np.frombuffer(data, dtype="<u8", count=npred, offset=pos).copy()
    pos += 8 * npred
    rel = RelTag(rel_v)
    rows = _unpack_rows(REL_KIND[rel], data[pos:], nrows)
    return rel, pid, vcodes, pcodes, rows


def _load_checkpoint_direct(engine, ckpt: Path, manifest: dict) -> None:
    for name in manifest["files"]:
        if not name.startswith("part-"):
            continue
        rel, pid, vcodes, pcodes, rows = _read_partition_file(ckpt / name)
        part = engine.store.partition(rel, pid)
        for gui in vcodes.tolist():
            part.vertex_codes.code(gui)
        for gui in pcodes.tolist():
            part.pred_codes.code(gui)
        engine.install_rows_direct(part, rows)
        watermark = manifest["next_locals"].get(f"{int(rel)}:{pid}", 0)
        part.iindex.pad_to(watermark)


def _load_checkpoint_reshape(engine, ckpt: Path, manifest: dict) -> dict[int, int]:
    """Re-insert checkpoint rows under the new routing, remapping SIDs.

    Rows referencing SIDs not yet remapped wait for a later wave; meta
    statements always reference earlier statements so depth is bounded by
    the meta-chain depth.
    """
    pending = []
    for name in manifest["files"]:
        if not name.startswith("part-"):
            continue
        rel, pid, vcodes, pcodes, rows = _read_partition_file(ckpt / name)
        s, p, f, o, i, ctrl = rows
        vlist = vcodes.tolist()
        plist = pcodes.tolist()
        for r in range(len(s)):
            p_gui = plist[int(p[r])]
            old_sid = make_sid(rel, pid, int(i[r]))
            if rel is RelTag.E:
                s_gui = vlist[int(s[r])]
                o_gui = vlist[int(o[r])]
                pending.append((rel, s_gui, p_gui, F_RES_GUI, o_gui, o_gui, old_sid))
            elif rel is RelTag.VP:
                s_gui = vlist[int(s[r])]
                flag = int(f[r])
                o_key = int(o[r]) if flag & 0x40 else None
                pending.append((rel, s_gui, p_gui, flag, int(o[r]), o_key, old_sid))
            elif rel is RelTag.EP:
                tag = rel if int(ctrl[r]) & CTRL_SCHAIN else CONTAINER_LEFT[rel]
                s_gui = make_sid(tag, pid, int(s[r]))
                flag = int(f[r])
                o_key = int(o[r]) if flag & 0x40 else None
                pending.append((rel, s_gui, p_gui, flag, int(o[r]), o_key, old_sid))
            else:
                flag = int(f[r])
                o_key = int(o[r]) if flag & 0x40 else None
                pending.append((rel, int(s[r]), p_gui, flag, int(o[r]), o_key, old_sid))

    sid_map: dict[int, int] = {}
    while pending:
        deferred = []
        progressed = False
        for item in pending:
            if not engine.replay_insert_logical(item, sid_map):
                deferred.append(item)
            else:
                progressed = True
        if not progressed:
            raise CorruptionError("checkpoint rows contain unresolvable SID references")
        pending = deferred
    return sid_map
