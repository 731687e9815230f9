"""Serialized tuple and page codecs.

Row widths are fixed: 16 bytes for elided topology tuples, 21 bytes for
property tuples, 28 bytes for meta-relation tuples (full 64-bit S and O
plus flag and control). Checkpoint files use the page codec; pages
serialize topology as interleaved 16-byte rows and property/meta pages as
per-column groups ([S][P][F][O][I](+ctrl)), mirroring the in-memory
column-per-page layout.

Topology row (16 B):  w0 = s28 | ctrl4<<28, w1 = p32, w2 = o28, w3 = i28
Property row (21 B):  s-word (s28 | ctrl4<<28), p32, flag8, o64, i-word
Meta row (28 B):      s64, p32, flag8, o64, i-word, ctrl8, reserved16
"""

from __future__ import annotations

import struct

import numpy as np

TOPO_WIDTH = 16
PROP_WIDTH = 21
META_WIDTH = 28

_TOPO_ROW = struct.Struct("<IIII")
_PROP_ROW = struct.Struct("<IIBQI")
_META_ROW = struct.Struct("<QIBQIBH")

assert _TOPO_ROW.size == TOPO_WIDTH
assert _PROP_ROW.size == PROP_WIDTH
assert _META_ROW.size == META_WIDTH

_CTRL_MASK = 0xF

_TOPO_DTYPE = np.dtype([("s", "<u4"), ("p", "<u4"), ("o", "<u4"), ("i", "<u4")])


def pack_topo_row(s28: int, p32: int, o28: int, i28: int, ctrl: int = 0) -> bytes:
    return _TOPO_ROW.pack(s28 | (ctrl & _CTRL_MASK) << 28, p32, o28, i28)


def unpack_topo_row(buf: bytes) -> tuple[int, int, int, int, int]:
    w0, p, o, i = _TOPO_ROW.unpack(buf)
    return w0 & 0x0FFFFFFF, p, o, i, w0 >> 28


def pack_prop_row(s28: int, p32: int, flag: int, o64: int, i28: int, ctrl: int = 0) -> bytes:
    return _PROP_ROW.pack(s28 | (ctrl & _CTRL_MASK) << 28, p32, flag, o64, i28)


def unpack_prop_row(buf: bytes) -> tuple[int, int, int, int, int, int]:
    w0, p, flag, o, i = _PROP_ROW.unpack(buf)
    return w0 & 0x0FFFFFFF, p, flag, o, i, w0 >> 28


def pack_meta_row(s64: int, p32: int, flag: int, o64: int, i28: int, ctrl: int = 0) -> bytes:
    return _META_ROW.pack(s64, p32, flag, o64, i28, ctrl, 0)


def unpack_meta_row(buf: bytes) -> tuple[int, int, int, int, int, int]:
    s, p, flag, o, i, ctrl, _ = _META_ROW.unpack(buf)
    return s, p, flag, o, i, ctrl


def pack_topo_page(s, p, o, i, ctrl) -> bytes:
    n = len(s)
    rows = np.empty(n, dtype=_TOPO_DTYPE)
    rows["s"] = s.astype(np.uint32) | (ctrl.astype(np.uint32) & _CTRL_MASK) << 28
    rows["p"] = p
    rows["o"] = o
    rows["i"] = i
    out = rows.tobytes()
    assert len(out) == n * TOPO_WIDTH
    return out


def unpack_topo_page(buf: bytes):
    rows = np.frombuffer(buf, dtype=_TOPO_DTYPE)
    s = rows["s"] & np.uint32(0x0FFFFFFF)
    ctrl = (rows["s"] >> np.uint32(28)).astype(np.uint8)
    return s, rows["p"].copy(), rows["o"].copy(), rows["i"].copy(), ctrl


def pack_prop_page(s, p, f, o, i, ctrl) -> bytes:
    n = len(s)
    s_words = (s.astype(np.uint32) | (ctrl.astype(np.uint32) & _CTRL_MASK) << 28).astype("<u4")
    parts = [
        s_words.tobytes(),
        p.astype("<u4").tobytes(),
        f.astype("u1").tobytes(),
        o.astype("<u8").tobytes(),
        i.astype("<u4").tobytes(),
    ]
    out = b"".join(parts)
    assert len(out) == n * PROP_WIDTH
    return out


def unpack_prop_page(buf: bytes, n: int):
    pos = 0
    s_words = np.frombuffer(buf, dtype="<u4", count=n, offset=pos)
    pos += 4 * n
    p = np.frombuffer(buf, dtype="<u4", count=n, offset=pos).copy()
    pos += 4 * n
    f = np.frombuffer(buf, dtype="u1", count=n, offset=pos).copy()
    pos += n
    o = np.frombuffer(buf, dtype="<u8", count=n, offset=pos).copy()
    pos += 8 * n
    i = np.frombuffer(buf, dtype="<u4", count=n, offset=pos).copy()
    s = s_words & np.uint32(0x0FFFFFFF)
    ctrl = (s_words >> np.uint32(28)).astype(np.uint8)
    return s, p, f, o, i, ctrl


def pack_meta_page(s, p, f, o, i, ctrl) -> bytes:
    n = len(s)
    parts = [
        s.astype("<u8").tobytes(),
        p.astype("<u4").tobytes(),
        f.astype("u1").tobytes(),
        o.astype("<u8").tobytes(),
        i.astype("<u4").tobytes(),
        ctrl.astype("u1").tobytes(),
        np.zeros(n, dtype="<u2").tobytes(),
    ]
    out = b"".join(parts)
    assert len(out) == n * META_WIDTH
    return out


def unpack_meta_page(buf: bytes, n: int):
    pos = 0
    s = np.frombuffer(buf, dtype="<u8", count=n, offset=pos).copy()
    pos += 8 * n
    p = np.frombuffer(buf, dtype="<u4", count=n, offset=pos).copy()
    pos += 4 * n
    f = np.frombuffer(buf, dtype="u1", count=n, offset=pos).copy()
    pos += n
    o = np.frombuffer(buf, dtype="<u8", count=n, offset=pos).copy()
    pos += 8 * n
    i = np.frombuffer(buf, dtype="<u4", count=n, offset=pos).copy()
    pos += 4 * n
    ctrl = np.frombuffer(buf, dtype="u1", count=n, offset=pos).copy()
    return s, p, f, o, i, ctrl
