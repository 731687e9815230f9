"""Property value encoding: the 8-bit flag and the 64-bit value word.

Property tuples store their O component as (flag, o64). int64, float64,
bool and strings of at most 7 UTF-8 bytes are inlined into o64; larger
strings reference the literal dictionary and resources/statements reference
their GUI, with the composite group bit set. Group bits (numeric, composite,
signed) are derived from the base type code.
"""

from __future__ import annotations

import struct

from .errors import ModelError

MASK64 = (1 << 64) - 1

# base type codes (low 5 bits of the flag)
T_NULL = 0
T_BOOL = 1
T_INT64 = 2
T_FLOAT64 = 3
T_SMALL_STR = 4
T_STR_GUI = 5  # literal dictionary reference
T_RES_GUI = 6  # IRI / blank node reference
T_SID_REF = 7  # statement reference

GROUP_NUMERIC = 0x20
GROUP_COMPOSITE = 0x40
GROUP_SIGNED = 0x80

_GROUPS = {
    T_NULL: 0,
    T_BOOL: GROUP_NUMERIC,
    T_INT64: GROUP_NUMERIC | GROUP_SIGNED,
    T_FLOAT64: GROUP_NUMERIC | GROUP_SIGNED,
    T_SMALL_STR: 0,
    T_STR_GUI: GROUP_COMPOSITE,
    T_RES_GUI: GROUP_COMPOSITE,
    T_SID_REF: GROUP_COMPOSITE,
}

SMALL_STR_MAX = 7


def flag_for(base: int) -> int:
    return base | _GROUPS[base]


F_NULL = flag_for(T_NULL)
F_BOOL = flag_for(T_BOOL)
F_INT64 = flag_for(T_INT64)
F_FLOAT64 = flag_for(T_FLOAT64)
F_SMALL_STR = flag_for(T_SMALL_STR)
F_STR_GUI = flag_for(T_STR_GUI)
F_RES_GUI = flag_for(T_RES_GUI)
F_SID_REF = flag_for(T_SID_REF)


def base_type(flag: int) -> int:
    return flag & 0x1F


def is_numeric(flag: int) -> bool:
    return bool(flag & GROUP_NUMERIC)


def is_composite(flag: int) -> bool:
    return bool(flag & GROUP_COMPOSITE)


def is_signed(flag: int) -> bool:
    return bool(flag & GROUP_SIGNED)


def encode_inline(value) -> tuple[int, int] | None:
    """Encode a Python value into (flag, o64) if it inlines, else None.

    None means the value needs a dictionary reference (long string).
    """
    if isinstance(value, bool):
        return F_BOOL, int(value)
    if isinstance(value, int):
        if not -(1 << 63) <= value < (1 << 63):
            raise ModelError(f"integer {value} does not fit int64")
        return F_INT64, value & MASK64
    if isinstance(value, float):
        return F_FLOAT64, struct.unpack("<Q", struct.pack("<d", value))[0]
    if isinstance(value, str):
        raw = value.encode("utf-8")
        if len(raw) <= SMALL_STR_MAX:
            bits = len(raw) << 56 | int.from_bytes(raw.ljust(7, b"\0"), "little")
            return F_SMALL_STR, bits
        return None
    raise ModelError(f"unsupported property value type {type(value).__name__}")


def decode_small_str(bits: int) -> str:
    length = (bits >> 56) & 0xFF
    return (bits & ((1 << 56) - 1)).to_bytes(7, "little")[:length].decode("utf-8")


def decode_value(flag: int, bits: int):
    """Decode (flag, o64) into a Python value; composite flags return the GUI."""
    base = base_type(flag)
    if base == T_BOOL:
        return bool(bits)
    if base == T_INT64:
        return bits - (1 << 64) if bits >= (1 << 63) else bits
    if base == T_FLOAT64:
        return struct.unpack("<d", struct.pack("<Q", bits))[0]
    if base == T_SMALL_STR:
        return decode_small_str(bits)
    if base in (T_STR_GUI, T_RES_GUI, T_SID_REF):
        return bits
    if base == T_NULL:
        return None
    raise ModelError(f"unknown flag code 0x{flag:02x}")


def numeric_candidates(value) -> list[tuple[int, int]]:
    """All (flag, o64) encodings equal to a numeric constant under promotion.

    int64 and float64 columns compare by numeric value, so an integer
    constant must match both its int64 form and, when exactly representable,
    its float64 form (and symmetrically for floats with integral values).
    """
    out: list[tuple[int, int]] = []
    if isinstance(value, bool):
        out.append((F_BOOL, int(value)))
        out.append((F_INT64, int(value)))
        out.append((F_FLOAT64, struct.unpack("<Q", struct.pack("<d", float(value)))[0]))
        return out
    if isinstance(value, int):
        out.append((F_INT64, value & MASK64))
        fv = float(value)
        if int(fv) == value and abs(value) < (1 << 63):
            out.append((F_FLOAT64, struct.unpack("<Q", struct.pack("<d", fv))[0]))
        if value in (0, 1):
            out.append((F_BOOL, value))
        return out
    if isinstance(value, float):
        out.append((F_FLOAT64, struct.unpack("<Q", struct.pack("<d", value))[0]))
        if value.is_integer() and -(1 << 63) <= value < (1 << 63):
            out.append((F_INT64, int(value) & MASK64))
            if value in (0.0, 1.0):
                out.append((F_BOOL, int(value)))
        return out
    raise ModelError(f"{value!r} is not numeric")
