"""Plan execution: page scans, adjacency probes, joins and gathers.

Relation scans evaluate one predicate column per pass, keeping a page-wide
match mask whose population can only shrink; once the mask is sparse the
remaining passes test only the set positions. Index scans probe adjacency
lists for each bound value and re-check the residual predicates at the
returned slots. Nested expressions run bottom-up: the parent's distinct I
values become the child's runtime subject frontier, and the executor
re-chooses scan or probe per partition from the actual frontier size.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .apl import (
    INDEX_SELECTIVITY,
    AccessPlan,
    AplExpression,
    AplRequest,
    Binding,
    PlanPart,
    constant_gui,
)
from .errors import ModelError
from .gid import (
    CONTAINER_LEFT,
    NULL_GUI,
    RelTag,
    S_DOMAIN,
    TOPOLOGY_RELATIONS,
    is_sid,
    make_sid,
    sid_local,
    sid_partition,
    tag_of,
)
from .relstore import (
    CTRL_FREE,
    CTRL_SCHAIN,
    CTRL_VERSION,
    KIND_META,
    KIND_TOPO,
    REF_SLOT_BITS,
    REF_SLOT_MASK,
    Partition,
)
from .txn import Snapshot, visible
from .values import (
    F_NULL,
    F_RES_GUI,
    F_SID_REF,
    F_STR_GUI,
    T_RES_GUI,
    T_SID_REF,
    base_type,
    encode_inline,
    numeric_candidates,
)

log = logging.getLogger(__name__)

_SPARSE_FRACTION = 8  # switch to set-bit iteration below 1/8 page density


@dataclass
class QueryResult:
    """Aligned projected columns; O columns are (flags, bits) array pairs."""

    columns: dict[str, object]
    row_count: int
    trace: list[tuple] = field(default_factory=list)

    def column(self, path: str):
        return self.columns[path]


# -- per-partition compiled filter ---------------------------------------------------


@dataclass
class _Filter:
    order: tuple[str, ...] = ()
    empty: bool = False
    p_codes: np.ndarray | None = None
    s_codes: np.ndarray | None = None      # topo/VP: partition-local codes
    s_keys: np.ndarray | None = None       # EP family: local<<1 | chained
    s_guis: np.ndarray | None = None       # meta: raw GUIs
    o_codes: np.ndarray | None = None      # topo: partition-local codes
    o_flags: np.ndarray | None = None      # value pairs to match, aligned
    o_bits: np.ndarray | None = None
    flag_allow: np.ndarray | None = None   # 256-entry mask from a type restriction
    i_locals: np.ndarray | None = None
    probe_s: np.ndarray | None = None      # GUIs routed here, for index probes
    probe_o: np.ndarray | None = None
    probe_i: np.ndarray | None = None


def _route_mask_s(rel: RelTag, pid: int, guis: np.ndarray, cfg) -> np.ndarray:
    if rel in TOPOLOGY_RELATIONS:
        row = pid // cfg.cols
        return (guis & np.uint64(cfg.rows - 1)) == np.uint64(row)
    if rel is RelTag.VP:
        return (guis & np.uint64(cfg.parts1d - 1)) == np.uint64(pid)
    keep = np.zeros(len(guis), dtype=bool)
    for j, g in enumerate(guis.tolist()):
        keep[j] = is_sid(g) and sid_partition(g) == pid
    return keep


def _o_pair_for_gui(g: int) -> tuple[int, int]:
    if is_sid(g):
        return F_SID_REF, g
    if tag_of(g) is RelTag.LIT:
        return F_STR_GUI, g
    return F_RES_GUI, g


def _value_pairs(engine, value) -> list[tuple[int, int]]:
    """All stored (flag, bits) encodings one O constant can match."""
    g = constant_gui(value, "o")
    if g is not None:
        return [_o_pair_for_gui(g)]
    if value is None:
        return [(F_NULL, 0)]
    if isinstance(value, str):
        enc = encode_inline(value)
        if enc is not None:
            return [enc]
        gui = engine.lits.lookup(value)
        return [(F_STR_GUI, gui)] if gui is not None else []
    return numeric_candidates(value)


def _compile(engine, part: Partition, expr: AplExpression, prefix: str,
             request: AplRequest, plan_part: PlanPart,
             s_override: np.ndarray | None) -> _Filter:
    filt = _Filter()
    rel, pid, cfg = part.rel, part.pid, part.config
    order = list(plan_part.column_order)

    # subject values: declared constants/frontier intersected with any runtime frontier
    s_vals = _gui_args(request, prefix + "s")
    if s_override is not None:
        s_vals = (s_override if s_vals is None
                  else np.intersect1d(s_vals, s_override))
    if expr.s.bound and s_vals is None and s_override is None:
        # constants that are not GUIs can never match a subject
        filt.empty = True
        return filt
    if s_vals is not None:
        s_vals = s_vals[_route_mask_s(rel, pid, s_vals, cfg)]
        if len(s_vals) == 0:
            filt.empty = True
            return filt
        filt.probe_s = s_vals
        if "s" not in order:
            order.insert(0, "s")
        if part.kind == KIND_META:
            filt.s_guis = s_vals
        elif part.kind == KIND_TOPO or rel is RelTag.VP:
            codes = [part.vertex_codes.get_code(int(g)) for g in s_vals.tolist()]
            codes = [c for c in codes if c >= 0]
            if not codes:
                filt.empty = True
                return filt
            filt.s_codes = np.array(sorted(codes), dtype=np.uint32)
        else:  # subject-SID property pages match on local number plus chain bit
            keys = []
            left = CONTAINER_LEFT[rel]
            for g in s_vals.tolist():
                t = tag_of(g)
                if t is rel:
                    keys.append(sid_local(g) << 1 | 1)
                elif t is left:
                    keys.append(sid_local(g) << 1)
            if not keys:
                filt.empty = True
                return filt
            filt.s_keys = np.array(sorted(keys), dtype=np.uint64)

    # predicates are always GUI constants
    p_args = request.component_args(prefix + "p")
    if p_args.constants:
        codes = []
        for v in p_args.constants:
            g = constant_gui(v, "p")
            if g is None:
                raise ModelError("predicate constants must be GUIs")
            c = part.pred_codes.get_code(g)
            if c >= 0:
                codes.append(c)
        if not codes:
            filt.empty = True
            return filt
        filt.p_codes = np.array(sorted(codes), dtype=np.uint32)

    # object constants and frontier
    o_args = request.component_args(prefix + "o")
    o_guis = _gui_args(request, prefix + "o")
    if o_guis is not None and rel in TOPOLOGY_RELATIONS:
        col = pid % cfg.cols
        o_guis = o_guis[(o_guis & np.uint64(cfg.cols - 1)) == np.uint64(col)]
        if len(o_guis) == 0:
            filt.empty = True
            return filt
    if expr.o.bound:
        # a constant with no stored encoding simply never matches
        pairs: list[tuple[int, int]] = []
        if o_args.constants:
            pairs = [p for v in o_args.constants for p in _value_pairs(engine, v)]
        if o_args.frontier is not None:
            fr_pairs = [_o_pair_for_gui(int(g)) for g in o_args.frontier.tolist()]
            if o_args.constants:
                pairs = [p for p in pairs if p in set(fr_pairs)]
            else:
                pairs = fr_pairs
        if part.kind == KIND_TOPO:
            codes = []
            for _, g in pairs:
                c = part.vertex_codes.get_code(int(g))
                if c >= 0:
                    codes.append(c)
            if not codes:
                filt.empty = True
                return filt
            filt.o_codes = np.array(sorted(set(codes)), dtype=np.uint32)
        else:
            if not pairs:
                filt.empty = True
                return filt
            pairs = sorted(set(pairs))
            filt.o_flags = np.array([f for f, _ in pairs], dtype=np.uint8)
            filt.o_bits = np.array([b & 0xFFFFFFFFFFFFFFFF for _, b in pairs],
                                   dtype=np.uint64)
        if o_guis is not None:
            filt.probe_o = o_guis
    if expr.o.restriction and part.kind != KIND_TOPO:
        filt.flag_allow = _restriction_mask(expr.o.restriction)
        if "flag" not in order:
            order.append("flag")

    # statement-id constants name their partition directly
    i_vals = (_gui_args(request, prefix + "i")
              if expr.i is not None and expr.i.bound else None)
    if expr.i is not None and expr.i.bound:
        if i_vals is None:
            filt.empty = True
            return filt
        locals_ = [sid_local(int(g)) for g in i_vals.tolist()
                   if is_sid(int(g)) and tag_of(int(g)) is rel
                   and sid_partition(int(g)) == pid]
        if not locals_:
            filt.empty = True
            return filt
        filt.i_locals = np.array(sorted(locals_), dtype=np.uint32)
        filt.probe_i = np.array(
            sorted(make_sid(rel, pid, l) for l in locals_), dtype=np.uint64)
        if "i" not in order:
            order.insert(0, "i")

    filt.order = tuple(n for n in order if _pass_applies(n, filt))
    return filt


def _pass_applies(name: str, filt: _Filter) -> bool:
    if name == "p":
        return filt.p_codes is not None
    if name == "s":
        return (filt.s_codes is not None or filt.s_keys is not None
                or filt.s_guis is not None)
    if name == "o":
        return filt.o_codes is not None or filt.o_flags is not None
    if name == "i":
        return filt.i_locals is not None
    if name == "flag":
        return filt.flag_allow is not None
    return False


def _restriction_mask(letter: str) -> np.ndarray:
    allow = np.zeros(256, dtype=bool)
    for flag in range(256):
        base = base_type(flag)
        if letter == "l":
            allow[flag] = base not in (T_RES_GUI, T_SID_REF)
        elif letter == "v":
            allow[flag] = base == T_RES_GUI
        else:  # 's'
            allow[flag] = base == T_SID_REF
    return allow


def _gui_args(request: AplRequest, path: str) -> np.ndarray | None:
    args = request.component_args(path)
    consts: set[int] | None = None
    if args.constants:
        consts = set()
        for v in args.constants:
            g = constant_gui(v, path[-1])
            if g is None:
                return None
            consts.add(g)
    front = (set(int(x) for x in args.frontier.tolist())
             if args.frontier is not None else None)
    if consts is not None and front is not None:
        vals = consts & front
    else:
        vals = consts if consts is not None else front
    if vals is None:
        return None
    return np.array(sorted(vals), dtype=np.uint64)


# -- column tests ---------------------------------------------------------------------


def _test_pass(part: Partition, page, sel, name: str, filt: _Filter) -> np.ndarray:
    if name == "p":
        return np.isin(page.column("p")[sel], filt.p_codes)
    if name == "i":
        return np.isin(page.column("i")[sel], filt.i_locals)
    if name == "flag":
        return filt.flag_allow[page.column("f")[sel]]
    if name == "s":
        if filt.s_guis is not None:
            return np.isin(page.column("s")[sel], filt.s_guis)
        if filt.s_codes is not None:
            return np.isin(page.column("s")[sel], filt.s_codes)
        keys = (page.column("s")[sel].astype(np.uint64) << np.uint64(1)) | (
            (page.column("ctrl")[sel] & CTRL_SCHAIN) != 0).astype(np.uint64)
        return np.isin(keys, filt.s_keys)
    if name == "o":
        if filt.o_codes is not None:
            return np.isin(page.column("o")[sel], filt.o_codes)
        f = page.column("f")[sel]
        o = page.column("o")[sel]
        out = np.zeros(len(f), dtype=bool)
        for wf, wb in zip(filt.o_flags.tolist(), filt.o_bits.tolist()):
            out |= (f == wf) & (o == wb)
        return out
    raise ModelError(f"unknown scan pass {name!r}")


def _visible_at(part: Partition, page, slots: np.ndarray, snap: Snapshot) -> np.ndarray:
    ctrl = page.column("ctrl")[slots]
    ok = (ctrl & CTRL_FREE) == 0
    if page.version_total:
        for j in np.flatnonzero(ctrl & CTRL_VERSION).tolist():
            val = part.versions.get(part.ref(page.index, int(slots[j])))
            if val is not None and not visible(val, snap):
                ok[j] = False
    return ok


# -- collectors -------------------------------------------------------------------------


class _Collector:
    """Accumulates matched rows as full (s, p, o, i) column chunks."""

    __slots__ = ("limit", "taken", "s", "p", "of", "ob", "i")

    def __init__(self, limit: int | None):
        self.limit = limit
        self.taken = 0
        self.s: list[np.ndarray] = []
        self.p: list[np.ndarray] = []
        self.of: list[np.ndarray] = []
        self.ob: list[np.ndarray] = []
        self.i: list[np.ndarray] = []

    @property
    def full(self) -> bool:
        return self.limit is not None and self.taken >= self.limit

    def add(self, part: Partition, page, idx: np.ndarray) -> None:
        if self.limit is not None:
            room = self.limit - self.taken
            if room <= 0:
                return
            idx = idx[:room]
        flags, bits = part.recon_o(page, idx)
        self.s.append(part.recon_s(page, idx).astype(np.uint64, copy=False))
        self.p.append(part.recon_p(page, idx).astype(np.uint64, copy=False))
        self.of.append(flags.astype(np.uint8, copy=False))
        self.ob.append(bits.astype(np.uint64, copy=False))
        self.i.append(part.recon_i(page, idx).astype(np.uint64, copy=False))
        self.taken += len(idx)

    def arrays(self):
        if not self.s:
            empty64 = np.zeros(0, dtype=np.uint64)
            return empty64, empty64.copy(), np.zeros(0, np.uint8), empty64.copy(), empty64.copy()
        return (np.concatenate(self.s), np.concatenate(self.p),
                np.concatenate(self.of), np.concatenate(self.ob),
                np.concatenate(self.i))


# -- scan and probe drivers --------------------------------------------------------------


def _relation_scan(part: Partition, filt: _Filter, snap: Snapshot,
                   sink: _Collector, trace: list | None) -> None:
    for page in part.pages:
        if sink.full:
            return
        with part.lock:
            n = page.count
            if n == 0:
                continue
            mask: np.ndarray | None = None
            dead = False
            for name in filt.order:
                if mask is None:
                    mask = _test_pass(part, page, slice(0, n), name, filt)
                elif int(mask.sum()) * _SPARSE_FRACTION < n:
                    pos = np.flatnonzero(mask)
                    sub = _test_pass(part, page, pos, name, filt)
                    mask = np.zeros(n, dtype=bool)
                    mask[pos[sub]] = True
                else:
                    mask &= _test_pass(part, page, slice(0, n), name, filt)
                if trace is not None:
                    trace.append((part.rel, part.pid, page.index, name,
                                  int(mask.sum())))
                if not mask.any():
                    dead = True
                    break
            if dead:
                continue
            vis = part.visible_mask(page, snap)
            mask = vis if mask is None else mask & vis
            idx = np.flatnonzero(mask)
            if idx.size:
                sink.add(part, page, idx)


def _index_scan(part: Partition, filt: _Filter, side: str, snap: Snapshot,
                sink: _Collector, trace: list | None) -> None:
    values = {"s": filt.probe_s, "o": filt.probe_o, "i": filt.probe_i}[side]
    if values is None:
        raise ModelError(f"index scan on {side} without probe values")
    residual = tuple(n for n in filt.order if n != side)
    with part.lock:
        refs_parts = []
        if side == "i":
            for g in values.tolist():
                ref = part.iindex.lookup(sid_local(int(g)))
                if ref >= 0:
                    refs_parts.append(np.array([ref], dtype=np.int64))
        else:
            index = part.sindex if side == "s" else part.oindex
            for g in values.tolist():
                hit = index.probe(int(g))
                if hit is not None and len(hit):
                    refs_parts.append(hit.astype(np.int64))
        if not refs_parts:
            return
        refs = np.concatenate(refs_parts)
        page_ids = refs >> REF_SLOT_BITS
        order = np.argsort(page_ids, kind="stable")
        refs = refs[order]
        page_ids = page_ids[order]
        bounds = np.flatnonzero(np.diff(page_ids)) + 1
        for chunk in np.split(refs, bounds):
            if sink.full:
                return
            page = part.pages[int(chunk[0] >> REF_SLOT_BITS)]
            slots = (chunk & REF_SLOT_MASK).astype(np.int64)
            keep = _visible_at(part, page, slots, snap)
            for name in residual:
                if not keep.any():
                    break
                keep &= _test_pass(part, page, slots, name, filt)
            slots = slots[keep]
            if trace is not None:
                trace.append((part.rel, part.pid, page.index, f"probe:{side}",
                              int(len(slots))))
            if slots.size:
                sink.add(part, page, np.sort(slots))


# -- level execution ---------------------------------------------------------------------


@dataclass
class _LevelRows:
    s: np.ndarray
    p: np.ndarray
    of: np.ndarray
    ob: np.ndarray
    i: np.ndarray
    columns: dict[str, object]


def _choose_method(part: Partition, plan_part: PlanPart, filt: _Filter,
                   force: str | None, runtime_frontier: bool) -> tuple[str, str | None]:
    if not runtime_frontier:
        if force == "index" and plan_part.method == "relation":
            side = ("i" if filt.probe_i is not None else
                    "s" if filt.probe_s is not None else
                    "o" if filt.probe_o is not None else None)
            return ("index", side) if side else ("relation", None)
        return plan_part.method, plan_part.index_side
    # join input arrived at run time; re-estimate with the actual frontier
    if force == "relation" or filt.probe_s is None:
        return "relation", None
    if force == "index":
        return "index", "s"
    n = max(part.tuple_count, 1)
    sample = filt.probe_s[:64]
    est = 0
    for g in sample.tolist():
        lst = part.sindex.list_for(int(g))
        est += lst.live_count() if lst is not None else 0
    est = est * (len(filt.probe_s) / max(len(sample), 1))
    if est / n < INDEX_SELECTIVITY:
        return "index", "s"
    return "relation", None


def _run_level(engine, plan: AccessPlan, request: AplRequest, expr: AplExpression,
               prefix: str, snap: Snapshot, s_override: np.ndarray | None,
               limit: int | None, trace: list | None) -> _LevelRows:
    collect_limit = limit if plan.join_kind is None else None
    sink = _Collector(collect_limit)
    if collect_limit == 0:
        return _finish_level(engine, plan, request, expr, prefix, snap, sink,
                             trace, limit)
    store = engine.store
    for plan_part in plan.parts:
        if sink.full:
            break
        part = store.get(plan_part.rel, plan_part.pid)
        if part is None or part.tuple_count == 0:
            continue
        filt = _compile(engine, part, expr, prefix, request, plan_part, s_override)
        if filt.empty:
            continue
        method, side = _choose_method(part, plan_part, filt, plan.force,
                                      s_override is not None)
        if method == "index" and side is not None:
            _index_scan(part, filt, side, snap, sink, trace)
        else:
            _relation_scan(part, filt, snap, sink, trace)
    return _finish_level(engine, plan, request, expr, prefix, snap, sink,
                         trace, limit)


def _finish_level(engine, plan, request, expr, prefix, snap, sink, trace,
                  limit) -> _LevelRows:
    s, p, of, ob, i = sink.arrays()
    columns: dict[str, object] = {}
    if expr.join is None:
        _project_own(expr, prefix, columns, s, p, of, ob, i)
        return _LevelRows(s, p, of, ob, i, columns)

    right_expr = expr.join.right
    child_frontier = np.unique(i)
    right = _run_level(engine, plan.right, request, right_expr, prefix + "x.",
                       snap, child_frontier, None, trace)
    left_idx, right_idx = _match(i, right.s, expr.join.kind)
    s, p, of, ob, i = (s[left_idx], p[left_idx], of[left_idx], ob[left_idx],
                       i[left_idx])
    _project_own(expr, prefix, columns, s, p, of, ob, i)
    for path, col in right.columns.items():
        columns[path] = _take_with_nulls(col, right_idx)
    if limit is not None:
        s, p, of, ob, i = (a[:limit] for a in (s, p, of, ob, i))
        columns = {k: _slice_col(v, limit) for k, v in columns.items()}
    return _LevelRows(s, p, of, ob, i, columns)


def _project_own(expr, prefix, columns, s, p, of, ob, i) -> None:
    if expr.s.projected:
        columns[prefix + "s"] = s
    if expr.p.projected:
        columns[prefix + "p"] = p
    if expr.o.projected:
        columns[prefix + "o"] = (of, ob)
    if expr.i is not None and expr.i.projected:
        columns[prefix + "i"] = i


def _match(left_i: np.ndarray, right_s: np.ndarray, kind: str):
    """Row index pairs for the I = S' join; -1 marks a null right row."""
    if len(right_s):
        order = np.argsort(right_s, kind="stable")
        sorted_s = right_s[order]
        starts = np.searchsorted(sorted_s, left_i, side="left")
        ends = np.searchsorted(sorted_s, left_i, side="right")
    else:
        starts = np.zeros(len(left_i), dtype=np.int64)
        ends = starts
    counts = ends - starts
    if kind == "x":
        keep = np.flatnonzero(counts > 0)
        left_idx = np.repeat(keep, counts[keep])
        right_idx = np.concatenate(
            [order[starts[k]:ends[k]] for k in keep.tolist()]) if len(keep) else np.zeros(0, np.int64)
        return left_idx, right_idx.astype(np.int64)
    # left outer: unmatched rows pair with one null right row
    out_counts = np.maximum(counts, 1)
    left_idx = np.repeat(np.arange(len(left_i)), out_counts)
    right_parts = []
    for k in range(len(left_i)):
        if counts[k]:
            right_parts.append(order[starts[k]:ends[k]])
        else:
            right_parts.append(np.array([-1], dtype=np.int64))
    right_idx = (np.concatenate(right_parts).astype(np.int64)
                 if right_parts else np.zeros(0, np.int64))
    return left_idx, right_idx


def _take_with_nulls(col, right_idx: np.ndarray):
    nulls = right_idx < 0
    safe = np.where(nulls, 0, right_idx)
    if isinstance(col, tuple):
        f, b = col
        f = f[safe] if len(f) else np.zeros(len(right_idx), np.uint8)
        b = b[safe] if len(b) else np.zeros(len(right_idx), np.uint64)
        f = f.copy()
        b = b.copy()
        f[nulls] = F_NULL
        b[nulls] = 0
        return f, b
    arr = col[safe].copy() if len(col) else np.zeros(len(right_idx), np.uint64)
    arr[nulls] = np.uint64(NULL_GUI)
    return arr


def _slice_col(col, limit: int):
    if isinstance(col, tuple):
        return col[0][:limit], col[1][:limit]
    return col[:limit]


def run_plan(engine, plan: AccessPlan, request: AplRequest,
             snap: Snapshot | None = None, trace: bool = False) -> QueryResult:
    """Execute an access plan against one snapshot."""
    if snap is None:
        snap = engine.txns.read_snapshot()
    tr: list | None = [] if trace else None
    rows = _run_level(engine, plan, request, plan.expr, "", snap, None,
                      plan.limit, tr)
    ordered = {path: rows.columns[path]
               for path in plan.expr.projected_paths() if path in rows.columns}
    return QueryResult(columns=ordered, row_count=len(rows.s), trace=tr or [])


# -- gathers ------------------------------------------------------------------------------


def gather_concat(result: QueryResult) -> QueryResult:
    return result


def gather_sum(result: QueryResult, path: str) -> float:
    """Sum a projected O column under numeric promotion; fixed fold order."""
    col = result.columns[path]
    if not isinstance(col, tuple):
        raise ModelError(f"column {path} is not a value column")
    flags, bits = col
    from .values import decode_value, is_numeric

    total = 0
    for f, b in zip(flags.tolist(), bits.tolist()):
        if is_numeric(int(f)):
            total = total + decode_value(int(f), int(b))
    return total


def gather_group_by(result: QueryResult, key_path: str,
                    value_path: str | None = None) -> list[tuple]:
    """Counts (and optional numeric sums) per key, sorted by key."""
    key_col = result.columns[key_path]
    if isinstance(key_col, tuple):
        keys = list(zip(key_col[0].tolist(), key_col[1].tolist()))
    else:
        keys = key_col.tolist()
    groups: dict = {}
    if value_path is None:
        for k in keys:
            groups[k] = groups.get(k, 0) + 1
        return sorted(groups.items())
    from .values import decode_value, is_numeric

    flags, bits = result.columns[value_path]
    sums: dict = {}
    for k, f, b in zip(keys, flags.tolist(), bits.tolist()):
        groups[k] = groups.get(k, 0) + 1
        if is_numeric(int(f)):
            sums[k] = sums.get(k, 0) + decode_value(int(f), int(b))
    return sorted((k, groups[k], sums.get(k, 0)) for k in groups)
