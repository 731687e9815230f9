"""Graph algorithms over the edge topology.

Two execution substrates share one vertex numbering:

* Level-synchronous kernels run directly over the live partitions. Each
  expansion step chooses, per partition and level, between index-driven
  probing (one adjacency lookup per frontier vertex) and scan-driven
  testing (a bitmap over the partition's vertex codes tested against whole
  pages), with hysteresis between the two thresholds so borderline levels
  keep their previous mode.

* Iterative algorithms run over ephemeral per-partition CSR snapshots.
  Parallel strategies only parallelize the per-partition map phase; partial
  results always combine in fixed partition order, so sequential, row- and
  cell-parallel runs produce bitwise-identical output.

Edge weights come from the co-located edge-property partition: property
tuples whose subject is an edge of the same partition. When one edge
carries the weight predicate more than once, the statement with the
smallest identifier wins. The vertex domain of every algorithm is the set
of vertices appearing in a visible edge.
"""

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ModelError, NotFoundError
from .gid import NULL_GUI, RelTag
from .relstore import CTRL_SCHAIN, Partition
from .txn import Snapshot
from .values import decode_value, is_numeric

log = logging.getLogger(__name__)

ALPHA_SCAN = 1.0 / 16   # switch to scans above this frontier density
BETA_INDEX = 1.0 / 64   # switch to probes below this frontier density

INF_LEVEL = np.iinfo(np.int64).max  # unreachable marker

DEFAULT_EGONET_K = 100
DEFAULT_EGONET_HOPS = 2
DEFAULT_CLOSENESS_BATCH = 2048


# -- snapshot-pinned topology -------------------------------------------------------------


@dataclass
class _Cell:
    pid: int
    src: np.ndarray            # dense vertex ids
    dst: np.ndarray
    loc: np.ndarray            # edge statement locals, for identity
    weights: np.ndarray | None


class AlgoContext:
    """Dense vertex numbering plus per-partition edge arrays, one snapshot.

    Edges missing the weight predicate get default_weight; callers that
    prefer to skip such edges can pass NaN and filter.
    """

    def __init__(self, engine, snap: Snapshot | None = None,
                 weight_pred: int | None = None,
                 default_weight: float = 1.0):
        self.engine = engine
        self.snap = snap if snap is not None else engine.txns.read_snapshot()
        self.weight_pred = weight_pred
        self.default_weight = float(default_weight)
        raw: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]] = []
        gui_chunks: list[np.ndarray] = []
        for part in engine.store.existing(RelTag.E):
            with part.lock:
                ss, oo, ll = [], [], []
                for page in part.pages:
                    mask = part.visible_mask(page, self.snap)
                    idx = np.flatnonzero(mask)
                    if not idx.size:
                        continue
                    ss.append(page.s[idx].astype(np.int64))
                    oo.append(page.o[idx].astype(np.int64))
                    ll.append(page.i[idx].astype(np.int64))
                guis = part.vertex_codes.gui_array().copy()
            if not ss:
                continue
            s = np.concatenate(ss)
            o = np.concatenate(oo)
            l = np.concatenate(ll)
            raw.append((part.pid, s, o, l))
            used = np.zeros(len(guis), dtype=bool)
            used[s] = True
            used[o] = True
            gui_chunks.append(guis[used])
        self.vertices = (np.unique(np.concatenate(gui_chunks))
                         if gui_chunks else np.zeros(0, dtype=np.uint64))
        self.n = len(self.vertices)
        self.cells: list[_Cell] = []
        weight_maps = {}
        if weight_pred is not None:
            weight_maps = {pid: _weight_map(engine, pid, weight_pred, self.snap)
                           for pid, *_ in raw}
        for pid, s, o, l in sorted(raw):
            part = engine.store.get(RelTag.E, pid)
            tr = self._translate(part.vertex_codes.gui_array())
            src, dst = tr[s], tr[o]
            order = np.lexsort((l, dst, src))
            src, dst, l = src[order], dst[order], l[order]
            w = None
            if weight_pred is not None:
                wm_loc, wm_val = weight_maps[pid]
                pos = np.searchsorted(wm_loc, l)
                pos_c = np.minimum(pos, max(len(wm_loc) - 1, 0))
                w = np.full(len(l), self.default_weight, dtype=np.float64)
                if len(wm_loc):
                    hit = wm_loc[pos_c] == l
                    w[hit] = wm_val[pos_c[hit]]
            self.cells.append(_Cell(pid=pid, src=src, dst=dst, loc=l, weights=w))
        self._csr: dict[bool, tuple] = {}
        self._out_deg: np.ndarray | None = None

    def _translate(self, guis: np.ndarray) -> np.ndarray:
        tr = np.full(len(guis), -1, dtype=np.int64)
        if self.n and len(guis):
            pos = np.searchsorted(self.vertices, guis)
            pos_c = np.minimum(pos, self.n - 1)
            ok = self.vertices[pos_c] == guis
            tr[ok] = pos_c[ok]
        return tr

    def gid_of(self, gui: int) -> int:
        pos = int(np.searchsorted(self.vertices, np.uint64(gui)))
        if pos >= self.n or int(self.vertices[pos]) != int(gui):
            raise NotFoundError(f"vertex 0x{gui:x} is not in the edge topology")
        return pos

    @property
    def out_degree(self) -> np.ndarray:
        if self._out_deg is None:
            deg = np.zeros(self.n, dtype=np.int64)
            for cell in self.cells:
                deg += np.bincount(cell.src, minlength=self.n)
            self._out_deg = deg
        return self._out_deg

    def csr(self, weight_sorted: bool = False):
        """Global CSR (indptr, targets, weights, locs); adjacency order is
        (target, local) or, when weight_sorted, ascending (weight, target)."""
        cached = self._csr.get(weight_sorted)
        if cached is not None:
            return cached
        if not self.cells:
            empty = (np.zeros(self.n + 1, np.int64), np.zeros(0, np.int64),
                     None, np.zeros(0, np.int64))
            self._csr[weight_sorted] = empty
            return empty
        src = np.concatenate([c.src for c in self.cells])
        dst = np.concatenate([c.dst for c in self.cells])
        loc = np.concatenate([c.loc for c in self.cells])
        w = (np.concatenate([c.weights for c in self.cells])
             if self.weight_pred is not None else None)
        if weight_sorted:
            if w is None:
                raise ModelError("weight-sorted adjacency needs a weight predicate")
            order = np.lexsort((dst, w, src))
        else:
            order = np.lexsort((loc, dst, src))
        src, dst, loc = src[order], dst[order], loc[order]
        if w is not None:
            w = w[order]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=self.n), out=indptr[1:])
        out = (indptr, dst, w, loc)
        self._csr[weight_sorted] = out
        return out


def _weight_map(engine, pid: int, weight_pred: int, snap: Snapshot):
    """Edge local -> weight for one partition; smallest statement wins."""
    part = engine.store.get(RelTag.EP, pid)
    if part is None:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64)
    pcode = part.pred_codes.get_code(weight_pred)
    if pcode < 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64)
    locs, sids, vals = [], [], []
    with part.lock:
        for page in part.pages:
            n = page.count
            if not n:
                continue
            mask = (page.p[:n] == pcode) & ((page.ctrl[:n] & CTRL_SCHAIN) == 0)
            mask &= part.visible_mask(page, snap)
            idx = np.flatnonzero(mask)
            if not idx.size:
                continue
            f = page.f[idx]
            b = page.o[idx]
            for k in range(len(idx)):
                if not is_numeric(int(f[k])):
                    continue
                locs.append(int(page.s[idx[k]]))
                sids.append(int(page.i[idx[k]]))
                vals.append(float(decode_value(int(f[k]), int(b[k]))))
    if not locs:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float64)
    locs_a = np.array(locs, dtype=np.int64)
    sids_a = np.array(sids, dtype=np.int64)
    vals_a = np.array(vals, dtype=np.float64)
    order = np.lexsort((sids_a, locs_a))
    locs_a, vals_a = locs_a[order], vals_a[order]
    first = np.ones(len(locs_a), dtype=bool)
    first[1:] = locs_a[1:] != locs_a[:-1]
    return locs_a[first], vals_a[first]


@dataclass
class EphemeralCsr:
    """Partition-local static adjacency view pinned to one snapshot.

    offsets index by partition vertex code; neighbors hold vertex codes of
    the opposite side. CSR orients source to target, CSC the reverse. The
    sorted variant orders every adjacency by ascending (weight, neighbor).
    """

    pid: int
    orientation: str
    offsets: np.ndarray
    neighbors: np.ndarray
    weights: np.ndarray | None
    weight_sorted: bool
    vertex_guis: np.ndarray
    snapshot_ts: int


def build_csr(engine, snap: Snapshot | None = None, orientation: str = "CSR",
              with_weights: bool = False, weight_pred: int | None = None,
              weight_sorted: bool = False,
              default_weight: float = 1.0) -> list[EphemeralCsr]:
    """Per-partition static views of the visible edge topology."""
    if orientation not in ("CSR", "CSC"):
        raise ConfigError(f"orientation must be CSR or CSC, not {orientation!r}")
    if (with_weights or weight_sorted) and weight_pred is None:
        raise ConfigError("weights requested without a weight predicate")
    if snap is None:
        snap = engine.txns.read_snapshot()
    out = []
    for part in sorted(engine.store.existing(RelTag.E), key=lambda p: p.pid):
        ss, oo, ll = [], [], []
        with part.lock:
            for page in part.pages:
                mask = part.visible_mask(page, snap)
                idx = np.flatnonzero(mask)
                if not idx.size:
                    continue
                ss.append(page.s[idx].astype(np.int64))
                oo.append(page.o[idx].astype(np.int64))
                ll.append(page.i[idx].astype(np.int64))
            guis = part.vertex_codes.gui_array().copy()
        ncodes = len(guis)
        s = np.concatenate(ss) if ss else np.zeros(0, np.int64)
        o = np.concatenate(oo) if oo else np.zeros(0, np.int64)
        l = np.concatenate(ll) if ll else np.zeros(0, np.int64)
        if orientation == "CSC":
            s, o = o, s
        w = None
        if with_weights or weight_sorted:
            wm_loc, wm_val = _weight_map(engine, part.pid, weight_pred, snap)
            w = np.full(len(l), default_weight, dtype=np.float64)
            if len(wm_loc):
                pos = np.minimum(np.searchsorted(wm_loc, l), len(wm_loc) - 1)
                hit = wm_loc[pos] == l
                w[hit] = wm_val[pos[hit]]
        if weight_sorted:
            order = np.lexsort((o, w, s))
        else:
            order = np.lexsort((l, o, s))
        s, o, l = s[order], o[order], l[order]
        if w is not None:
            w = w[order]
        offsets = np.zeros(ncodes + 1, dtype=np.int64)
        if len(s):
            np.cumsum(np.bincount(s, minlength=ncodes), out=offsets[1:])
        out.append(EphemeralCsr(pid=part.pid, orientation=orientation,
                                offsets=offsets, neighbors=o, weights=w,
                                weight_sorted=weight_sorted, vertex_guis=guis,
                                snapshot_ts=snap.read_ts))
    return out


# -- frontiers and expansion ---------------------------------------------------------------


class Frontier:
    """A vertex set sharded by grid row; list and bitmap forms on demand."""

    def __init__(self, guis: np.ndarray, rows: int):
        self.guis = np.unique(np.asarray(guis, dtype=np.uint64))
        self.rows = rows
        self._shards: dict[int, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.guis)

    def shard(self, row: int) -> np.ndarray:
        if self._shards is None:
            key = (self.guis & np.uint64(self.rows - 1)).astype(np.int64)
            order = np.argsort(key, kind="stable")
            sorted_g = self.guis[order]
            sorted_k = key[order]
            self._shards = {}
            if len(sorted_g):
                bounds = np.flatnonzero(np.diff(sorted_k)) + 1
                chunks = np.split(sorted_g, bounds)
                for chunk in chunks:
                    self._shards[int(chunk[0]) & (self.rows - 1)] = chunk
        return self._shards.get(row, np.zeros(0, dtype=np.uint64))

    def code_mask(self, part: Partition) -> np.ndarray:
        """Bitmap over the partition's vertex codes (scan-driven form)."""
        bits = np.zeros(len(part.vertex_codes), dtype=bool)
        for g in self.shard(part.pid // (part.config.cols)).tolist():
            c = part.vertex_codes.get_code(int(g))
            if c >= 0:
                bits[c] = True
        return bits


@dataclass
class ModeChooser:
    """Per-partition scan/index decision with hysteresis."""

    forced: str | None = None  # 'index' | 'scan' | None for hybrid
    last: dict[int, str] = field(default_factory=dict)
    trace: list[tuple] = field(default_factory=list)

    def choose(self, pid: int, level: int, frontier_size: int,
               partition_vertices: int) -> str:
        if self.forced in ("index", "scan"):
            mode = self.forced
        else:
            ratio = frontier_size / max(partition_vertices, 1)
            if ratio > ALPHA_SCAN:
                mode = "scan"
            elif ratio < BETA_INDEX:
                mode = "index"
            else:
                mode = self.last.get(pid, "index")
        self.last[pid] = mode
        self.trace.append((level, pid, mode, frontier_size))
        return mode


def _expand_partition(part: Partition, frontier: Frontier, mode: str,
                      snap: Snapshot, translate: np.ndarray):
    """(src_gid, dst_gid) pairs for frontier edges in one topology partition."""
    from .relstore import CTRL_FREE, CTRL_VERSION, REF_SLOT_BITS, REF_SLOT_MASK
    from .txn import visible

    srcs: list[np.ndarray] = []
    dsts: list[np.ndarray] = []
    with part.lock:
        if mode == "index":
            shard = frontier.shard(part.pid // part.config.cols)
            for g in shard.tolist():
                hit = part.sindex.probe(int(g))
                if hit is None or not len(hit):
                    continue
                refs = hit.astype(np.int64)
                pages = refs >> REF_SLOT_BITS
                for page_idx in np.unique(pages).tolist():
                    page = part.pages[page_idx]
                    slots = (refs[pages == page_idx] & REF_SLOT_MASK)
                    ctrl = page.ctrl[slots]
                    ok = (ctrl & CTRL_FREE) == 0
                    if page.version_total:
                        for j in np.flatnonzero(ctrl & CTRL_VERSION).tolist():
                            val = part.versions.get(part.ref(page_idx, int(slots[j])))
                            if val is not None and not visible(val, snap):
                                ok[j] = False
                    slots = slots[ok]
                    if not slots.size:
                        continue
                    d = translate[page.o[slots].astype(np.int64)]
                    s_gid = translate[page.s[slots].astype(np.int64)]
                    srcs.append(s_gid)
                    dsts.append(d)
        else:
            bits = frontier.code_mask(part)
            if not bits.any():
                return (np.zeros(0, np.int64),) * 2
            for page in part.pages:
                n = page.count
                if not n:
                    continue
                s = page.s[:n].astype(np.int64)
                mask = s < len(bits)  # free slots hold the free-list mark
                mask[mask] = bits[s[mask]]
                if not mask.any():
                    continue
                mask &= part.visible_mask(page, snap)
                idx = np.flatnonzero(mask)
                if not idx.size:
                    continue
                srcs.append(translate[page.s[idx].astype(np.int64)])
                dsts.append(translate[page.o[idx].astype(np.int64)])
    if not srcs:
        return (np.zeros(0, np.int64),) * 2
    return np.concatenate(srcs), np.concatenate(dsts)


def one_hop_expansion(engine, ctx: AlgoContext, frontier: Frontier,
                      chooser: ModeChooser, level: int,
                      strategy: str = "sequential",
                      threads: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Expand one level; returns concatenated (src_gid, dst_gid) pairs.

    Partition results always concatenate in partition order, so neither
    the strategy nor the thread count affects the output.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    parts = engine.store.existing(RelTag.E)
    tasks = []
    for part in parts:
        row = part.pid // part.config.cols
        shard = frontier.shard(row)
        if not len(shard):
            continue
        mode = chooser.choose(part.pid, level, len(shard),
                              max(len(part.vertex_codes), 1))
        tasks.append((part, mode))
    translates = {part.pid: ctx._translate(part.vertex_codes.gui_array())
                  for part, _ in tasks}

    def work(task):
        part, mode = task
        return part.pid, _expand_partition(part, frontier, mode, ctx.snap,
                                           translates[part.pid])

    if strategy == "sequential" or len(tasks) <= 1:
        results = dict(work(t) for t in tasks)
    elif strategy == "parallel2D":
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(work, tasks))
    else:  # parallel1D: one worker per grid row, columns in order
        cols = engine.store.config.cols
        rows: dict[int, list] = {}
        for t in tasks:
            rows.setdefault(t[0].pid // cols, []).append(t)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = pool.map(lambda ts: [work(t) for t in ts],
                              [rows[r] for r in sorted(rows)])
            results = dict(kv for chunk in chunks for kv in chunk)
    srcs = [results[pid][0] for pid in sorted(results)]
    dsts = [results[pid][1] for pid in sorted(results)]
    if not srcs:
        return (np.zeros(0, np.int64),) * 2
    return np.concatenate(srcs), np.concatenate(dsts)


@dataclass
class GraphKernel:
    """Level-synchronous traversal callbacks.

    visit selects what each step receives: 'targetOnly' passes discovered
    target ids, 'sourceTarget' passes (source, target) pairs, and
    'sourceTargetWeight' additionally joins each edge with its co-located
    weight property.
    """

    init: callable
    step: callable
    stop: callable
    visit: str = "sourceTarget"


def iterative_algorithm(engine, seeds: np.ndarray, kernel: GraphKernel,
                        strategy: str = "sequential",
                        mode: str | None = None,
                        ctx: AlgoContext | None = None, threads: int = 4):
    """Level-synchronous kernel loop over the live partitions.

    Each level expands the frontier (per-partition mode choice under
    Hybrid), hands the visit arrays to kernel.step, and turns the step's
    returned vertex ids into the next frontier. Returns (state, trace).
    """
    if kernel.visit not in ("targetOnly", "sourceTarget", "sourceTargetWeight"):
        raise ConfigError(f"unknown visit kind {kernel.visit!r}")
    if ctx is None:
        ctx = AlgoContext(engine)
    state = kernel.init(ctx)
    chooser = ModeChooser(forced=mode)
    frontier = Frontier(np.asarray(seeds, dtype=np.uint64),
                        engine.store.config.rows)
    level = 0
    weight_lut = None
    if kernel.visit == "sourceTargetWeight":
        if ctx.weight_pred is None:
            raise ConfigError("sourceTargetWeight needs a weight predicate")
        weight_lut = _edge_weight_lut(ctx)
    while len(frontier) and not kernel.stop(state, level):
        src, dst = one_hop_expansion(engine, ctx, frontier, chooser, level,
                                     strategy, threads)
        if kernel.visit == "targetOnly":
            out = kernel.step(state, level, dst)
        elif kernel.visit == "sourceTarget":
            out = kernel.step(state, level, src, dst)
        else:
            out = kernel.step(state, level, src, dst, weight_lut(src, dst))
        if out is None or not len(out):
            break
        frontier = Frontier(ctx.vertices[np.unique(out)],
                            engine.store.config.rows)
        level += 1
    return state, chooser.trace


def _edge_weight_lut(ctx: AlgoContext):
    indptr, dst, w, _ = ctx.csr()
    if w is None:
        raise ConfigError("context built without weights")

    def lookup(src: np.ndarray, tgt: np.ndarray) -> np.ndarray:
        out = np.ones(len(src), dtype=np.float64)
        for k in range(len(src)):
            lo, hi = indptr[src[k]], indptr[src[k] + 1]
            hits = np.flatnonzero(dst[lo:hi] == tgt[k])
            if hits.size:
                out[k] = w[lo + hits[0]]
        return out

    return lookup


# -- iterative driver ------------------------------------------------------------------------


STRATEGIES = ("sequential", "parallel1D", "parallel2D")


def static_rounds(ctx: AlgoContext, map_fn, reduce_fn, state,
                  stop, strategy: str = "sequential",
                  threads: int = 4):
    """Static-view iteration: map per partition, reduce in fixed order.

    map_fn(cell, state) -> partial; reduce_fn(state, partials_in_pid_order)
    -> (state, done). Strategies change only how map work is scheduled, so
    every strategy produces bitwise-identical states.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}")
    cols = ctx.engine.store.config.cols
    iteration = 0
    while not stop(state, iteration):
        if strategy == "sequential" or len(ctx.cells) <= 1:
            partials = [map_fn(cell, state) for cell in ctx.cells]
        elif strategy == "parallel2D":
            with ThreadPoolExecutor(max_workers=threads) as pool:
                partials = list(pool.map(lambda c: map_fn(c, state), ctx.cells))
        else:  # parallel1D: one task per grid row, cells in column order
            rows: dict[int, list] = {}
            for k, cell in enumerate(ctx.cells):
                rows.setdefault(cell.pid // cols, []).append(k)
            order = sorted(rows)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                chunks = list(pool.map(
                    lambda r: [(k, map_fn(ctx.cells[k], state)) for k in rows[r]],
                    order))
            flat = dict(kv for chunk in chunks for kv in chunk)
            partials = [flat[k] for k in range(len(ctx.cells))]
        state, done = reduce_fn(state, partials)
        iteration += 1
        if done:
            break
    return state


# -- algorithms -------------------------------------------------------------------------------


@dataclass
class BfsResult:
    source: int
    vertices: np.ndarray
    levels: np.ndarray              # INF_LEVEL where unreachable
    parents: np.ndarray | None      # NULL_GUI where none
    trace: list[tuple] = field(default_factory=list)


def bfs(engine, source: int, ctx: AlgoContext | None = None,
        track_parents: bool = True, mode: str | None = None,
        threads: int = 1) -> BfsResult:
    """Level-synchronous BFS with per-partition scan/probe selection."""
    if ctx is None:
        ctx = AlgoContext(engine)
    sgid = ctx.gid_of(source)  # raises NotFoundError for unknown sources
    levels = np.full(ctx.n, INF_LEVEL, dtype=np.int64)
    parents = (np.full(ctx.n, NULL_GUI, dtype=np.uint64)
               if track_parents else None)
    levels[sgid] = 0
    chooser = ModeChooser(forced=mode)
    strategy = "parallel2D" if threads > 1 else "sequential"
    frontier = Frontier(ctx.vertices[sgid:sgid + 1], engine.store.config.rows)
    level = 0
    while len(frontier):
        src, dst = one_hop_expansion(engine, ctx, frontier, chooser, level,
                                     strategy, threads)
        if not len(dst):
            break
        new_mask = levels[dst] == INF_LEVEL
        src, dst = src[new_mask], dst[new_mask]
        if not len(dst):
            break
        # deterministic parents: smallest source vertex id wins
        order = np.lexsort((ctx.vertices[src], dst))
        src, dst = src[order], dst[order]
        first = np.ones(len(dst), dtype=bool)
        first[1:] = dst[1:] != dst[:-1]
        src, dst = src[first], dst[first]
        levels[dst] = level + 1
        if parents is not None:
            parents[dst] = ctx.vertices[src]
        frontier = Frontier(ctx.vertices[dst], engine.store.config.rows)
        level += 1
    return BfsResult(source=source, vertices=ctx.vertices, levels=levels,
                     parents=parents, trace=chooser.trace)


def sssp(engine, source: int, weight_pred: int,
         ctx: AlgoContext | None = None, strategy: str = "sequential",
         threads: int = 4) -> np.ndarray:
    """Single-source shortest paths by rounds of relaxation over all edges."""
    if ctx is None:
        ctx = AlgoContext(engine, weight_pred=weight_pred)
    for cell in ctx.cells:
        if cell.weights is not None and len(cell.weights) and cell.weights.min() < 0:
            raise ModelError("negative edge weights are not supported")
    sgid = ctx.gid_of(source)
    dist = np.full(ctx.n, np.inf, dtype=np.float64)
    dist[sgid] = 0.0

    def map_fn(cell, d):
        cand = d[cell.src] + (cell.weights if cell.weights is not None else 1.0)
        return cell.dst, cand

    def reduce_fn(d, partials):
        nd = d.copy()
        for dst, cand in partials:
            np.minimum.at(nd, dst, cand)
        done = bool(np.all(nd == d))
        return nd, done

    return static_rounds(ctx, map_fn, reduce_fn, dist,
                               stop=lambda d, i: i >= ctx.n,
                               strategy=strategy, threads=threads)


def wcc(engine, ctx: AlgoContext | None = None, strategy: str = "sequential",
        threads: int = 4) -> np.ndarray:
    """Weakly connected components; labels are the minimum member vertex."""
    if ctx is None:
        ctx = AlgoContext(engine)
    labels = ctx.vertices.copy()

    def map_fn(cell, lab):
        return cell.src, cell.dst, lab[cell.src], lab[cell.dst]

    def reduce_fn(lab, partials):
        nl = lab.copy()
        for src, dst, ls, ld in partials:
            np.minimum.at(nl, dst, ls)
            np.minimum.at(nl, src, ld)
        done = bool(np.all(nl == lab))
        return nl, done

    return static_rounds(ctx, map_fn, reduce_fn, labels,
                               stop=lambda lab, i: i > ctx.n,
                               strategy=strategy, threads=threads)


def pagerank(engine, ctx: AlgoContext | None = None, damping: float = 0.85,
             iterations: int = 20, tol: float = 1e-10,
             strategy: str = "sequential", threads: int = 4) -> np.ndarray:
    """PageRank with uniform teleport; scores renormalize every iteration."""
    if ctx is None:
        ctx = AlgoContext(engine)
    n = ctx.n
    if n == 0:
        return np.zeros(0, dtype=np.float64)
    deg = np.maximum(ctx.out_degree, 1)
    scores = np.full(n, 1.0 / n, dtype=np.float64)

    def map_fn(cell, sc):
        share = sc[cell.src] / deg[cell.src]
        partial = np.zeros(n, dtype=np.float64)
        np.add.at(partial, cell.dst, share)
        return partial

    def reduce_fn(sc, partials):
        acc = np.zeros(n, dtype=np.float64)
        for p in partials:  # fixed partition order
            acc += p
        new = (1.0 - damping) / n + damping * acc
        new /= new.sum()
        done = bool(np.abs(new - sc).sum() < tol)
        return new, done

    out = static_rounds(ctx, map_fn, reduce_fn, scores,
                              stop=lambda sc, i: i >= iterations,
                              strategy=strategy, threads=threads)
    total = float(out.sum())
    if abs(total - 1.0) > 1e-9:
        raise ModelError(f"pagerank mass drifted to {total!r}")
    return out


@dataclass
class ClosenessResult:
    sources: np.ndarray     # dense vertex ids
    reached: np.ndarray
    total_dist: np.ndarray
    closeness: np.ndarray


def closeness_approx(engine, ctx: AlgoContext | None = None,
                     n_prime: int | None = None,
                     c_batch: int = DEFAULT_CLOSENESS_BATCH,
                     seed: int = 0) -> ClosenessResult:
    """Multi-source BFS closeness; one bit per in-batch source.

    n_prime sources (all vertices when n_prime equals the vertex count)
    run in batches of c_batch; each batch propagates a bit matrix one
    level at a time. closeness = (reached - 1) / sum of distances.
    """
    if c_batch < 1:
        raise ConfigError("closeness batch size must be at least 1")
    if ctx is None:
        ctx = AlgoContext(engine)
    n = ctx.n
    if n_prime is None:
        n_prime = n
    if not 0 < n_prime <= n:
        raise ConfigError("n_prime must be in [1, vertex count]")
    if n_prime == n:
        sources = np.arange(n, dtype=np.int64)
    else:
        rng = np.random.default_rng(seed)
        sources = np.sort(rng.choice(n, size=n_prime, replace=False)).astype(np.int64)
    c_batch = min(c_batch, DEFAULT_CLOSENESS_BATCH)
    if n * ((c_batch + 63) // 64) * 8 > (1 << 28):
        c_batch = min(c_batch, 32)  # keep the bit matrices under ~256 MiB
    reached = np.zeros(n_prime, dtype=np.int64)
    total = np.zeros(n_prime, dtype=np.int64)
    indptr, targets, _, _ = ctx.csr()
    for start in range(0, n_prime, c_batch):
        batch = sources[start:start + c_batch]
        b = len(batch)
        words = (b + 63) // 64
        seen = np.zeros((n, words), dtype=np.uint64)
        cur = np.zeros((n, words), dtype=np.uint64)
        bit_word = np.arange(b) // 64
        bit_mask = np.uint64(1) << (np.arange(b, dtype=np.uint64) % np.uint64(64))
        cur[batch, bit_word] |= bit_mask
        seen |= cur
        level = 0
        while cur.any():
            level += 1
            nxt = np.zeros_like(seen)
            active = np.flatnonzero(cur.any(axis=1))
            for v in active.tolist():
                lo, hi = indptr[v], indptr[v + 1]
                if hi > lo:
                    np.bitwise_or.at(nxt, targets[lo:hi], cur[v])
            nxt &= ~seen
            seen |= nxt
            if not nxt.any():
                break
            counts = _column_popcount(nxt, b)
            reached[start:start + b] += counts
            total[start:start + b] += counts * level
            cur = nxt
    closeness = np.zeros(n_prime, dtype=np.float64)
    nz = total > 0
    closeness[nz] = reached[nz] / total[nz]
    return ClosenessResult(sources=sources, reached=reached + 1,
                           total_dist=total, closeness=closeness)


def _column_popcount(bits: np.ndarray, b: int) -> np.ndarray:
    """Per-source counts: how many rows have each bit set."""
    bytes_view = bits.view(np.uint8).reshape(bits.shape[0], -1)
    expanded = np.unpackbits(bytes_view, axis=1, bitorder="little")
    return expanded.sum(axis=0, dtype=np.int64)[:b]


@dataclass
class EgonetResult:
    seed: int
    vertices: np.ndarray            # vertex GUIs, sorted
    edge_src: np.ndarray            # selected edges, sorted by (src, dst, w)
    edge_dst: np.ndarray
    edge_weight: np.ndarray

    def edge_list(self) -> list[tuple[int, int, float]]:
        return list(zip(self.edge_src.tolist(), self.edge_dst.tolist(),
                        self.edge_weight.tolist()))


EGONET_VARIANTS = ("base", "csr", "sortedCsr")


def egonet(engine, seed: int, weight_pred: int, k: int = DEFAULT_EGONET_K,
           hops: int = DEFAULT_EGONET_HOPS, direction: str = "max",
           variant: str = "csr", ctx: AlgoContext | None = None) -> EgonetResult:
    """k-best-neighbor expansion around one seed.

    Each expanded vertex contributes its k incident out-edges with extreme
    weights (largest for direction 'max', smallest for 'min'); ties prefer
    the rule (weight, target id) so every variant selects identically.
    """
    if variant not in EGONET_VARIANTS:
        raise ConfigError(f"unknown egonet variant {variant!r}")
    if direction not in ("max", "min"):
        raise ConfigError("direction must be 'max' or 'min'")
    if k < 1 or hops < 1:
        raise ConfigError("k and hops must be positive")
    if ctx is None:
        ctx = AlgoContext(engine, weight_pred=weight_pred)
    if ctx.weight_pred is None:
        raise ConfigError("egonet needs a weight-aware context")
    sgid = ctx.gid_of(seed)
    select = _egonet_selector(engine, ctx, variant)
    visited = np.zeros(ctx.n, dtype=bool)
    visited[sgid] = True
    frontier = np.array([sgid], dtype=np.int64)
    e_src: list[np.ndarray] = []
    e_dst: list[np.ndarray] = []
    e_w: list[np.ndarray] = []
    for _ in range(hops):
        srcs, dsts, ws = select(frontier, k, direction)
        if not len(srcs):
            break
        e_src.append(srcs)
        e_dst.append(dsts)
        e_w.append(ws)
        cand = np.unique(dsts)
        frontier = cand[~visited[cand]]
        visited[frontier] = True
        if not len(frontier):
            break
    verts = ctx.vertices[np.flatnonzero(visited)]
    if e_src:
        src_g = ctx.vertices[np.concatenate(e_src)]
        dst_g = ctx.vertices[np.concatenate(e_dst)]
        w_all = np.concatenate(e_w)
        order = np.lexsort((w_all, dst_g, src_g))
        src_g, dst_g, w_all = src_g[order], dst_g[order], w_all[order]
    else:
        src_g = np.empty(0, dtype=np.uint64)
        dst_g = np.empty(0, dtype=np.uint64)
        w_all = np.empty(0, dtype=np.float64)
    return EgonetResult(seed=seed, vertices=verts, edge_src=src_g,
                        edge_dst=dst_g, edge_weight=w_all)


def _ragged_take(starts: np.ndarray, counts: np.ndarray):
    """Flat indices of counts[j] consecutive slots from starts[j], per row j."""
    total = int(counts.sum())
    reps = np.repeat(np.arange(len(counts)), counts)
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return starts[reps] + offs, reps


def _egonet_selector(engine, ctx: AlgoContext, variant: str):
    """Return a frontier-batch top-k closure yielding (src, dst, w) arrays.

    All variants select the same edge set per vertex: the k smallest or
    largest neighbors under the (weight, dense target id) order.
    """
    empty = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
             np.empty(0, dtype=np.float64))

    if variant == "sortedCsr":
        # adjacency is pre-sorted by (weight, dst): top-k is a slice
        indptr, dst, w, _ = ctx.csr(weight_sorted=True)

        def select(frontier, k, direction):
            lo = indptr[frontier]
            deg = indptr[frontier + 1] - lo
            take = np.minimum(deg, k)
            if not take.any():
                return empty
            starts = lo if direction == "min" else lo + deg - take
            idx, reps = _ragged_take(starts, take)
            return frontier[reps], dst[idx], w[idx]

        return select

    if variant == "csr":
        # unsorted adjacency: rank the frontier's full neighborhood at
        # query time with one segmented sort, then slice per segment
        indptr, dst, w, _ = ctx.csr()

        def select(frontier, k, direction):
            lo = indptr[frontier]
            deg = indptr[frontier + 1] - lo
            if not deg.any():
                return empty
            idx, reps = _ragged_take(lo, deg)
            dd, ww = dst[idx], w[idx]
            order = np.lexsort((dd, ww, reps))
            dd, ww = dd[order], ww[order]
            take = np.minimum(deg, k)
            seg = np.cumsum(deg) - deg
            starts = seg if direction == "min" else seg + deg - take
            idx2, reps2 = _ragged_take(starts, take)
            return frontier[reps2], dd[idx2], ww[idx2]

        return select

    # base: probe the live adjacency index per vertex
    from .relstore import REF_SLOT_BITS, REF_SLOT_MASK

    snap = ctx.snap
    weight_maps = {}

    def one(v, k, direction):
        gui = int(ctx.vertices[v])
        pairs: list[tuple[float, int, int]] = []
        for part in engine.store.existing(RelTag.E):
            if (gui & (part.config.rows - 1)) != part.pid // part.config.cols:
                continue
            wm = weight_maps.get(part.pid)
            if wm is None:
                wm = _weight_map(engine, part.pid, ctx.weight_pred, snap)
                weight_maps[part.pid] = wm
            wm_loc, wm_val = wm
            with part.lock:
                hit = part.sindex.probe(gui)
                if hit is None:
                    continue
                tr = ctx._translate(part.vertex_codes.gui_array())
                for ref in hit.tolist():
                    if not part.slot_visible(int(ref), snap):
                        continue
                    page = part.pages[ref >> REF_SLOT_BITS]
                    slot = ref & REF_SLOT_MASK
                    loc = int(page.i[slot])
                    pos = int(np.searchsorted(wm_loc, loc))
                    wgt = (float(wm_val[pos])
                           if pos < len(wm_loc) and wm_loc[pos] == loc else 1.0)
                    pairs.append((wgt, int(tr[int(page.s[slot])]), int(tr[int(page.o[slot])])))
        pairs.sort()
        take = min(k, len(pairs))
        return pairs[:take] if direction == "min" else pairs[::-1][:take]

    def select(frontier, k, direction):
        srcs: list[int] = []
        picks: list[tuple[float, int, int]] = []
        for v in frontier.tolist():
            got = one(v, k, direction)
            srcs.extend([v] * len(got))
            picks.extend(got)
        if not picks:
            return empty
        return (np.array(srcs, dtype=np.int64),
                np.array([d for _, _, d in picks], dtype=np.int64),
                np.array([w for w, _, _ in picks], dtype=np.float64))

    return select
