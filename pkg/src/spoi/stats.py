"""Statistics: characteristic sets, distinct sketches, costing, join ordering.

The catalog groups subjects by their characteristic set: the sorted set of
(predicate, member kind) pairs a subject carries, where the kind separates
vertex properties from outgoing edge labels. Each set keeps its subject
count and, per member, occurrence statistics and a HyperLogLog sketch of
the distinct objects. Star estimates sum over every characteristic set
that contains all requested members, multiplying average member
frequencies; min and max frequencies bound the estimate.

The catalog serializes to a single JSON document (`stats.json` inside the
data directory): relation tuple counts plus one record per characteristic
set with its signature, subject count and per-member count/min/max and
base64 HyperLogLog registers.
"""

from __future__ import annotations

import base64
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ModelError
from .gid import RelTag
from .hashing import splitmix64_array
from .relstore import KIND_TOPO
from .values import is_composite

log = logging.getLogger(__name__)

PROP_MEMBER = "prop"
EDGE_MEMBER = "edge"

STATS_FILE = "stats.json"


# -- HyperLogLog -------------------------------------------------------------------------


def _bit_length_u64(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    n = np.zeros(x.shape, dtype=np.uint8)
    for shift in (32, 16, 8, 4, 2, 1):
        big = x >= np.uint64(1 << shift)
        n[big] += shift
        x[big] >>= np.uint64(shift)
    n += x.astype(np.uint8)
    return n


class Hll:
    """Fixed-register HyperLogLog over 64-bit hashes."""

    def __init__(self, b: int = 12, registers: np.ndarray | None = None):
        if not 4 <= b <= 18:
            raise ConfigError("HLL precision must be in [4, 18]")
        self.b = b
        self.m = 1 << b
        self.regs = (registers if registers is not None
                     else np.zeros(self.m, dtype=np.uint8))

    def add_hashes(self, hashes: np.ndarray) -> None:
        h = np.asarray(hashes, dtype=np.uint64)
        if h.size == 0:
            return
        j = (h >> np.uint64(64 - self.b)).astype(np.int64)
        w = h & np.uint64((1 << (64 - self.b)) - 1)
        rank = (64 - self.b + 1 - _bit_length_u64(w)).astype(np.uint8)
        np.maximum.at(self.regs, j, rank)

    def add_ints(self, values: np.ndarray) -> None:
        self.add_hashes(splitmix64_array(np.asarray(values, dtype=np.uint64)))

    def merge(self, other: "Hll") -> None:
        if other.b != self.b:
            raise ModelError("cannot merge sketches of different precision")
        np.maximum(self.regs, other.regs, out=self.regs)

    def count(self) -> float:
        m = float(self.m)
        alpha = 0.7213 / (1 + 1.079 / m)
        est = alpha * m * m / float(np.sum(np.ldexp(1.0, -self.regs.astype(np.int64))))
        if est <= 2.5 * m:
            zeros = int(np.count_nonzero(self.regs == 0))
            if zeros:
                return m * math.log(m / zeros)
        return est

    def to_b64(self) -> str:
        return base64.b64encode(self.regs.tobytes()).decode("ascii")

    @classmethod
    def from_b64(cls, b: int, data: str) -> "Hll":
        regs = np.frombuffer(base64.b64decode(data), dtype=np.uint8).copy()
        return cls(b, regs)


# -- characteristic sets -----------------------------------------------------------------


@dataclass
class MemberStats:
    count: int = 0
    min_freq: int = 0
    max_freq: int = 0
    sketch: Hll = field(default_factory=Hll)

    def avg(self, node_count: int) -> float:
        return self.count / node_count if node_count else 0.0


@dataclass
class CharSet:
    signature: tuple[tuple[int, str], ...]
    node_count: int = 0
    members: dict[tuple[int, str], MemberStats] = field(default_factory=dict)


@dataclass
class StarEstimate:
    subjects: float
    rows: float
    low: float
    high: float


class Catalog:
    def __init__(self, hll_b: int = 12):
        self.hll_b = hll_b
        self.charsets: dict[tuple, CharSet] = {}
        self.relation_counts: dict[str, int] = {}

    # -- construction -------------------------------------------------------------

    @classmethod
    def build(cls, engine, snap=None, hll_b: int = 12) -> "Catalog":
        """One pass over vertex properties and edges, grouped by subject."""
        cat = cls(hll_b)
        if snap is None:
            snap = engine.txns.read_snapshot()
        per_subject: dict[int, dict[tuple[int, str], list[int]]] = {}

        def feed(rel: RelTag, kind: str):
            for part in engine.store.existing(rel):
                with part.lock:
                    for s, p, f, b, _ in part.iter_visible(snap):
                        if part.kind == KIND_TOPO:
                            objs = b
                        else:
                            # distinct values: hash flag and bits together
                            objs = b ^ splitmix64_array(
                                f.astype(np.uint64) + np.uint64(0xF1A5))
                        for k in range(len(s)):
                            subj = per_subject.setdefault(int(s[k]), {})
                            member = (int(p[k]), kind)
                            subj.setdefault(member, []).append(int(objs[k]))

        feed(RelTag.VP, PROP_MEMBER)
        feed(RelTag.E, EDGE_MEMBER)
        for rel in (RelTag.E, RelTag.VP, RelTag.EP):
            cat.relation_counts[rel.name] = engine.store.tuple_count(rel)

        for subj, members in per_subject.items():
            sig = tuple(sorted(members))
            cs = cat.charsets.get(sig)
            if cs is None:
                cs = CharSet(signature=sig)
                cat.charsets[sig] = cs
            cs.node_count += 1
            for member, objs in members.items():
                ms = cs.members.get(member)
                if ms is None:
                    ms = MemberStats(sketch=Hll(cat.hll_b))
                    cs.members[member] = ms
                n = len(objs)
                ms.count += n
                ms.min_freq = n if ms.min_freq == 0 else min(ms.min_freq, n)
                ms.max_freq = max(ms.max_freq, n)
                ms.sketch.add_ints(np.array(objs, dtype=np.uint64))
        return cat

    # -- estimation ---------------------------------------------------------------

    def estimate_star(self, members: list[tuple[int, str]]) -> StarEstimate:
        """Cardinality of a star of required members over one shared subject."""
        want = set(members)
        if not self.charsets:
            return self._fallback(members)
        subjects = rows = low = high = 0.0
        for cs in self.charsets.values():
            if not want <= set(cs.signature):
                continue
            subjects += cs.node_count
            r = lo = hi = float(cs.node_count)
            for m in members:
                ms = cs.members[m]
                r *= ms.avg(cs.node_count)
                lo *= ms.min_freq
                hi *= ms.max_freq
            rows += r
            low += lo
            high += hi
        return StarEstimate(subjects=subjects, rows=rows, low=low, high=high)

    def _fallback(self, members) -> StarEstimate:
        # no catalog yet: bound by the smaller relation, with zero lower bound
        sizes = []
        for _, kind in members:
            name = RelTag.E.name if kind == EDGE_MEMBER else RelTag.VP.name
            sizes.append(float(self.relation_counts.get(name, 0)))
        top = min(sizes) if sizes else 0.0
        return StarEstimate(subjects=top, rows=top, low=0.0, high=math.inf)

    def distinct_objects(self, member: tuple[int, str]) -> float:
        sk = Hll(self.hll_b)
        for cs in self.charsets.values():
            ms = cs.members.get(member)
            if ms is not None:
                sk.merge(ms.sketch)
        return sk.count()

    # -- serialization --------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "hll_b": self.hll_b,
            "relation_counts": self.relation_counts,
            "charsets": [
                {
                    "signature": [[p, k] for p, k in cs.signature],
                    "node_count": cs.node_count,
                    "members": {
                        f"{p}:{k}": {
                            "count": ms.count,
                            "min": ms.min_freq,
                            "max": ms.max_freq,
                            "hll": ms.sketch.to_b64(),
                        }
                        for (p, k), ms in sorted(cs.members.items())
                    },
                }
                for _, cs in sorted(self.charsets.items())
            ],
        }

    def save(self, directory: str) -> str:
        path = os.path.join(directory, STATS_FILE)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)
        os.replace(tmp, path)
        return path

    @classmethod
    def from_json(cls, obj: dict) -> "Catalog":
        cat = cls(obj["hll_b"])
        cat.relation_counts = dict(obj.get("relation_counts", {}))
        for rec in obj["charsets"]:
            sig = tuple((int(p), str(k)) for p, k in rec["signature"])
            cs = CharSet(signature=sig, node_count=rec["node_count"])
            for key, m in rec["members"].items():
                p, k = key.rsplit(":", 1)
                cs.members[(int(p), k)] = MemberStats(
                    count=m["count"], min_freq=m["min"], max_freq=m["max"],
                    sketch=Hll.from_b64(cat.hll_b, m["hll"]))
            cat.charsets[sig] = cs
        return cat

    @classmethod
    def load(cls, directory: str) -> "Catalog":
        with open(os.path.join(directory, STATS_FILE), encoding="utf-8") as f:
            return cls.from_json(json.load(f))


# -- sampling ------------------------------------------------------------------------------


def sample_cardinality(store, rel: RelTag, side: str, values: np.ndarray,
                       budget: int = 64) -> float:
    """Estimated matches for bound values, by probing a uniform sample.

    With budget at or above the population the result is exact. Unbound
    sampling (values is None) walks pages round-robin across partitions and
    extrapolates live counts.
    """
    if values is None:
        return _sample_pages(store, rel, budget)
    vals = np.unique(np.asarray(values, dtype=np.uint64))
    if len(vals) == 0:
        return 0.0
    if len(vals) > budget:
        step = len(vals) / budget
        pick = vals[(np.arange(budget) * step).astype(np.int64)]
    else:
        pick = vals
    total = 0
    for g in pick.tolist():
        for part in _probe_parts(store, rel, side, int(g)):
            if part is None:
                continue
            index = part.sindex if side == "s" else part.oindex
            lst = index.list_for(int(g))
            if lst is not None:
                total += lst.live_count()
    return total * (len(vals) / len(pick))


def _probe_parts(store, rel: RelTag, side: str, g: int) -> list:
    from .gid import TOPOLOGY_RELATIONS

    cfg = store.config
    if rel in TOPOLOGY_RELATIONS:
        if side == "s":
            row = g & (cfg.rows - 1)
            return [store.get(rel, row * cfg.cols + c) for c in range(cfg.cols)]
        col = g & (cfg.cols - 1)
        return [store.get(rel, r * cfg.cols + col) for r in range(cfg.rows)]
    if side == "s":
        pid = store.route(rel, g)
        if pid >= cfg.npartitions(rel):
            return []
        return [store.get(rel, pid)]
    return store.existing(rel)


def _sample_pages(store, rel: RelTag, budget: int) -> float:
    from .relstore import CTRL_FREE

    pages = [(part, page) for part in store.existing(rel) for page in part.pages]
    if not pages:
        return 0.0
    if len(pages) <= budget:
        pick = pages
    else:
        # round-robin: evenly strided so every partition contributes
        idx = (np.arange(budget) * (len(pages) / budget)).astype(np.int64)
        pick = [pages[int(i)] for i in idx]
    live = 0
    cap = 0
    for part, page in pick:
        with part.lock:
            n = page.count
            live += int(np.count_nonzero((page.ctrl[:n] & CTRL_FREE) == 0))
            cap += n
    total_rows = sum(p.count for _, p in pages)
    return live / max(cap, 1) * total_rows


# -- cost model ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CostParams:
    index_lookup_cost: float = 4.0
    per_partition_log_factor: float = 0.25
    adj_scan_cost_per_entry: float = 1.0
    relation_scan_cost_per_tuple: float = 0.05
    projection_cost_per_cell: float = 0.02


def plan_cost(plan, store, params: CostParams = CostParams()) -> float:
    """Abstract cost of an access plan under the calibrated constants."""
    cfg = store.config
    ncols = max(len(plan.expr.projected_paths()), 1)
    total = 0.0
    for part in plan.parts:
        if part.method == "index":
            fan = 1
            if part.rel in {RelTag.E, RelTag.LME, RelTag.ME, RelTag.RME}:
                fan = cfg.cols if part.index_side == "s" else cfg.rows
            probes = max(part.est_rows, 1.0)
            total += (probes * params.index_lookup_cost
                      * (1 + params.per_partition_log_factor * math.log2(max(fan, 1)))
                      + part.est_rows * params.adj_scan_cost_per_entry)
        else:
            total += part.part_tuples * params.relation_scan_cost_per_tuple
        total += part.est_rows * ncols * params.projection_cost_per_cell
    if plan.right is not None:
        total += plan_cost(plan.right, store, params)
    return total


# -- join ordering -------------------------------------------------------------------------


@dataclass(frozen=True)
class JoinPattern:
    """One access pattern inside a join graph, for ordering decisions."""

    name: str
    variables: frozenset[str]
    rows: float
    distinct: dict[str, float] = field(default_factory=dict)

    def distinct_of(self, var: str) -> float:
        return max(self.distinct.get(var, self.rows), 1.0)


@dataclass
class JoinOrder:
    order: tuple[str, ...]
    cost: float
    cross_products: bool


def subset_rows(patterns: list[JoinPattern], mask: int) -> float:
    """Estimated result size of joining one subset of patterns.

    Independent of join order: per shared variable, every occurrence but the
    one with the largest distinct count contributes a 1/distinct factor.
    """
    rows = 1.0
    per_var: dict[str, list[float]] = {}
    for k, p in enumerate(patterns):
        if not mask & (1 << k):
            continue
        rows *= p.rows
        for v in p.variables:
            per_var.setdefault(v, []).append(p.distinct_of(v))
    for ds in per_var.values():
        if len(ds) > 1:
            ds.sort()
            for d in ds[:-1]:
                rows /= max(d, 1.0)
    return rows


def _connected_to(patterns, mask: int, k: int) -> bool:
    vars_in = set()
    for j, p in enumerate(patterns):
        if mask & (1 << j):
            vars_in |= p.variables
    return bool(vars_in & patterns[k].variables)


def legal_extensions(patterns, mask: int) -> tuple[list[int], bool]:
    """Patterns that may join next: connected ones, or all when none connect."""
    ext = [k for k in range(len(patterns)) if not mask & (1 << k)]
    connected = [k for k in ext if _connected_to(patterns, mask, k)]
    if connected:
        return connected, False
    return ext, True


def order_patterns(patterns: list[JoinPattern]) -> JoinOrder:
    """Left-deep minimum-cost join order.

    The cost of an order is the sum of the sizes of every join prefix of two
    or more patterns (intermediate result sizes). Cross products are taken
    only when no remaining pattern connects to the prefix, and the result is
    flagged when that happens. Ties break toward the lexicographically
    smaller name sequence so the result is deterministic.
    """
    n = len(patterns)
    if n == 0:
        raise ModelError("no patterns to order")
    if n > 12:
        raise ModelError("join ordering supports at most 12 patterns")
    names = [p.name for p in patterns]
    if len(set(names)) != n:
        raise ModelError("pattern names must be unique")
    best: list[tuple | None] = [None] * (1 << n)  # (cost, order, crossed)
    for k, p in enumerate(patterns):
        best[1 << k] = (0.0, (p.name,), False)
    full = (1 << n) - 1
    for mask in range(1, full + 1):
        state = best[mask]
        if state is None or mask == full:
            continue
        cost, order, crossed = state
        pool, forced_cross = legal_extensions(patterns, mask)
        for k in pool:
            nmask = mask | (1 << k)
            ncost = cost + subset_rows(patterns, nmask)
            norder = order + (patterns[k].name,)
            ncrossed = crossed or forced_cross
            cur = best[nmask]
            if (cur is None or ncost < cur[0]
                    or (ncost == cur[0] and norder < cur[1])):
                best[nmask] = (ncost, norder, ncrossed)
    final = best[full]
    if final is None:
        raise ModelError("join ordering failed to cover all patterns")
    cost, order, crossed = final
    if crossed:
        log.warning("join order %s requires a cross product", order)
    return JoinOrder(order=order, cost=cost, cross_products=crossed)
