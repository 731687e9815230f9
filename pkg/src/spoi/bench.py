"""Benchmark harness: scan, bfs, closeness, egonet, load and txn-latency suites.

Each suite appends rows to a BenchReport whose core columns are
(statement, frontier size, time ms, M tuples/s); the report renders as CSV
and as a markdown table and always carries a machine descriptor. Rates are
reported, not judged; ordering checks live in the acceptance tests.

A suite that would not fit in available memory is skipped with a notice
instead of thrashing.
"""

from __future__ import annotations

import logging
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import algo
from .engine import GraphStore
from .errors import ConfigError
from .gid import RelTag
from .relstore import GridConfig
from .rmat import load_rmat
from .values import encode_inline

logger = logging.getLogger(__name__)

SUITES = ("scan", "bfs", "closeness", "egonet", "load", "txn-latency")

# per-suite resident estimate; generous so a skip happens before an OOM kill
_SUITE_NEED_BYTES = {
    "scan": 3 << 30,
    "bfs": 3 << 30,
    "closeness": 2 << 30,
    "egonet": 2 << 30,
    "load": 2 << 30,
    "txn-latency": 1 << 30,
}

_SCAN_CLASSES = (("deg1", (1, 1)), ("deg3.5", (3, 4)), ("deg28", (28, 28)))
_SCAN_FRONTIERS = (10_000, 100_000)


@dataclass
class BenchRow:
    suite: str
    statement: str
    frontier: str
    params: str
    time_ms: float
    rate: float | None
    unit: str


@dataclass
class BenchReport:
    machine: dict[str, str]
    rows: list[BenchRow] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, suite: str, statement: str, frontier, params: str,
            seconds: float, rate: float | None, unit: str) -> BenchRow:
        row = BenchRow(suite, statement, "" if frontier is None else str(frontier),
                       params, seconds * 1e3, rate, unit)
        self.rows.append(row)
        logger.info("%s | %s | frontier=%s | %.2f ms | %s",
                    suite, statement, row.frontier, row.time_ms,
                    f"{rate:.3f} {unit}" if rate is not None else "-")
        return row

    def note(self, text: str) -> None:
        self.notes.append(text)
        logger.warning("%s", text)

    def to_csv(self) -> str:
        out = ["statement,frontier,time_ms,rate,unit,suite,params"]
        for r in self.rows:
            rate = f"{r.rate:.6g}" if r.rate is not None else ""
            out.append(f"{r.statement},{r.frontier},{r.time_ms:.3f},{rate},"
                       f"{r.unit},{r.suite},{r.params}")
        return "\n".join(out) + "\n"

    def to_markdown(self) -> str:
        out = ["# Benchmark report", "", "## Machine", ""]
        out += [f"- {k}: {v}" for k, v in self.machine.items()]
        out += ["", "## Results", "",
                "| statement | frontier | time ms | rate | unit |",
                "|---|---:|---:|---:|---|"]
        for r in self.rows:
            rate = f"{r.rate:.3f}" if r.rate is not None else ""
            out.append(f"| {r.statement} | {r.frontier} | {r.time_ms:.3f} "
                       f"| {rate} | {r.unit} |")
        if self.notes:
            out += ["", "## Notes", ""] + [f"- {n}" for n in self.notes]
        return "\n".join(out) + "\n"

    def write(self, directory) -> tuple[str, str]:
        os.makedirs(directory, exist_ok=True)
        csv_path = os.path.join(directory, "bench.csv")
        md_path = os.path.join(directory, "bench.md")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())
        with open(md_path, "w", encoding="utf-8") as fh:
            fh.write(self.to_markdown())
        return csv_path, md_path


def machine_descriptor() -> dict[str, str]:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo", encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return {
        "platform": platform.platform(),
        "cpu": cpu,
        "cores": str(os.cpu_count()),
        "memory_gib": f"{_total_memory() / (1 << 30):.1f}",
        "python": sys.version.split()[0],
        "numpy": np.__version__,
    }


def _total_memory() -> int:
    try:
        return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError):
        return 0


def available_memory() -> int:
    try:
        with open("/proc/meminfo", encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("MemAvailable:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    return _total_memory()


def new_report() -> BenchReport:
    return BenchReport(machine=machine_descriptor())


def run_suite(name: str, report: BenchReport | None = None,
              threads: int = 4, **params) -> BenchReport:
    """Run one named suite; skips with a notice when memory is short."""
    if name not in SUITES:
        raise ConfigError(f"unknown bench suite {name!r}; "
                          f"choose from {', '.join(SUITES)}")
    if report is None:
        report = new_report()
    avail = available_memory()
    need = _SUITE_NEED_BYTES[name]
    if avail and avail < need:
        report.note(f"suite {name} skipped: needs ~{need / (1 << 30):.1f} GiB, "
                    f"{avail / (1 << 30):.1f} GiB available")
        return report
    fn = {
        "scan": suite_scan,
        "bfs": suite_bfs,
        "closeness": suite_closeness,
        "egonet": suite_egonet,
        "load": suite_load,
        "txn-latency": suite_txn_latency,
    }[name]
    fn(report, threads=threads, **params)
    return report


# -- scan --------------------------------------------------------------------------


def _scan_fixture(n_src: int, seed: int):
    """One store with an out-degree-class predicate per scan class."""
    eng = GraphStore(GridConfig(rows=4, cols=4, parts1d=4), base_iri="http://bench")
    rng = np.random.default_rng(seed)
    srcs = np.array([eng.vertex(f"s{i}", local=True) for i in range(n_src)],
                    dtype=np.uint64)
    objs = np.array([eng.vertex(f"o{i}", local=True) for i in range(50_000)],
                    dtype=np.uint64)
    preds = {}
    h = eng.begin()
    for name, (lo, hi) in _SCAN_CLASSES:
        p = eng.vertex(f"p_{name}", local=True)
        preds[name] = p
        degs = (np.full(n_src, lo) if lo == hi
                else rng.integers(lo, hi + 1, n_src))
        s = np.repeat(srcs, degs)
        o = objs[rng.integers(0, len(objs), len(s))]
        eng.bulk_insert_edges(h, p, s, o)
    eng.commit(h)
    return eng, srcs, preds, rng


def suite_scan(report: BenchReport, threads: int = 4, n_src: int = 100_000,
               seed: int = 17, repeats: int = 2) -> None:
    """Index vs relation one-hop scan rates over frontier x out-degree cells."""
    eng, srcs, preds, rng = _scan_fixture(n_src, seed)
    relation_rows = sum(part.tuple_count
                        for part in eng.store.existing(RelTag.E))
    for name, _ in _SCAN_CLASSES:
        p = preds[name]
        for fsize in _SCAN_FRONTIERS:
            frontier = rng.choice(srcs, size=fsize, replace=False)
            args = {"s": {"frontier": frontier}, "p": {"constants": [p]}}
            for force, label in (("index", "index scan"),
                                 ("scan", "relation scan")):
                best = None
                matched = 0
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    res = eng.query("_[]P_^_", args, force=force)
                    dt = time.perf_counter() - t0
                    matched = res.row_count
                    best = dt if best is None else min(best, dt)
                read = matched if force == "index" else relation_rows
                report.add("scan", f"one-hop {name} {label}", fsize,
                           f"class={name} matched={matched}", best,
                           read / best / 1e6, "Mtuples/s")
    eng.close()


# -- bfs ---------------------------------------------------------------------------


def suite_bfs(report: BenchReport, threads: int = 4, scale: int = 16,
              seed: int = 5) -> None:
    eng = GraphStore(GridConfig(rows=4, cols=4, parts1d=4), base_iri="http://bench")
    info = load_rmat(eng, scale=scale, seed=seed)
    ctx = algo.AlgoContext(eng)
    deg = ctx.out_degree
    source = int(ctx.vertices[int(np.argmax(deg))])  # hub seed
    for mode, label in ((None, "hybrid"), ("index", "forced-index"),
                        ("scan", "forced-scan")):
        t0 = time.perf_counter()
        res = algo.bfs(eng, source, ctx=ctx, track_parents=False, mode=mode,
                       threads=threads)
        dt = time.perf_counter() - t0
        reached = int(np.count_nonzero(res.levels != algo.INF_LEVEL))
        report.add("bfs", f"bfs {label}", None,
                   f"scale={scale} reached={reached} edges={info['edges']} "
                   f"threads={threads}", dt, info["edges"] / dt / 1e6,
                   "Mtraversed-edges/s")
    eng.close()


# -- closeness ---------------------------------------------------------------------


def suite_closeness(report: BenchReport, threads: int = 4, scale: int = 14,
                    n_prime: int = 512, seed: int = 5) -> None:
    eng = GraphStore(GridConfig(rows=4, cols=4, parts1d=4), base_iri="http://bench")
    info = load_rmat(eng, scale=scale, seed=seed)
    ctx = algo.AlgoContext(eng)
    for c_batch in (1, 32, 2048):
        t0 = time.perf_counter()
        algo.closeness_approx(eng, ctx=ctx, n_prime=n_prime, c_batch=c_batch,
                              seed=seed)
        dt = time.perf_counter() - t0
        report.add("closeness", f"closeness cBatch={c_batch}", None,
                   f"scale={scale} nPrime={n_prime} edges={info['edges']}",
                   dt, n_prime * info["edges"] / dt / 1e6,
                   "Msource-edge-visits/s")
    eng.close()


# -- egonet ------------------------------------------------------------------------


def suite_egonet(report: BenchReport, threads: int = 4, scale: int = 14,
                 queries: int = 128, k: int = algo.DEFAULT_EGONET_K,
                 hops: int = algo.DEFAULT_EGONET_HOPS, seed: int = 7) -> None:
    eng = GraphStore(GridConfig(rows=4, cols=4, parts1d=4), base_iri="http://bench")
    load_rmat(eng, scale=scale, seed=seed, weight_predicate="weight")
    ctx = algo.AlgoContext(eng, weight_pred="weight")
    rng = np.random.default_rng(seed)
    sources = rng.choice(ctx.vertices[ctx.out_degree > 0], size=queries,
                         replace=False)
    for variant in algo.EGONET_VARIANTS:
        if variant != "base":
            ctx.csr(weight_sorted=(variant == "sortedCsr"))  # build outside timing
        t0 = time.perf_counter()
        for src in sources:
            algo.egonet(eng, int(src), "weight", k=k, hops=hops,
                        variant=variant, ctx=ctx)
        dt = time.perf_counter() - t0
        report.add("egonet", f"egonet {variant}", None,
                   f"scale={scale} k={k} hops={hops} queries={queries}",
                   dt, queries / dt, "queries/s")
    eng.close()


# -- load --------------------------------------------------------------------------


def suite_load(report: BenchReport, threads: int = 4,
               n_values: int = 1_000_000, seed: int = 11) -> None:
    """Bulk-path load rates: edges/sec and property values/sec."""
    eng = GraphStore(GridConfig(rows=4, cols=4, parts1d=4), base_iri="http://bench")
    rng = np.random.default_rng(seed)
    n_vert = 1 << 16
    verts = np.array([eng.vertex(f"n{i}", local=True) for i in range(n_vert)],
                     dtype=np.uint64)
    p_edge = eng.vertex("linked", local=True)
    p_val = eng.vertex("score", local=True)

    s = verts[rng.integers(0, n_vert, n_values)]
    o = verts[rng.integers(0, n_vert, n_values)]
    h = eng.begin()
    t0 = time.perf_counter()
    sids = eng.bulk_insert_edges(h, p_edge, s, o, threads=threads)
    eng.commit(h)
    dt = time.perf_counter() - t0
    report.add("load", "bulk edges", None,
               f"n={n_values} threads={threads}", dt, n_values / dt / 1e6,
               "Medges/s")

    flag, _ = encode_inline(1)
    flags = np.full(n_values, flag, dtype=np.uint8)
    bits = rng.integers(1, 1 << 16, n_values).astype(np.uint64)
    h = eng.begin()
    t0 = time.perf_counter()
    eng.bulk_insert_props(h, p_val, sids, flags, bits, rel=RelTag.EP,
                          threads=threads)
    eng.commit(h)
    dt = time.perf_counter() - t0
    report.add("load", "bulk property values", None,
               f"n={n_values} threads={threads}", dt, n_values / dt / 1e6,
               "Mvalues/s")
    eng.close()


# -- txn latency -------------------------------------------------------------------


def suite_txn_latency(report: BenchReport, threads: int = 4, n: int = 3000,
                      sync: str = "flush", seed: int = 3) -> None:
    """Single-insert commit-path latency distribution under group commit."""
    with tempfile.TemporaryDirectory() as d:
        eng = GraphStore.open(d, GridConfig(rows=2, cols=2, parts1d=2),
                              base_iri="http://bench", sync=sync)
        verts = [eng.vertex(f"n{i}", local=True) for i in range(256)]
        p = eng.vertex("p", local=True)
        lat = np.empty(n)
        for i in range(n):
            h = eng.begin()
            eng.insert(h, RelTag.E, verts[i % 256], p, verts[(i * 7 + 1) % 256])
            t0 = time.perf_counter()
            eng.commit(h)
            lat[i] = time.perf_counter() - t0
        eng.close()
    lat.sort()
    us = lat * 1e6
    for label, q in (("median", 0.5), ("p90", 0.9), ("p99", 0.99)):
        report.add("txn-latency", f"single-insert commit {label}", None,
                   f"n={n} sync={sync}", us[int((len(us) - 1) * q)] / 1e6,
                   us[int((len(us) - 1) * q)], "us")
    report.add("txn-latency", "single-insert commit max", None,
               f"n={n} sync={sync}", us[-1] / 1e6, us[-1], "us")
