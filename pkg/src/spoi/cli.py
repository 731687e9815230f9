"""Command line operator surface.

Subcommands: ``load`` (LPG CSV / N-Triples bulk loader), ``query`` (access
pattern shell), ``algo`` (graph algorithm runner), ``bench`` (benchmark
suites), and the admin commands ``checkpoint``, ``recover``, ``stats-build``
and ``dump``.

The store directory comes from ``--data-dir`` or the ``SPOI_DATA_DIR``
environment variable.  Exit codes: 0 success, 1 user error, 2 corruption.

Query argument files are JSON objects keyed by component path (``s``, ``p``,
``o``, ``i``, and ``x.``-prefixed paths for nested expressions), each holding
``constants`` and/or ``frontier`` lists.  Entries are resolved as:

* ``@local:name``  local vertex (under the store base IRI)
* ``@iri:IRI``     non-local vertex
* ``@lit:lex``     literal, optionally ``@lit:lex^^hint``
* ``@sid:N``       raw GUI (decimal or 0x hex)
* bare strings     a string value on ``o`` paths, a local vertex elsewhere
* numbers, bools   inline values (``o`` paths only)
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import algo as algo_mod
from . import bench as bench_mod
from . import loader as loader_mod
from .engine import GraphStore, Ref, _inline_repr
from .errors import ConfigError, CorruptionError, StoreError
from .relstore import GridConfig
from .stats import STATS_FILE, Catalog
from .values import is_composite

log = logging.getLogger(__name__)

DATA_DIR_ENV = "SPOI_DATA_DIR"
EXIT_OK = 0
EXIT_USER = 1
EXIT_CORRUPT = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; 2 means corruption here, so remap."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


# -- store opening ---------------------------------------------------------------------


def _parse_grid(text: str) -> tuple[int, int]:
    rows, sep, cols = text.lower().partition("x")
    if not sep or not rows.isdigit() or not cols.isdigit():
        raise ConfigError(f"bad --grid {text!r}; expected RxC, e.g. 4x4")
    return int(rows), int(cols)


def _grid_config(ns) -> GridConfig | None:
    """GridConfig from layout flags, or None to keep the stored layout."""
    if ns.grid is None and ns.parts1d is None and ns.page_bytes is None:
        return None
    base = GridConfig()
    rows, cols = _parse_grid(ns.grid) if ns.grid else (base.rows, base.cols)
    return GridConfig(rows=rows, cols=cols,
                      parts1d=ns.parts1d or base.parts1d,
                      page_bytes=ns.page_bytes or base.page_bytes)


def _data_dir(ns) -> Path:
    raw = ns.data_dir or os.environ.get(DATA_DIR_ENV)
    if not raw:
        raise ConfigError(
            f"no store directory; pass --data-dir or set {DATA_DIR_ENV}")
    return Path(raw)


def _open_store(ns, must_exist: bool = True) -> GraphStore:
    path = _data_dir(ns)
    if must_exist and not (path / "config.json").exists():
        raise ConfigError(f"{path} is not a store directory")
    return GraphStore.open(path, config=_grid_config(ns),
                           base_iri=getattr(ns, "base_iri", None))


# -- query argument resolution -----------------------------------------------------------


def _resolve_gui(eng: GraphStore, raw) -> int:
    """GUI for one frontier entry or non-O constant."""
    if isinstance(raw, bool) or isinstance(raw, float):
        raise ConfigError(f"{raw!r} does not name a graph resource")
    if isinstance(raw, int):
        return raw
    if raw.startswith("@local:"):
        return eng.vertex(raw[len("@local:"):], local=True)
    if raw.startswith("@iri:"):
        return eng.vertex(raw[len("@iri:"):])
    if raw.startswith("@lit:"):
        lex, sep, hint = raw[len("@lit:"):].partition("^^")
        return eng.literal(lex, hint if sep else None)
    if raw.startswith("@sid:"):
        return int(raw[len("@sid:"):], 0)
    return eng.vertex(raw, local=True)


def _resolve_constant(eng: GraphStore, raw, path: str):
    """Constant for one component: values stay values on O paths."""
    if path.endswith("o"):
        if isinstance(raw, str) and raw.startswith(
                ("@local:", "@iri:", "@lit:", "@sid:")):
            return Ref(_resolve_gui(eng, raw))
        return raw
    return Ref(_resolve_gui(eng, raw))


def _query_args(eng: GraphStore, path: str | None) -> dict:
    if path is None:
        return {}
    spec = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(spec, dict):
        raise ConfigError("args file must hold a JSON object keyed by path")
    out = {}
    for comp_path, binding in spec.items():
        consts = binding.get("constants")
        frontier = binding.get("frontier")
        out[comp_path] = {
            "constants": ([_resolve_constant(eng, c, comp_path) for c in consts]
                          if consts is not None else None),
            "frontier": ([_resolve_gui(eng, f) for f in frontier]
                         if frontier is not None else None),
        }
    return out


def _render_result(eng: GraphStore, result, snap) -> list[str]:
    """Aligned text table of the projected columns."""
    memo: dict[int, str] = {}
    cols: list[tuple[str, list[str]]] = []
    for path, data in result.columns.items():
        if isinstance(data, tuple):  # value column: (flags, bits)
            flags, bits = data
            vals = [eng._gui_repr(int(b), snap, memo) if is_composite(int(f))
                    else _inline_repr(int(f), int(b))
                    for f, b in zip(flags.tolist(), bits.tolist())]
        else:
            vals = [eng._gui_repr(int(g), snap, memo) for g in data.tolist()]
        cols.append((path, vals))
    if not cols:
        return [f"({result.row_count} rows, nothing projected)"]
    widths = [max(len(path), *(len(v) for v in vals)) if vals else len(path)
              for path, vals in cols]
    lines = ["  ".join(path.ljust(w) for (path, _), w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in zip(*(vals for _, vals in cols)):
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    lines.append(f"({result.row_count} rows)")
    return lines


# -- subcommands -----------------------------------------------------------------------


def cmd_load(ns) -> int:
    spec = loader_mod.LoadSpec(
        format=ns.format,
        nodes=ns.nodes,
        edges=ns.edges,
        edge_props=ns.edge_props,
        meta_props=ns.meta_props,
        triples=tuple(ns.triples or ()),
        base_iri=ns.base_iri or "",
        batch=ns.batch,
        on_error=ns.on_error,
        threads=ns.threads,
    )
    eng = _open_store(ns, must_exist=False)
    try:
        summary = loader_mod.load(eng, spec)
    finally:
        eng.close()
    for line in summary.lines():
        print(line)
    return EXIT_OK


def _force_flag(ns) -> str | None:
    if ns.force_index_scan:
        return "index"
    if ns.force_relation_scan:
        return "scan"
    return None


def cmd_query(ns) -> int:
    eng = _open_store(ns)
    try:
        args = _query_args(eng, ns.args)
        stats = None
        if eng.data_dir and (eng.data_dir / STATS_FILE).exists():
            stats = Catalog.load(str(eng.data_dir))
        if ns.explain:
            print(eng.explain(ns.apl, args=args, limit=ns.limit,
                              force=_force_flag(ns), stats=stats))
            return EXIT_OK
        result = eng.query(ns.apl, args=args, limit=ns.limit,
                           force=_force_flag(ns), stats=stats)
        for line in _render_result(eng, result, eng.snapshot_of()):
            print(line)
    finally:
        eng.close()
    return EXIT_OK


def _vname(eng: GraphStore, gui: int) -> str:
    return f"<{eng.verts.effective_lexical(eng.verts.decode(gui))}>"


def _top_scores(eng, ctx, scores: np.ndarray, count: int) -> list[str]:
    order = np.argsort(-scores, kind="stable")[:count]
    return [f"  {_vname(eng, int(ctx.vertices[i]))}  {scores[i]:.6g}"
            for i in order.tolist()]


def cmd_algo(ns) -> int:
    eng = _open_store(ns)
    try:
        ctx = algo_mod.AlgoContext(eng)
        if ctx.n == 0:
            print("store holds no edges")
            return EXIT_OK
        if ns.name in ("bfs", "sssp", "egonet") and ns.source is None:
            raise ConfigError(f"{ns.name} needs --source")
        if ns.name in ("sssp", "egonet") and ns.weight_pred is None:
            raise ConfigError(f"{ns.name} needs --weight-pred")
        source = (_resolve_gui(eng, ns.source)
                  if ns.source is not None else None)
        weight = (_resolve_gui(eng, ns.weight_pred)
                  if ns.weight_pred is not None else None)

        if ns.name == "bfs":
            mode = None if ns.mode == "hybrid" else ns.mode
            res = algo_mod.bfs(eng, source, ctx=ctx, mode=mode,
                               threads=ns.threads)
            reached = res.levels[res.levels != algo_mod.INF_LEVEL]
            print(f"reached {len(reached)} of {ctx.n} vertices")
            for lvl, cnt in zip(*np.unique(reached, return_counts=True)):
                print(f"  level {lvl}: {cnt}")
        elif ns.name == "sssp":
            ctx = algo_mod.AlgoContext(eng, weight_pred=weight)
            dist = algo_mod.sssp(eng, source, weight, ctx=ctx,
                                 strategy=ns.strategy, threads=ns.threads)
            done = np.isfinite(dist)
            print(f"reached {int(done.sum())} of {ctx.n} vertices; "
                  f"max distance {dist[done].max(initial=0):.6g}")
        elif ns.name == "wcc":
            labels = algo_mod.wcc(eng, ctx=ctx, strategy=ns.strategy,
                                  threads=ns.threads)
            uniq, sizes = np.unique(labels, return_counts=True)
            print(f"{len(uniq)} components; largest {int(sizes.max())}")
        elif ns.name == "pagerank":
            scores = algo_mod.pagerank(eng, ctx=ctx, damping=ns.damping,
                                       iterations=ns.iterations,
                                       strategy=ns.strategy,
                                       threads=ns.threads)
            print("top vertices by score:")
            print("\n".join(_top_scores(eng, ctx, scores, ns.top)))
        elif ns.name == "closeness":
            res = algo_mod.closeness_approx(eng, ctx=ctx, n_prime=ns.nprime,
                                            c_batch=ns.cbatch, seed=ns.seed)
            print(f"{len(res.sources)} sources, batch {ns.cbatch}")
            print("top vertices by closeness:")
            order = np.argsort(-res.closeness, kind="stable")[:ns.top]
            for i in order.tolist():
                v = int(ctx.vertices[res.sources[i]])
                print(f"  {_vname(eng, v)}  {res.closeness[i]:.6g}")
        else:  # egonet
            res = algo_mod.egonet(eng, source, weight, k=ns.k, hops=ns.hops,
                                  direction=ns.direction, variant=ns.variant,
                                  ctx=algo_mod.AlgoContext(eng,
                                                           weight_pred=weight))
            print(f"{len(res.vertices)} vertices, {len(res.edge_src)} edges")
            for s, o, w in res.edge_list()[:ns.top]:
                print(f"  {_vname(eng, s)} -> {_vname(eng, o)}  w={w:.6g}")
            if len(res.edge_src) > ns.top:
                print(f"  ... {len(res.edge_src) - ns.top} more")
    finally:
        eng.close()
    return EXIT_OK


def cmd_bench(ns) -> int:
    report = bench_mod.new_report()
    suites = ns.suite or list(bench_mod.SUITES)
    for name in suites:
        log.info("bench suite %s", name)
        bench_mod.run_suite(name, report, threads=ns.threads)
    csv_path, md_path = report.write(ns.out)
    print(f"wrote {csv_path} and {md_path}")
    for line in report.notes:
        print(f"note: {line}")
    return EXIT_OK


def cmd_checkpoint(ns) -> int:
    eng = _open_store(ns)
    try:
        print(eng.checkpoint())
    finally:
        eng.close()
    return EXIT_OK


def cmd_recover(ns) -> int:
    eng = _open_store(ns)
    try:
        rep = eng.last_recovery
        print(f"checkpoint ts {rep.checkpoint_ts}; replayed "
              f"{rep.committed} committed, {rep.aborted} aborted, "
              f"{rep.incomplete} incomplete")
        if rep.truncated:
            print(f"truncated tails: {rep.truncated}")
        print(f"store holds {len(eng.dump())} statements")
    finally:
        eng.close()
    return EXIT_OK


def cmd_stats_build(ns) -> int:
    eng = _open_store(ns)
    try:
        cat = Catalog.build(eng)
        path = cat.save(str(eng.data_dir))
        print(f"{path} ({len(cat.charsets)} characteristic sets)")
    finally:
        eng.close()
    return EXIT_OK


def cmd_dump(ns) -> int:
    eng = _open_store(ns)
    try:
        lines = eng.dump()
    finally:
        eng.close()
    if ns.out:
        Path(ns.out).write_text("".join(f"{l}\n" for l in lines),
                                encoding="utf-8")
        print(f"wrote {len(lines)} statements to {ns.out}")
    else:
        for line in lines:
            print(line)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def _add_layout_flags(p) -> None:
    p.add_argument("--grid", metavar="RxC", help="topology grid, e.g. 4x4")
    p.add_argument("--parts1d", type=int, metavar="N",
                   help="1D partition count for vertex properties")
    p.add_argument("--page-bytes", type=int, metavar="B",
                   help="bytes per relation page")


def build_parser() -> _Parser:
    top = _Parser(prog="spoi", description=__doc__,
                  formatter_class=argparse.RawDescriptionHelpFormatter)
    top.add_argument("--data-dir", metavar="DIR",
                     help=f"store directory (default ${DATA_DIR_ENV})")
    top.add_argument("-v", "--verbose", action="store_true",
                     help="log progress to stderr")
    sub = top.add_subparsers(dest="command", required=True,
                             parser_class=_Parser)

    p = sub.add_parser("load", help="bulk load files into the store")
    p.add_argument("--format", choices=loader_mod.FORMATS, required=True)
    p.add_argument("--nodes", metavar="CSV")
    p.add_argument("--edges", metavar="CSV")
    p.add_argument("--edge-props", metavar="CSV")
    p.add_argument("--meta-props", metavar="CSV")
    p.add_argument("--triples", action="append", metavar="NT",
                   help="N-Triples file (repeatable)")
    p.add_argument("--base-iri", metavar="IRI")
    p.add_argument("--batch", type=int, default=loader_mod.DEFAULT_BATCH,
                   help="statements per transaction")
    p.add_argument("--on-error", choices=("skip", "abort"), default="skip")
    p.add_argument("--threads", type=int, default=1, metavar="T",
                   help="partition apply threads")
    _add_layout_flags(p)
    p.set_defaults(func=cmd_load)

    p = sub.add_parser("query", help="run one access pattern expression")
    p.add_argument("--apl", required=True, metavar="EXPR",
                   help="access pattern text, e.g. 'SP_^_'")
    p.add_argument("--args", metavar="JSON", help="constants/frontiers file")
    p.add_argument("--limit", type=int)
    p.add_argument("--explain", action="store_true",
                   help="print the access plan and cost instead of running")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--force-index-scan", action="store_true")
    g.add_argument("--force-relation-scan", action="store_true")
    _add_layout_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("algo", help="run a graph algorithm")
    p.add_argument("name", choices=("bfs", "sssp", "wcc", "pagerank",
                                    "closeness", "egonet"))
    p.add_argument("--source", metavar="TERM")
    p.add_argument("--weight-pred", metavar="TERM")
    p.add_argument("--mode", choices=("index", "scan", "hybrid"),
                   default=None, help="bfs expansion mode (default hybrid)")
    p.add_argument("--strategy", choices=algo_mod.STRATEGIES,
                   default="sequential")
    p.add_argument("--threads", type=int, default=4, metavar="T")
    p.add_argument("--damping", type=float, default=0.85)
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--nprime", type=int, default=None)
    p.add_argument("--cbatch", type=int, default=algo_mod.DEFAULT_CLOSENESS_BATCH)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=algo_mod.DEFAULT_EGONET_K)
    p.add_argument("--hops", type=int, default=algo_mod.DEFAULT_EGONET_HOPS)
    p.add_argument("--direction", choices=("max", "min"), default="max")
    p.add_argument("--variant", choices=algo_mod.EGONET_VARIANTS,
                   default="csr")
    p.add_argument("--top", type=int, default=10, help="rows to print")
    _add_layout_flags(p)
    p.set_defaults(func=cmd_algo)

    p = sub.add_parser("bench", help="run benchmark suites")
    p.add_argument("--suite", action="append", choices=bench_mod.SUITES,
                   help="suite to run (repeatable; default all)")
    p.add_argument("--threads", type=int, default=4, metavar="T")
    p.add_argument("--out", default=".", metavar="DIR",
                   help="directory for bench.csv and bench.md")
    p.set_defaults(func=cmd_bench)

    for name, func, doc in (
            ("checkpoint", cmd_checkpoint, "write a checkpoint manifest"),
            ("recover", cmd_recover, "replay the log and report"),
            ("stats-build", cmd_stats_build, "build the planner statistics"),
            ("dump", cmd_dump, "print the canonical statement listing")):
        p = sub.add_parser(name, help=doc)
        _add_layout_flags(p)
        if name == "dump":
            p.add_argument("--out", metavar="FILE")
        p.set_defaults(func=func)

    return top


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if ns.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return ns.func(ns)
    except CorruptionError as exc:
        print(f"corruption: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (StoreError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    raise SystemExit(main())
