"""Access pattern language: grammar, typing and the access-path planner.

An expression names four components (S, P, O, I); the I position may instead
hold a nested expression joined on I = S', inner ('x') or left outer ('k').
Each component is written as

    [type letter] binding [projection]

where the type letter is `s` (relationship statement id), `v` (IRI/BNode) or
`l` (literal), the binding is `_` (unbound), an uppercase argument letter
(constants), `[]` (frontier) or letter+`[]` (constants intersected with a
frontier), and a trailing `^` requests projection. `_[]` is accepted as a
frontier spelling and prints canonically as `[]`.

The planner prunes partitions through the routing function (bound S and O
low bits select grid rows and columns; bound I values name their partition
directly), then picks a relation scan or an index scan per partition by
estimated selectivity, sampling adjacency list lengths for frontiers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError, ParseError
from .gid import (
    EDGE_FAMILY_TAGS,
    RelTag,
    sid_partition,
    tag_of,
)

ALL_RELATIONS = (
    RelTag.E, RelTag.LME, RelTag.ME, RelTag.RME, RelTag.EP, RelTag.LMEP,
    RelTag.MEP, RelTag.RMEP, RelTag.VP, RelTag.MVP, RelTag.VSS,
)

# which type letters each relation satisfies, per position (Table-1 typing;
# `s` means a relationship-family statement id, so vertex-property chains
# do not satisfy it)
_S_LETTERS = {
    RelTag.E: frozenset("v"),
    RelTag.LME: frozenset("s"),
    RelTag.ME: frozenset("s"),
    RelTag.RME: frozenset("v"),
    RelTag.EP: frozenset("s"),
    RelTag.LMEP: frozenset("s"),
    RelTag.MEP: frozenset("s"),
    RelTag.RMEP: frozenset("s"),
    RelTag.VP: frozenset("v"),
    RelTag.MVP: frozenset(),
    RelTag.VSS: frozenset("v"),
}
_O_LETTERS = {
    RelTag.E: frozenset("v"),
    RelTag.LME: frozenset("v"),
    RelTag.ME: frozenset("s"),
    RelTag.RME: frozenset("s"),
    RelTag.EP: frozenset("lv"),
    RelTag.LMEP: frozenset("lv"),
    RelTag.MEP: frozenset("lv"),
    RelTag.RMEP: frozenset("lv"),
    RelTag.VP: frozenset("lv"),
    RelTag.MVP: frozenset("lv"),
    RelTag.VSS: frozenset("v"),
}


class Binding(enum.Enum):
    UNBOUND = "unbound"
    CONSTANTS = "constants"
    FRONTIER = "frontier"
    BOTH = "constants+frontier"


@dataclass(frozen=True)
class AplComponent:
    restriction: str | None = None  # 's' | 'v' | 'l'
    binding: Binding = Binding.UNBOUND
    name: str | None = None  # argument letter for constants
    projected: bool = False

    @property
    def bound(self) -> bool:
        return self.binding is not Binding.UNBOUND


@dataclass(frozen=True)
class Join:
    kind: str  # 'x' inner, 'k' left outer
    right: "AplExpression"


@dataclass(frozen=True)
class AplExpression:
    s: AplComponent
    p: AplComponent
    o: AplComponent
    i: AplComponent | None = None
    join: Join | None = None

    def own_components(self) -> list[tuple[str, AplComponent]]:
        out = [("s", self.s), ("p", self.p), ("o", self.o)]
        if self.i is not None:
            out.append(("i", self.i))
        return out

    def all_components(self, prefix: str = "") -> list[tuple[str, AplComponent]]:
        out = [(prefix + name, comp) for name, comp in self.own_components()]
        if self.join is not None:
            out.extend(self.join.right.all_components(prefix + "x."))
        return out

    def projected_paths(self, prefix: str = "") -> list[str]:
        return [path for path, comp in self.all_components(prefix) if comp.projected]


# -- parser -----------------------------------------------------------------------


class _Cursor:
    __slots__ = ("text", "pos")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self) -> str:
        ch = self.peek()
        self.pos += 1
        return ch

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.pos)


def _parse_component(cur: _Cursor) -> AplComponent:
    restriction = None
    if cur.peek() in ("s", "v", "l"):
        restriction = cur.take()
    ch = cur.peek()
    name = None
    if ch == "_":
        cur.take()
        binding = Binding.UNBOUND
        if cur.peek() == "[":  # `_[]` spelling of a frontier
            cur.take()
            if cur.take() != "]":
                raise cur.error("unterminated frontier brackets")
            binding = Binding.FRONTIER
    elif ch == "[":
        cur.take()
        if cur.take() != "]":
            raise cur.error("unterminated frontier brackets")
        binding = Binding.FRONTIER
    elif ch.isupper() and ch.isalpha():
        name = cur.take()
        binding = Binding.CONSTANTS
        if cur.peek() == "[":
            cur.take()
            if cur.take() != "]":
                raise cur.error("unterminated frontier brackets")
            binding = Binding.BOTH
    elif ch == "":
        raise cur.error("truncated expression")
    else:
        raise cur.error(f"unknown annotation character {ch!r}")
    projected = False
    if cur.peek() == "^":
        cur.take()
        projected = True
    return AplComponent(restriction, binding, name, projected)


def _parse_expr(cur: _Cursor) -> AplExpression:
    s = _parse_component(cur)
    p = _parse_component(cur)
    o = _parse_component(cur)
    if cur.peek() in ("x", "k"):
        kind = cur.take()
        right = _parse_expr(cur)
        return AplExpression(s, p, o, i=None, join=Join(kind, right))
    i = _parse_component(cur)
    return AplExpression(s, p, o, i=i, join=None)


def parse(text: str) -> AplExpression:
    if not text.isascii():
        raise ParseError("expression must be ASCII", 0)
    cur = _Cursor(text)
    expr = _parse_expr(cur)
    if cur.pos != len(text):
        raise cur.error("trailing characters after expression")
    return expr


def _print_component(comp: AplComponent) -> str:
    out = comp.restriction or ""
    if comp.binding is Binding.UNBOUND:
        out += "_"
    elif comp.binding is Binding.CONSTANTS:
        out += comp.name or "C"
    elif comp.binding is Binding.FRONTIER:
        out += "[]"
    else:
        out += (comp.name or "C") + "[]"
    if comp.projected:
        out += "^"
    return out


def to_text(expr: AplExpression) -> str:
    """Canonical printed form; parse(to_text(x)) reproduces x."""
    out = "".join(_print_component(c) for c in (expr.s, expr.p, expr.o))
    if expr.join is not None:
        return out + expr.join.kind + to_text(expr.join.right)
    return out + _print_component(expr.i)


# -- type-based relation pruning ------------------------------------------------------


def relevant_relations(expr: AplExpression) -> frozenset[RelTag]:
    """Relations whose S/O typing can satisfy the expression's restrictions.

    An unsatisfiable combination (for example a literal restriction on S)
    yields the empty set.
    """
    rels = set(ALL_RELATIONS)
    for pos, comp in expr.own_components():
        letter = comp.restriction
        if letter is None:
            continue
        if pos == "s":
            rels = {r for r in rels if letter in _S_LETTERS[r]}
        elif pos == "o":
            rels = {r for r in rels if letter in _O_LETTERS[r]}
        elif pos == "p":
            if letter != "v":
                return frozenset()
        else:  # the I value is the tuple's own statement id
            if letter != "s":
                return frozenset()
            rels = {r for r in rels if r in EDGE_FAMILY_TAGS}
    if expr.join is not None:
        # the join requires left I values to appear as right subjects
        right = relevant_relations(expr.join.right)
        rels = {r for r in rels if _joinable(r, right)}
    return frozenset(rels)


def _joinable(left_rel: RelTag, right_rels: frozenset[RelTag]) -> bool:
    from .gid import S_DOMAIN

    for r in right_rels:
        if r is RelTag.VSS:
            continue
        if left_rel in S_DOMAIN[r]:
            return True
    return False


# -- requests --------------------------------------------------------------------------


def constant_gui(value, pos: str) -> int | None:
    """GUI carried by one constant, or None for a literal value.

    S, P and I constants are GUIs and may be given as plain ints.  O
    constants are values, so resource references there must be wrapped in a
    Ref-like object (anything exposing a `gui` attribute); bare ints mean
    inline integer values.
    """
    g = getattr(value, "gui", None)
    if g is not None:
        return int(g)
    if pos != "o" and isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return int(value)
    return None


@dataclass
class ComponentArgs:
    """Bound values for one component: GUIs (or raw values for O) and/or a frontier."""

    constants: list | None = None
    frontier: np.ndarray | None = None

    def __post_init__(self):
        if self.frontier is not None:
            arr = np.unique(np.asarray(self.frontier, dtype=np.uint64))
            self.frontier = arr


@dataclass
class AplRequest:
    expr: AplExpression
    args: dict[str, ComponentArgs] = field(default_factory=dict)

    def __post_init__(self):
        for path, comp in self.expr.all_components():
            got = self.args.get(path)
            if comp.binding is Binding.UNBOUND:
                if got is not None and (got.constants or got.frontier is not None):
                    raise ModelError(f"component {path} is unbound but has arguments")
                continue
            if comp.binding in (Binding.CONSTANTS, Binding.BOTH):
                if got is None or not got.constants:
                    raise ModelError(f"component {path} needs constants")
            if comp.binding in (Binding.FRONTIER, Binding.BOTH):
                if got is None or got.frontier is None:
                    raise ModelError(f"component {path} needs a frontier")

    def component_args(self, path: str) -> ComponentArgs:
        return self.args.get(path) or ComponentArgs()


# -- plans ------------------------------------------------------------------------------

INDEX_SELECTIVITY = 1.0 / 64  # index scan below this match fraction
SORTED_PROBE_MAX = 16  # constants up to this count are sorted and probed
FRONTIER_SAMPLE_BUDGET = 64


@dataclass
class PlanPart:
    rel: RelTag
    pid: int
    method: str  # 'relation' | 'index'
    index_side: str | None = None  # 's' | 'o' | 'i'
    column_order: tuple[str, ...] = ()
    est_rows: float = 0.0
    part_tuples: int = 0

    def describe(self) -> str:
        if self.method == "index":
            return (f"{self.rel.name}/{self.pid}: IndexScan({self.index_side.upper()})"
                    f" est={self.est_rows:.0f}")
        cols = ",".join(self.column_order) or "-"
        return (f"{self.rel.name}/{self.pid}: RelationScan[{cols}]"
                f" est={self.est_rows:.0f}/{self.part_tuples}")


@dataclass
class AccessPlan:
    expr: AplExpression
    parts: list[PlanPart]
    join_kind: str | None = None
    right: "AccessPlan | None" = None
    limit: int | None = None
    force: str | None = None
    warnings: list[str] = field(default_factory=list)

    def describe(self, indent: str = "") -> str:
        lines = [f"{indent}plan for {to_text(self.expr)}"]
        if self.limit is not None:
            lines.append(f"{indent}  limit {self.limit}")
        for w in self.warnings:
            lines.append(f"{indent}  warning: {w}")
        for part in self.parts:
            lines.append(f"{indent}  {part.describe()}")
        if self.right is not None:
            kind = "inner" if self.join_kind == "x" else "left outer"
            lines.append(f"{indent}  {kind} join on I = S':")
            lines.append(self.right.describe(indent + "    "))
        return "\n".join(lines)


class Planner:
    """Pure planning over a RelationStore; owns no mutable state."""

    def __init__(self, store, stats=None, force: str | None = None):
        if force not in (None, "index", "relation"):
            raise ModelError(f"unknown forced method {force!r}")
        self.store = store
        self.stats = stats
        self.force = force

    def plan(self, request: AplRequest, limit: int | None = None) -> AccessPlan:
        return self._plan_expr(request, request.expr, "", limit, left_rels=None)

    def _plan_expr(self, request, expr, prefix, limit, left_rels) -> AccessPlan:
        warnings: list[str] = []
        rels = relevant_relations(expr)
        if not rels:
            warnings.append("type restrictions are unsatisfiable")
        if left_rels is not None:
            from .gid import S_DOMAIN

            rels = {r for r in rels if r is not RelTag.VSS
                    and any(lr in S_DOMAIN[r] for lr in left_rels)}
        parts: list[PlanPart] = []
        for rel in sorted(rels):
            if rel is RelTag.VSS:
                continue  # recognized by the language, never stored
            parts.extend(self._plan_relation(request, expr, prefix, rel))
        plan = AccessPlan(expr=expr, parts=parts, limit=limit, force=self.force,
                          warnings=warnings)
        if expr.join is not None:
            right = self._plan_expr(request, expr.join.right, prefix + "x.",
                                    None, left_rels=rels)
            plan.join_kind = expr.join.kind
            plan.right = right
        return plan

    # -- per-relation planning ----------------------------------------------------

    def _bound_guis(self, request, prefix, pos) -> np.ndarray | None:
        """All GUI values binding a component, or None when it does not route."""
        args = request.component_args(prefix + pos)
        consts: set[int] | None = None
        if args.constants:
            consts = set()
            for v in args.constants:
                g = constant_gui(v, pos)
                if g is None:
                    return None  # literal-value constants do not route
                consts.add(g)
        front = (set(int(x) for x in args.frontier.tolist())
                 if args.frontier is not None else None)
        if consts is not None and front is not None:
            values = consts & front
        else:
            values = consts if consts is not None else front
        if not values:
            return None
        return np.array(sorted(values), dtype=np.uint64)

    def _partitions_for(self, request, expr, prefix, rel) -> list[int]:
        cfg = self.store.config
        npart = cfg.npartitions(rel)
        i_guis = None
        if expr.i is not None and expr.i.bound:
            i_guis = self._bound_guis(request, prefix, "i")
        if i_guis is not None:
            pids = {sid_partition(int(g)) for g in i_guis.tolist()
                    if tag_of(int(g)) is rel}
            return sorted(p for p in pids if p < npart)
        s_guis = self._bound_guis(request, prefix, "s") if expr.s.bound else None
        o_guis = self._bound_guis(request, prefix, "o") if expr.o.bound else None
        from .gid import TOPOLOGY_RELATIONS

        if rel in TOPOLOGY_RELATIONS:
            rows = (sorted({int(g) & (cfg.rows - 1) for g in s_guis.tolist()})
                    if s_guis is not None else range(cfg.rows))
            cols = (sorted({int(g) & (cfg.cols - 1) for g in o_guis.tolist()})
                    if o_guis is not None else range(cfg.cols))
            return [r * cfg.cols + c for r in rows for c in cols]
        if rel is RelTag.VP:
            if s_guis is not None:
                return sorted({int(g) & (cfg.parts1d - 1) for g in s_guis.tolist()})
            return list(range(cfg.parts1d))
        # conformal property relations follow their subject's partition
        if s_guis is not None:
            return sorted({sid_partition(int(g)) for g in s_guis.tolist()
                           if sid_partition(int(g)) < npart})
        return list(range(npart))

    def _est_index_rows(self, part, side: str, values: np.ndarray) -> float:
        if side == "i":
            return float(len(values))
        index = part.sindex if side == "s" else part.oindex
        vals = values
        if len(vals) > FRONTIER_SAMPLE_BUDGET:
            step = len(vals) // FRONTIER_SAMPLE_BUDGET
            sample = vals[::step][:FRONTIER_SAMPLE_BUDGET]
        else:
            sample = vals
        total = 0
        for g in sample.tolist():
            lst = index.list_for(int(g))
            total += lst.live_count() if lst is not None else 0
        if len(sample) == 0:
            return 0.0
        return total * (len(vals) / len(sample))

    def _plan_relation(self, request, expr, prefix, rel) -> list[PlanPart]:
        parts_out: list[PlanPart] = []
        pids = self._partitions_for(request, expr, prefix, rel)
        s_guis = self._bound_guis(request, prefix, "s") if expr.s.bound else None
        o_guis = self._bound_guis(request, prefix, "o") if expr.o.bound else None
        i_guis = (self._bound_guis(request, prefix, "i")
                  if expr.i is not None and expr.i.bound else None)
        o_args = request.component_args(prefix + "o")
        has_o_values = bool(o_args.constants) and o_guis is None
        for pid in pids:
            part = self.store.get(rel, pid)
            if part is None or part.tuple_count == 0:
                continue
            n = max(part.tuple_count, 1)
            candidates: list[tuple[float, str]] = []
            if i_guis is not None:
                candidates.append((self._est_index_rows(part, "i", i_guis), "i"))
            if s_guis is not None:
                candidates.append((self._est_index_rows(part, "s", s_guis), "s"))
            if o_guis is not None:
                candidates.append((self._est_index_rows(part, "o", o_guis), "o"))
            method = "relation"
            side = None
            est = float(n)
            if candidates:
                best_est, best_side = min(candidates)
                est = best_est
                use_index = (best_est / n) < INDEX_SELECTIVITY
                if self.force == "index":
                    use_index = True
                elif self.force == "relation":
                    use_index = False
                if use_index:
                    method = "index"
                    side = best_side
            order = self._column_order(expr, request, prefix, rel,
                                       s_guis, o_guis, i_guis, has_o_values)
            parts_out.append(PlanPart(rel=rel, pid=pid, method=method,
                                      index_side=side, column_order=order,
                                      est_rows=est, part_tuples=part.tuple_count))
        return parts_out

    def _column_order(self, expr, request, prefix, rel,
                      s_guis, o_guis, i_guis, has_o_values) -> tuple[str, ...]:
        order: list[tuple[float, str]] = []
        if i_guis is not None:
            order.append((float(len(i_guis)), "i"))
        if s_guis is not None:
            order.append((float(len(s_guis)) * 4, "s"))
        if o_guis is not None:
            order.append((float(len(o_guis)) * 4, "o"))
        p_args = request.component_args(prefix + "p")
        if p_args.constants:
            order.append((float(len(p_args.constants)) * 16, "p"))
        from .gid import TOPOLOGY_RELATIONS

        needs_flag = (expr.o.restriction in ("l", "v", "s")
                      or has_o_values) and rel not in TOPOLOGY_RELATIONS
        if needs_flag:
            # the flag pass is cheap and eliminates whole type classes early
            order.append((0.5, "flag"))
        if has_o_values:
            o_args = request.component_args(prefix + "o")
            order.append((float(len(o_args.constants or ())) * 64, "o"))
        ranked = [name for _, name in sorted(order, key=lambda t: (t[0], t[1]))]
        seen: list[str] = []
        for name in ranked:
            if name not in seen:
                seen.append(name)
        return tuple(seen)
