"""Data model for timed automata, their instantiation and the network.

A template is a parameterized automaton; instantiating it substitutes the
integer arguments throughout guards, syncs, updates and invariants.  The
network is the parallel composition of instances plus shared variables,
channels and update macros.  Everything is value-semantic and immutable
after validation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

from .diagnostics import Diagnostic, Span, NO_SPAN, TypeError_
from . import expr as ex
from .expr import (Assign, ArrayRef, Binary, BoolLit, DeclTable, Expr, IfStmt,
                   IntLit, LocPredicate, MacroCall, Stmt, Unary, VarRef)

NORMAL = "normal"
URGENT = "urgent"
COMMITTED = "committed"

CMP_NEGATE = {"<": ">=", "<=": ">", "==": "!=", ">=": "<", ">": "<="}


@dataclass(frozen=True)
class ClockConstraint:
    """`x ~ c` or `x - y ~ c` with ~ in {<, <=, ==, >=, >}."""

    x: str
    op: str
    c: int
    y: str | None = None
    span: Span = field(default=NO_SPAN, compare=False, repr=False)

    def text(self) -> str:
        lhs = self.x if self.y is None else f"{self.x} - {self.y}"
        return f"{lhs} {self.op} {self.c}"


@dataclass(frozen=True)
class Location:
    name: str
    kind: str = NORMAL
    invariant: tuple[ClockConstraint, ...] = ()
    exit_weight: int = 1
    is_branchpoint: bool = False
    span: Span = field(default=NO_SPAN, compare=False, repr=False)

    @property
    def zero_time(self) -> bool:
        return self.kind in (URGENT, COMMITTED) or self.is_branchpoint

    @property
    def committed_like(self) -> bool:
        return self.kind == COMMITTED or self.is_branchpoint


@dataclass(frozen=True)
class Sync:
    channel: str
    direction: str  # "!" | "?"
    index: Expr | None = None


@dataclass(frozen=True)
class SelectBinding:
    name: str
    lo: int
    hi: int


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    selects: tuple[SelectBinding, ...] = ()
    guard_clocks: tuple[ClockConstraint, ...] = ()
    guard_data: Expr | None = None
    sync: Sync | None = None
    update: tuple[Stmt, ...] = ()
    controllable: bool = False
    weight: int = 1
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class VarDecl:
    name: str
    vtype: str  # "int" | "bool"
    array_len: int | None = None
    init: Expr | None = None
    span: Span = field(default=NO_SPAN, compare=False, repr=False)

    def kind(self) -> str:
        return self.vtype + ("[]" if self.array_len is not None else "")


@dataclass(frozen=True)
class ChannelDecl:
    name: str
    array_len: int | None = None
    broadcast: bool = False
    span: Span = field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class Template:
    name: str
    params: tuple[str, ...] = ()
    clocks: tuple[str, ...] = ()
    variables: tuple[VarDecl, ...] = ()
    locations: tuple[Location, ...] = ()
    initial: str = ""
    edges: tuple[Edge, ...] = ()
    span: Span = field(default=NO_SPAN, compare=False, repr=False)

    def location(self, name: str) -> Location | None:
        for loc in self.locations:
            if loc.name == name:
                return loc
        return None


@dataclass(frozen=True)
class InstanceSpec:
    """One entry of the `system` line: template name plus argument vector."""

    template: str
    args: tuple[int, ...] = ()
    span: Span = field(default=NO_SPAN, compare=False, repr=False)

    @property
    def name(self) -> str:
        if not self.args:
            return self.template
        return f"{self.template}({','.join(str(a) for a in self.args)})"


@dataclass(frozen=True)
class AutomatonInstance:
    name: str
    template: str
    args: tuple[int, ...]
    clocks: tuple[str, ...]           # namespaced "Name.clock"
    variables: tuple[VarDecl, ...]    # namespaced "Name.var"
    locations: tuple[Location, ...]
    initial: str
    edges: tuple[Edge, ...]           # args substituted, clocks namespaced

    def location(self, name: str) -> Location | None:
        for loc in self.locations:
            if loc.name == name:
                return loc
        return None


@dataclass(frozen=True)
class TANetwork:
    constants: tuple[tuple[str, int], ...] = ()
    clocks: tuple[str, ...] = ()
    variables: tuple[VarDecl, ...] = ()
    channels: tuple[ChannelDecl, ...] = ()
    macros: tuple[tuple[str, tuple[Stmt, ...]], ...] = ()
    templates: tuple[Template, ...] = ()
    system: tuple[InstanceSpec, ...] = ()
    instances: tuple[AutomatonInstance, ...] = field(default=(), compare=False)

    def template(self, name: str) -> Template | None:
        for t in self.templates:
            if t.name == name:
                return t
        return None

    def channel(self, name: str) -> ChannelDecl | None:
        for ch in self.channels:
            if ch.name == name:
                return ch
        return None

    def macro_table(self) -> dict[str, tuple[Stmt, ...]]:
        return dict(self.macros)

    def all_clocks(self) -> tuple[str, ...]:
        out = list(self.clocks)
        for inst in self.instances:
            out.extend(inst.clocks)
        return tuple(out)

    def decl_table(self) -> DeclTable:
        kinds: dict[str, str] = {}
        for v in self.variables:
            kinds[v.name] = v.kind()
        for c in self.clocks:
            kinds[c] = "clock"
        for inst in self.instances:
            for v in inst.variables:
                kinds[v.name] = v.kind()
            for c in inst.clocks:
                kinds[c] = "clock"
        locs = [(inst.name, loc.name)
                for inst in self.instances for loc in inst.locations]
        return DeclTable(kinds, locs)


# ---------------------------------------------------------------------------
# Substitution helpers (template parameter -> integer constant)
# ---------------------------------------------------------------------------

def subst_expr(e: Expr | None, bind: dict[str, int],
               rename: dict[str, str]) -> Expr | None:
    if e is None:
        return None
    if isinstance(e, VarRef):
        if e.name in bind:
            return IntLit(bind[e.name], span=e.span)
        if e.name in rename:
            return VarRef(rename[e.name], span=e.span)
        return e
    if isinstance(e, ArrayRef):
        name = rename.get(e.name, e.name)
        return ArrayRef(name, subst_expr(e.index, bind, rename), span=e.span)
    if isinstance(e, Unary):
        return Unary(e.op, subst_expr(e.operand, bind, rename), span=e.span)
    if isinstance(e, Binary):
        return Binary(e.op, subst_expr(e.lhs, bind, rename),
                      subst_expr(e.rhs, bind, rename), span=e.span)
    return e


def subst_stmts(stmts: Iterable[Stmt], bind: dict[str, int],
                rename: dict[str, str]) -> tuple[Stmt, ...]:
    out: list[Stmt] = []
    for s in stmts:
        if isinstance(s, Assign):
            out.append(Assign(subst_expr(s.target, bind, rename),
                              subst_expr(s.value, bind, rename), span=s.span))
        elif isinstance(s, IfStmt):
            out.append(IfStmt(subst_expr(s.cond, bind, rename),
                              subst_stmts(s.then, bind, rename),
                              subst_stmts(s.orelse, bind, rename),
                              span=s.span))
        else:
            out.append(s)
    return tuple(out)


def fold_int(e: Expr, consts: dict[str, int], span: Span = NO_SPAN) -> int:
    """Fold a constant integer expression (literals, consts, + - * / %)."""
    v = _try_fold(e, consts)
    if v is None:
        raise TypeError_("expected a constant integer expression",
                         getattr(e, "span", span))
    return v


def _try_fold(e: Expr, consts: dict[str, int]) -> int | None:
    if isinstance(e, IntLit):
        return e.value
    if isinstance(e, VarRef) and e.name in consts:
        return consts[e.name]
    if isinstance(e, Unary) and e.op == "-":
        v = _try_fold(e.operand, consts)
        return None if v is None else -v
    if isinstance(e, Binary) and e.op in ("+", "-", "*", "/", "%"):
        a = _try_fold(e.lhs, consts)
        b = _try_fold(e.rhs, consts)
        if a is None or b is None:
            return None
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            return ex.int_div(a, b)
        return ex.int_mod(a, b)
    return None


# ---------------------------------------------------------------------------
# Instantiation
# ---------------------------------------------------------------------------

def instantiate(template: Template, args: Iterable[int],
                name: str) -> AutomatonInstance:
    """Substitute parameters by constants throughout the template."""
    args = tuple(args)
    if len(args) != len(template.params):
        raise TypeError_(
            f"arity mismatch instantiating {template.name}: expected "
            f"{len(template.params)} argument(s), got {len(args)}",
            template.span)
    bind = dict(zip(template.params, args))
    rename = {c: f"{name}.{c}" for c in template.clocks}
    rename.update({v.name: f"{name}.{v.name}" for v in template.variables})

    def fix_cc(cc: ClockConstraint) -> ClockConstraint:
        return ClockConstraint(rename.get(cc.x, cc.x), cc.op, cc.c,
                               rename.get(cc.y, cc.y) if cc.y else None,
                               span=cc.span)

    locations = tuple(
        replace(loc, invariant=tuple(fix_cc(c) for c in loc.invariant))
        for loc in template.locations)
    edges = []
    for e in template.edges:
        sync = None
        if e.sync is not None:
            sync = Sync(e.sync.channel, e.sync.direction,
                        subst_expr(e.sync.index, bind, rename))
        edges.append(Edge(
            source=e.source, target=e.target, selects=e.selects,
            guard_clocks=tuple(fix_cc(c) for c in e.guard_clocks),
            guard_data=subst_expr(e.guard_data, bind, rename),
            sync=sync,
            update=subst_stmts(e.update, bind, rename),
            controllable=e.controllable, weight=e.weight, span=e.span))
    variables = tuple(replace(v, name=f"{name}.{v.name}",
                              init=subst_expr(v.init, bind, rename))
                      for v in template.variables)
    return AutomatonInstance(
        name=name, template=template.name, args=args,
        clocks=tuple(f"{name}.{c}" for c in template.clocks),
        variables=variables, locations=locations,
        initial=template.initial, edges=tuple(edges))


def build_instances(net: TANetwork) -> TANetwork:
    """Populate net.instances from the system line."""
    instances = []
    for spec in net.system:
        t = net.template(spec.template)
        if t is None:
            raise TypeError_(f"unknown template '{spec.template}'", spec.span)
        instances.append(instantiate(t, spec.args, spec.name))
    return replace(net, instances=tuple(instances))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_network(net: TANetwork) -> list[Diagnostic]:
    """Check every structural invariant; returns all violations (never raises)."""
    diags: list[Diagnostic] = []

    def err(msg: str, span: Span = NO_SPAN) -> None:
        diags.append(Diagnostic(msg, span))

    # unique declarations
    seen: dict[str, Span] = {}
    for name, span in _declared_symbols(net):
        if name in seen:
            err(f"'{name}' declared more than once", span)
        else:
            seen[name] = span

    # macro acyclicity
    macro_table = net.macro_table()
    for mname in macro_table:
        if _macro_cycle(mname, macro_table, set()):
            err(f"update macro '{mname}' is recursive")

    if not net.instances:
        try:
            net = build_instances(net)
        except TypeError_ as e:
            diags.append(e.diagnostic)
            return diags

    decls = net.decl_table()

    for tmpl in net.templates:
        inits = [loc for loc in tmpl.locations if loc.name == tmpl.initial]
        if not tmpl.initial:
            err(f"template {tmpl.name} has no initial location", tmpl.span)
        elif not inits:
            err(f"template {tmpl.name}: initial location "
                f"'{tmpl.initial}' not declared", tmpl.span)

    for inst in net.instances:
        loc_names = {loc.name for loc in inst.locations}
        for loc in inst.locations:
            if loc.committed_like or loc.kind == URGENT:
                if loc.invariant:
                    err(f"{inst.name}.{loc.name}: committed/urgent location "
                        "must have empty invariant", loc.span)
            for cc in loc.invariant:
                if cc.op not in ("<", "<="):
                    err(f"{inst.name}.{loc.name}: invariant must be an upper "
                        f"bound, got '{cc.text()}'", cc.span)
                if cc.y is not None:
                    err(f"{inst.name}.{loc.name}: clock differences are not "
                        "allowed in invariants", cc.span)
                if decls.kind_of(cc.x) != "clock":
                    err(f"{inst.name}.{loc.name}: unknown clock '{cc.x}'",
                        cc.span)
            if loc.exit_weight <= 0:
                err(f"{inst.name}.{loc.name}: exit weight must be positive",
                    loc.span)
            if loc.is_branchpoint:
                for e in inst.edges:
                    if e.source != loc.name:
                        continue
                    if e.sync is not None:
                        err(f"{inst.name}.{loc.name}: branchpoint edges may "
                            "not synchronize", e.span)
                    if e.guard_data is not None or e.guard_clocks:
                        err(f"{inst.name}.{loc.name}: branchpoint edges may "
                            "not carry guards", e.span)

        sends_broadcast = {e.sync.channel for e in inst.edges
                           if e.sync and e.sync.direction == "!"
                           and (net.channel(e.sync.channel) or
                                ChannelDecl("?")).broadcast}

        for e in inst.edges:
            if e.source not in loc_names:
                err(f"{inst.name}: edge source '{e.source}' not declared",
                    e.span)
                continue
            if e.target not in loc_names:
                err(f"{inst.name}: edge target '{e.target}' not declared",
                    e.span)
                continue
            if e.weight <= 0:
                err(f"{inst.name}: edge weight must be positive", e.span)
            for sb in e.selects:
                if sb.lo > sb.hi:
                    err(f"{inst.name}: empty select range for '{sb.name}'",
                        e.span)
            src = inst.location(e.source)
            if (src is not None and src.kind == COMMITTED and e.sync
                    and e.sync.direction == "?"
                    and e.sync.channel in sends_broadcast):
                err(f"{inst.name}: edge out of committed '{e.source}' may not "
                    f"receive on broadcast channel '{e.sync.channel}' it also "
                    "sends on", e.span)
            edge_decls = _edge_decls(decls, e)
            if e.sync is not None:
                ch = net.channel(e.sync.channel)
                if ch is None:
                    err(f"{inst.name}: unknown channel '{e.sync.channel}'",
                        e.span)
                else:
                    diags.extend(_check_channel_index(inst, ch, e, edge_decls))
            if e.guard_data is not None:
                try:
                    t = ex.typecheck(edge_decls, e.guard_data,
                                     allow_clock_atoms=False)
                    if t != "bool":
                        err(f"{inst.name}: guard must be bool", e.span)
                except TypeError_ as te:
                    diags.append(te.diagnostic)
            for cc in e.guard_clocks:
                if decls.kind_of(cc.x) != "clock" or (
                        cc.y is not None and decls.kind_of(cc.y) != "clock"):
                    err(f"{inst.name}: unknown clock in guard "
                        f"'{cc.text()}'", cc.span)
            try:
                ex.typecheck_update(edge_decls, e.update, macro_table)
            except TypeError_ as te:
                diags.append(te.diagnostic)

    # macros must type-check against the global scope
    global_decls = net.decl_table()
    for mname, body in net.macros:
        try:
            ex.typecheck_update(global_decls, body, macro_table)
        except TypeError_ as te:
            diags.append(te.diagnostic)

    # variable initializers
    consts = dict(net.constants)
    for v in list(net.variables) + [v for i in net.instances
                                    for v in i.variables]:
        if v.init is not None and _try_fold(v.init, consts) is None:
            if not isinstance(v.init, BoolLit):
                err(f"initializer of '{v.name}' must be constant", v.span)
    return diags


def _edge_decls(decls: DeclTable, e: Edge) -> DeclTable:
    extra = {sb.name: "int" for sb in e.selects}
    if not extra:
        return decls
    table = DeclTable()
    table._kinds = dict(decls._kinds, **extra)
    table._locations = decls._locations
    return table


def _check_channel_index(inst: AutomatonInstance, ch: ChannelDecl,
                         e: Edge, decls: DeclTable) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    sync = e.sync
    if ch.array_len is None:
        if sync.index is not None:
            out.append(Diagnostic(
                f"{inst.name}: channel '{ch.name}' is not an array", e.span))
        return out
    if sync.index is None:
        out.append(Diagnostic(
            f"{inst.name}: channel '{ch.name}' needs an index", e.span))
        return out
    try:
        t = ex.typecheck(decls, sync.index, allow_clock_atoms=False)
        if t != "int":
            out.append(Diagnostic(
                f"{inst.name}: channel index must be int", e.span))
    except TypeError_ as te:
        out.append(te.diagnostic)
        return out
    lo, hi = _index_range(sync.index, e)
    if lo is not None and (lo < 0 or hi >= ch.array_len):
        out.append(Diagnostic(
            f"{inst.name}: channel index out of range for "
            f"'{ch.name}[{ch.array_len}]'", e.span))
    return out


def _index_range(idx: Expr, e: Edge) -> tuple[int | None, int | None]:
    if isinstance(idx, IntLit):
        return idx.value, idx.value
    if isinstance(idx, VarRef):
        for sb in e.selects:
            if sb.name == idx.name:
                return sb.lo, sb.hi
    return None, None


def _declared_symbols(net: TANetwork):
    for name, _ in net.constants:
        yield name, NO_SPAN
    for c in net.clocks:
        yield c, NO_SPAN
    for v in net.variables:
        yield v.name, v.span
    for ch in net.channels:
        yield ch.name, ch.span
    for mname, _ in net.macros:
        yield mname, NO_SPAN
    for t in net.templates:
        yield t.name, t.span


def _macro_cycle(name: str, table: dict[str, tuple[Stmt, ...]],
                 stack: set[str]) -> bool:
    if name in stack:
        return True
    body = table.get(name)
    if body is None:
        return False
    stack = stack | {name}

    def walk(stmts) -> bool:
        for s in stmts:
            if isinstance(s, MacroCall):
                if _macro_cycle(s.name, table, stack):
                    return True
            elif isinstance(s, IfStmt):
                if walk(s.then) or walk(s.orelse):
                    return True
        return False

    return walk(body)


# ---------------------------------------------------------------------------
# Initial state
# ---------------------------------------------------------------------------

def initial_env(net: TANetwork) -> dict:
    consts = dict(net.constants)
    env: dict = {}
    all_vars = list(net.variables) + [v for i in net.instances
                                      for v in i.variables]
    for v in all_vars:
        if v.init is None:
            base = 0 if v.vtype == "int" else False
        elif isinstance(v.init, BoolLit):
            base = v.init.value
        else:
            base = fold_int(v.init, consts)
            if v.vtype == "bool":
                base = bool(base)
        if v.array_len is not None:
            env[v.name] = [base] * v.array_len
        else:
            env[v.name] = base
    return env


def initial_locations(net: TANetwork) -> tuple[str, ...]:
    return tuple(inst.initial for inst in net.instances)
