"""Typed expression and update mini-language used in guards, invariants,
updates and query predicates.

Values are 64-bit signed integers or booleans.  Arithmetic overflow is a
runtime error (silent wrap-around would corrupt failure counters), integer
division truncates toward zero, and division by zero aborts the run.
Clocks may appear only inside clock-constraint atoms (`x ~ c`, `x - y ~ c`);
anywhere else they are a type error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .diagnostics import EvalError, Span, NO_SPAN, TypeError_

INT_MIN = -(2 ** 63)
INT_MAX = 2 ** 63 - 1

BOOL_OPS = ("&&", "||", "imply")
CMP_OPS = ("<", "<=", "==", "!=", ">=", ">")
ARITH_OPS = ("+", "-", "*", "/", "%")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Expr:
    span: Span = field(default=NO_SPAN, compare=False, repr=False, kw_only=True)


@dataclass(frozen=True)
class IntLit(Expr):
    value: int


@dataclass(frozen=True)
class BoolLit(Expr):
    value: bool


@dataclass(frozen=True)
class VarRef(Expr):
    name: str


@dataclass(frozen=True)
class ArrayRef(Expr):
    name: str
    index: Expr


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # "-" | "!"
    operand: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class LocPredicate(Expr):
    """`Proc.Loc` — true when instance Proc is at location Loc."""

    process: str
    location: str


# Update statements ---------------------------------------------------------

@dataclass(frozen=True)
class Stmt:
    span: Span = field(default=NO_SPAN, compare=False, repr=False, kw_only=True)


@dataclass(frozen=True)
class Assign(Stmt):
    target: Expr  # VarRef or ArrayRef; may resolve to a clock (reset)
    value: Expr


@dataclass(frozen=True)
class IfStmt(Stmt):
    cond: Expr
    then: tuple[Stmt, ...]
    orelse: tuple[Stmt, ...] = ()


@dataclass(frozen=True)
class MacroCall(Stmt):
    name: str


# ---------------------------------------------------------------------------
# Declaration lookup protocol
# ---------------------------------------------------------------------------

class DeclTable:
    """Maps names to their declared kinds for type checking.

    kind_of(name) returns one of "int", "bool", "clock", "int[]", "bool[]"
    or None when undeclared.  has_location() resolves `Proc.Loc` predicates.
    """

    def __init__(self, kinds: Mapping[str, str] | None = None,
                 locations: Iterable[tuple[str, str]] | None = None):
        self._kinds = dict(kinds or {})
        self._locations = set(locations or ())

    def kind_of(self, name: str) -> str | None:
        return self._kinds.get(name)

    def has_location(self, process: str, location: str) -> bool:
        return (process, location) in self._locations

    def processes(self) -> set[str]:
        return {p for p, _ in self._locations}


# ---------------------------------------------------------------------------
# Type checking
# ---------------------------------------------------------------------------

def is_clock_atom(e: Expr, decls: DeclTable) -> bool:
    """True when e has one of the clock-constraint shapes `x ~ c` / `x - y ~ c`
    (or mirrored `c ~ x`) with x, y clocks and c an integer expression free of
    clocks."""
    if not isinstance(e, Binary) or e.op not in CMP_OPS or e.op == "!=":
        return False
    lhs, rhs = e.lhs, e.rhs

    def clockness(x: Expr) -> str | None:
        if isinstance(x, VarRef) and decls.kind_of(x.name) == "clock":
            return "clock"
        if (isinstance(x, Binary) and x.op == "-"
                and isinstance(x.lhs, VarRef) and isinstance(x.rhs, VarRef)
                and decls.kind_of(x.lhs.name) == "clock"
                and decls.kind_of(x.rhs.name) == "clock"):
            return "diff"
        return None

    if clockness(lhs) and not _mentions_clock(rhs, decls):
        return True
    if clockness(rhs) and not _mentions_clock(lhs, decls):
        return True
    return False


def _mentions_clock(e: Expr, decls: DeclTable) -> bool:
    if isinstance(e, VarRef):
        return decls.kind_of(e.name) == "clock"
    if isinstance(e, ArrayRef):
        return _mentions_clock(e.index, decls)
    if isinstance(e, Unary):
        return _mentions_clock(e.operand, decls)
    if isinstance(e, Binary):
        return _mentions_clock(e.lhs, decls) or _mentions_clock(e.rhs, decls)
    return False


def typecheck(decls: DeclTable, e: Expr, allow_clock_atoms: bool = True) -> str:
    """Return "int" or "bool"; raise TypeError_ with a span on failure.

    Clock names are legal only inside clock-constraint atoms, and only when
    allow_clock_atoms is set (guards, invariants, query predicates).
    """
    if isinstance(e, IntLit):
        if not (INT_MIN <= e.value <= INT_MAX):
            raise TypeError_("integer literal out of 64-bit range", e.span)
        return "int"
    if isinstance(e, BoolLit):
        return "bool"
    if isinstance(e, VarRef):
        kind = decls.kind_of(e.name)
        if kind is None:
            raise TypeError_(f"unresolved name '{e.name}'", e.span)
        if kind == "clock":
            raise TypeError_(
                f"clock '{e.name}' outside clock-constraint atom", e.span)
        if kind.endswith("[]"):
            raise TypeError_(f"array '{e.name}' used without index", e.span)
        return kind
    if isinstance(e, ArrayRef):
        kind = decls.kind_of(e.name)
        if kind is None:
            raise TypeError_(f"unresolved name '{e.name}'", e.span)
        if not kind.endswith("[]"):
            raise TypeError_(f"'{e.name}' is not an array", e.span)
        if typecheck(decls, e.index, allow_clock_atoms=False) != "int":
            raise TypeError_("array index must be int", e.index.span)
        return kind[:-2]
    if isinstance(e, Unary):
        t = typecheck(decls, e.operand, allow_clock_atoms=False)
        if e.op == "-":
            if t != "int":
                raise TypeError_("unary '-' needs an int operand", e.span)
            return "int"
        if e.op == "!":
            if t != "bool":
                raise TypeError_("'!' needs a bool operand", e.span)
            return "bool"
        raise TypeError_(f"unknown unary operator '{e.op}'", e.span)
    if isinstance(e, Binary):
        if allow_clock_atoms and is_clock_atom(e, decls):
            return "bool"
        if e.op in ARITH_OPS:
            for side in (e.lhs, e.rhs):
                t = typecheck(decls, side, allow_clock_atoms=False)
                if t != "int":
                    raise TypeError_(
                        f"arithmetic '{e.op}' needs int operands, got {t}",
                        side.span)
            if e.op in ("/", "%") and isinstance(e.rhs, IntLit) and e.rhs.value == 0:
                raise TypeError_(f"'{e.op}' by constant zero", e.rhs.span)
            return "int"
        if e.op in CMP_OPS:
            tl = typecheck(decls, e.lhs, allow_clock_atoms=False)
            tr = typecheck(decls, e.rhs, allow_clock_atoms=False)
            if e.op in ("==", "!="):
                if tl != tr:
                    raise TypeError_(
                        f"'{e.op}' operands must have the same type", e.span)
            else:
                if tl != "int" or tr != "int":
                    raise TypeError_(f"ordering '{e.op}' needs int operands",
                                     e.span)
            return "bool"
        if e.op in BOOL_OPS:
            for side in (e.lhs, e.rhs):
                t = typecheck(decls, side, allow_clock_atoms=allow_clock_atoms)
                if t != "bool":
                    raise TypeError_(
                        f"'{e.op}' needs bool operands, got {t}", side.span)
            return "bool"
        raise TypeError_(f"unknown operator '{e.op}'", e.span)
    if isinstance(e, LocPredicate):
        if not decls.has_location(e.process, e.location):
            raise TypeError_(
                f"unknown process location '{e.process}.{e.location}'", e.span)
        return "bool"
    raise TypeError_(f"unsupported expression node {type(e).__name__}", NO_SPAN)


def typecheck_update(decls: DeclTable, stmts: Iterable[Stmt],
                     macros: Mapping[str, tuple[Stmt, ...]] | None = None) -> None:
    """Type-check a statement sequence.  Clock resets must assign non-negative
    integer constants; data assignments never target clocks otherwise."""
    macros = macros or {}
    for s in stmts:
        if isinstance(s, Assign):
            target = s.target
            if isinstance(target, VarRef):
                kind = decls.kind_of(target.name)
                if kind is None:
                    raise TypeError_(f"unresolved name '{target.name}'",
                                     target.span)
                if kind == "clock":
                    if not isinstance(s.value, IntLit) or s.value.value < 0:
                        raise TypeError_(
                            "clock reset must assign a non-negative integer "
                            "constant", s.span)
                    continue
                if kind.endswith("[]"):
                    raise TypeError_(
                        f"array '{target.name}' assigned without index",
                        target.span)
                expected = kind
            elif isinstance(target, ArrayRef):
                kind = decls.kind_of(target.name)
                if kind is None:
                    raise TypeError_(f"unresolved name '{target.name}'",
                                     target.span)
                if not kind.endswith("[]"):
                    raise TypeError_(f"'{target.name}' is not an array",
                                     target.span)
                if typecheck(decls, target.index, allow_clock_atoms=False) != "int":
                    raise TypeError_("array index must be int",
                                     target.index.span)
                expected = kind[:-2]
            else:
                raise TypeError_("invalid assignment target", s.span)
            got = typecheck(decls, s.value, allow_clock_atoms=False)
            if got != expected:
                raise TypeError_(
                    f"cannot assign {got} to {expected} '{_target_name(target)}'",
                    s.span)
        elif isinstance(s, IfStmt):
            if typecheck(decls, s.cond, allow_clock_atoms=False) != "bool":
                raise TypeError_("if condition must be bool", s.cond.span)
            typecheck_update(decls, s.then, macros)
            typecheck_update(decls, s.orelse, macros)
        elif isinstance(s, MacroCall):
            if s.name not in macros:
                raise TypeError_(f"unknown update macro '{s.name}'", s.span)
            typecheck_update(decls, macros[s.name], macros)
        else:
            raise TypeError_(f"unsupported statement {type(s).__name__}",
                             NO_SPAN)


def _target_name(t: Expr) -> str:
    return t.name if isinstance(t, (VarRef, ArrayRef)) else "?"


# ---------------------------------------------------------------------------
# Checked 64-bit arithmetic
# ---------------------------------------------------------------------------

def _ck(v: int, span: Span = NO_SPAN) -> int:
    if v < INT_MIN or v > INT_MAX:
        raise EvalError("integer overflow", span)
    return v


def int_div(a: int, b: int, span: Span = NO_SPAN) -> int:
    """C-style truncating division."""
    if b == 0:
        raise EvalError("division by zero", span)
    q = abs(a) // abs(b)
    return _ck(-q if (a < 0) != (b < 0) else q, span)


def int_mod(a: int, b: int, span: Span = NO_SPAN) -> int:
    """C-style remainder: a == div(a,b)*b + mod(a,b)."""
    if b == 0:
        raise EvalError("modulo by zero", span)
    return _ck(a - int_div(a, b, span) * b, span)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

Env = dict  # name -> int | bool | list


def eval_expr(e: Expr, env: Env, locations: Mapping[str, str] | None = None):
    """Evaluate an expression; pure, deterministic, no side effects.

    `locations` maps instance name -> current location name and is required
    only when the expression contains Proc.Loc predicates.  Clock atoms are
    evaluated against numeric clock entries present in env.
    """
    if isinstance(e, IntLit):
        return e.value
    if isinstance(e, BoolLit):
        return e.value
    if isinstance(e, VarRef):
        try:
            return env[e.name]
        except KeyError:
            raise EvalError(f"unbound name '{e.name}'", e.span) from None
    if isinstance(e, ArrayRef):
        try:
            arr = env[e.name]
        except KeyError:
            raise EvalError(f"unbound name '{e.name}'", e.span) from None
        idx = eval_expr(e.index, env, locations)
        if not 0 <= idx < len(arr):
            raise EvalError(
                f"index {idx} out of bounds for '{e.name}'", e.span)
        return arr[idx]
    if isinstance(e, Unary):
        v = eval_expr(e.operand, env, locations)
        if e.op == "-":
            return _ck(-v, e.span)
        return not v
    if isinstance(e, Binary):
        if e.op == "&&":
            return bool(eval_expr(e.lhs, env, locations)) and \
                bool(eval_expr(e.rhs, env, locations))
        if e.op == "||":
            return bool(eval_expr(e.lhs, env, locations)) or \
                bool(eval_expr(e.rhs, env, locations))
        if e.op == "imply":
            return (not eval_expr(e.lhs, env, locations)) or \
                bool(eval_expr(e.rhs, env, locations))
        a = eval_expr(e.lhs, env, locations)
        b = eval_expr(e.rhs, env, locations)
        op = e.op
        if op == "+":
            return _ck(a + b, e.span)
        if op == "-":
            return _ck(a - b, e.span)
        if op == "*":
            return _ck(a * b, e.span)
        if op == "/":
            return int_div(a, b, e.span)
        if op == "%":
            return int_mod(a, b, e.span)
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == "==":
            return a == b
        if op == "!=":
            return a != b
        if op == ">=":
            return a >= b
        if op == ">":
            return a > b
        raise EvalError(f"unknown operator '{op}'", e.span)
    if isinstance(e, LocPredicate):
        if locations is None:
            raise EvalError(
                f"no location context for '{e.process}.{e.location}'", e.span)
        return locations.get(e.process) == e.location
    raise EvalError(f"cannot evaluate {type(e).__name__}", NO_SPAN)


def exec_update(stmts: Iterable[Stmt], env: Env,
                macros: Mapping[str, tuple[Stmt, ...]] | None = None,
                locations: Mapping[str, str] | None = None) -> Env:
    """Execute a statement sequence left to right on a copy of env."""
    new_env = {k: (list(v) if isinstance(v, list) else v)
               for k, v in env.items()}
    _exec_into(stmts, new_env, macros or {}, locations)
    return new_env


def _exec_into(stmts: Iterable[Stmt], env: Env,
               macros: Mapping[str, tuple[Stmt, ...]],
               locations: Mapping[str, str] | None) -> None:
    for s in stmts:
        if isinstance(s, Assign):
            val = eval_expr(s.value, env, locations)
            if isinstance(val, int) and not isinstance(val, bool):
                _ck(val, s.span)
            t = s.target
            if isinstance(t, VarRef):
                env[t.name] = val
            else:
                idx = eval_expr(t.index, env, locations)
                arr = env[t.name]
                if not 0 <= idx < len(arr):
                    raise EvalError(
                        f"index {idx} out of bounds for '{t.name}'", s.span)
                arr[idx] = val
        elif isinstance(s, IfStmt):
            if eval_expr(s.cond, env, locations):
                _exec_into(s.then, env, macros, locations)
            else:
                _exec_into(s.orelse, env, macros, locations)
        elif isinstance(s, MacroCall):
            _exec_into(macros[s.name], env, macros, locations)


# ---------------------------------------------------------------------------
# Compilation to Python closures (hot path for the simulator)
# ---------------------------------------------------------------------------

def compile_expr(e: Expr) -> Callable[[Env], object]:
    """Compile an expression to a Python closure over an env dict.

    Semantics match eval_expr: checked 64-bit arithmetic, truncating
    division, bounds-checked indexing.  Location predicates are not
    supported here (the engines resolve them structurally).
    """
    src = _gen(e)
    code = compile(src, "<tachyon-expr>", "eval")
    glb = {"_div": int_div, "_mod": int_mod, "_ck": _ck,
           "_idx": _checked_index}
    return lambda env: eval(code, glb, {"E": env})


def compile_update(stmts: Iterable[Stmt],
                   macros: Mapping[str, tuple[Stmt, ...]] | None = None
                   ) -> Callable[[Env], None]:
    """Compile a statement sequence to an in-place env mutator."""
    macros = macros or {}
    lines: list[str] = []
    _gen_stmts(stmts, macros, lines, "    ")
    if not lines:
        lines = ["    pass"]
    src = "def _upd(E):\n" + "\n".join(lines)
    glb = {"_div": int_div, "_mod": int_mod, "_ck": _ck,
           "_idx": _checked_index}
    exec(compile(src, "<tachyon-update>", "exec"), glb)
    return glb["_upd"]


def _checked_index(arr: list, i: int, name: str):
    if not 0 <= i < len(arr):
        raise EvalError(f"index {i} out of bounds for '{name}'")
    return i


def _gen(e: Expr) -> str:
    if isinstance(e, IntLit):
        return repr(e.value)
    if isinstance(e, BoolLit):
        return repr(e.value)
    if isinstance(e, VarRef):
        return f"E[{e.name!r}]"
    if isinstance(e, ArrayRef):
        return (f"E[{e.name!r}][_idx(E[{e.name!r}], {_gen(e.index)}, "
                f"{e.name!r})]")
    if isinstance(e, Unary):
        if e.op == "-":
            return f"_ck(-({_gen(e.operand)}))"
        return f"(not ({_gen(e.operand)}))"
    if isinstance(e, Binary):
        a, b = _gen(e.lhs), _gen(e.rhs)
        op = e.op
        if op in ("+", "-", "*"):
            return f"_ck(({a}) {op} ({b}))"
        if op == "/":
            return f"_div({a}, {b})"
        if op == "%":
            return f"_mod({a}, {b})"
        if op == "&&":
            return f"(({a}) and ({b}))"
        if op == "||":
            return f"(({a}) or ({b}))"
        if op == "imply":
            return f"((not ({a})) or ({b}))"
        return f"(({a}) {op} ({b}))"
    if isinstance(e, LocPredicate):
        raise TypeError_(
            f"location predicate '{e.process}.{e.location}' cannot appear in "
            "compiled model code", e.span)
    raise TypeError_(f"cannot compile {type(e).__name__}")


def _gen_stmts(stmts: Iterable[Stmt], macros, lines: list[str],
               indent: str) -> None:
    for s in stmts:
        if isinstance(s, Assign):
            t = s.target
            if isinstance(t, VarRef):
                lines.append(f"{indent}E[{t.name!r}] = {_gen(s.value)}")
            else:
                lines.append(
                    f"{indent}E[{t.name!r}][_idx(E[{t.name!r}], "
                    f"{_gen(t.index)}, {t.name!r})] = {_gen(s.value)}")
        elif isinstance(s, IfStmt):
            lines.append(f"{indent}if {_gen(s.cond)}:")
            if s.then:
                _gen_stmts(s.then, macros, lines, indent + "    ")
            else:
                lines.append(f"{indent}    pass")
            if s.orelse:
                lines.append(f"{indent}else:")
                _gen_stmts(s.orelse, macros, lines, indent + "    ")
        elif isinstance(s, MacroCall):
            _gen_stmts(macros[s.name], macros, lines, indent)


# Convenience constructors used by tests and the model builder ---------------

def conj(*parts: Expr) -> Expr:
    it = [p for p in parts if p is not None]
    if not it:
        return BoolLit(True)
    out = it[0]
    for p in it[1:]:
        out = Binary("&&", out, p)
    return out
