"""Recursive-descent parser for the model DSL (.tan) and the query
language (.q), plus a round-trip pretty printer.

The grammar is line-oriented with C-like tokens; `//` and `#` start
comments.  Operator precedence, lowest to highest:
`imply` (right) < `||` < `&&` < comparisons < `+ -` < `* / %` < unary.
`->` is reserved for leads-to at query top level only; `-->` is accepted
as a synonym.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .diagnostics import Diagnostic, Span, NO_SPAN
from .expr import (Assign, ArrayRef, Binary, BoolLit, Expr, IfStmt, IntLit,
                   LocPredicate, MacroCall, Stmt, Unary, VarRef)
from .model import (ChannelDecl, ClockConstraint, Edge, InstanceSpec,
                    Location, SelectBinding, Sync, TANetwork, Template,
                    VarDecl, build_instances, validate_network, _try_fold,
                    NORMAL, URGENT, COMMITTED)

MAX_DIAGNOSTICS = 20

KEYWORDS = {
    "const", "clock", "var", "chan", "broadcast", "macro", "template",
    "system", "init", "urgent", "committed", "location", "branchpoint",
    "edge", "guard", "sync", "update", "select", "weight", "controllable",
    "uncontrollable", "inv", "if", "else", "true", "false", "int", "bool",
    "imply", "and", "or", "not",
}

_PUNCT = ["-->", ":=", "<>", "->", "==", "!=", "<=", ">=", "&&", "||",
          "{", "}", "(", ")", "[", "]", ",", ";", ":", ".", "!", "?",
          "<", ">", "+", "-", "*", "/", "%", "="]


@dataclass
class Token:
    kind: str   # "ident" | "int" | "kw" | punctuation itself | "eof"
    value: str
    span: Span


class Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def tokens(self) -> list[Token]:
        out = []
        while True:
            tok = self._next()
            out.append(tok)
            if tok.kind == "eof":
                return out

    def _advance(self, n: int) -> None:
        for _ in range(n):
            if self.pos < len(self.text) and self.text[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def _next(self) -> Token:
        text, n = self.text, len(self.text)
        while self.pos < n:
            c = text[self.pos]
            if c in " \t\r\n":
                self._advance(1)
            elif c == "#" or text.startswith("//", self.pos):
                while self.pos < n and text[self.pos] != "\n":
                    self._advance(1)
            else:
                break
        if self.pos >= n:
            return Token("eof", "", Span(n, n, self.line, self.col))
        start, line, col = self.pos, self.line, self.col
        c = text[self.pos]
        if c.isdigit():
            while self.pos < n and text[self.pos].isdigit():
                self._advance(1)
            return Token("int", text[start:self.pos],
                         Span(start, self.pos, line, col))
        if c.isalpha() or c == "_":
            while self.pos < n and (text[self.pos].isalnum()
                                    or text[self.pos] == "_"):
                self._advance(1)
            word = text[start:self.pos]
            kind = "kw" if word in KEYWORDS else "ident"
            return Token(kind, word, Span(start, self.pos, line, col))
        for p in _PUNCT:
            if text.startswith(p, self.pos):
                self._advance(len(p))
                return Token(p, p, Span(start, self.pos, line, col))
        self._advance(1)
        return Token("error", c, Span(start, self.pos, line, col))


class SyntaxBail(Exception):
    pass


class _ParserBase:
    def __init__(self, text: str):
        self.toks = Lexer(text).tokens()
        self.i = 0
        self.diags: list[Diagnostic] = []

    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, kind: str, value: str | None = None) -> bool:
        t = self.cur
        return t.kind == kind and (value is None or t.value == value)

    def advance(self) -> Token:
        t = self.cur
        if t.kind != "eof":
            self.i += 1
        return t

    def error(self, msg: str, span: Span | None = None) -> None:
        self.diags.append(Diagnostic(msg, span or self.cur.span))
        if len(self.diags) >= MAX_DIAGNOSTICS:
            raise SyntaxBail()

    def expect(self, kind: str, what: str | None = None) -> Token:
        if self.at(kind) or (self.cur.kind == "kw" and self.cur.value == kind):
            return self.advance()
        self.error(f"expected {what or kind!r}, found "
                   f"{self.cur.value or 'end of input'!r}")
        raise _Resync()

    def expect_kw(self, word: str) -> Token:
        if self.at("kw", word):
            return self.advance()
        self.error(f"expected '{word}', found "
                   f"{self.cur.value or 'end of input'!r}")
        raise _Resync()


class _Resync(Exception):
    pass


# ---------------------------------------------------------------------------
# Expression parsing (shared by model and query grammars)
# ---------------------------------------------------------------------------

class _ExprMixin:
    def parse_expr(self) -> Expr:
        return self._imply()

    def _imply(self) -> Expr:
        lhs = self._or()
        if self.at("kw", "imply"):
            sp = self.advance().span
            rhs = self._imply()  # right-associative
            return Binary("imply", lhs, rhs, span=sp)
        return lhs

    def _or(self) -> Expr:
        lhs = self._and()
        while self.at("||") or self.at("kw", "or"):
            sp = self.advance().span
            lhs = Binary("||", lhs, self._and(), span=sp)
        return lhs

    def _and(self) -> Expr:
        lhs = self._cmp()
        while self.at("&&") or self.at("kw", "and"):
            sp = self.advance().span
            lhs = Binary("&&", lhs, self._cmp(), span=sp)
        return lhs

    def _cmp(self) -> Expr:
        lhs = self._add()
        if self.cur.kind in ("<", "<=", "==", "!=", ">=", ">"):
            op = self.advance()
            return Binary(op.kind, lhs, self._add(), span=op.span)
        return lhs

    def _add(self) -> Expr:
        lhs = self._mul()
        while self.cur.kind in ("+", "-"):
            op = self.advance()
            lhs = Binary(op.kind, lhs, self._mul(), span=op.span)
        return lhs

    def _mul(self) -> Expr:
        lhs = self._unary()
        while self.cur.kind in ("*", "/", "%"):
            op = self.advance()
            lhs = Binary(op.kind, lhs, self._unary(), span=op.span)
        return lhs

    def _unary(self) -> Expr:
        if self.at("!") or self.at("kw", "not"):
            sp = self.advance().span
            return Unary("!", self._unary(), span=sp)
        if self.at("-"):
            sp = self.advance().span
            return Unary("-", self._unary(), span=sp)
        return self._primary()

    def _primary(self) -> Expr:
        t = self.cur
        if t.kind == "int":
            self.advance()
            return IntLit(int(t.value), span=t.span)
        if t.kind == "kw" and t.value in ("true", "false"):
            self.advance()
            return BoolLit(t.value == "true", span=t.span)
        if t.kind == "(":
            self.advance()
            e = self.parse_expr()
            self.expect(")")
            return e
        if t.kind == "ident":
            self.advance()
            name = t.value
            # Proc(args).Loc  |  Proc.Loc  |  arr[e]  |  var
            if self.at("(") and self._looks_like_instance_ref():
                self.advance()
                args = []
                if not self.at(")"):
                    while True:
                        neg = False
                        if self.at("-"):
                            self.advance()
                            neg = True
                        a = self.expect("int", "integer argument")
                        args.append(-int(a.value) if neg else int(a.value))
                        if self.at(","):
                            self.advance()
                            continue
                        break
                self.expect(")")
                self.expect(".")
                loc = self.expect("ident", "location name")
                proc = f"{name}({','.join(str(a) for a in args)})" if args \
                    else name
                return LocPredicate(proc, loc.value, span=t.span)
            if self.at("."):
                self.advance()
                loc = self.expect("ident", "location name")
                return LocPredicate(name, loc.value, span=t.span)
            if self.at("["):
                self.advance()
                idx = self.parse_expr()
                self.expect("]")
                return ArrayRef(name, idx, span=t.span)
            return VarRef(name, span=t.span)
        self.error(f"expected expression, found {t.value or 'end of input'!r}")
        raise _Resync()

    def _looks_like_instance_ref(self) -> bool:
        """Disambiguate `Name(0).Loc` from a parse position at '('. The model
        grammar has no call expressions, so '(' after an identifier only
        occurs in instance references."""
        j = self.i + 1
        depth = 1
        while j < len(self.toks) and depth:
            k = self.toks[j].kind
            if k == "(":
                depth += 1
            elif k == ")":
                depth -= 1
            elif k == "eof":
                return False
            j += 1
        return j < len(self.toks) and self.toks[j].kind == "."


# ---------------------------------------------------------------------------
# Model parser
# ---------------------------------------------------------------------------

class ModelParser(_ParserBase, _ExprMixin):
    def __init__(self, text: str):
        super().__init__(text)
        self.constants: list[tuple[str, int]] = []
        self.clocks: list[str] = []
        self.variables: list[VarDecl] = []
        self.channels: list[ChannelDecl] = []
        self.macros: list[tuple[str, tuple[Stmt, ...]]] = []
        self.templates: list[Template] = []
        self.system: list[InstanceSpec] = []
        self._clock_names: set[str] = set()

    def parse(self) -> TANetwork | None:
        if self.at("eof"):
            self.error("expected declaration")
            return None
        try:
            while not self.at("eof"):
                try:
                    self._item()
                except _Resync:
                    self._sync()
        except SyntaxBail:
            return None
        if self.diags:
            return None
        net = TANetwork(
            constants=tuple(self.constants), clocks=tuple(self.clocks),
            variables=tuple(self.variables), channels=tuple(self.channels),
            macros=tuple(self.macros), templates=tuple(self.templates),
            system=tuple(self.system))
        net = _fold_constants(net)
        try:
            net = build_instances(net)
        except Exception as e:
            self.diags.append(Diagnostic(str(e)))
            return None
        return net

    def _sync(self) -> None:
        depth = 0
        while not self.at("eof"):
            t = self.advance()
            if t.kind == "{":
                depth += 1
            elif t.kind == "}":
                if depth == 0:
                    return
                depth -= 1
            elif t.kind == ";" and depth == 0:
                return

    def _const_env(self) -> dict[str, int]:
        return dict(self.constants)

    def _fold(self, e: Expr, what: str) -> int:
        v = _try_fold(e, self._const_env())
        if v is None:
            self.error(f"{what} must be a constant integer",
                       getattr(e, "span", NO_SPAN))
            raise _Resync()
        return v

    def _item(self) -> None:
        t = self.cur
        if t.kind != "kw":
            self.error("expected declaration")
            raise _Resync()
        if t.value == "const":
            self.advance()
            name = self.expect("ident", "constant name")
            self.expect("=")
            val = self._fold(self.parse_expr(), "constant value")
            self.expect(";")
            self.constants.append((name.value, val))
        elif t.value == "clock":
            self.advance()
            self.clocks.extend(self._clock_list())
        elif t.value == "var":
            self.advance()
            self.variables.append(self._var_decl())
        elif t.value in ("chan", "broadcast"):
            self._chan_decl()
        elif t.value == "macro":
            self.advance()
            name = self.expect("ident", "macro name")
            self.expect("{")
            body = self._stmts_until("}")
            self.expect("}")
            self.macros.append((name.value, tuple(body)))
        elif t.value == "template":
            self._template()
        elif t.value == "system":
            self._system()
        else:
            self.error(f"unexpected '{t.value}'")
            raise _Resync()

    def _clock_list(self) -> list[str]:
        names = [self.expect("ident", "clock name").value]
        while self.at(","):
            self.advance()
            names.append(self.expect("ident", "clock name").value)
        self.expect(";")
        self._clock_names.update(names)
        return names

    def _var_decl(self) -> VarDecl:
        name = self.expect("ident", "variable name")
        array_len = None
        if self.at("["):
            self.advance()
            array_len = self._fold(self.parse_expr(), "array length")
            self.expect("]")
        self.expect(":")
        if self.at("kw", "int"):
            vtype = "int"
        elif self.at("kw", "bool"):
            vtype = "bool"
        else:
            self.error("expected 'int' or 'bool'")
            raise _Resync()
        self.advance()
        init = None
        if self.at("="):
            self.advance()
            init = self.parse_expr()
        self.expect(";")
        return VarDecl(name.value, vtype, array_len, init, span=name.span)

    def _chan_decl(self) -> None:
        broadcast = False
        if self.at("kw", "broadcast"):
            self.advance()
            broadcast = True
        self.expect_kw("chan")
        name = self.expect("ident", "channel name")
        array_len = None
        if self.at("["):
            self.advance()
            array_len = self._fold(self.parse_expr(), "channel array length")
            self.expect("]")
        self.expect(";")
        self.channels.append(ChannelDecl(name.value, array_len, broadcast,
                                         span=name.span))

    # -- statements ---------------------------------------------------------

    def _stmts_until(self, *stop: str) -> list[Stmt]:
        out: list[Stmt] = []
        while not self.at("eof") and self.cur.kind not in stop \
                and not (self.cur.kind == "kw" and self.cur.value in stop):
            out.append(self._stmt())
        return out

    def _stmt(self) -> Stmt:
        if self.at("kw", "if"):
            sp = self.advance().span
            self.expect("(")
            cond = self.parse_expr()
            self.expect(")")
            self.expect("{")
            then = self._stmts_until("}")
            self.expect("}")
            orelse: list[Stmt] = []
            if self.at("kw", "else"):
                self.advance()
                self.expect("{")
                orelse = self._stmts_until("}")
                self.expect("}")
            return IfStmt(cond, tuple(then), tuple(orelse), span=sp)
        name = self.expect("ident", "statement")
        if self.at("(") and self.peek().kind == ")":
            self.advance()
            self.advance()
            self.expect(";")
            return MacroCall(name.value, span=name.span)
        target: Expr
        if self.at("["):
            self.advance()
            idx = self.parse_expr()
            self.expect("]")
            target = ArrayRef(name.value, idx, span=name.span)
        else:
            target = VarRef(name.value, span=name.span)
        self.expect(":=")
        value = self.parse_expr()
        self.expect(";")
        return Assign(target, value, span=name.span)

    # -- templates ----------------------------------------------------------

    def _template(self) -> None:
        self.expect_kw("template")
        name = self.expect("ident", "template name")
        self.expect("(")
        params: list[str] = []
        if not self.at(")"):
            while True:
                p = self.expect("ident", "parameter name")
                self.expect(":")
                self.expect_kw("int")
                params.append(p.value)
                if self.at(","):
                    self.advance()
                    continue
                break
        self.expect(")")
        self.expect("{")
        clocks: list[str] = []
        variables: list[VarDecl] = []
        locations: list[Location] = []
        edges: list[Edge] = []
        initial: str | None = None
        local_clocks: set[str] = set()
        while not self.at("}") and not self.at("eof"):
            try:
                t = self.cur
                if t.kind != "kw":
                    self.error("expected template item")
                    raise _Resync()
                if t.value == "clock":
                    self.advance()
                    names = [self.expect("ident", "clock name").value]
                    while self.at(","):
                        self.advance()
                        names.append(self.expect("ident", "clock name").value)
                    self.expect(";")
                    clocks.extend(names)
                    local_clocks.update(names)
                elif t.value == "var":
                    self.advance()
                    variables.append(self._var_decl())
                elif t.value in ("init", "urgent", "committed", "location"):
                    loc, is_init = self._location()
                    locations.append(loc)
                    if is_init:
                        if initial is not None:
                            self.error("duplicate initial location", loc.span)
                        initial = loc.name
                elif t.value == "branchpoint":
                    self.advance()
                    bn = self.expect("ident", "branchpoint name")
                    self.expect(";")
                    locations.append(Location(bn.value, COMMITTED,
                                              is_branchpoint=True,
                                              span=bn.span))
                elif t.value == "edge":
                    edges.append(self._edge(local_clocks))
                else:
                    self.error(f"unexpected '{t.value}' in template")
                    raise _Resync()
            except _Resync:
                self._sync()
        self.expect("}")
        if initial is None:
            self.error(f"template {name.value} has no initial location",
                       name.span)
            initial = locations[0].name if locations else ""
        self.templates.append(Template(
            name=name.value, params=tuple(params), clocks=tuple(clocks),
            variables=tuple(variables), locations=tuple(locations),
            initial=initial, edges=tuple(edges), span=name.span))

    def _location(self) -> tuple[Location, bool]:
        is_init = False
        kind = NORMAL
        while self.cur.kind == "kw" and self.cur.value in ("init", "urgent",
                                                           "committed"):
            if self.cur.value == "init":
                is_init = True
            else:
                kind = self.cur.value
            self.advance()
        self.expect_kw("location")
        name = self.expect("ident", "location name")
        invariant: list[ClockConstraint] = []
        weight = 1
        if self.at("{"):
            self.advance()
            while not self.at("}") and not self.at("eof"):
                if self.at("kw", "inv"):
                    self.advance()
                    invariant.append(self._clock_constraint())
                    while self.at(",") or self.at("&&"):
                        self.advance()
                        invariant.append(self._clock_constraint())
                    self.expect(";")
                elif self.at("kw", "weight"):
                    self.advance()
                    weight = self._fold(self.parse_expr(), "weight")
                    self.expect(";")
                else:
                    self.error("expected 'inv' or 'weight'")
                    raise _Resync()
            self.expect("}")
        else:
            self.expect(";")
        return Location(name.value, kind, tuple(invariant), weight,
                        span=name.span), is_init

    def _clock_constraint(self) -> ClockConstraint:
        x = self.expect("ident", "clock name")
        y = None
        if self.at("-"):
            self.advance()
            y = self.expect("ident", "clock name").value
        if self.cur.kind not in ("<", "<=", "==", ">=", ">"):
            self.error("expected comparison in clock constraint")
            raise _Resync()
        op = self.advance().kind
        c = self._fold(self.parse_expr(), "clock bound")
        return ClockConstraint(x.value, op, c, y, span=x.span)

    def _edge(self, local_clocks: set[str]) -> Edge:
        sp = self.expect_kw("edge").span
        source = self.expect("ident", "source location").value
        self.expect("->")
        target = self.expect("ident", "target location").value
        self.expect("{")
        selects: list[SelectBinding] = []
        guard_clocks: list[ClockConstraint] = []
        guard_data: Expr | None = None
        sync: Sync | None = None
        update: list[Stmt] = []
        controllable = False
        weight = 1
        while not self.at("}") and not self.at("eof"):
            t = self.cur
            if t.kind != "kw":
                self.error("expected edge item")
                raise _Resync()
            if t.value == "select":
                self.advance()
                while True:
                    n = self.expect("ident", "select name")
                    self.expect(":")
                    self.expect_kw("int")
                    self.expect("[")
                    lo = self._fold(self.parse_expr(), "select bound")
                    self.expect(",")
                    hi = self._fold(self.parse_expr(), "select bound")
                    self.expect("]")
                    selects.append(SelectBinding(n.value, lo, hi))
                    if self.at(","):
                        self.advance()
                        continue
                    break
                self.expect(";")
            elif t.value == "guard":
                self.advance()
                e = self.parse_expr()
                self.expect(";")
                clocks, data = self._split_guard(e, local_clocks)
                guard_clocks.extend(clocks)
                if data is not None:
                    guard_data = data if guard_data is None else \
                        Binary("&&", guard_data, data)
            elif t.value == "sync":
                self.advance()
                ch = self.expect("ident", "channel name")
                index = None
                if self.at("["):
                    self.advance()
                    index = self.parse_expr()
                    self.expect("]")
                if self.at("!") or self.at("?"):
                    direction = self.advance().kind
                else:
                    self.error("expected '!' or '?' after channel")
                    raise _Resync()
                self.expect(";")
                sync = Sync(ch.value, direction, index)
            elif t.value == "update":
                self.advance()
                update.extend(self._stmts_until(
                    "}", "guard", "sync", "select", "weight",
                    "controllable", "uncontrollable", "update"))
            elif t.value == "weight":
                self.advance()
                weight = self._fold(self.parse_expr(), "weight")
                self.expect(";")
            elif t.value in ("controllable", "uncontrollable"):
                controllable = t.value == "controllable"
                self.advance()
                self.expect(";")
            else:
                self.error(f"unexpected '{t.value}' in edge")
                raise _Resync()
        self.expect("}")
        return Edge(source=source, target=target, selects=tuple(selects),
                    guard_clocks=tuple(guard_clocks), guard_data=guard_data,
                    sync=sync, update=tuple(update),
                    controllable=controllable, weight=weight, span=sp)

    def _split_guard(self, e: Expr, local_clocks: set[str]
                     ) -> tuple[list[ClockConstraint], Expr | None]:
        """Split a guard conjunction into clock constraints and a data part.
        Clock atoms must be top-level conjuncts."""
        clock_names = self._clock_names | local_clocks
        conjuncts: list[Expr] = []

        def flatten(x: Expr) -> None:
            if isinstance(x, Binary) and x.op == "&&":
                flatten(x.lhs)
                flatten(x.rhs)
            else:
                conjuncts.append(x)

        flatten(e)
        clocks: list[ClockConstraint] = []
        data: Expr | None = None
        for c in conjuncts:
            cc = self._as_clock_constraint(c, clock_names)
            if cc is not None:
                clocks.append(cc)
            else:
                if self._uses_clock(c, clock_names):
                    self.error("clock outside clock-constraint atom",
                               getattr(c, "span", NO_SPAN))
                data = c if data is None else Binary("&&", data, c)
        return clocks, data

    def _as_clock_constraint(self, e: Expr, clock_names: set[str]
                             ) -> ClockConstraint | None:
        if not isinstance(e, Binary) or e.op not in ("<", "<=", "==",
                                                     ">=", ">"):
            return None

        def side(x: Expr) -> tuple[str, str | None] | None:
            if isinstance(x, VarRef) and x.name in clock_names:
                return x.name, None
            if (isinstance(x, Binary) and x.op == "-"
                    and isinstance(x.lhs, VarRef)
                    and isinstance(x.rhs, VarRef)
                    and x.lhs.name in clock_names
                    and x.rhs.name in clock_names):
                return x.lhs.name, x.rhs.name
            return None

        mirror = {"<": ">", "<=": ">=", "==": "==", ">=": "<=", ">": "<"}
        lhs = side(e.lhs)
        if lhs is not None and not self._uses_clock(e.rhs, clock_names):
            c = _try_fold(e.rhs, self._const_env())
            if c is None:
                return None
            return ClockConstraint(lhs[0], e.op, c, lhs[1],
                                   span=getattr(e, "span", NO_SPAN))
        rhs = side(e.rhs)
        if rhs is not None and not self._uses_clock(e.lhs, clock_names):
            c = _try_fold(e.lhs, self._const_env())
            if c is None:
                return None
            return ClockConstraint(rhs[0], mirror[e.op], c, rhs[1],
                                   span=getattr(e, "span", NO_SPAN))
        return None

    def _uses_clock(self, e: Expr, clock_names: set[str]) -> bool:
        if isinstance(e, VarRef):
            return e.name in clock_names
        if isinstance(e, ArrayRef):
            return self._uses_clock(e.index, clock_names)
        if isinstance(e, Unary):
            return self._uses_clock(e.operand, clock_names)
        if isinstance(e, Binary):
            return self._uses_clock(e.lhs, clock_names) or \
                self._uses_clock(e.rhs, clock_names)
        return False

    def _system(self) -> None:
        self.expect_kw("system")
        while True:
            name = self.expect("ident", "template name")
            args: list[int] = []
            self.expect("(")
            if not self.at(")"):
                while True:
                    neg = False
                    if self.at("-"):
                        self.advance()
                        neg = True
                    a = self._fold(self.parse_expr(), "instance argument")
                    args.append(-a if neg else a)
                    if self.at(","):
                        self.advance()
                        continue
                    break
            self.expect(")")
            self.system.append(InstanceSpec(name.value, tuple(args),
                                            span=name.span))
            if self.at(","):
                self.advance()
                continue
            break
        self.expect(";")


def _fold_constants(net: TANetwork) -> TANetwork:
    """Replace references to declared constants by their literal values in
    every expression position (guards, updates, initializers, sync indices,
    macros)."""
    from dataclasses import replace
    from .model import subst_expr, subst_stmts, Sync as MSync
    consts = dict(net.constants)
    if not consts:
        return net

    def fix_var(v):
        return replace(v, init=subst_expr(v.init, consts, {}))

    def fix_edges(edges):
        out = []
        for e in edges:
            sync = e.sync
            if sync is not None and sync.index is not None:
                sync = MSync(sync.channel, sync.direction,
                             subst_expr(sync.index, consts, {}))
            out.append(replace(
                e, guard_data=subst_expr(e.guard_data, consts, {}),
                sync=sync, update=subst_stmts(e.update, consts, {})))
        return tuple(out)

    templates = tuple(
        replace(t, variables=tuple(fix_var(v) for v in t.variables),
                edges=fix_edges(t.edges))
        for t in net.templates)
    return replace(
        net,
        variables=tuple(fix_var(v) for v in net.variables),
        macros=tuple((n, subst_stmts(body, consts, {}))
                     for n, body in net.macros),
        templates=templates)


def parse_model(text: str) -> tuple[TANetwork | None, list[Diagnostic]]:
    """Parse and validate a model; on success the returned network already
    passed validate_network."""
    p = ModelParser(text)
    net = p.parse()
    if net is None:
        return None, p.diags
    diags = validate_network(net)
    if diags:
        return None, diags
    return net, []


def load_model(text: str) -> TANetwork:
    net, diags = parse_model(text)
    if net is None:
        msgs = "; ".join(d.message for d in diags[:5])
        raise ValueError(f"model does not parse: {msgs}")
    return net


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Query:
    text: str = field(default="", compare=False)


@dataclass(frozen=True)
class Reach(Query):
    phi: Expr = None


@dataclass(frozen=True)
class Invariant(Query):
    phi: Expr = None


@dataclass(frozen=True)
class LeadsTo(Query):
    p: Expr = None
    q: Expr = None


@dataclass(frozen=True)
class StrategyMin(Query):
    name: str = ""
    cost_var: str = ""
    horizon: int = 0
    observed_discrete: tuple[str, ...] = ()
    observed_continuous: tuple[str, ...] = ()
    horizon_clock: str = "t"


@dataclass(frozen=True)
class Estimate(Query):
    horizon: int = 0
    runs: int = 1
    mode: str = "max"
    expr: Expr = None
    under: str | None = None


class QueryParser(_ParserBase, _ExprMixin):
    def parse_query(self) -> Query:
        t = self.cur
        if t.kind == "ident" and t.value == "strategy":
            return self._strategy()
        if t.kind == "ident" and t.value == "E" and self.peek().kind == "<>":
            self.advance()
            self.advance()
            phi = self.parse_expr()
            self._finish()
            return Reach(phi=phi)
        if t.kind == "ident" and t.value == "E" and self.peek().kind == "[":
            return self._estimate()
        if t.kind == "ident" and t.value == "A" and self.peek().kind == "[" \
                and self.peek(2).kind == "]":
            self.advance()
            self.advance()
            self.advance()
            phi = self.parse_expr()
            self._finish()
            return Invariant(phi=phi)
        p = self.parse_expr()
        if self.at("->") or self.at("-->"):
            self.advance()
            q = self.parse_expr()
            self._finish()
            return LeadsTo(p=p, q=q)
        self.error("query needs a quantifier (E<>, A[], -->, strategy, E[..])")
        raise _Resync()

    def _finish(self) -> None:
        if not self.at("eof"):
            self.error(f"unexpected trailing '{self.cur.value}'")
            raise _Resync()

    def _int_value(self, what: str) -> int:
        v = _try_fold(self.parse_expr(), {})
        if v is None:
            self.error(f"{what} must be a constant integer")
            raise _Resync()
        return v

    def _strategy(self) -> StrategyMin:
        self.advance()  # strategy
        name = self.expect("ident", "strategy name").value
        self.expect("=")
        mine = self.expect("ident", "minE")
        if mine.value != "minE":
            self.error("only 'minE' strategies are supported", mine.span)
            raise _Resync()
        self.expect("(")
        cost = self.expect("ident", "cost variable").value
        self.expect(")")
        self.expect("[")
        self.expect("<=")
        horizon = self._int_value("horizon")
        self.expect("]")
        disc = self._name_list()
        self.expect("->")
        cont = self._name_list()
        self.expect(":")
        self.expect("<>")
        clock = self.expect("ident", "horizon clock").value
        self.expect("==")
        h2 = self._int_value("horizon")
        if h2 != horizon:
            self.error("strategy horizon and '<> clock==H' bound differ")
        self._finish()
        if horizon <= 0:
            self.error("horizon must be positive")
            raise _Resync()
        return StrategyMin(name=name, cost_var=cost, horizon=horizon,
                           observed_discrete=disc, observed_continuous=cont,
                           horizon_clock=clock)

    def _name_list(self) -> tuple[str, ...]:
        self.expect("{")
        names: list[str] = []
        if not self.at("}"):
            while True:
                names.append(self.expect("ident", "name").value)
                if self.at(","):
                    self.advance()
                    continue
                break
        self.expect("}")
        return tuple(names)

    def _estimate(self) -> Estimate:
        self.advance()  # E
        self.expect("[")
        head = self.expect("ident", "'time' or a clock name")
        self.expect("<=")
        horizon = self._int_value("horizon")
        self.expect(";")
        runs = int(self.expect("int", "run count").value)
        self.expect("]")
        self.expect("(")
        mode = self.expect("ident", "'max'")
        if mode.value != "max":
            self.error("only 'max' estimates are supported", mode.span)
            raise _Resync()
        self.expect(":")
        e = self.parse_expr()
        self.expect(")")
        under = None
        if self.at("ident") and self.cur.value == "under":
            self.advance()
            under = self.expect("ident", "strategy name").value
        self._finish()
        if horizon <= 0:
            self.error("horizon must be positive")
            raise _Resync()
        if runs < 1:
            self.error("run count must be at least 1")
            raise _Resync()
        _ = head
        return Estimate(horizon=horizon, runs=runs, mode="max", expr=e,
                        under=under)


def parse_queries(text: str) -> tuple[list[Query], list[Diagnostic]]:
    """One query per line; `#`/`//` comments.  Lines with errors produce
    diagnostics, the rest still parse (order preserved)."""
    queries: list[Query] = []
    diags: list[Diagnostic] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#") or \
                stripped.startswith("//"):
            continue
        qp = QueryParser(raw)
        try:
            q = qp.parse_query()
        except (_Resync, SyntaxBail):
            q = None
        if qp.diags or q is None:
            for d in qp.diags or [Diagnostic("could not parse query")]:
                d.span = Span(d.span.start, d.span.end, lineno,
                              d.span.col or 1)
                diags.append(d)
            continue
        object.__setattr__(q, "text", stripped)
        queries.append(q)
    return queries, diags


# ---------------------------------------------------------------------------
# Pretty printer
# ---------------------------------------------------------------------------

_PREC = {"imply": 1, "||": 2, "&&": 3,
         "<": 4, "<=": 4, "==": 4, "!=": 4, ">=": 4, ">": 4,
         "+": 5, "-": 5, "*": 6, "/": 6, "%": 6}


def expr_text(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, VarRef):
        return e.name
    if isinstance(e, ArrayRef):
        return f"{e.name}[{expr_text(e.index)}]"
    if isinstance(e, Unary):
        inner = expr_text(e.operand, 7)
        return f"{e.op}{inner}"
    if isinstance(e, LocPredicate):
        return f"{e.process}.{e.location}"
    if isinstance(e, Binary):
        prec = _PREC[e.op]
        right_bump = 0 if e.op == "imply" else 1
        s = (f"{expr_text(e.lhs, prec)} {e.op} "
             f"{expr_text(e.rhs, prec + right_bump)}")
        return f"({s})" if prec < parent_prec else s
    raise ValueError(f"cannot print {type(e).__name__}")


def _stmt_lines(stmts, indent: str) -> list[str]:
    out = []
    for s in stmts:
        if isinstance(s, Assign):
            out.append(f"{indent}{expr_text(s.target)} := "
                       f"{expr_text(s.value)};")
        elif isinstance(s, IfStmt):
            out.append(f"{indent}if ({expr_text(s.cond)}) {{")
            out.extend(_stmt_lines(s.then, indent + "  "))
            if s.orelse:
                out.append(f"{indent}}} else {{")
                out.extend(_stmt_lines(s.orelse, indent + "  "))
            out.append(f"{indent}}}")
        elif isinstance(s, MacroCall):
            out.append(f"{indent}{s.name}();")
    return out


def pretty_print(net: TANetwork) -> str:
    """Canonical text form; parse_model(pretty_print(n)) is structurally
    equal to n."""
    lines: list[str] = []
    for name, val in net.constants:
        lines.append(f"const {name} = {val};")
    for c in net.clocks:
        lines.append(f"clock {c};")
    for v in net.variables:
        lines.append(_var_text(v))
    for ch in net.channels:
        arr = f"[{ch.array_len}]" if ch.array_len is not None else ""
        bc = "broadcast " if ch.broadcast else ""
        lines.append(f"{bc}chan {ch.name}{arr};")
    for mname, body in net.macros:
        lines.append(f"macro {mname} {{")
        lines.extend(_stmt_lines(body, "  "))
        lines.append("}")
    for t in net.templates:
        params = ", ".join(f"{p}: int" for p in t.params)
        lines.append(f"template {t.name}({params}) {{")
        for c in t.clocks:
            lines.append(f"  clock {c};")
        for v in t.variables:
            lines.append("  " + _var_text(v))
        for loc in t.locations:
            lines.append("  " + _loc_text(loc, loc.name == t.initial))
        for e in t.edges:
            lines.extend(_edge_lines(e))
        lines.append("}")
    if net.system:
        sys_items = ", ".join(
            f"{s.template}({','.join(str(a) for a in s.args)})"
            for s in net.system)
        lines.append(f"system {sys_items};")
    return "\n".join(lines) + "\n"


def _var_text(v: VarDecl) -> str:
    arr = f"[{v.array_len}]" if v.array_len is not None else ""
    init = f" = {expr_text(v.init)}" if v.init is not None else ""
    return f"var {v.name}{arr}: {v.vtype}{init};"


def _loc_text(loc: Location, is_init: bool) -> str:
    if loc.is_branchpoint:
        return f"branchpoint {loc.name};"
    prefix = "init " if is_init else ""
    if loc.kind != NORMAL:
        prefix += loc.kind + " "
    body = []
    if loc.invariant:
        body.append("inv " + ", ".join(c.text() for c in loc.invariant) + ";")
    if loc.exit_weight != 1:
        body.append(f"weight {loc.exit_weight};")
    if body:
        return f"{prefix}location {loc.name} {{ {' '.join(body)} }}"
    return f"{prefix}location {loc.name};"


def _edge_lines(e: Edge) -> list[str]:
    items: list[str] = []
    if e.selects:
        sel = ", ".join(f"{s.name}: int[{s.lo},{s.hi}]" for s in e.selects)
        items.append(f"select {sel};")
    guard_parts = [c.text() for c in e.guard_clocks]
    if e.guard_data is not None:
        guard_parts.append(expr_text(e.guard_data))
    if guard_parts:
        items.append(f"guard {' && '.join(guard_parts)};")
    if e.sync is not None:
        idx = f"[{expr_text(e.sync.index)}]" if e.sync.index is not None \
            else ""
        items.append(f"sync {e.sync.channel}{idx}{e.sync.direction};")
    if e.update:
        stmt_text = " ".join(x.strip()
                             for x in _stmt_lines(e.update, ""))
        items.append(f"update {stmt_text}")
    if e.weight != 1:
        items.append(f"weight {e.weight};")
    if e.controllable:
        items.append("controllable;")
    body = " ".join(items)
    return [f"  edge {e.source} -> {e.target} {{ {body} }}"
            if body else f"  edge {e.source} -> {e.target} {{ }}"]
