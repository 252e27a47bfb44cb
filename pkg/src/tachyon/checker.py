"""Verification algorithms over the zone graph: reachability (E<>),
invariance (A[], checked as unreachability of the negation) and leads-to
(p --> q).

Leads-to soundness assumes time-divergent models; a warning to that effect
is attached to every leads-to verdict.  A state satisfies a predicate when
its data part holds on the Env and the zone intersected with the
predicate's clock atoms is non-empty (exists semantics).
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

from .diagnostics import TachyonError
from .expr import (Binary, BoolLit, Expr, IntLit, LocPredicate, Unary,
                   VarRef, eval_expr, typecheck)
from .model import ClockConstraint, TANetwork
from .parser import (Estimate, Invariant, LeadsTo, Query, Reach, StrategyMin)
from .runtime import NetworkRuntime
from .zones import (Dbm, SymState, dbm_constrain, dbm_subset,
                    constraint_bounds, initial_symstate, symbolic_successors)

DEFAULT_CAP = 5_000_000

NONZENO_WARNING = ("leads-to assumes a time-divergent (non-zeno) model; "
                   "zeno cycles are not detected")


class CapExceeded(Exception):
    pass


class QueryRoutingError(TachyonError):
    """Raised when an estimation/strategy query reaches the checker."""


@dataclass
class Verdict:
    satisfied: bool | None          # None when the state cap was exceeded
    witness: list | None = None     # [(action label, SymState), ...]
    states: int = 0
    peak_frontier: int = 0
    time_ms: float = 0.0
    bound_exceeded: bool = False
    warning: str | None = None
    query_text: str = ""

    def to_json(self) -> dict:
        return {
            "query": self.query_text,
            "verdict": ("bound exceeded" if self.bound_exceeded
                        else ("Valid" if self.satisfied else "Invalid")),
            "states": self.states,
            "time_ms": round(self.time_ms, 3),
            "witness": ([lbl for lbl, _ in self.witness]
                        if self.witness else None),
            "warning": self.warning,
        }


# ---------------------------------------------------------------------------
# Predicate satisfaction on symbolic states
# ---------------------------------------------------------------------------

def _collect_clock_atoms(e: Expr, rt: NetworkRuntime,
                         out: dict[int, ClockConstraint]) -> None:
    if isinstance(e, Binary):
        cc = _as_atom(e, rt)
        if cc is not None:
            out[id(e)] = cc
            return
        _collect_clock_atoms(e.lhs, rt, out)
        _collect_clock_atoms(e.rhs, rt, out)
    elif isinstance(e, Unary):
        _collect_clock_atoms(e.operand, rt, out)


def _as_atom(e: Binary, rt: NetworkRuntime) -> ClockConstraint | None:
    if e.op not in ("<", "<=", "==", ">=", ">"):
        return None

    def clock_side(x):
        if isinstance(x, VarRef) and x.name in rt.clock_index:
            return x.name, None
        if (isinstance(x, Binary) and x.op == "-" and
                isinstance(x.lhs, VarRef) and isinstance(x.rhs, VarRef) and
                x.lhs.name in rt.clock_index and
                x.rhs.name in rt.clock_index):
            return x.lhs.name, x.rhs.name
        return None

    mirror = {"<": ">", "<=": ">=", "==": "==", ">=": "<=", ">": "<"}
    ls = clock_side(e.lhs)
    if ls is not None and isinstance(e.rhs, IntLit):
        return ClockConstraint(ls[0], e.op, e.rhs.value, ls[1])
    rs = clock_side(e.rhs)
    if rs is not None and isinstance(e.lhs, IntLit):
        return ClockConstraint(rs[0], mirror[e.op], e.lhs.value, rs[1])
    return None


def _negations(cc: ClockConstraint) -> list[ClockConstraint]:
    neg = {"<": ">=", "<=": ">", ">=": "<", ">": "<="}
    if cc.op in neg:
        return [ClockConstraint(cc.x, neg[cc.op], cc.c, cc.y)]
    return [ClockConstraint(cc.x, "<", cc.c, cc.y),
            ClockConstraint(cc.x, ">", cc.c, cc.y)]


def sat_exists(state: SymState, phi: Expr, rt: NetworkRuntime) -> bool:
    """True when some clock valuation in the zone satisfies phi together
    with the discrete Env and location vector."""
    atoms: dict[int, ClockConstraint] = {}
    _collect_clock_atoms(phi, rt, atoms)
    locations = rt.location_names(state.locs)

    def eval_with(assign: dict[int, bool], e: Expr):
        if id(e) in assign:
            return assign[id(e)]
        if isinstance(e, Binary):
            if e.op == "&&":
                return eval_with(assign, e.lhs) and eval_with(assign, e.rhs)
            if e.op == "||":
                return eval_with(assign, e.lhs) or eval_with(assign, e.rhs)
            if e.op == "imply":
                return (not eval_with(assign, e.lhs)) or \
                    eval_with(assign, e.rhs)
            a = eval_with(assign, e.lhs)
            b = eval_with(assign, e.rhs)
            return eval_expr(Binary(e.op, IntLit(a) if not isinstance(a, bool)
                                    else BoolLit(a),
                                    IntLit(b) if not isinstance(b, bool)
                                    else BoolLit(b)), {}, locations)
        if isinstance(e, Unary):
            v = eval_with(assign, e.operand)
            return -v if e.op == "-" else (not v)
        return eval_expr(e, state.env, locations)

    if not atoms:
        return bool(eval_with({}, phi))

    items = list(atoms.items())

    def refine(zone: Dbm, i: int, assign: dict[int, bool]) -> bool:
        if zone.empty:
            return False
        if i == len(items):
            return bool(eval_with(assign, phi))
        node_id, cc = items[i]
        ztrue = dbm_constrain(zone, constraint_bounds(cc, rt.clock_index))
        if not ztrue.empty and refine(ztrue, i + 1,
                                      {**assign, node_id: True}):
            return True
        for ncc in _negations(cc):
            zfalse = dbm_constrain(zone,
                                   constraint_bounds(ncc, rt.clock_index))
            if not zfalse.empty and refine(zfalse, i + 1,
                                           {**assign, node_id: False}):
                return True
        return False

    return refine(state.zone, 0, {})


def query_clock_constraints(phi: Expr, rt: NetworkRuntime
                            ) -> list[ClockConstraint]:
    atoms: dict[int, ClockConstraint] = {}
    _collect_clock_atoms(phi, rt, atoms)
    return list(atoms.values())


def negate(phi: Expr) -> Expr:
    return Unary("!", phi)


# ---------------------------------------------------------------------------
# Exploration
# ---------------------------------------------------------------------------

@dataclass
class Node:
    state: SymState
    parent: int | None
    action_label: str
    succs: list[tuple[str, int]] = field(default_factory=list)
    expanded: bool = False


class Explorer:
    """Zone-graph exploration with inclusion subsumption on equal
    (locations, Env) keys."""

    def __init__(self, rt: NetworkRuntime,
                 extra_constraints: list[ClockConstraint] | None = None,
                 cap: int = DEFAULT_CAP, order: str = "bfs"):
        self.rt = rt
        self.k_map = rt.k_map(extra_constraints)
        self.cap = cap
        self.order = order
        self.nodes: list[Node] = []
        self.store: dict[tuple, list[int]] = {}
        self.peak_frontier = 0

    def _find_covering(self, state: SymState) -> int | None:
        key = state.make_key(self.rt)
        for nid in self.store.get(key, ()):
            if dbm_subset(state.zone, self.nodes[nid].state.zone):
                return nid
        return None

    def _add(self, state: SymState, parent: int | None, label: str) -> int:
        nid = len(self.nodes)
        if nid >= self.cap:
            raise CapExceeded()
        self.nodes.append(Node(state, parent, label))
        self.store.setdefault(state.make_key(self.rt), []).append(nid)
        return nid

    def run(self, stop_when=None, build_graph: bool = False) -> int | None:
        """Explore everything (or until stop_when(state) is true); returns
        the hit node id, if any."""
        init = initial_symstate(self.rt, self.k_map)
        root = self._add(init, None, "init")
        if stop_when is not None and stop_when(init):
            return root
        frontier = deque([root])
        while frontier:
            self.peak_frontier = max(self.peak_frontier, len(frontier))
            nid = frontier.popleft() if self.order == "bfs" else \
                frontier.pop()
            node = self.nodes[nid]
            node.expanded = True
            for action, succ in symbolic_successors(node.state, self.rt,
                                                    self.k_map):
                label = action.describe(self.rt)
                covering = self._find_covering(succ)
                if covering is not None:
                    if build_graph:
                        node.succs.append((label, covering))
                    continue
                sid = self._add(succ, nid, label)
                if build_graph:
                    node.succs.append((label, sid))
                if stop_when is not None and stop_when(succ):
                    return sid
                frontier.append(sid)
        return None

    def witness(self, nid: int) -> list[tuple[str, SymState]]:
        chain = []
        cur: int | None = nid
        while cur is not None:
            node = self.nodes[cur]
            chain.append((node.action_label, node.state))
            cur = node.parent
        chain.reverse()
        return chain


# ---------------------------------------------------------------------------
# Query checks
# ---------------------------------------------------------------------------

def _typecheck_query(net: TANetwork, *exprs: Expr) -> None:
    decls = net.decl_table()
    for e in exprs:
        t = typecheck(decls, e, allow_clock_atoms=True)
        if t != "bool":
            raise TachyonError("query predicate must be bool")


def check_reachability(net: TANetwork, phi: Expr, cap: int = DEFAULT_CAP,
                       order: str = "bfs",
                       rt: NetworkRuntime | None = None) -> Verdict:
    _typecheck_query(net, phi)
    rt = rt or NetworkRuntime(net)
    t0 = time.perf_counter()
    ex = Explorer(rt, query_clock_constraints(phi, rt), cap, order)
    try:
        hit = ex.run(stop_when=lambda s: sat_exists(s, phi, rt))
    except CapExceeded:
        return Verdict(None, None, len(ex.nodes), ex.peak_frontier,
                       (time.perf_counter() - t0) * 1000,
                       bound_exceeded=True)
    ms = (time.perf_counter() - t0) * 1000
    if hit is None:
        return Verdict(False, None, len(ex.nodes), ex.peak_frontier, ms)
    return Verdict(True, ex.witness(hit), len(ex.nodes), ex.peak_frontier, ms)


def check_invariant(net: TANetwork, phi: Expr, cap: int = DEFAULT_CAP,
                    order: str = "bfs",
                    rt: NetworkRuntime | None = None) -> Verdict:
    """A[] phi == no reachable state intersects !phi."""
    r = check_reachability(net, negate(phi), cap, order, rt)
    if r.bound_exceeded:
        return r
    return Verdict(not r.satisfied, r.witness, r.states, r.peak_frontier,
                   r.time_ms)


def check_leadsto(net: TANetwork, p: Expr, q: Expr, cap: int = DEFAULT_CAP,
                  order: str = "bfs",
                  rt: NetworkRuntime | None = None) -> Verdict:
    """p --> q: from every reachable p-state, every path eventually reaches
    a q-state.  Fails when the q-avoiding subgraph reachable from an
    obligation contains a cycle or a state with no successors at all."""
    _typecheck_query(net, p, q)
    rt = rt or NetworkRuntime(net)
    t0 = time.perf_counter()
    extra = query_clock_constraints(p, rt) + query_clock_constraints(q, rt)
    ex = Explorer(rt, extra, cap, order)
    try:
        ex.run(build_graph=True)
    except CapExceeded:
        return Verdict(None, None, len(ex.nodes), ex.peak_frontier,
                       (time.perf_counter() - t0) * 1000,
                       bound_exceeded=True, warning=NONZENO_WARNING)

    n = len(ex.nodes)
    is_q = [sat_exists(ex.nodes[i].state, q, rt) for i in range(n)]
    obligations = [i for i in range(n)
                   if not is_q[i] and sat_exists(ex.nodes[i].state, p, rt)]
    ms = lambda: (time.perf_counter() - t0) * 1000  # noqa: E731
    if not obligations:
        return Verdict(True, None, n, ex.peak_frontier, ms(),
                       warning=NONZENO_WARNING)

    # q-avoiding subgraph
    avoid_succ: list[list[int]] = [[] for _ in range(n)]
    deadlock = [False] * n
    for i in range(n):
        if is_q[i]:
            continue
        if not ex.nodes[i].succs:
            deadlock[i] = True
            continue
        for _, j in ex.nodes[i].succs:
            if not is_q[j]:
                avoid_succ[i].append(j)

    bad = set(i for i in range(n) if deadlock[i])
    bad |= _cyclic_nodes(avoid_succ, is_q)

    # can any obligation reach a bad node inside the q-avoiding subgraph?
    seen: set[int] = set()
    hit: int | None = None
    for o in obligations:
        if o in seen:
            continue
        stack = [o]
        seen.add(o)
        while stack:
            u = stack.pop()
            if u in bad:
                hit = u
                break
            for v in avoid_succ[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if hit is not None:
            break
    if hit is None:
        return Verdict(True, None, n, ex.peak_frontier, ms(),
                       warning=NONZENO_WARNING)
    # witness: path from the initial state to the bad node
    chain = ex.witness(hit)
    return Verdict(False, chain, n, ex.peak_frontier, ms(),
                   warning=NONZENO_WARNING)


def _cyclic_nodes(succ: list[list[int]], is_q: list[bool]) -> set[int]:
    """Nodes of the q-avoiding subgraph lying on a cycle (Tarjan SCC;
    singleton SCCs count only with a self-loop)."""
    n = len(succ)
    index = [0] * n
    low = [0] * n
    on_stack = [False] * n
    visited = [False] * n
    stack: list[int] = []
    out: set[int] = set()
    counter = [1]

    def strongconnect(v0: int) -> None:
        work = [(v0, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                index[v] = low[v] = counter[0]
                counter[0] += 1
                visited[v] = True
                stack.append(v)
                on_stack[v] = True
            recurse = False
            for i in range(pi, len(succ[v])):
                w = succ[v][i]
                if not visited[w]:
                    work[-1] = (v, i + 1)
                    work.append((w, 0))
                    recurse = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if recurse:
                continue
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                if len(comp) > 1 or v in succ[v]:
                    out.update(comp)
            work.pop()
            if work:
                u, _ = work[-1]
                low[u] = min(low[u], low[v])

    for v in range(n):
        if not visited[v] and not is_q[v]:
            strongconnect(v)
    return out


def run_query_file(net: TANetwork, queries: list[Query],
                   cap: int = DEFAULT_CAP, order: str = "bfs",
                   rt: NetworkRuntime | None = None) -> list[Verdict]:
    """Dispatch each verification query; estimation/strategy queries are a
    routing error here (they belong to the simulation/learning engines)."""
    rt = rt or NetworkRuntime(net)
    out = []
    for q in queries:
        if isinstance(q, (Estimate, StrategyMin)):
            raise QueryRoutingError(
                f"query requires learning engine: {q.text!r}")
        if isinstance(q, Reach):
            v = check_reachability(net, q.phi, cap, order, rt)
        elif isinstance(q, Invariant):
            v = check_invariant(net, q.phi, cap, order, rt)
        elif isinstance(q, LeadsTo):
            v = check_leadsto(net, q.p, q.q, cap, order, rt)
        else:
            raise QueryRoutingError(f"unsupported query: {q.text!r}")
        v.query_text = q.text
        out.append(v)
    return out


def render_verdicts(verdicts: list[Verdict]) -> str:
    lines = []
    width = max((len(v.query_text) for v in verdicts), default=5)
    for i, v in enumerate(verdicts, start=1):
        word = ("BOUND EXCEEDED" if v.bound_exceeded
                else ("Valid" if v.satisfied else "Invalid"))
        lines.append(f"{i:>3}  {v.query_text:<{width}}  {word:<14} "
                     f"states={v.states} time={v.time_ms:.0f}ms")
    return "\n".join(lines)
