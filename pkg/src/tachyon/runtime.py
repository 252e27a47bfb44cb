"""Precompiled network structures shared by the zone engine and the
simulator: per-location edge tables, compiled guards and updates, channel
lookup, clock indexing and extrapolation constants.

The network itself stays immutable; a NetworkRuntime may be shared
read-only across workers.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

from .diagnostics import EvalError
from .expr import (Assign, ArrayRef, Expr, IfStmt, IntLit, LocPredicate,
                   MacroCall, VarRef, compile_expr, eval_expr, int_div,
                   int_mod, _ck, _checked_index)
from .model import (ClockConstraint, Edge, Location, TANetwork)


def _contains_locpred(e: Expr | None) -> bool:
    if e is None:
        return False
    stack = [e]
    while stack:
        x = stack.pop()
        if isinstance(x, LocPredicate):
            return True
        for attr in ("lhs", "rhs", "operand", "index"):
            child = getattr(x, attr, None)
            if child is not None:
                stack.append(child)
    return False


@dataclass
class EdgeRT:
    inst: int
    index: int              # declaration order within the instance
    edge: Edge
    src: int
    tgt: int
    guard_clocks: tuple[tuple[int, str, int, int | None], ...]  # (ci,op,c,cj)
    selects: tuple[tuple[str, int, int], ...]
    sync_channel: str | None
    sync_dir: str | None
    sync_index_const: int | None    # resolved when index is constant
    sync_index_expr: Expr | None
    controllable: bool
    weight: int

    guard_fn: object = None         # compiled env->bool, or None for "true"
    guard_needs_locs: bool = False  # fall back to eval_expr with locations

    def eval_guard(self, env, locations=None) -> bool:
        if self.guard_fn is None:
            if self.edge.guard_data is None:
                return True
            return bool(eval_expr(self.edge.guard_data, env, locations))
        return bool(self.guard_fn(env))

    def sync_index(self, env) -> int | None:
        if self.sync_index_const is not None:
            return self.sync_index_const
        if self.sync_index_expr is None:
            return None
        return eval_expr(self.sync_index_expr, env)


class NetworkRuntime:
    def __init__(self, net: TANetwork):
        self.net = net
        self.macros = net.macro_table()

        # clock indexing: index 0 is the DBM reference clock
        self.clock_names: list[str] = list(net.all_clocks())
        self.clock_index = {c: i + 1 for i, c in enumerate(self.clock_names)}
        self.n_clocks = len(self.clock_names)

        self.instance_names = [inst.name for inst in net.instances]
        self.inst_index = {n: i for i, n in enumerate(self.instance_names)}

        # per instance: location list, name->idx, initial idx
        self.locations: list[list[Location]] = []
        self.loc_index: list[dict[str, int]] = []
        self.initial_locs: list[int] = []
        self.zero_time: list[list[bool]] = []       # urgent/committed/bp
        self.committed_like: list[list[bool]] = []
        # invariants as (clock_idx, op, bound) upper bounds
        self.invariants: list[list[tuple[tuple[int, str, int], ...]]] = []
        self.exit_weights: list[list[int]] = []
        self.branchpoint: list[list[bool]] = []

        for inst in net.instances:
            locs = list(inst.locations)
            self.locations.append(locs)
            idx = {loc.name: i for i, loc in enumerate(locs)}
            self.loc_index.append(idx)
            self.initial_locs.append(idx[inst.initial])
            self.zero_time.append([loc.zero_time for loc in locs])
            self.committed_like.append([loc.committed_like for loc in locs])
            self.branchpoint.append([loc.is_branchpoint for loc in locs])
            self.exit_weights.append([loc.exit_weight for loc in locs])
            invs = []
            for loc in locs:
                invs.append(tuple((self.clock_index[c.x], c.op, c.c)
                                  for c in loc.invariant))
            self.invariants.append(invs)

        # edges grouped by (instance, source location)
        self.out_edges: list[list[list[EdgeRT]]] = []
        # receive edges by (channel name) -> list of EdgeRT
        self.receives: dict[str, list[EdgeRT]] = {}
        self.channels = {ch.name: ch for ch in net.channels}

        for ii, inst in enumerate(net.instances):
            per_loc: list[list[EdgeRT]] = [[] for _ in inst.locations]
            for ei, e in enumerate(inst.edges):
                rt = self._build_edge(ii, ei, e)
                per_loc[rt.src].append(rt)
                if rt.sync_dir == "?":
                    self.receives.setdefault(rt.sync_channel, []).append(rt)
            self.out_edges.append(per_loc)

        self.var_order = sorted(self._initial_env_template().keys())
        self._k_map = self._compute_k_map()

    # -- construction helpers ------------------------------------------------

    def _build_edge(self, ii: int, ei: int, e: Edge) -> EdgeRT:
        lidx = self.loc_index[ii]
        gclocks = tuple(
            (self.clock_index[c.x], c.op, c.c,
             self.clock_index[c.y] if c.y else None)
            for c in e.guard_clocks)
        sync_channel = sync_dir = None
        sidx_const = None
        sidx_expr = None
        if e.sync is not None:
            sync_channel = e.sync.channel
            sync_dir = e.sync.direction
            if e.sync.index is None:
                sidx_const = None
                sidx_expr = None
            elif isinstance(e.sync.index, IntLit):
                sidx_const = e.sync.index.value
            else:
                sidx_expr = e.sync.index
        rt = EdgeRT(
            inst=ii, index=ei, edge=e, src=lidx[e.source], tgt=lidx[e.target],
            guard_clocks=gclocks,
            selects=tuple((s.name, s.lo, s.hi) for s in e.selects),
            sync_channel=sync_channel, sync_dir=sync_dir,
            sync_index_const=sidx_const, sync_index_expr=sidx_expr,
            controllable=e.controllable, weight=e.weight)
        if e.guard_data is not None:
            if _contains_locpred(e.guard_data):
                rt.guard_needs_locs = True
            else:
                rt.guard_fn = compile_expr(e.guard_data)
        return rt

    def _initial_env_template(self) -> dict:
        from .model import initial_env
        return initial_env(self.net)

    def initial_env(self) -> dict:
        from .model import initial_env
        return initial_env(self.net)

    def initial_locvec(self) -> tuple[int, ...]:
        return tuple(self.initial_locs)

    def _compute_k_map(self) -> dict[int, int]:
        """Max constant comparing each clock anywhere in the model."""
        k = {i + 1: 0 for i in range(self.n_clocks)}

        def bump(ci, c):
            k[ci] = max(k[ci], abs(c))

        for ii in range(len(self.locations)):
            for invs in self.invariants[ii]:
                for ci, _, c in invs:
                    bump(ci, c)
            for per_loc in self.out_edges[ii]:
                for rt in per_loc:
                    for ci, _, c, cj in rt.guard_clocks:
                        bump(ci, c)
                        if cj is not None:
                            bump(cj, c)
        return k

    def k_map(self, extra: list[ClockConstraint] | None = None) -> dict:
        k = dict(self._k_map)
        for cc in extra or ():
            ci = self.clock_index[cc.x]
            k[ci] = max(k[ci], abs(cc.c))
            if cc.y is not None:
                cj = self.clock_index[cc.y]
                k[cj] = max(k[cj], abs(cc.c))
        return k

    def location_names(self, locvec) -> dict[str, str]:
        return {self.instance_names[i]: self.locations[i][li].name
                for i, li in enumerate(locvec)}

    def env_key(self, env: dict) -> tuple:
        return tuple(
            tuple(v) if isinstance(v, list) else v
            for v in (env[k] for k in self.var_order))

    # -- update execution (env dict + clock hooks) ---------------------------

    def exec_update(self, stmts, env: dict, reset_clock) -> None:
        """Run update statements mutating env in place; clock resets are
        delegated to reset_clock(clock_index, value)."""
        for s in stmts:
            if isinstance(s, Assign):
                t = s.target
                if isinstance(t, VarRef) and t.name in self.clock_index:
                    reset_clock(self.clock_index[t.name], s.value.value)
                    continue
                val = eval_expr(s.value, env)
                if isinstance(val, int) and not isinstance(val, bool):
                    _ck(val, s.span)
                if isinstance(t, VarRef):
                    env[t.name] = val
                else:
                    idx = eval_expr(t.index, env)
                    arr = env[t.name]
                    _checked_index(arr, idx, t.name)
                    arr[idx] = val
            elif isinstance(s, IfStmt):
                branch = s.then if eval_expr(s.cond, env) else s.orelse
                self.exec_update(branch, env, reset_clock)
            elif isinstance(s, MacroCall):
                self.exec_update(self.macros[s.name], env, reset_clock)

    # -- action enumeration shared skeleton -----------------------------------

    def expand_selects(self, rt: EdgeRT):
        """Yield binding dicts for an edge's select clauses, ascending."""
        if not rt.selects:
            yield None
            return
        ranges = [range(lo, hi + 1) for _, lo, hi in rt.selects]
        names = [n for n, _, _ in rt.selects]
        for combo in product(*ranges):
            yield dict(zip(names, combo))


def bound_env(env: dict, binding: dict | None) -> dict:
    if not binding:
        return env
    merged = dict(env)
    merged.update(binding)
    return merged
