"""Difference-bound-matrix zones and symbolic successor computation.

Bounds are encoded as integers: a bound (value v, strict) becomes
2*v + (0 if strict else 1), so the natural integer order coincides with
bound tightness and addition is `a + b - ((a|b) & 1)`.  INF is a large
even sentinel.  Entry (i, j) of a DBM constrains x_i - x_j; row/column 0
is the reference clock.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .model import ClockConstraint
from .runtime import EdgeRT, NetworkRuntime, bound_env

INF = np.int64(2 ** 40)
LE_ZERO = np.int64(1)   # (0, <=)


def bound(value: int, strict: bool) -> int:
    return 2 * value + (0 if strict else 1)


def bound_value(b: int) -> int:
    return int(b) >> 1 if b % 2 else (int(b) >> 1)


def decode(b) -> tuple[int | None, bool]:
    """(value, strict); value None for infinity."""
    if b >= INF:
        return None, True
    b = int(b)
    return (b - (b & 1)) // 2, (b & 1) == 0


def _badd(a, b):
    if a >= INF or b >= INF:
        return INF
    return a + b - ((a | b) & 1)


@dataclass
class Dbm:
    """Canonical-form zone over k clocks; matrix shape (k+1, k+1)."""

    m: np.ndarray
    empty: bool = False

    @staticmethod
    def zero(k: int) -> "Dbm":
        """Point zone with all clocks equal to 0."""
        m = np.full((k + 1, k + 1), LE_ZERO, dtype=np.int64)
        return Dbm(m)

    @staticmethod
    def unconstrained(k: int) -> "Dbm":
        m = np.full((k + 1, k + 1), INF, dtype=np.int64)
        np.fill_diagonal(m, LE_ZERO)
        m[0, :] = LE_ZERO  # clocks are non-negative
        m[0, 0] = LE_ZERO
        return Dbm(m)

    def copy(self) -> "Dbm":
        return Dbm(self.m.copy(), self.empty)

    def key(self) -> bytes:
        return self.m.tobytes()

    def __eq__(self, other) -> bool:
        return isinstance(other, Dbm) and self.empty == other.empty and \
            np.array_equal(self.m, other.m)


def dbm_canonicalize(z: Dbm) -> Dbm:
    """All-pairs shortest-path closure; detects emptiness (negative cycle)."""
    m = z.m.copy()
    n = m.shape[0]
    for k in range(n):
        col = m[:, k:k + 1]
        row = m[k:k + 1, :]
        through = col + row - ((col | row) & 1)
        through[(col >= INF) | (row >= INF)] = INF
        np.minimum(m, through, out=m)
    if any(m[i, i] < LE_ZERO for i in range(n)):
        return Dbm(m, empty=True)
    np.fill_diagonal(m, LE_ZERO)
    return Dbm(m)


def dbm_up(z: Dbm) -> Dbm:
    """Delay: remove upper bounds on all clocks, keep differences."""
    if z.empty:
        return z
    m = z.m.copy()
    m[1:, 0] = INF
    return Dbm(m)  # still canonical (standard result)


def constraint_bounds(cc: ClockConstraint, clock_index: dict[str, int]
                      ) -> list[tuple[int, int, int]]:
    """Translate `x ~ c` / `x - y ~ c` into DBM entries (i, j, bound)."""
    i = clock_index[cc.x]
    j = clock_index[cc.y] if cc.y is not None else 0
    out = []
    if cc.op in ("<", "<="):
        out.append((i, j, bound(cc.c, cc.op == "<")))
    elif cc.op in (">", ">="):
        out.append((j, i, bound(-cc.c, cc.op == ">")))
    else:  # == expands to <= and >=
        out.append((i, j, bound(cc.c, False)))
        out.append((j, i, bound(-cc.c, False)))
    return out


def dbm_constrain(z: Dbm, entries: Iterable[tuple[int, int, int]]) -> Dbm:
    """Intersect with difference bounds, re-canonicalized."""
    if z.empty:
        return z
    m = z.m.copy()
    changed = False
    for i, j, b in entries:
        if b < m[i, j]:
            m[i, j] = b
            changed = True
            if _badd(m[i, j], m[j, i]) < LE_ZERO:
                return Dbm(m, empty=True)
    if not changed:
        return z
    return dbm_canonicalize(Dbm(m))


def dbm_constrain_cc(z: Dbm, cc: ClockConstraint,
                     clock_index: dict[str, int]) -> Dbm:
    return dbm_constrain(z, constraint_bounds(cc, clock_index))


def dbm_reset(z: Dbm, i: int, c: int) -> Dbm:
    """Pin clock i to constant c >= 0; other clocks and their mutual
    differences are preserved.  Input must be canonical non-empty."""
    if z.empty:
        return z
    m = z.m.copy()
    n = m.shape[0]
    pos = bound(c, False)
    neg = bound(-c, False)
    for j in range(n):
        m[i, j] = _badd(pos, m[0, j])
        m[j, i] = _badd(m[j, 0], neg)
    m[i, i] = LE_ZERO
    return Dbm(m)  # canonical by construction


def dbm_relation(a: Dbm, b: Dbm) -> str:
    """Set relation of two canonical zones over the same clock set."""
    if a.m.shape != b.m.shape:
        raise ValueError("clock-set mismatch")
    if a.empty and b.empty:
        return "equal"
    if a.empty:
        return "a_subset_b"
    if b.empty:
        return "b_subset_a"
    le = bool(np.all(a.m <= b.m))
    ge = bool(np.all(a.m >= b.m))
    if le and ge:
        return "equal"
    if le:
        return "a_subset_b"
    if ge:
        return "b_subset_a"
    return "incomparable"


def dbm_subset(a: Dbm, b: Dbm) -> bool:
    if a.empty:
        return True
    if b.empty:
        return False
    return bool(np.all(a.m <= b.m))


def dbm_extrapolate(z: Dbm, k_per_clock: dict[int, int]) -> Dbm:
    """Classic max-constant extrapolation: bounds above k(x_i) become
    infinite, bounds below -k(x_j) become (-k(x_j), <)."""
    if z.empty:
        return z
    n = z.m.shape[0]
    m = z.m.copy()
    changed = False
    for i in range(n):
        ki = 0 if i == 0 else k_per_clock[i]
        for j in range(n):
            if i == j:
                continue
            kj = 0 if j == 0 else k_per_clock[j]
            b = m[i, j]
            if b >= INF:
                continue
            if b > bound(ki, False):
                if i != 0:
                    m[i, j] = INF
                    changed = True
            elif b < bound(-kj, True):
                m[i, j] = bound(-kj, True)
                changed = True
    if not changed:
        return z
    return dbm_canonicalize(Dbm(m))


def dbm_sat(z: Dbm, i: int, op: str, c: int, j: int = 0) -> bool:
    """Non-empty intersection test with a single constraint x_i - x_j ~ c."""
    if z.empty:
        return False
    if op in ("<", "<="):
        entries = [(i, j, bound(c, op == "<"))]
    elif op in (">", ">="):
        entries = [(j, i, bound(-c, op == ">"))]
    else:
        entries = [(i, j, bound(c, False)), (j, i, bound(-c, False))]
    return not dbm_constrain(z, entries).empty


# ---------------------------------------------------------------------------
# Symbolic states and successors
# ---------------------------------------------------------------------------

@dataclass
class SymState:
    locs: tuple[int, ...]
    env: dict
    zone: Dbm
    key: tuple = field(default=None, compare=False)

    def make_key(self, rt: NetworkRuntime) -> tuple:
        if self.key is None:
            self.key = (self.locs, rt.env_key(self.env))
        return self.key


@dataclass
class FiredAction:
    """A fully resolved firing: initiating edge plus any sync partners."""

    edges: tuple[EdgeRT, ...]             # initiator first
    bindings: tuple[dict | None, ...]
    label: str = ""

    def describe(self, rt: NetworkRuntime) -> str:
        parts = []
        for e, b in zip(self.edges, self.bindings):
            sel = "" if not b else "[" + ",".join(
                f"{k}={v}" for k, v in sorted(b.items())) + "]"
            parts.append(f"{rt.instance_names[e.inst]}."
                         f"{e.edge.source}->{e.edge.target}{sel}")
        return " + ".join(parts)


def initial_symstate(rt: NetworkRuntime,
                     k_map: dict[int, int] | None = None) -> SymState:
    locs = rt.initial_locvec()
    env = rt.initial_env()
    z = Dbm.zero(rt.n_clocks)
    z = _apply_invariants(z, rt, locs)
    if not _any_zero_time(rt, locs):
        z = dbm_up(z)
        z = _apply_invariants(z, rt, locs)
    z = dbm_extrapolate(z, k_map or rt.k_map())
    return SymState(locs, env, z)


def _any_zero_time(rt: NetworkRuntime, locs) -> bool:
    return any(rt.zero_time[i][li] for i, li in enumerate(locs))


def _any_committed(rt: NetworkRuntime, locs) -> bool:
    return any(rt.committed_like[i][li] for i, li in enumerate(locs))


def _apply_invariants(z: Dbm, rt: NetworkRuntime, locs) -> Dbm:
    entries = []
    for i, li in enumerate(locs):
        for ci, op, c in rt.invariants[i][li]:
            entries.append((ci, 0, bound(c, op == "<")))
    if entries:
        z = dbm_constrain(z, entries)
    return z


def _guard_entries(rt_edge: EdgeRT, env) -> list[tuple[int, int, int]]:
    out = []
    for ci, op, c, cj in rt_edge.guard_clocks:
        out.extend(constraint_bounds(
            ClockConstraint("_x", op, c, "_y" if cj is not None else None),
            {"_x": ci, "_y": cj}))
    return out


def enumerate_actions_symbolic(state: SymState, rt: NetworkRuntime
                               ) -> list[tuple[FiredAction, Dbm]]:
    """All action firings enabled in `state`, each with the zone restricted
    by the participating clock guards (not yet reset/delayed).

    Ordering is deterministic: instance index, edge declaration order,
    select values ascending, then partner order.
    """
    locs, env, zone = state.locs, state.env, state.zone
    committed_active = _any_committed(rt, locs)
    locations = None
    out: list[tuple[FiredAction, Dbm]] = []

    def guard_ok(e: EdgeRT, binding) -> bool:
        nonlocal locations
        benv = bound_env(env, binding)
        if e.guard_needs_locs:
            if locations is None:
                locations = rt.location_names(locs)
            from .expr import eval_expr
            return bool(eval_expr(e.edge.guard_data, benv, locations))
        return e.eval_guard(benv)

    def zone_with(parts: list[tuple[EdgeRT, dict | None]]) -> Dbm | None:
        entries = []
        for e, b in parts:
            entries.extend(_guard_entries(e, bound_env(env, b)))
        z2 = dbm_constrain(zone, entries) if entries else zone
        return None if z2.empty else z2

    def committed_ok(parts) -> bool:
        if not committed_active:
            return True
        return any(rt.committed_like[e.inst][locs[e.inst]] for e, _ in parts)

    for ii in range(len(locs)):
        for e in rt.out_edges[ii][locs[ii]]:
            if e.sync_dir == "?":
                continue
            for binding in rt.expand_selects(e):
                if e.edge.guard_data is not None and \
                        not guard_ok(e, binding):
                    continue
                if e.sync_dir is None:
                    parts = [(e, binding)]
                    if not committed_ok(parts):
                        continue
                    z2 = zone_with(parts)
                    if z2 is not None:
                        out.append((FiredAction((e,), (binding,)), z2))
                    continue
                # send
                idx = e.sync_index(bound_env(env, binding))
                ch = rt.channels[e.sync_channel]
                receivers = _enabled_receivers(
                    rt, locs, env, e.sync_channel, idx, exclude=ii,
                    guard_ok=guard_ok)
                if ch.broadcast:
                    for combo in _receiver_combos(receivers):
                        parts = [(e, binding)] + combo
                        if not committed_ok(parts):
                            continue
                        z2 = zone_with(parts)
                        if z2 is not None:
                            edges = tuple(p[0] for p in parts)
                            binds = tuple(p[1] for p in parts)
                            out.append((FiredAction(edges, binds), z2))
                else:
                    for (re_, rb) in [(r, b) for insts in receivers
                                      for (r, b) in insts]:
                        parts = [(e, binding), (re_, rb)]
                        if not committed_ok(parts):
                            continue
                        z2 = zone_with(parts)
                        if z2 is not None:
                            out.append((FiredAction((e, re_), (binding, rb)),
                                        z2))
    return out


def _enabled_receivers(rt: NetworkRuntime, locs, env, channel: str,
                       idx: int | None, exclude: int, guard_ok
                       ) -> list[list[tuple[EdgeRT, dict | None]]]:
    """Per-instance lists of enabled receive firings on (channel, idx),
    ordered by instance then edge then select values."""
    per_inst: dict[int, list[tuple[EdgeRT, dict | None]]] = {}
    for r in rt.receives.get(channel, ()):
        if r.inst == exclude or locs[r.inst] != r.src:
            continue
        for binding in rt.expand_selects(r):
            benv = bound_env(env, binding)
            if r.sync_index(benv) != idx:
                continue
            if r.edge.guard_data is not None and not guard_ok(r, binding):
                continue
            per_inst.setdefault(r.inst, []).append((r, binding))
    return [per_inst[k] for k in sorted(per_inst)]


def _receiver_combos(receivers: list[list[tuple[EdgeRT, dict | None]]]):
    """Broadcast: every instance that can receive does receive, choosing one
    of its enabled edges; yields each combination."""
    if not receivers:
        yield []
        return
    first, rest = receivers[0], receivers[1:]
    for choice in first:
        for tail in _receiver_combos(rest):
            yield [choice] + tail


def apply_action(state: SymState, action: FiredAction, guarded_zone: Dbm,
                 rt: NetworkRuntime, k_map: dict[int, int]) -> SymState | None:
    """Fire: updates (initiator first), target invariants, delay closure when
    the target state allows time to pass, extrapolation.  None if empty."""
    locs = list(state.locs)
    env = {k: (list(v) if isinstance(v, list) else v)
           for k, v in state.env.items()}
    zone = guarded_zone

    resets: list[tuple[int, int]] = []

    def reset_clock(ci: int, value: int) -> None:
        resets.append((ci, value))

    for e, binding in zip(action.edges, action.bindings):
        locs[e.inst] = e.tgt
        if binding:
            scratch = dict(env)
            scratch.update(binding)
            rt.exec_update(e.edge.update, scratch, reset_clock)
            for k in env:
                env[k] = scratch[k]
        else:
            rt.exec_update(e.edge.update, env, reset_clock)

    for ci, value in resets:
        zone = dbm_reset(zone, ci, value)

    locs_t = tuple(locs)
    zone = _apply_invariants(zone, rt, locs_t)
    if zone.empty:
        return None
    if not _any_zero_time(rt, locs_t):
        zone = dbm_up(zone)
        zone = _apply_invariants(zone, rt, locs_t)
        if zone.empty:
            return None
    zone = dbm_extrapolate(zone, k_map)
    if zone.empty:
        return None
    return SymState(locs_t, env, zone)


def symbolic_successors(state: SymState, rt: NetworkRuntime,
                        k_map: dict[int, int] | None = None
                        ) -> list[tuple[FiredAction, SymState]]:
    """The standard zone-graph successor set, deterministically ordered."""
    k_map = k_map or rt.k_map()
    out = []
    for action, z in enumerate_actions_symbolic(state, rt):
        nxt = apply_action(state, action, z, rt, k_map)
        if nxt is not None:
            out.append((action, nxt))
    return out
