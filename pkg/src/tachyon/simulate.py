"""Concrete-valued stochastic semantics: random runs, trace recording and
estimation queries, with optional strategy guidance.

Delay policy: zero in urgent/committed states; uniform over the permitted
interval when an invariant bounds the location; exponential (scaled by the
exit weights of the active unbounded locations) otherwise.  Guards that
only become true after a delay (equality bounds like `g == MIN`) are
scheduled exactly to their enabling point, since continuous draws would
satisfy them with probability zero.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import EvalError
from .expr import (Assign, IfStmt, MacroCall, VarRef, compile_expr,
                   eval_expr)
from .model import TANetwork
from .parser import Estimate
from .runtime import EdgeRT, NetworkRuntime, bound_env

INF = math.inf


@dataclass
class ConcreteState:
    locs: tuple[int, ...]
    env: dict
    clocks: list[float]      # index 0 is the reference clock, always 0.0
    time: float = 0.0

    def copy(self) -> "ConcreteState":
        return ConcreteState(
            self.locs,
            {k: (list(v) if isinstance(v, list) else v)
             for k, v in self.env.items()},
            list(self.clocks), self.time)


@dataclass
class SimConfig:
    horizon: float = 60000.0        # ms
    seed: int = 0
    default_rate: float = 0.001     # per ms, for unbounded locations
    runs: int = 1
    record: bool = True
    snapshot_every: int = 0         # 0 = no periodic env snapshots


@dataclass
class Trace:
    events: list = field(default_factory=list)
    terminal: str = "horizon"       # horizon | deadlock | error
    error: str | None = None
    final: ConcreteState | None = None

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(e, separators=(",", ":"))
                         for e in self.events)


@dataclass
class Action:
    """A fully-resolved firing at a concrete state."""

    edges: tuple[EdgeRT, ...]
    bindings: tuple[dict | None, ...]
    lo: float = 0.0
    lo_strict: bool = False
    hi: float = INF
    hi_strict: bool = False

    @property
    def initiator(self) -> EdgeRT:
        return self.edges[0]

    def window_contains(self, d: float) -> bool:
        if d < self.lo or (d == self.lo and self.lo_strict):
            return False
        if d > self.hi or (d == self.hi and self.hi_strict):
            return False
        return True


class Simulator:
    """Step engine over a NetworkRuntime; states are mutated in place by the
    private loop and copied at API boundaries."""

    def __init__(self, rt: NetworkRuntime, default_rate: float = 0.001):
        self.rt = rt
        self.default_rate = default_rate
        self._updates: dict[int, object] = {}

    # -- compiled update execution -------------------------------------------

    def _update_fn(self, e: EdgeRT):
        fn = self._updates.get(id(e))
        if fn is None:
            fn = _compile_update_sim(e.edge.update, self.rt)
            self._updates[id(e)] = fn
        return fn

    # -- state construction ---------------------------------------------------

    def initial_state(self) -> ConcreteState:
        rt = self.rt
        return ConcreteState(rt.initial_locvec(), rt.initial_env(),
                             [0.0] * (rt.n_clocks + 1), 0.0)

    # -- enabledness ----------------------------------------------------------

    def _window(self, edges_bindings, clocks, env) -> tuple | None:
        """Delay window during which all participating clock guards hold.
        Data guards and clock-difference atoms are delay-invariant and
        already checked by the caller."""
        lo, lo_s, hi, hi_s = 0.0, False, INF, False
        for e, b in edges_bindings:
            for ci, op, c, cj in e.guard_clocks:
                if cj is not None:
                    v = clocks[ci] - clocks[cj]
                    ok = ((op == "<" and v < c) or (op == "<=" and v <= c)
                          or (op == "==" and v == c)
                          or (op == ">=" and v >= c) or (op == ">" and v > c))
                    if not ok:
                        return None
                    continue
                rem = c - clocks[ci]
                if op in ("<=", "=="):
                    if rem < hi:
                        hi, hi_s = rem, False
                elif op == "<":
                    if rem <= hi:
                        hi, hi_s = rem, True
                if op in (">=", "=="):
                    if rem > lo:
                        lo, lo_s = rem, False
                elif op == ">":
                    if rem >= lo:
                        lo, lo_s = rem, True
        if lo < 0.0:
            lo, lo_s = 0.0, False
        if hi < lo or (hi == lo and (lo_s or hi_s)):
            return None
        return (lo, lo_s, hi, hi_s)

    def candidate_actions(self, s: ConcreteState) -> list[Action]:
        """All firings possible at s now or after some delay, with their
        delay windows.  Committed filtering is applied."""
        rt = self.rt
        locs, env, clocks = s.locs, s.env, s.clocks
        committed_active = any(rt.committed_like[i][li]
                               for i, li in enumerate(locs))
        locations_cache: dict | None = None

        def guard_ok(e: EdgeRT, binding) -> bool:
            nonlocal locations_cache
            if e.edge.guard_data is None:
                return True
            benv = bound_env(env, binding)
            if e.guard_needs_locs:
                if locations_cache is None:
                    locations_cache = rt.location_names(locs)
                return bool(eval_expr(e.edge.guard_data, benv,
                                      locations_cache))
            return bool(e.guard_fn(benv))

        out: list[Action] = []
        for ii in range(len(locs)):
            if committed_active:
                pass  # the at-least-one-committed-participant rule is
                # enforced per candidate below
            for e in rt.out_edges[ii][locs[ii]]:
                if e.sync_dir == "?":
                    continue
                for binding in rt.expand_selects(e):
                    if not guard_ok(e, binding):
                        continue
                    if e.sync_dir is None:
                        parts = [(e, binding)]
                        if committed_active and not self._committed_part(
                                parts, locs):
                            continue
                        w = self._window(parts, clocks, env)
                        if w is not None:
                            out.append(Action((e,), (binding,), *w))
                        continue
                    idx = e.sync_index(bound_env(env, binding))
                    ch = rt.channels[e.sync_channel]
                    recv = self._receivers(locs, env, e.sync_channel, idx,
                                           ii, guard_ok)
                    if ch.broadcast:
                        for combo in _combos(recv):
                            parts = [(e, binding)] + combo
                            if committed_active and not \
                                    self._committed_part(parts, locs):
                                continue
                            w = self._window(parts, clocks, env)
                            if w is not None:
                                out.append(Action(
                                    tuple(p[0] for p in parts),
                                    tuple(p[1] for p in parts), *w))
                    else:
                        for per_inst in recv:
                            for (re_, rb) in per_inst:
                                parts = [(e, binding), (re_, rb)]
                                if committed_active and not \
                                        self._committed_part(parts, locs):
                                    continue
                                w = self._window(parts, clocks, env)
                                if w is not None:
                                    out.append(Action((e, re_),
                                                      (binding, rb), *w))
        return out

    def _committed_part(self, parts, locs) -> bool:
        rt = self.rt
        return any(rt.committed_like[e.inst][locs[e.inst]]
                   for e, _ in parts)

    def _receivers(self, locs, env, channel, idx, exclude, guard_ok):
        rt = self.rt
        per_inst: dict[int, list] = {}
        for r in rt.receives.get(channel, ()):
            if r.inst == exclude or locs[r.inst] != r.src:
                continue
            for binding in rt.expand_selects(r):
                benv = bound_env(env, binding)
                if r.sync_index(benv) != idx:
                    continue
                if not guard_ok(r, binding):
                    continue
                per_inst.setdefault(r.inst, []).append((r, binding))
        return [per_inst[k] for k in sorted(per_inst)]

    # -- public spec operations ------------------------------------------------

    def enabled_actions(self, s: ConcreteState
                        ) -> tuple[list[Action], list[Action]]:
        """Zero-delay enabled firings partitioned (controllable,
        uncontrollable) by the initiating edge."""
        enabled = [a for a in self.candidate_actions(s)
                   if a.window_contains(0.0)]
        ctrl = [a for a in enabled if a.initiator.controllable]
        unctrl = [a for a in enabled if not a.initiator.controllable]
        return ctrl, unctrl

    def invariant_slack(self, s: ConcreteState) -> float:
        """Tightest remaining delay before some active invariant closes."""
        rt = self.rt
        slack = INF
        for i, li in enumerate(s.locs):
            for ci, op, c in rt.invariants[i][li]:
                rem = c - s.clocks[ci]
                if rem < slack:
                    slack = rem
        return max(slack, 0.0)

    def _zero_time(self, locs) -> bool:
        rt = self.rt
        return any(rt.zero_time[i][li] for i, li in enumerate(locs))

    def sample_delay(self, s: ConcreteState, rng) -> float:
        """Delay draw per the documented policy; assumes no urgent/committed
        location is active (those force zero delay by rule)."""
        slack = self.invariant_slack(s)
        if slack is not INF and slack < INF:
            return float(rng.uniform(0.0, slack))
        rt = self.rt
        total_weight = 0
        for i, li in enumerate(s.locs):
            if not rt.invariants[i][li]:
                total_weight += rt.exit_weights[i][li]
        rate = self.default_rate * max(total_weight, 1)
        return float(rng.exponential(1.0 / rate))

    # -- stepping ---------------------------------------------------------------

    def step(self, s: ConcreteState, rng, strategy=None
             ) -> tuple[ConcreteState, list]:
        s2 = s.copy()
        events, _ = self._step_inplace(s2, rng, strategy, horizon=INF)
        return s2, events

    def _step_inplace(self, s: ConcreteState, rng, strategy,
                      horizon: float) -> tuple[list, str | None]:
        """Advance s by one delay+action; returns (events, terminal)."""
        rt = self.rt
        cands = self.candidate_actions(s)
        zero_time = self._zero_time(s.locs)

        if zero_time:
            enabled = [a for a in cands if a.window_contains(0.0)]
            if not enabled:
                return [], "deadlock"
            d = 0.0
        else:
            enabled_now = [a for a in cands if a.window_contains(0.0)]
            slack = self.invariant_slack(s)
            if enabled_now:
                upper = slack
                if upper == INF:
                    d = self.sample_delay(s, rng)
                else:
                    d = float(rng.uniform(0.0, upper))
                enabled = [a for a in cands if a.window_contains(d)]
                if not enabled:
                    d2 = self._snap(cands, d)
                    if d2 is None:
                        return [], "deadlock"
                    d = d2
                    enabled = [a for a in cands if a.window_contains(d)]
            else:
                # nothing enabled now: schedule to the earliest opening
                openings = [a for a in cands
                            if a.lo <= slack and a.lo > 0.0 or
                            (a.lo == 0.0 and a.lo_strict)]
                if not openings:
                    return [], "deadlock"
                lo = min(a.lo for a in openings)
                group = [a for a in openings if a.lo == lo]
                if all(a.lo_strict for a in group):
                    hi = min(min(a.hi for a in group), slack)
                    if hi <= lo:
                        return [], "deadlock"
                    d = float(rng.uniform(lo, hi))
                    if d <= lo:
                        d = lo + (hi - lo) * 0.5
                else:
                    d = lo
                if d > slack:
                    return [], "deadlock"
                enabled = [a for a in cands if a.window_contains(d)]
                if not enabled:
                    return [], "deadlock"

        if s.time + d > horizon:
            d = horizon - s.time
            for i in range(1, len(s.clocks)):
                s.clocks[i] += d
            s.time = horizon
            return [], "horizon"

        if d > 0.0:
            for i in range(1, len(s.clocks)):
                s.clocks[i] += d
            s.time += d

        action = self._choose(enabled, s, rng, strategy)
        events = self._fire(s, action)
        return events, None

    def _snap(self, cands, d: float) -> float | None:
        """Latest feasible window point at or before d, else earliest after."""
        best = None
        for a in cands:
            if a.window_contains(d):
                return d
            if a.hi <= d and not a.hi_strict:
                if best is None or a.hi > best:
                    best = a.hi
        if best is not None:
            return best
        lo = None
        for a in cands:
            if a.lo >= d and not a.lo_strict:
                if lo is None or a.lo < lo:
                    lo = a.lo
        return lo

    def _choose(self, enabled: list[Action], s: ConcreteState, rng,
                strategy) -> Action:
        if strategy is not None:
            ctrl = [a for a in enabled if a.initiator.controllable]
            if ctrl:
                return strategy.decide(self, s, ctrl, rng)
        if len(enabled) == 1:
            return enabled[0]
        rt = self.rt
        weights = []
        for a in enabled:
            e = a.initiator
            if rt.branchpoint[e.inst][s.locs[e.inst]]:
                weights.append(e.weight)
            else:
                weights.append(1)
        total = sum(weights)
        if total == len(enabled):
            return enabled[rng.integers(0, len(enabled))]
        x = rng.uniform(0.0, total)
        acc = 0.0
        for a, w in zip(enabled, weights):
            acc += w
            if x < acc:
                return a
        return enabled[-1]

    def _fire(self, s: ConcreteState, action: Action) -> list:
        rt = self.rt
        locs = list(s.locs)
        events = []
        for e, binding in zip(action.edges, action.bindings):
            locs[e.inst] = e.tgt
            fn = self._update_fn(e)
            if binding:
                env = s.env
                saved = {k: env.get(k, _MISSING) for k in binding}
                env.update(binding)
                fn(env, s.clocks)
                for k, v in saved.items():
                    if v is _MISSING:
                        del env[k]
                    else:
                        env[k] = v
            else:
                fn(s.env, s.clocks)
            events.append((e, binding))
        s.locs = tuple(locs)
        return events


_MISSING = object()


def _combos(receivers: list[list]) -> list[list]:
    """Broadcast receiver combinations: every instance that can receive
    does, choosing one of its enabled edges."""
    if not receivers:
        return [[]]
    out = [[]]
    for per_inst in receivers:
        out = [combo + [choice] for combo in out for choice in per_inst]
    return out


def _compile_update_sim(stmts, rt: NetworkRuntime):
    """Compile update statements into a closure(env, clocks); clock resets
    assign floats into the clocks list by index."""
    lines: list[str] = []

    def gen(stmts, indent):
        from .expr import _gen
        for st in stmts:
            if isinstance(st, Assign):
                t = st.target
                if isinstance(t, VarRef) and t.name in rt.clock_index:
                    ci = rt.clock_index[t.name]
                    lines.append(f"{indent}C[{ci}] = {float(st.value.value)!r}")
                    continue
                if isinstance(t, VarRef):
                    lines.append(f"{indent}E[{t.name!r}] = {_gen(st.value)}")
                else:
                    lines.append(
                        f"{indent}E[{t.name!r}][_idx(E[{t.name!r}], "
                        f"{_gen(t.index)}, {t.name!r})] = {_gen(st.value)}")
            elif isinstance(st, IfStmt):
                lines.append(f"{indent}if {_gen(st.cond)}:")
                if st.then:
                    gen(st.then, indent + "    ")
                else:
                    lines.append(f"{indent}    pass")
                if st.orelse:
                    lines.append(f"{indent}else:")
                    gen(st.orelse, indent + "    ")
            elif isinstance(st, MacroCall):
                gen(rt.macros[st.name], indent)

    gen(stmts, "    ")
    if not lines:
        return lambda E, C: None
    src = "def _upd(E, C):\n" + "\n".join(lines)
    from .expr import int_div, int_mod, _ck, _checked_index
    glb = {"_div": int_div, "_mod": int_mod, "_ck": _ck,
           "_idx": _checked_index}
    exec(compile(src, "<tachyon-sim-update>", "exec"), glb)
    return glb["_upd"]


# ---------------------------------------------------------------------------
# Runs, traces, estimation
# ---------------------------------------------------------------------------

def run_rng(seed: int, run_index: int):
    """Independent, reproducible stream for run `run_index` of a run set."""
    return np.random.default_rng(np.random.SeedSequence((seed, run_index)))


def simulate_run(rt: NetworkRuntime | TANetwork, cfg: SimConfig, rng=None,
                 strategy=None, run_index: int = 0) -> Trace:
    if isinstance(rt, TANetwork):
        rt = NetworkRuntime(rt)
    sim = Simulator(rt, cfg.default_rate)
    if rng is None:
        rng = run_rng(cfg.seed, run_index)
    s = sim.initial_state()
    trace = Trace()
    if cfg.record:
        trace.events.append({"time": 0.0, "kind": "init",
                             "env": _env_snapshot(s.env)})
    steps = 0
    while s.time < cfg.horizon:
        before = None
        if cfg.record:
            before = dict((k, v if not isinstance(v, list) else list(v))
                          for k, v in s.env.items())
        try:
            events, terminal = sim._step_inplace(s, rng, strategy,
                                                 cfg.horizon)
        except EvalError as e:
            trace.terminal = "error"
            trace.error = str(e)
            break
        if terminal == "deadlock":
            trace.terminal = "deadlock"
            if cfg.record:
                trace.events.append({"time": s.time, "kind": "deadlock"})
            break
        if terminal == "horizon":
            trace.terminal = "horizon"
            break
        if cfg.record and events:
            diff = {k: (list(v) if isinstance(v, list) else v)
                    for k, v in s.env.items() if before.get(k) != v}
            for k, (e, binding) in enumerate(events):
                trace.events.append({
                    "time": round(s.time, 9), "kind": "action",
                    "instance": rt.instance_names[e.inst],
                    "edge": f"{e.edge.source}->{e.edge.target}",
                    "select": binding or None,
                    "env_diff": (diff or None) if k == 0 else None,
                })
        steps += 1
    trace.final = s
    return trace


def _env_snapshot(env: dict) -> dict:
    return {k: (list(v) if isinstance(v, list) else v)
            for k, v in env.items()}


@dataclass
class EstimateStats:
    values: list[float]
    mean: float
    minimum: float
    maximum: float
    ci95: tuple[float, float] | None
    runs: int

    def to_json(self) -> dict:
        return {"mean": self.mean, "min": self.minimum, "max": self.maximum,
                "ci95": list(self.ci95) if self.ci95 else None,
                "n": self.runs}


def estimate(rt: NetworkRuntime | TANetwork, query: Estimate,
             cfg: SimConfig, strategy=None) -> EstimateStats:
    """Run N simulations; for `max` mode, the per-run maximum of the
    observed expression, plus mean/min/max and a normal-approximation CI."""
    if isinstance(rt, TANetwork):
        rt = NetworkRuntime(rt)
    expr_fn = compile_expr(query.expr)
    sim = Simulator(rt, cfg.default_rate)
    values = []
    for r in range(query.runs):
        rng = run_rng(cfg.seed, r)
        s = sim.initial_state()
        best = float(expr_fn(s.env))
        while s.time < query.horizon:
            events, terminal = sim._step_inplace(s, rng, strategy,
                                                 float(query.horizon))
            if terminal is not None:
                break
            v = float(expr_fn(s.env))
            if v > best:
                best = v
        values.append(best)
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if len(arr) > 1:
        sd = float(arr.std(ddof=1))
        half = 1.96 * sd / math.sqrt(len(arr))
        ci = (mean - half, mean + half)
    else:
        ci = None
    return EstimateStats(values, mean, float(arr.min()), float(arr.max()),
                         ci, len(arr))
