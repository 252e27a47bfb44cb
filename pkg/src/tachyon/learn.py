"""Tabular Q-learning over the stochastic timed game: synthesizes a
memoryless strategy minimizing an accumulated cost variable.

States are discretized to (location vector, observed discrete variables,
binned observed continuous quantities, binned clocks).  Learning runs
guided episodes: controllable choices are taken epsilon-greedily, the
environment (uncontrollable actions and delays) follows the stochastic
semantics.  Costs are increments of the model-accumulated cost variable
between consecutive decisions, so an episode's summed cost equals the cost
variable at the horizon.  Rewards are negated costs and the backup is the
standard Q <- Q + alpha * (r + gamma * best_next - Q).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

from .diagnostics import TachyonError
from .model import TANetwork
from .parser import StrategyMin, pretty_print
from .runtime import NetworkRuntime
from .simulate import Action, ConcreteState, SimConfig, Simulator, run_rng

STRATEGY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DiscretizationScheme:
    observed_discrete: tuple[str, ...] = ()
    observed_continuous: tuple[tuple[str, float], ...] = ()  # (name, width)
    clock_bins: tuple[tuple[str, float], ...] = ()           # default: none

    def __post_init__(self):
        for _, w in list(self.observed_continuous) + list(self.clock_bins):
            if w <= 0:
                raise TachyonError("bin widths must be positive")


def discretize(s: ConcreteState, scheme: DiscretizationScheme,
               rt: NetworkRuntime) -> tuple:
    """Total function from concrete states to hashable keys: the location
    vector always participates; clocks are ignored unless binned."""
    disc = tuple(
        tuple(s.env[n]) if isinstance(s.env[n], list) else s.env[n]
        for n in scheme.observed_discrete)
    cont = tuple(math.floor(s.env[n] / w)
                 for n, w in scheme.observed_continuous)
    clocks = tuple(math.floor(s.clocks[rt.clock_index[c]] / w)
                   for c, w in scheme.clock_bins)
    return (s.locs, disc, cont, clocks)


def action_key(a: Action) -> tuple:
    e = a.initiator
    binding = a.bindings[0]
    bt = tuple(sorted(binding.items())) if binding else ()
    return (e.inst, e.index, bt)


@dataclass
class LearnConfig:
    episodes: int = 2000
    horizon: float = 600_000_000.0   # ms
    alpha: float = 0.1
    gamma: float = 0.99
    epsilon: float = 0.3
    epsilon_final: float = 0.01
    decay_fraction: float = 0.8      # epsilon reaches final over this share
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise TachyonError("alpha must be in (0, 1]")
        if not 0 <= self.gamma <= 1:
            raise TachyonError("gamma must be in [0, 1]")
        if not 0 <= self.epsilon <= 1:
            raise TachyonError("epsilon must be in [0, 1]")

    def epsilon_at(self, episode: int) -> float:
        cutoff = max(int(self.episodes * self.decay_fraction), 1)
        if episode >= cutoff:
            return self.epsilon_final
        frac = episode / cutoff
        return self.epsilon + (self.epsilon_final - self.epsilon) * frac


class QTable:
    """Mapping (state key, action key) -> Q value, with visit counts."""

    def __init__(self):
        self.q: dict[tuple, dict[tuple, float]] = {}
        self.visits: dict[tuple, int] = {}

    def value(self, key: tuple, action: tuple) -> float:
        return self.q.get(key, {}).get(action, 0.0)

    def best(self, key: tuple, actions) -> float:
        row = self.q.get(key)
        if not row or not actions:
            return 0.0
        return max(row.get(a, 0.0) for a in actions)

    def update(self, key, action, reward, next_key, enabled_next,
               cfg: LearnConfig) -> None:
        q_update(self, key, action, reward, next_key, enabled_next, cfg)

    def n_entries(self) -> int:
        return sum(len(r) for r in self.q.values())


def q_update(table: QTable, key, action, reward, next_key, enabled_next,
             cfg: LearnConfig) -> QTable:
    """Single sample backup; unvisited entries start at 0.  `enabled_next`
    lists the action keys available in the successor (empty/None at the
    horizon, where the continuation value is zero)."""
    best_next = 0.0
    if next_key is not None and enabled_next:
        best_next = table.best(next_key, enabled_next)
    row = table.q.setdefault(key, {})
    old = row.get(action, 0.0)
    row[action] = old + cfg.alpha * (reward + cfg.gamma * best_next - old)
    table.visits[key] = table.visits.get(key, 0) + 1
    return table


@dataclass
class Strategy:
    """Memoryless mapping from discretized states to permitted controllable
    actions (the argmax set), with uniform fallback elsewhere."""

    name: str
    scheme: DiscretizationScheme
    permitted: dict[tuple, tuple[tuple, ...]]
    q_values: dict[tuple, dict[tuple, float]]
    model_hash: str = ""
    config: dict = field(default_factory=dict)
    curve: list[float] = field(default_factory=list)
    fallback_count: int = 0

    def decide(self, sim: Simulator, s: ConcreteState,
               enabled_controllable: list[Action], rng) -> Action:
        return strategy_decide(self, s, enabled_controllable, rng, sim.rt)


def strategy_decide(st: Strategy, s: ConcreteState,
                    enabled_controllable: list[Action], rng,
                    rt: NetworkRuntime) -> Action:
    """Permitted-set intersection with a uniform draw; unknown keys or empty
    intersections fall back to uniform over all enabled (and are counted)."""
    if not enabled_controllable:
        raise TachyonError("strategy_decide needs a non-empty action list")
    key = discretize(s, st.scheme, rt)
    permitted = st.permitted.get(key)
    pool = enabled_controllable
    if permitted is None:
        st.fallback_count += 1
    else:
        inter = [a for a in enabled_controllable
                 if action_key(a) in permitted]
        if inter:
            pool = inter
        else:
            st.fallback_count += 1
    if len(pool) == 1:
        return pool[0]
    return pool[int(rng.integers(0, len(pool)))]


def extract_strategy(name: str, scheme: DiscretizationScheme, table: QTable,
                     model_hash: str, config: dict,
                     curve: list[float]) -> Strategy:
    permitted = {}
    for key, row in table.q.items():
        if not row:
            continue
        best = max(row.values())
        permitted[key] = tuple(sorted(a for a, v in row.items()
                                      if v == best))
    return Strategy(name=name, scheme=scheme, permitted=permitted,
                    q_values={k: dict(v) for k, v in table.q.items()},
                    model_hash=model_hash, config=config, curve=curve)


# ---------------------------------------------------------------------------
# Guided learning episodes
# ---------------------------------------------------------------------------

class _EpsGreedy:
    """Per-episode policy hook: epsilon-greedy over controllable actions
    with online Q backups at decision points."""

    def __init__(self, table: QTable, scheme, rt, cfg: LearnConfig,
                 epsilon: float, cost_var: str):
        self.table = table
        self.scheme = scheme
        self.rt = rt
        self.cfg = cfg
        self.eps = epsilon
        self.cost_var = cost_var
        self.pending: tuple | None = None   # (key, action_key, cost_base)

    def decide(self, sim: Simulator, s: ConcreteState,
               ctrl: list[Action], rng) -> Action:
        key = discretize(s, self.scheme, self.rt)
        cost_now = float(s.env[self.cost_var])
        keys = [action_key(a) for a in ctrl]
        if self.pending is not None:
            pkey, pact, pcost = self.pending
            if cost_now < pcost:
                raise TachyonError(
                    f"cost variable '{self.cost_var}' decreased during a run")
            self.table.update(pkey, pact, -(cost_now - pcost), key, keys,
                              self.cfg)
        if rng.random() < self.eps:
            idx = int(rng.integers(0, len(ctrl)))
        else:
            row = self.table.q.get(key)
            if row:
                best = max(row.get(k, 0.0) for k in keys)
                best_idx = [i for i, k in enumerate(keys)
                            if row.get(k, 0.0) == best]
                idx = best_idx[int(rng.integers(0, len(best_idx)))] \
                    if len(best_idx) > 1 else best_idx[0]
            else:
                idx = int(rng.integers(0, len(ctrl)))
        self.pending = (key, keys[idx], cost_now)
        return ctrl[idx]

    def finish(self, s: ConcreteState) -> None:
        if self.pending is None:
            return
        pkey, pact, pcost = self.pending
        cost_now = float(s.env[self.cost_var])
        self.table.update(pkey, pact, -(cost_now - pcost), None, None,
                          self.cfg)
        self.pending = None


def scheme_from_query(q: StrategyMin) -> DiscretizationScheme:
    return DiscretizationScheme(
        observed_discrete=tuple(q.observed_discrete),
        observed_continuous=tuple((n, 1.0) for n in q.observed_continuous))


def learn_strategy(net: TANetwork | NetworkRuntime, q: StrategyMin,
                   cfg: LearnConfig,
                   progress=None) -> Strategy:
    """Run epsilon-greedy episodes of guided simulation and return the
    greedy strategy extracted from the final Q table, with the learning
    curve (episode -> cost at horizon)."""
    rt = net if isinstance(net, NetworkRuntime) else NetworkRuntime(net)
    if not any(e.edge.controllable
               for per_loc in rt.out_edges for edges in per_loc
               for e in edges):
        raise TachyonError("model has no decision points")
    if q.cost_var not in rt.initial_env():
        raise TachyonError(f"cost variable '{q.cost_var}' is not declared")
    scheme = scheme_from_query(q)
    for name in q.observed_discrete + q.observed_continuous:
        if name not in rt.initial_env():
            raise TachyonError(f"observed name '{name}' is not declared")

    table = QTable()
    sim = Simulator(rt)
    curve: list[float] = []
    horizon = float(q.horizon)
    for ep in range(cfg.episodes):
        rng = run_rng(cfg.seed, ep)
        policy = _EpsGreedy(table, scheme, rt, cfg, cfg.epsilon_at(ep),
                            q.cost_var)
        s = sim.initial_state()
        while s.time < horizon:
            events, terminal = sim._step_inplace(s, rng, policy, horizon)
            if terminal == "deadlock":
                break
            if terminal == "horizon":
                break
        policy.finish(s)
        curve.append(float(s.env[q.cost_var]))
        if progress is not None:
            progress(ep, curve[-1])

    model_hash = network_hash(rt.net)
    return extract_strategy(q.name, scheme, table, model_hash,
                            _config_dict(cfg), curve)


def _config_dict(cfg: LearnConfig) -> dict:
    return asdict(cfg)


def network_hash(net: TANetwork) -> str:
    return hashlib.sha256(pretty_print(net).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Strategy (de)serialization
# ---------------------------------------------------------------------------

def _key_to_json(key: tuple) -> list:
    return _tuplify_to_list(key)


def _tuplify_to_list(x):
    if isinstance(x, tuple):
        return ["t", [_tuplify_to_list(v) for v in x]]
    return x


def _listify_to_tuple(x):
    if isinstance(x, list) and len(x) == 2 and x[0] == "t":
        return tuple(_listify_to_tuple(v) for v in x[1])
    return x


def export_strategy(st: Strategy) -> bytes:
    entries = []
    for key, row in st.q_values.items():
        entries.append({
            "key": _key_to_json(key),
            "actions": [{"action": _key_to_json(a), "q": v}
                        for a, v in sorted(row.items())],
            "permitted": [_key_to_json(a) for a in st.permitted.get(key, ())],
        })
    doc = {
        "version": STRATEGY_FORMAT_VERSION,
        "name": st.name,
        "model_hash": st.model_hash,
        "scheme": {
            "observed_discrete": list(st.scheme.observed_discrete),
            "observed_continuous": [[n, w] for n, w
                                    in st.scheme.observed_continuous],
            "clock_bins": [[n, w] for n, w in st.scheme.clock_bins],
        },
        "entries": entries,
        "config": st.config,
        "curve": st.curve,
    }
    return json.dumps(doc, indent=1).encode()


def import_strategy(data: bytes, expect_model_hash: str | None = None
                    ) -> Strategy:
    doc = json.loads(data.decode())
    if doc.get("version") != STRATEGY_FORMAT_VERSION:
        raise TachyonError(
            f"unsupported strategy file version {doc.get('version')!r}")
    if expect_model_hash is not None and \
            doc.get("model_hash") != expect_model_hash:
        raise TachyonError("strategy was learned for a different model "
                           "(hash mismatch)")
    sc = doc["scheme"]
    scheme = DiscretizationScheme(
        observed_discrete=tuple(sc["observed_discrete"]),
        observed_continuous=tuple((n, float(w))
                                  for n, w in sc["observed_continuous"]),
        clock_bins=tuple((n, float(w)) for n, w in sc["clock_bins"]))
    permitted = {}
    q_values = {}
    for entry in doc["entries"]:
        key = _listify_to_tuple(entry["key"])
        q_values[key] = {_listify_to_tuple(a["action"]): float(a["q"])
                         for a in entry["actions"]}
        permitted[key] = tuple(_listify_to_tuple(a)
                               for a in entry["permitted"])
    return Strategy(name=doc.get("name", "S"), scheme=scheme,
                    permitted=permitted, q_values=q_values,
                    model_hash=doc.get("model_hash", ""),
                    config=doc.get("config", {}),
                    curve=list(doc.get("curve", [])))
