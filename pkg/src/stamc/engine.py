"""Stochastic simulation engine.

Executes one run of a compiled network up to a time bound: delay sampling
(uniform on bounded sojourns, exponential otherwise), race resolution with
deterministic tie-breaking, weighted edge choice, broadcast/binary
synchronization and numeric clock integration under location-dependent
rates.

Determinism contract: a run is a pure function of (model, master seed, run
index).  Each run owns its RngStream and its mutable state; nothing is
shared, so runs can execute on any number of workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import expr as E
from .model import Model, Network, instantiate

INF = math.inf


class EngineError(Exception):
    pass


@dataclass
class RngStream:
    """Replayable random stream: (seed, run index) fully determine the run."""

    master_seed: int
    run_index: int
    counter: int = 0

    def __post_init__(self):
        ss = np.random.SeedSequence((self.master_seed, self.run_index))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def uniform(self, lo: float, hi: float) -> float:
        self.counter += 1
        if hi <= lo:
            return lo
        return lo + (hi - lo) * self._gen.random()

    def exponential(self, rate: float) -> float:
        self.counter += 1
        return self._gen.exponential(1.0 / rate)

    def weighted_choice(self, weights) -> int:
        if len(weights) == 1:
            return 0
        self.counter += 1
        total = sum(weights)
        u = self._gen.random() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if u < acc:
                return i
        return len(weights) - 1


@dataclass(frozen=True)
class TraceEvent:
    time: float
    component: str
    edge: str
    channel: Optional[str]
    watch_pre: dict  # watched values after the delay, before edge updates
    watch: dict  # watched values after edge updates (incl. receivers)


@dataclass
class Trace:
    initial: dict  # watched values at t = 0
    events: list
    end_time: float
    end_reason: str  # bound_reached | deadlock
    final: dict = field(default_factory=dict)

    def samples(self):
        """Time-ordered (t, watch-dict) pairs covering the whole run."""
        yield 0.0, self.initial
        for ev in self.events:
            yield ev.time, ev.watch_pre
            yield ev.time, ev.watch
        yield self.end_time, self.final


@dataclass
class RunConfig:
    h_max: float = 0.05  # RK4 step ceiling (time units)
    max_steps: int = 10 ** 6  # zeno / committed-loop ceiling
    check_invariants: bool = False

    _INT_MAX = 2 ** 63 - 1


# --- compilation -----------------------------------------------------------


class _CompiledEdge:
    __slots__ = ("label", "source", "target", "guard", "guard_atoms", "sync",
                 "weight", "updates")

    def __init__(self, label, source, target, guard, guard_atoms, sync,
                 weight, updates):
        self.label = label
        self.source = source
        self.target = target
        self.guard = guard  # compiled or None
        self.guard_atoms = guard_atoms  # compiled (lhs - rhs) difference fns
        self.sync = sync
        self.weight = weight
        self.updates = updates  # list[(key, fn, vtype)]


class _CompiledLocation:
    __slots__ = ("id", "committed", "invariant", "inv_atoms", "rates",
                 "exit_rate")

    def __init__(self, id, committed, invariant, inv_atoms, rates, exit_rate):
        self.id = id
        self.committed = committed
        self.invariant = invariant
        self.inv_atoms = inv_atoms
        self.rates = rates  # dict clock key -> (fn, references_clocks)
        self.exit_rate = exit_rate


class _CompiledComponent:
    __slots__ = ("name", "index", "initial", "locations", "out_active",
                 "out_receive", "init_values")

    def __init__(self, name, index, initial):
        self.name = name
        self.index = index
        self.initial = initial
        self.locations = {}  # loc id -> _CompiledLocation
        self.out_active = {}  # loc id -> [edges] (internal or emitting)
        self.out_receive = {}  # loc id -> {channel: [edges]}
        self.init_values = []  # [(key, value, vtype)] for locals


class CompiledNetwork:
    """A network lowered to closures, ready to simulate."""

    def __init__(self, network: Network):
        self.network = network
        model = network.model
        self.broadcast = {c.name: c.broadcast for c in model.channels}
        self.var_types = {}  # value key -> int|real|bool|clock
        self.clock_keys = []
        self.components = []
        self._global_init = []

        for d in model.decls:
            self.var_types[d.name] = d.type
            if d.type == "clock":
                self.clock_keys.append(d.name)
            self._global_init.append((d.name, d.init, d.type))

        comp_templates = {c.name: c.template for c in network.components}
        comp_locals = {}
        for comp in network.components:
            local = {p: v for p, v in comp.bindings}
            comp_locals[comp.name] = ({d.name for d in comp.template.decls},
                                      local)
            for d in comp.template.decls:
                key = f"{comp.name}.{d.name}"
                self.var_types[key] = d.type
                if d.type == "clock":
                    self.clock_keys.append(key)

        global_names = {d.name for d in model.decls}

        def make_resolver(comp_name: Optional[str]) -> Callable:
            local_decls, params = ((set(), {}) if comp_name is None
                                   else comp_locals[comp_name])

            def resolver(name: str):
                if "." in name:
                    owner, member = name.split(".", 1)
                    if owner not in comp_templates:
                        raise E.ExprError(f"unknown component {owner!r}")
                    tpl = comp_templates[owner]
                    if any(l.id == member for l in tpl.locations):
                        return ("loc", owner, member)
                    if any(d.name == member for d in tpl.decls):
                        return ("var", name)
                    for p, v in dict(
                            next(c.bindings for c in network.components
                                 if c.name == owner)).items():
                        if p == member:
                            return ("const", v)
                    raise E.ExprError(f"unknown member {name!r}")
                if comp_name is not None:
                    if name in params:
                        return ("const", params[name])
                    if name in local_decls:
                        return ("var", f"{comp_name}.{name}")
                if name in global_names:
                    return ("var", name)
                raise E.ExprError(f"unknown name {name!r}")

            return resolver

        self.query_resolver = make_resolver(None)

        for index, comp in enumerate(network.components):
            cc = _CompiledComponent(comp.name, index, comp.template.initial)
            resolver = make_resolver(comp.name)
            local_decls, params = comp_locals[comp.name]
            for d in comp.template.decls:
                cc.init_values.append((f"{comp.name}.{d.name}", d.init, d.type))

            def resolved_clock_refs(e) -> bool:
                for n in E.names(e):
                    kind, *rest = resolver(n)
                    if kind == "var" and self.var_types.get(rest[0]) == "clock":
                        return True
                return False

            for loc in comp.template.locations:
                inv = (E.compile_expr(loc.invariant, resolver)
                       if loc.invariant is not None else None)
                inv_atoms = (self._compile_atoms(loc.invariant, resolver,
                                                 resolved_clock_refs)
                             if loc.invariant is not None else [])
                rates = {}
                for clk, rate_expr in loc.rates:
                    key = resolver(clk)[1]
                    rates[key] = (E.compile_expr(rate_expr, resolver),
                                  resolved_clock_refs(rate_expr))
                cc.locations[loc.id] = _CompiledLocation(
                    loc.id, loc.kind == "committed", inv, inv_atoms, rates,
                    loc.exit_rate)
                cc.out_active[loc.id] = []
                cc.out_receive[loc.id] = {}

            for i, edge in enumerate(comp.template.edges):
                guard = (E.compile_expr(edge.guard, resolver)
                         if edge.guard is not None else None)
                atoms = (self._compile_atoms(edge.guard, resolver,
                                             resolved_clock_refs)
                         if edge.guard is not None else [])
                updates = []
                for name, rhs in edge.updates:
                    key = resolver(name)[1]
                    updates.append((key, E.compile_expr(rhs, resolver),
                                    self.var_types[key]))
                ce = _CompiledEdge(
                    f"{edge.source}->{edge.target}#{i}", edge.source,
                    edge.target, guard, atoms, edge.sync, edge.weight, updates)
                if edge.sync is not None and edge.sync.direction == "receive":
                    cc.out_receive[edge.source].setdefault(
                        edge.sync.channel, []).append(ce)
                else:
                    cc.out_active[edge.source].append(ce)
            self.components.append(cc)

    def _compile_atoms(self, boolean_expr, resolver, refs_clocks):
        """Compiled difference fns (lhs - rhs) for clock-bearing atoms."""
        atoms = []
        for atom in E.comparison_atoms(boolean_expr):
            if refs_clocks(atom.left) or refs_clocks(atom.right):
                diff = E.Binary("-", atom.left, atom.right)
                atoms.append(E.compile_expr(diff, resolver))
        return atoms

    def initial_state(self) -> "State":
        V = {}
        L = {}
        for key, value, vtype in self._global_init:
            V[key] = self._coerce(value, vtype)
        for cc in self.components:
            L[cc.name] = cc.initial
            for key, value, vtype in cc.init_values:
                V[key] = self._coerce(value, vtype)
        return State(V, L, 0.0)

    @staticmethod
    def _coerce(value, vtype):
        if vtype == "int":
            iv = int(value)
            if iv != value:
                raise EngineError(
                    f"non-integer value {value!r} assigned to an int variable")
            if abs(iv) > RunConfig._INT_MAX:
                raise EngineError(f"int value {iv} out of 64-bit range")
            return iv
        if vtype == "bool":
            return bool(value)
        return float(value)

    def compile_watch(self, exprs):
        """[(key text, compiled fn)] for query-scope watch expressions."""
        out = []
        for e in exprs:
            if isinstance(e, str):
                from .parser import parse_expression
                e = parse_expression(e)
            out.append((E.to_text(e), E.compile_expr(e, self.query_resolver)))
        return out


@dataclass
class State:
    V: dict  # value key -> number
    L: dict  # component name -> location id
    time: float


# --- simulator -------------------------------------------------------------


class Simulator:
    def __init__(self, net: CompiledNetwork, rng: RngStream,
                 config: Optional[RunConfig] = None, watch=()):
        self.net = net
        self.rng = rng
        self.config = config or RunConfig()
        self.state = net.initial_state()
        self.watch = net.compile_watch(watch)

    # -- expression probing under linear clock extrapolation --

    def _advanced_values(self, dt: float, rates: dict) -> dict:
        V = self.state.V
        if dt == 0.0:
            return V
        V2 = dict(V)
        for key, r in rates.items():
            V2[key] = V[key] + r * dt
        return V2

    def _current_rates(self) -> dict:
        """Numeric rate per clock at the current state (linear probe basis)."""
        V, L = self.state.V, self.state.L
        rates = {key: 1.0 for key in self.net.clock_keys}
        for cc in self.net.components:
            loc = cc.locations[L[cc.name]]
            if loc.committed:
                continue
            for key, (fn, _) in loc.rates.items():
                rates[key] = float(fn(V, L))
        return rates

    def _earliest(self, pred, atoms, rates, horizon: float, want: bool):
        """Earliest t in [0, horizon] with pred == want, or None.

        Guard/invariant atoms are affine in the clocks (validated), so truth
        can only flip at atom crossing times; probe those breakpoints.
        """
        L = self.state.L
        eps = 1e-9
        if bool(pred(self.state.V, L)) == want:
            return 0.0
        if horizon <= 0:
            return None
        # boundary case: truth flips immediately (atom sitting at 0 with a
        # nonzero slope), which yields no strictly positive crossing below
        crossings = [eps]
        for diff in atoms:
            g0 = float(diff(self.state.V, L))
            g1 = float(diff(self._advanced_values(1.0, rates), L))
            slope = g1 - g0
            if slope == 0.0:
                continue
            t = -g0 / slope
            if eps < t <= horizon if horizon != INF else t > eps:
                crossings.append(t)
        for t in sorted(crossings):
            if bool(pred(self._advanced_values(t + eps, rates), L)) == want:
                return t
        return None

    def _invariant_deadline(self, cc, rates) -> float:
        """Latest delay the location invariant allows (inf if unbounded)."""
        loc = cc.locations[self.state.L[cc.name]]
        if loc.invariant is None:
            return INF
        if not bool(loc.invariant(self.state.V, self.state.L)):
            raise EngineError(
                f"invariant of {cc.name} violated at entry (engine defect)")
        t = self._earliest(loc.invariant, loc.inv_atoms, rates, INF, False)
        return INF if t is None else t

    def _edge_window_start(self, edge, rates, horizon: float):
        if edge.guard is None:
            return 0.0
        return self._earliest(edge.guard, edge.guard_atoms, rates, horizon,
                              True)

    def sample_delay(self, comp_index: int, rates: Optional[dict] = None):
        """Sojourn delay for one component, or None if it cannot act.

        Uniform[L, U] when the invariant bounds the sojourn, otherwise
        L + Exponential(exit-rate, default 1).  Committed locations are the
        caller's business (delay 0).
        """
        cc = self.net.components[comp_index]
        loc = cc.locations[self.state.L[cc.name]]
        if loc.committed:
            return 0.0
        if rates is None:
            rates = self._current_rates()
        U = self._invariant_deadline(cc, rates)
        starts = []
        for edge in cc.out_active[loc.id]:
            if (edge.sync is not None and edge.sync.direction == "emit"
                    and not self.net.broadcast.get(edge.sync.channel, True)
                    and self._receiver_count(cc, edge.sync.channel) != 1):
                # binary emit without exactly one ready receiver; receiver
                # locations are frozen until the next event, so skip it
                # (clock-guarded receivers opening mid-sojourn are ignored)
                continue
            s = self._edge_window_start(edge, rates, U)
            if s is not None:
                starts.append(s)
        if not starts:
            return None
        Lb = min(starts)
        if U < INF:
            return self.rng.uniform(Lb, U)
        return Lb + self.rng.exponential(loc.exit_rate or 1.0)

    # -- integration --

    def advance_time(self, dt: float) -> None:
        """Advance all clocks by dt under the current location rates.

        Clocks whose rate does not reference other clocks advance exactly
        by rate*dt; the rest are integrated jointly with fixed-step RK4.
        """
        if dt < 0:
            if dt < -1e-6:
                raise EngineError("negative dt")
            dt = 0.0  # rounding residue from a boundary nudge
        if dt == 0.0:
            return
        V, L = self.state.V, self.state.L
        const_rates = {}
        var_rates = {}  # clock key -> rate fn
        for cc in self.net.components:
            loc = cc.locations[L[cc.name]]
            if loc.committed:
                continue
            for key, (fn, refs_clocks) in loc.rates.items():
                if refs_clocks:
                    var_rates[key] = fn
                else:
                    const_rates[key] = float(fn(V, L))
        for key in self.net.clock_keys:
            if key not in var_rates and key not in const_rates:
                const_rates[key] = 1.0

        base = {key: V[key] for key in const_rates}
        if var_rates:
            ykeys = list(var_rates)
            y = np.array([V[k] for k in ykeys], dtype=float)
            n_steps = max(1, math.ceil(dt / self.config.h_max))
            h = dt / n_steps

            def f(t_off, yvals):
                for key, r in const_rates.items():
                    V[key] = base[key] + r * t_off
                for k, val in zip(ykeys, yvals):
                    V[k] = val
                out = np.empty(len(ykeys))
                for i, k in enumerate(ykeys):
                    v = float(var_rates[k](V, L))
                    if not math.isfinite(v):
                        raise EngineError(f"rate of {k!r} is not finite")
                    out[i] = v
                return out

            t = 0.0
            for _ in range(n_steps):
                k1 = f(t, y)
                k2 = f(t + h / 2, y + k1 * (h / 2))
                k3 = f(t + h / 2, y + k2 * (h / 2))
                k4 = f(t + h, y + k3 * h)
                y = y + (k1 + 2 * k2 + 2 * k3 + k4) * (h / 6)
                t += h
            for k, val in zip(ykeys, y):
                V[k] = float(val)
        for key, r in const_rates.items():
            if not math.isfinite(r):
                raise EngineError(f"rate of {key!r} is not finite")
            V[key] = base[key] + r * dt
        self.state.time += dt

    # -- firing --

    def _edge_enabled(self, cc, edge) -> bool:
        V, L = self.state.V, self.state.L
        if edge.guard is not None and not edge.guard(V, L):
            return False
        if edge.sync is not None and edge.sync.direction == "emit":
            ch = edge.sync.channel
            if not self.net.broadcast.get(ch, True):
                # binary: exactly one matching receiver required
                return self._receiver_count(cc, ch) == 1
        return True

    def _receiver_count(self, emitter, ch) -> int:
        V, L = self.state.V, self.state.L
        count = 0
        for cc in self.net.components:
            if cc is emitter:
                continue
            for edge in cc.out_receive[L[cc.name]].get(ch, ()):
                if edge.guard is None or edge.guard(V, L):
                    count += 1
                    break
        return count

    def _apply_updates(self, edge) -> None:
        V, L = self.state.V, self.state.L
        if edge.updates:
            staged = [(key, fn(V, L), vtype) for key, fn, vtype in edge.updates]
            for key, value, vtype in staged:
                V[key] = CompiledNetwork._coerce(value, vtype)

    def _fire(self, cc, edge) -> Optional[str]:
        """Apply one edge plus any synchronized receivers; returns channel."""
        V, L = self.state.V, self.state.L
        self._apply_updates(edge)
        L[cc.name] = edge.target
        if edge.sync is None:
            return None
        ch = edge.sync.channel
        broadcast = self.net.broadcast.get(ch, True)
        receivers = []
        for other in self.net.components:
            if other is cc:
                continue
            enabled = [e for e in other.out_receive[L[other.name]].get(ch, ())
                       if e.guard is None or e.guard(V, L)]
            if enabled:
                receivers.append((other, enabled))
        if not broadcast:
            receivers = receivers[:1]  # validated to be exactly one
        for other, enabled in receivers:
            idx = self.rng.weighted_choice([e.weight for e in enabled])
            chosen = enabled[idx]
            self._apply_updates(chosen)
            L[other.name] = chosen.target
        return ch

    def _snapshot(self) -> dict:
        V, L = self.state.V, self.state.L
        return {key: fn(V, L) for key, fn in self.watch}

    def _check_invariants(self) -> None:
        V, L = self.state.V, self.state.L
        for cc in self.net.components:
            inv = cc.locations[L[cc.name]].invariant
            if inv is not None and not inv(V, L):
                raise EngineError(
                    f"invariant of {cc.name} violated after step "
                    f"(t={self.state.time})")

    def step(self, bound: float):
        """One network step.  Returns a TraceEvent, or a terminal string:
        "bound_reached" | "deadlock"."""
        V, L = self.state.V, self.state.L
        committed = [cc for cc in self.net.components
                     if cc.locations[L[cc.name]].committed]
        if committed:
            for cc in committed:
                enabled = [e for e in cc.out_active[L[cc.name]]
                           if self._edge_enabled(cc, e)]
                if enabled:
                    pre = self._snapshot()
                    idx = self.rng.weighted_choice([e.weight for e in enabled])
                    ch = self._fire(cc, enabled[idx])
                    if self.config.check_invariants:
                        self._check_invariants()
                    return TraceEvent(self.state.time, cc.name,
                                      enabled[idx].label, ch, pre,
                                      self._snapshot())
            return "deadlock"

        rates = self._current_rates()
        best = None  # (delay, index)
        cap = INF  # invariant ceiling of components that cannot act
        for cc in self.net.components:
            delay = self.sample_delay(cc.index, rates)
            if delay is None:
                cap = min(cap, self._invariant_deadline(cc, rates))
            elif best is None or delay < best[0]:
                best = (delay, cc.index)

        remaining = bound - self.state.time
        if best is None:
            self.advance_time(min(remaining, cap))
            return "bound_reached" if cap >= remaining else "deadlock"
        delay, winner_idx = best
        if delay > remaining:
            self.advance_time(remaining)
            return "bound_reached"
        if delay > cap:
            self.advance_time(cap)
            return "deadlock"

        self.advance_time(delay)
        cc = self.net.components[winner_idx]
        enabled = [e for e in cc.out_active[L[cc.name]]
                   if self._edge_enabled(cc, e)]
        if not enabled:
            # accumulated rounding can leave a boundary guard (window of
            # width zero) a few ulps short of its crossing; nudge once
            self.advance_time(1e-9)
            enabled = [e for e in cc.out_active[L[cc.name]]
                       if self._edge_enabled(cc, e)]
        if not enabled:
            raise EngineError(
                f"{cc.name}: no edge enabled at its sampled delay "
                "(guard window closed; engine defect or unsupported model)")
        pre = self._snapshot()
        idx = self.rng.weighted_choice([e.weight for e in enabled])
        ch = self._fire(cc, enabled[idx])
        if self.config.check_invariants:
            self._check_invariants()
        return TraceEvent(self.state.time, cc.name, enabled[idx].label, ch,
                          pre, self._snapshot())


def run(network, bound: float, rng: RngStream, watch=(),
        config: Optional[RunConfig] = None) -> Trace:
    """Simulate one run up to the bound; final partial delay is applied so
    watched expressions are sampled exactly at the bound."""
    if bound <= 0:
        raise EngineError("bound must be > 0")
    if isinstance(network, Model):
        network = instantiate(network)
    net = (network if isinstance(network, CompiledNetwork)
           else CompiledNetwork(network))
    sim = Simulator(net, rng, config, watch)
    events = []
    initial = sim._snapshot()
    for _ in range(sim.config.max_steps):
        result = sim.step(bound)
        if result == "bound_reached":
            return Trace(initial, events, sim.state.time, "bound_reached",
                         sim._snapshot())
        if result == "deadlock":
            return Trace(initial, events, sim.state.time, "deadlock",
                         sim._snapshot())
        events.append(result)
    raise EngineError(
        "zeno/committed-loop: step ceiling "
        f"({sim.config.max_steps}) exceeded at t={sim.state.time}")


def trace_to_jsonl(trace: Trace) -> str:
    lines = []
    for ev in trace.events:
        lines.append(json.dumps({"t": ev.time, "comp": ev.component,
                                 "edge": ev.edge, "watch": ev.watch}))
    return "\n".join(lines) + ("\n" if lines else "")
