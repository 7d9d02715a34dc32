"""Weakly-hard timing-constraint monitors.

Each of the four constraint kinds (execution, synchronization, periodic,
end-to-end) is available twice: as a pure trace-checking oracle
(``measure_*`` + :func:`wh_judge`) and as an observer template
(:func:`build_observer`) that composes with any network as a pure listener.
The two routes are checked against each other in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from . import expr as E
from .model import Edge, Instantiation, Location, Model, Sync, Template, VarDecl

KINDS = ("execution", "synchronization", "periodic", "endtoend")


class MonitorError(Exception):
    pass


class MalformedTrace(MonitorError):
    pass


@dataclass(frozen=True)
class EventBinding:
    channel: Optional[str] = None
    predicate: Optional[E.Expr] = None  # rising edge; oracle-only

    def __post_init__(self):
        if (self.channel is None) == (self.predicate is None):
            raise MonitorError("binding is either a channel or a predicate")


@dataclass(frozen=True)
class WhConstraint:
    kind: str
    m: int
    k: int
    bindings: tuple = ()  # tuple[(event name, EventBinding)]
    lower: float = 0.0
    upper: float = math.inf
    tolerance: float = 0.0
    jitter: float = 0.0
    short_window: str = "proportional"  # or "vacuous"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MonitorError(f"unknown constraint kind {self.kind!r}")
        if not (1 <= self.m <= self.k):
            raise MonitorError("need 1 <= m <= k")
        if self.lower > self.upper:
            raise MonitorError("need lower <= upper")
        if self.tolerance < 0 or self.jitter < 0:
            raise MonitorError("tolerance and jitter must be >= 0")

    def binding(self, event: str) -> EventBinding:
        for name, b in self.bindings:
            if name == event:
                return b
        raise MonitorError(f"event {event!r} not bound")

    def has(self, event: str) -> bool:
        return any(name == event for name, _ in self.bindings)

    def event_streams(self) -> list:
        """Bound events in declaration order (for synchronization)."""
        return [name for name, _ in self.bindings]


@dataclass(frozen=True)
class OccurrenceRecord:
    index: int
    quantity: float
    passed: bool
    incomplete: bool = False


@dataclass
class MonitorVerdict:
    constraint: WhConstraint
    records: list
    wh_holds: bool
    first_violating_window: Optional[int] = None


# --- event extraction ------------------------------------------------------


def event_times(trace, binding: EventBinding) -> list:
    """Occurrence times of a bound event, in trace order."""
    if binding.channel is not None:
        return [ev.time for ev in trace.events if ev.channel == binding.channel]
    key = E.to_text(binding.predicate)
    times = []
    prev = None
    for t, snap in trace.samples():
        if key not in snap:
            raise MonitorError(f"predicate {key!r} not watched on this trace")
        cur = bool(snap[key])
        if cur and prev is False:
            times.append(t)
        prev = cur
    return times


# --- oracles ---------------------------------------------------------------


def measure_execution(trace, c: WhConstraint) -> list:
    """Per start..stop pair: duration minus preempted intervals."""
    tagged = []
    for ev in trace.events:
        for name in ("start", "stop", "preempt", "resume"):
            if c.has(name):
                b = c.binding(name)
                if b.channel is not None and ev.channel == b.channel:
                    tagged.append((name, ev.time))
    # predicate bindings: merge rising edges, keeping time order
    for name in ("start", "stop", "preempt", "resume"):
        if c.has(name) and c.binding(name).predicate is not None:
            tagged.extend((name, t) for t in event_times(trace, c.binding(name)))
    tagged.sort(key=lambda x: x[1])

    records = []
    open_t = None
    preempt_t = None
    held = 0.0
    for name, t in tagged:
        if name == "start":
            if open_t is not None:
                raise MalformedTrace(f"start at t={t} before previous stop")
            open_t, held, preempt_t = t, 0.0, None
        elif name == "preempt":
            if open_t is None or preempt_t is not None:
                raise MalformedTrace(f"preempt at t={t} outside an execution")
            preempt_t = t
        elif name == "resume":
            if preempt_t is None:
                raise MalformedTrace(f"resume at t={t} without preempt")
            held += t - preempt_t
            preempt_t = None
        elif name == "stop":
            if open_t is None:
                raise MalformedTrace(f"stop at t={t} without start")
            if preempt_t is not None:
                held += t - preempt_t
                preempt_t = None
            q = (t - open_t) - held
            records.append(OccurrenceRecord(len(records), q,
                                            c.lower <= q <= c.upper))
            open_t = None
    return records


def measure_synchronization(trace, c: WhConstraint) -> list:
    """Group i-th arrivals across all bound streams; quantity = spread."""
    streams = [event_times(trace, b) for _, b in c.bindings]
    if len(streams) < 2:
        raise MonitorError("synchronization needs >= 2 event streams")
    full = min(len(s) for s in streams)
    records = []
    for i in range(full):
        group = [s[i] for s in streams]
        spread = max(group) - min(group)
        records.append(OccurrenceRecord(i, spread, spread <= c.tolerance))
    if any(len(s) > full for s in streams):
        records.append(OccurrenceRecord(full, math.nan, False, incomplete=True))
    return records


def measure_periodic(trace, c: WhConstraint) -> list:
    times = event_times(trace, c.binding("occurrence"))
    lo = c.lower - c.jitter
    hi = c.upper + c.jitter
    return [
        OccurrenceRecord(i, gap, lo <= gap <= hi)
        for i, gap in enumerate(b - a for a, b in zip(times, times[1:]))
    ]


def measure_end_to_end(trace, c: WhConstraint) -> list:
    sources = event_times(trace, c.binding("source"))
    targets = event_times(trace, c.binding("target"))
    records = []
    for i, (s, t) in enumerate(zip(sources, targets)):
        if t < s:
            raise MalformedTrace(f"target at t={t} precedes its source at t={s}")
        q = t - s
        records.append(OccurrenceRecord(i, q, c.lower <= q <= c.upper))
    if len(sources) > len(targets):
        records.append(OccurrenceRecord(len(targets), math.nan, False,
                                        incomplete=True))
    return records


_MEASURES = {
    "execution": measure_execution,
    "synchronization": measure_synchronization,
    "periodic": measure_periodic,
    "endtoend": measure_end_to_end,
}


def wh_judge(records, m: int, k: int, short_window: str = "proportional"):
    """True iff every window of k consecutive complete records has >= m passes.

    Fewer records than k: proportional threshold ceil(m*len/k), or vacuously
    true under the "vacuous" policy.  Returns (holds, first violating window
    start index or None).
    """
    if not (1 <= m <= k):
        raise MonitorError("need 1 <= m <= k")
    passes = [r.passed for r in records if not r.incomplete]
    n = len(passes)
    if n < k:
        if short_window == "vacuous" or n == 0:
            return True, None
        need = math.ceil(m * n / k)
        return (True, None) if sum(passes) >= need else (False, 0)
    for start in range(n - k + 1):
        if sum(passes[start:start + k]) < m:
            return False, start
    return True, None


def check_trace(trace, c: WhConstraint) -> MonitorVerdict:
    records = _MEASURES[c.kind](trace, c)
    holds, first = wh_judge(records, c.m, c.k, c.short_window)
    return MonitorVerdict(c, records, holds, first)


# --- observer automata -----------------------------------------------------


def _num(v) -> E.Num:
    return E.Num(float(v))


def _cmp(op, a, b) -> E.Expr:
    return E.Binary(op, a, b)


def _and(a, b) -> E.Expr:
    return E.Binary("&&", a, b)


def _in_band(clock: str, lo: float, hi: float) -> E.Expr:
    return _and(_cmp("<=", _num(lo), E.Name(clock)),
                _cmp("<=", E.Name(clock), _num(hi)))


def _out_band(clock: str, lo: float, hi: float) -> E.Expr:
    return E.Binary("||", _cmp("<", E.Name(clock), _num(lo)),
                    _cmp(">", E.Name(clock), _num(hi)))


def _chan(c: WhConstraint, event: str) -> str:
    b = c.binding(event)
    if b.channel is None:
        raise MonitorError(
            f"observer needs a channel binding for {event!r} "
            "(predicate bindings are oracle-only)")
    return b.channel


def build_observer(c: WhConstraint, name: str = "Observer") -> Template:
    """Observer template with `success` and `fail` locations.

    All edges are receive-only or internal committed judgments, so composing
    the observer never alters the watched network's behavior (channels it
    listens on must be broadcast).
    """
    if c.kind == "execution":
        return _execution_observer(c, name)
    if c.kind == "synchronization":
        return _synchronization_observer(c, name)
    if c.kind == "periodic":
        return _periodic_observer(c, name)
    return _end_to_end_observer(c, name)


def _execution_observer(c: WhConstraint, name: str) -> Template:
    start, stop = _chan(c, "start"), _chan(c, "stop")
    has_preempt = c.has("preempt")
    locs = [
        Location("idle", rates=(("execclk", _num(0)),)),
        Location("exec", rates=(("execclk", _num(1)),)),
        Location("finish", kind="committed"),
        Location("success", rates=(("execclk", _num(0)),)),
        Location("fail", rates=(("execclk", _num(0)),)),
    ]
    edges = [
        Edge("idle", "exec", sync=Sync(start, "receive"),
             updates=(("execclk", _num(0)),)),
        Edge("exec", "finish", sync=Sync(stop, "receive")),
        Edge("finish", "success", guard=_in_band("execclk", c.lower, c.upper)),
        Edge("finish", "fail", guard=_out_band("execclk", c.lower, c.upper)),
        Edge("success", "exec", sync=Sync(start, "receive"),
             updates=(("execclk", _num(0)),)),
    ]
    if has_preempt:
        preempt, resume = _chan(c, "preempt"), _chan(c, "resume")
        locs.insert(2, Location("preempted", rates=(("execclk", _num(0)),)))
        edges += [
            Edge("exec", "preempted", sync=Sync(preempt, "receive")),
            Edge("preempted", "exec", sync=Sync(resume, "receive")),
        ]
    return Template(name=name, decls=(VarDecl("execclk", "clock"),),
                    locations=tuple(locs), edges=tuple(edges), initial="idle")


def _synchronization_observer(c: WhConstraint, name: str) -> Template:
    chans = [_chan(c, ev) for ev in c.event_streams()]
    n = len(chans)
    if n < 2:
        raise MonitorError("synchronization observer needs >= 2 channels")
    decls = [VarDecl("sclk", "clock"), VarDecl("cnt", "int")]
    decls += [VarDecl(f"got{i}", "bool") for i in range(n)]
    locs = (
        Location("collect", rates=(("sclk", _num(1)),)),
        Location("judge", kind="committed"),
        Location("success", kind="committed"),
        Location("fail"),
    )
    edges = []
    for i, ch in enumerate(chans):
        got = E.Name(f"got{i}")
        not_got = E.Unary("!", got)
        edges.append(Edge(  # first arrival of the round resets the window clock
            "collect", "collect", sync=Sync(ch, "receive"),
            guard=_cmp("==", E.Name("cnt"), _num(0)),
            updates=(("sclk", _num(0)), (f"got{i}", E.BoolLit(True)),
                     ("cnt", _num(1)))))
        edges.append(Edge(
            "collect", "collect", sync=Sync(ch, "receive"),
            guard=_and(_and(_cmp(">", E.Name("cnt"), _num(0)),
                            _cmp("<", E.Name("cnt"), _num(n - 1))), not_got),
            updates=((f"got{i}", E.BoolLit(True)),
                     ("cnt", E.Binary("+", E.Name("cnt"), _num(1))))))
        edges.append(Edge(  # last arrival completes the group
            "collect", "judge", sync=Sync(ch, "receive"),
            guard=_and(_cmp("==", E.Name("cnt"), _num(n - 1)), not_got)))
        edges.append(Edge(  # duplicate arrival within a round is ignored
            "collect", "collect", sync=Sync(ch, "receive"), guard=got))
    resets = tuple([("cnt", _num(0))] +
                   [(f"got{i}", E.BoolLit(False)) for i in range(n)])
    edges.append(Edge("judge", "success",
                      guard=_cmp("<=", E.Name("sclk"), _num(c.tolerance)),
                      updates=resets))
    edges.append(Edge("judge", "fail",
                      guard=_cmp(">", E.Name("sclk"), _num(c.tolerance))))
    edges.append(Edge("success", "collect"))
    return Template(name=name, decls=tuple(decls), locations=locs,
                    edges=tuple(edges), initial="collect")


def _periodic_observer(c: WhConstraint, name: str) -> Template:
    ch = _chan(c, "occurrence")
    lo, hi = c.lower - c.jitter, c.upper + c.jitter
    locs = (
        Location("firstoccurrence"),
        Location("counting", rates=(("pclk", _num(1)),)),
        Location("judge", kind="committed"),
        Location("success", kind="committed"),
        Location("fail"),
    )
    edges = (
        Edge("firstoccurrence", "counting", sync=Sync(ch, "receive"),
             updates=(("pclk", _num(0)),)),
        Edge("counting", "judge", sync=Sync(ch, "receive")),
        Edge("judge", "success", guard=_in_band("pclk", lo, hi)),
        Edge("judge", "fail", guard=_out_band("pclk", lo, hi)),
        Edge("success", "counting", updates=(("pclk", _num(0)),)),
    )
    return Template(name=name, decls=(VarDecl("pclk", "clock"),),
                    locations=locs, edges=edges, initial="firstoccurrence")


def _end_to_end_observer(c: WhConstraint, name: str) -> Template:
    source, target = _chan(c, "source"), _chan(c, "target")
    locs = (
        Location("idle", rates=(("dclk", _num(0)),)),
        Location("waiting", rates=(("dclk", _num(1)),)),
        Location("finish", kind="committed"),
        Location("success", rates=(("dclk", _num(0)),)),
        Location("fail", rates=(("dclk", _num(0)),)),
    )
    edges = (
        Edge("idle", "waiting", sync=Sync(source, "receive"),
             updates=(("dclk", _num(0)),)),
        Edge("waiting", "finish", sync=Sync(target, "receive")),
        Edge("finish", "success", guard=_in_band("dclk", c.lower, c.upper)),
        Edge("finish", "fail", guard=_out_band("dclk", c.lower, c.upper)),
        Edge("success", "waiting", sync=Sync(source, "receive"),
             updates=(("dclk", _num(0)),)),
    )
    return Template(name=name, decls=(VarDecl("dclk", "clock"),),
                    locations=locs, edges=edges, initial="idle")


def attach_observer(model: Model, c: WhConstraint, inst_name: str) -> Model:
    """New model with the observer template instantiated at the end."""
    tpl = build_observer(c, name=f"{inst_name}T")
    chan_kinds = {ch.name: ch.broadcast for ch in model.channels}
    for edge in tpl.edges:
        if edge.sync is None:
            continue
        ch = edge.sync.channel
        if ch not in chan_kinds:
            raise MonitorError(f"cannot bind observer: unknown channel {ch!r}")
        if not chan_kinds[ch]:
            raise MonitorError(
                f"observer on binary channel {ch!r} would perturb the network; "
                "declare it broadcast")
    return Model(
        decls=model.decls,
        channels=model.channels,
        templates=model.templates + (tpl,),
        system=model.system + (Instantiation(inst_name, tpl.name),),
    )


def observer_failed(trace, inst_name: str) -> bool:
    """Whether the observer instance reached its `fail` location."""
    key = f"{inst_name}.fail"
    for _, snap in trace.samples():
        if snap.get(key):
            return True
    return False
