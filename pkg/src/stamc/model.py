"""Static network representation: declarations, templates, validation,
and instantiation into a flat component network.

Model values are plain immutable-by-convention dataclasses; once built they
are shared freely across simulation workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import expr as E

VAR_TYPES = ("int", "real", "bool", "clock")


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class VarDecl:
    name: str
    type: str  # int | real | bool | clock
    init: float = 0.0


@dataclass(frozen=True)
class ChanDecl:
    name: str
    broadcast: bool = False


@dataclass(frozen=True)
class Sync:
    channel: str
    direction: str  # emit | receive


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    guard: Optional[E.Expr] = None
    sync: Optional[Sync] = None
    weight: float = 1.0
    updates: tuple = ()  # tuple[(name, Expr)]


@dataclass(frozen=True)
class Location:
    id: str
    invariant: Optional[E.Expr] = None
    rates: tuple = ()  # tuple[(clock name, Expr)]; absent clocks default to rate 1
    kind: str = "normal"  # normal | committed
    exit_rate: Optional[float] = None


@dataclass(frozen=True)
class Template:
    name: str
    params: tuple = ()  # tuple[(name, type)]
    decls: tuple = ()  # tuple[VarDecl]
    locations: tuple = ()
    edges: tuple = ()
    initial: str = ""

    def location(self, loc_id: str) -> Location:
        for loc in self.locations:
            if loc.id == loc_id:
                return loc
        raise KeyError(loc_id)


@dataclass(frozen=True)
class Instantiation:
    name: str  # instance name
    template: str
    args: tuple = ()  # literal values


@dataclass(frozen=True)
class Model:
    decls: tuple = ()  # tuple[VarDecl]
    channels: tuple = ()  # tuple[ChanDecl]
    templates: tuple = ()
    system: tuple = ()  # tuple[Instantiation]

    def template(self, name: str) -> Template:
        for t in self.templates:
            if t.name == name:
                return t
        raise KeyError(name)


@dataclass(frozen=True)
class Issue:
    code: str
    where: str
    message: str


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass(frozen=True)
class Component:
    """One instantiated template with parameters substituted."""

    name: str
    template: Template
    bindings: tuple = ()  # tuple[(param name, literal value)]


@dataclass(frozen=True)
class Network:
    model: Model
    components: tuple = ()  # ordered as declared in the system line


def _template_scope(model: Model, tpl: Template) -> dict:
    """name -> ('var'|'clock'|'param'|'chan', decl) visible inside tpl."""
    scope = {}
    for d in model.decls:
        scope[d.name] = ("clock" if d.type == "clock" else "var", d)
    for c in model.channels:
        scope[c.name] = ("chan", c)
    for p, ptype in tpl.params:
        scope[p] = ("param", ptype)
    for d in tpl.decls:
        scope[d.name] = ("clock" if d.type == "clock" else "var", d)
    return scope


def validate_model(model: Model) -> ValidationReport:
    """Collect every structural violation; pure and idempotent.

    A model with an empty error list is accepted by the engine and will not
    be rejected mid-run for structural reasons.
    """
    rep = ValidationReport()
    err = lambda code, where, msg: rep.errors.append(Issue(code, where, msg))

    chan_names = {c.name for c in model.channels}
    tpl_names = set()
    for tpl in model.templates:
        if tpl.name in tpl_names:
            err("duplicate template", tpl.name, f"template {tpl.name!r} declared twice")
        tpl_names.add(tpl.name)

        scope = _template_scope(model, tpl)
        is_clock = lambda n: scope.get(n.split(".")[0], ("",))[0] == "clock"

        loc_ids = set()
        initials = [l for l in tpl.locations if l.id == tpl.initial]
        for loc in tpl.locations:
            where = f"{tpl.name}.{loc.id}"
            if loc.id in loc_ids:
                err("duplicate location", where, f"location id {loc.id!r} not unique")
            loc_ids.add(loc.id)
            if loc.invariant is not None:
                if E.clock_degree(loc.invariant, is_clock) == E.NONLINEAR:
                    err("nonlinear invariant", where,
                        "invariant has nonlinear clock terms")
                _check_names(loc.invariant, scope, rep, where)
            for clk, rate in loc.rates:
                if clk not in scope or scope[clk][0] != "clock":
                    err("unknown clock", where, f"rate on unknown clock {clk!r}")
                _check_names(rate, scope, rep, where)
            if loc.exit_rate is not None and loc.exit_rate <= 0:
                err("nonpositive exitrate", where, "exitrate must be > 0")
        if not tpl.locations:
            err("no locations", tpl.name, "template has no locations")
        elif not tpl.initial:
            err("no initial", tpl.name, "template lacks an initial location")
        elif not initials:
            err("no initial", tpl.name,
                f"initial location {tpl.initial!r} does not exist")

        for i, edge in enumerate(tpl.edges):
            where = f"{tpl.name}.edge[{i}] {edge.source}->{edge.target}"
            if edge.source not in loc_ids:
                err("unknown location", where, f"source {edge.source!r} undeclared")
            if edge.target not in loc_ids:
                err("unknown location", where, f"target {edge.target!r} undeclared")
            if not edge.weight > 0:
                err("nonpositive weight", where,
                    f"edge weight {edge.weight} violates weight > 0")
            if edge.sync is not None and edge.sync.channel not in chan_names:
                err("unknown channel", where,
                    f"sync on undeclared channel {edge.sync.channel!r}")
            if edge.guard is not None:
                if E.clock_degree(edge.guard, is_clock) == E.NONLINEAR:
                    err("nonlinear guard", where, "guard has nonlinear clock terms")
                _check_names(edge.guard, scope, rep, where)
            for name, rhs in edge.updates:
                if name not in scope or scope[name][0] not in ("var", "clock"):
                    err("unknown name", where, f"update target {name!r} undeclared")
                _check_names(rhs, scope, rep, where)

    seen_inst = set()
    for inst in model.system:
        if inst.template not in tpl_names:
            rep.errors.append(Issue("unknown template", inst.name,
                                    f"system references unknown template {inst.template!r}"))
            continue
        tpl = model.template(inst.template)
        if len(inst.args) != len(tpl.params):
            rep.errors.append(Issue(
                "arity mismatch", inst.name,
                f"{inst.template} takes {len(tpl.params)} argument(s), got {len(inst.args)}"))
        if inst.name in seen_inst:
            rep.errors.append(Issue("duplicate instance", inst.name,
                                    f"instance name {inst.name!r} not unique"))
        seen_inst.add(inst.name)
    return rep


def _check_names(e: E.Expr, scope: dict, rep: ValidationReport, where: str) -> None:
    for name in E.names(e):
        base = name.split(".")[0]
        if "." in name:
            continue  # qualified: resolved against the network at compile time
        if base not in scope:
            rep.errors.append(Issue("unknown name", where,
                                    f"name {name!r} undeclared"))
        elif scope[base][0] == "chan":
            rep.errors.append(Issue("channel in expression", where,
                                    f"channel {name!r} used as a value"))


def instantiate(model: Model) -> Network:
    """Flatten the system line into an ordered component list.

    Callers must first run :func:`validate_model`; arity mismatches still
    raise so a skipped validation fails loudly.
    """
    components = []
    for inst in model.system:
        try:
            tpl = model.template(inst.template)
        except KeyError:
            raise ModelError(f"unknown template {inst.template!r}") from None
        if len(inst.args) != len(tpl.params):
            raise ModelError(
                f"{inst.name}: {inst.template} takes {len(tpl.params)} "
                f"argument(s), got {len(inst.args)}")
        bindings = tuple((p, a) for (p, _), a in zip(tpl.params, inst.args))
        components.append(Component(inst.name, tpl, bindings))
    return Network(model=model, components=tuple(components))
