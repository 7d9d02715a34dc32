"""Lexer and recursive-descent parsers for the model and query languages.

The model grammar:

    model    := decl* template+ system
    decl     := ("int"|"real"|"bool"|"clock") ident ("=" literal)? ";"
              | ("chan" | "broadcast" "chan") ident ";"
    template := "template" ident "(" params? ")" "{" decl* location+ edge* "}"
    location := ("init")? ("committed")? "loc" ident
                ("{" ("inv" expr ";")? ("rate" ident "=" expr ";")*
                     ("exitrate" number ";")? "}")? (";")?
    edge     := ident "->" ident "{" ("guard" expr ";")? ("sync" ident ("!"|"?") ";")?
                ("weight" number ";")? ("update" assign ("," assign)* ";")? "}"
    system   := "system" inst ("," inst)* ";"
    inst     := [ident "="] ident ["(" literal ("," literal)* ")"]

Queries are the five statistical forms plus `constraint` lines for
weakly-hard timing monitors; `//` comments run to end of line everywhere.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from . import expr as E
from . import queries as Q
from .model import (ChanDecl, Edge, Instantiation, Location, Model, Sync,
                    Template, VarDecl)
from .monitors import EventBinding, WhConstraint


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int  # 1-based
    column: int  # 1-based
    length: int


class ParseError(Exception):
    def __init__(self, message: str, span: SourceSpan, expected=()):
        super().__init__(f"{span.file}:{span.line}:{span.column}: {message}")
        self.message = message
        self.span = span
        self.expected = frozenset(expected)


_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<number>\d+\.\d*|\.\d+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><>|\[\]|:=|->|<=|>=|==|!=|&&|\|\||[()\[\]{};,:?!=<>+\-*/%.])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | op | eof
    text: str
    span: SourceSpan


def lex(text: str, filename: str = "<input>") -> list:
    tokens = []
    pos, line, col = 0, 1, 1
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}",
                             SourceSpan(filename, line, col, 1))
        kind = m.lastgroup
        tok = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, tok, SourceSpan(filename, line, col, len(tok))))
        newlines = tok.count("\n")
        if newlines:
            line += newlines
            col = len(tok) - tok.rfind("\n")
        else:
            col += len(tok)
        pos = m.end()
    tokens.append(Token("eof", "", SourceSpan(filename, line, col, 0)))
    return tokens


class _Parser:
    def __init__(self, text: str, filename: str = "<input>"):
        self.tokens = lex(text, filename)
        self.i = 0
        self._inline_name = None  # constraint name given inline, if any

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, ahead: int = 1) -> Token:
        return self.tokens[min(self.i + ahead, len(self.tokens) - 1)]

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "ident")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            raise ParseError(f"expected {text!r}, found {self.tok.text!r}",
                             self.tok.span, expected={text})
        tok = self.tok
        self.i += 1
        return tok

    def ident(self, what: str = "identifier") -> str:
        if self.tok.kind != "ident":
            raise ParseError(f"expected {what}, found {self.tok.text!r}",
                             self.tok.span, expected={what})
        name = self.tok.text
        self.i += 1
        return name

    def number(self) -> float:
        neg = self.accept("-")
        if self.tok.kind != "number":
            raise ParseError(f"expected number, found {self.tok.text!r}",
                             self.tok.span, expected={"number"})
        v = float(self.tok.text)
        self.i += 1
        return -v if neg else v

    # --- expressions ------------------------------------------------------

    def expression(self) -> E.Expr:
        e = self._imply()
        if self.accept("?"):
            then = self.expression()
            self.expect(":")
            other = self.expression()
            return E.Cond(e, then, other)
        return e

    def _imply(self) -> E.Expr:
        e = self._or()
        if self.accept("imply"):
            return E.Binary("imply", e, self._imply())
        return e

    def _or(self) -> E.Expr:
        e = self._and()
        while self.accept("||"):
            e = E.Binary("||", e, self._and())
        return e

    def _and(self) -> E.Expr:
        e = self._cmp()
        while self.accept("&&"):
            e = E.Binary("&&", e, self._cmp())
        return e

    def _cmp(self) -> E.Expr:
        e = self._add()
        for op in ("<=", ">=", "==", "!=", "<", ">"):
            if self.accept(op):
                return E.Binary(op, e, self._add())
        return e

    def _add(self) -> E.Expr:
        e = self._mul()
        while True:
            if self.accept("+"):
                e = E.Binary("+", e, self._mul())
            elif self.accept("-"):
                e = E.Binary("-", e, self._mul())
            else:
                return e

    def _mul(self) -> E.Expr:
        e = self._unary()
        while True:
            if self.accept("*"):
                e = E.Binary("*", e, self._unary())
            elif self.accept("/"):
                e = E.Binary("/", e, self._unary())
            elif self.accept("%"):
                e = E.Binary("%", e, self._unary())
            else:
                return e

    def _unary(self) -> E.Expr:
        if self.accept("!"):
            return E.Unary("!", self._unary())
        if self.accept("-"):
            return E.Unary("-", self._unary())
        return self._primary()

    def _primary(self) -> E.Expr:
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            return E.Num(float(tok.text))
        if tok.text == "(":
            self.i += 1
            e = self.expression()
            self.expect(")")
            return e
        if tok.kind == "ident":
            if tok.text == "true":
                self.i += 1
                return E.BoolLit(True)
            if tok.text == "false":
                self.i += 1
                return E.BoolLit(False)
            name = self.ident()
            if tok.text in ("abs", "min", "max") and self.at("("):
                self.i += 1
                args = [self.expression()]
                while self.accept(","):
                    args.append(self.expression())
                self.expect(")")
                return E.Call(name, tuple(args))
            if self.accept("."):
                name = f"{name}.{self.ident('member name')}"
            return E.Name(name)
        raise ParseError(f"expected expression, found {tok.text!r}", tok.span,
                         expected={"expression"})

    # --- declarations -----------------------------------------------------

    def _at_decl(self) -> bool:
        return self.tok.text in ("int", "real", "bool", "clock", "chan",
                                 "broadcast")

    def declaration(self):
        if self.accept("broadcast"):
            self.expect("chan")
            name = self.ident("channel name")
            self.expect(";")
            return ChanDecl(name, broadcast=True)
        if self.accept("chan"):
            name = self.ident("channel name")
            self.expect(";")
            return ChanDecl(name, broadcast=False)
        vtype = self.ident("type")
        name = self.ident("variable name")
        init = 0.0
        if self.accept("="):
            init = self._literal()
        self.expect(";")
        return VarDecl(name, vtype, init)

    def _literal(self) -> float:
        if self.accept("true"):
            return 1.0
        if self.accept("false"):
            return 0.0
        return self.number()

    # --- model ------------------------------------------------------------

    def model(self) -> Model:
        decls, channels, templates = [], [], []
        system = None
        while self.tok.kind != "eof":
            if self._at_decl():
                d = self.declaration()
                (channels if isinstance(d, ChanDecl) else decls).append(d)
            elif self.at("template"):
                templates.append(self._template())
            elif self.at("system"):
                system = self._system()
            else:
                raise ParseError(
                    f"expected declaration, template or system, found {self.tok.text!r}",
                    self.tok.span,
                    expected={"template", "system", "int", "real", "bool",
                              "clock", "chan", "broadcast"})
        if system is None:
            raise ParseError("missing system line", self.tok.span,
                             expected={"system"})
        return Model(decls=tuple(decls), channels=tuple(channels),
                     templates=tuple(templates), system=system)

    def _template(self) -> Template:
        self.expect("template")
        name = self.ident("template name")
        self.expect("(")
        params = []
        if not self.at(")"):
            while True:
                pname = self.ident("parameter name")
                self.expect(":")
                ptype = self.ident("parameter type")
                params.append((pname, ptype))
                if not self.accept(","):
                    break
        self.expect(")")
        self.expect("{")
        decls, locations, edges = [], [], []
        initial = ""
        while self._at_decl():
            d = self.declaration()
            if isinstance(d, ChanDecl):
                raise ParseError("channels must be declared globally",
                                 self.tok.span)
            decls.append(d)
        while self.tok.text in ("init", "committed", "loc"):
            loc, is_init = self._location()
            locations.append(loc)
            if is_init:
                initial = loc.id
        while not self.at("}"):
            edges.append(self._edge())
        self.expect("}")
        return Template(name=name, params=tuple(params), decls=tuple(decls),
                        locations=tuple(locations), edges=tuple(edges),
                        initial=initial)

    def _location(self):
        is_init = self.accept("init")
        kind = "committed" if self.accept("committed") else "normal"
        if not is_init:
            is_init = self.accept("init")
        self.expect("loc")
        loc_id = self.ident("location id")
        invariant = None
        rates = []
        exit_rate = None
        if self.accept("{"):
            while not self.at("}"):
                if self.accept("inv"):
                    invariant = self.expression()
                    self.expect(";")
                elif self.accept("rate"):
                    clock = self.ident("clock name")
                    self.expect("=")
                    rates.append((clock, self.expression()))
                    self.expect(";")
                elif self.accept("exitrate"):
                    exit_rate = self.number()
                    self.expect(";")
                else:
                    raise ParseError(
                        f"expected inv, rate or exitrate, found {self.tok.text!r}",
                        self.tok.span, expected={"inv", "rate", "exitrate"})
            self.expect("}")
        else:
            self.accept(";")
        return (Location(loc_id, invariant=invariant, rates=tuple(rates),
                         kind=kind, exit_rate=exit_rate), is_init)

    def _edge(self) -> Edge:
        source = self.ident("source location")
        self.expect("->")
        target = self.ident("target location")
        self.expect("{")
        guard = None
        sync = None
        weight = 1.0
        updates = []
        while not self.at("}"):
            if self.accept("guard"):
                guard = self.expression()
                self.expect(";")
            elif self.accept("sync"):
                if sync is not None:
                    raise ParseError("an edge has at most one sync action",
                                     self.tok.span)
                chan = self.ident("channel name")
                if self.accept("!"):
                    sync = Sync(chan, "emit")
                elif self.accept("?"):
                    sync = Sync(chan, "receive")
                else:
                    raise ParseError("expected '!' or '?' after channel",
                                     self.tok.span, expected={"!", "?"})
                self.expect(";")
            elif self.accept("weight"):
                weight = self.number()
                self.expect(";")
            elif self.accept("update"):
                while True:
                    name = self.ident("update target")
                    self.expect(":=")
                    updates.append((name, self.expression()))
                    if not self.accept(","):
                        break
                self.expect(";")
            else:
                raise ParseError(
                    f"expected guard, sync, weight or update, found {self.tok.text!r}",
                    self.tok.span,
                    expected={"guard", "sync", "weight", "update"})
        self.expect("}")
        return Edge(source, target, guard=guard, sync=sync, weight=weight,
                    updates=tuple(updates))

    def _system(self) -> tuple:
        self.expect("system")
        insts = []
        names_used = {}
        raw = []
        while True:
            first = self.ident("template or instance name")
            if self.accept("="):
                inst_name = first
                tpl = self.ident("template name")
            else:
                inst_name = None
                tpl = first
            args = []
            if self.accept("("):
                if not self.at(")"):
                    while True:
                        args.append(self._literal())
                        if not self.accept(","):
                            break
                self.expect(")")
            raw.append((inst_name, tpl, tuple(args)))
            if not self.accept(","):
                break
        self.expect(";")
        # bare instantiations: use the template name, numbered when repeated
        tpl_counts = {}
        for inst_name, tpl, _ in raw:
            if inst_name is None:
                tpl_counts[tpl] = tpl_counts.get(tpl, 0) + 1
        seen = {}
        for inst_name, tpl, args in raw:
            if inst_name is None:
                if tpl_counts[tpl] > 1:
                    idx = seen.get(tpl, 0)
                    seen[tpl] = idx + 1
                    inst_name = f"{tpl}{idx}"
                else:
                    inst_name = tpl
            names_used[inst_name] = True
            insts.append(Instantiation(inst_name, tpl, args))
        return tuple(insts)

    # --- queries ----------------------------------------------------------

    def queries(self) -> list:
        out = []
        while self.tok.kind != "eof":
            out.append(self._named_query())
        return out

    def _named_query(self) -> Q.NamedQuery:
        name = None
        if self.tok.kind == "ident" and self.peek().text == ":" \
                and self.tok.text not in ("max", "min"):
            name = self.ident()
            self.expect(":")
        query = self._query()
        if name is None:
            name = self._inline_name
        self._inline_name = None
        if name is None and isinstance(query, Q.ObserverDecl):
            name = query.name
        expected = None
        if self.accept("expect"):
            expected = self.ident("verdict")
            if expected not in ("valid", "invalid", "undecided"):
                raise ParseError(f"unknown expected verdict {expected!r}",
                                 self.tok.span,
                                 expected={"valid", "invalid", "undecided"})
        self.accept(";")
        return Q.NamedQuery(name, query, expected)

    def _query(self):
        if self.at("Pr"):
            return self._pr_query()
        if self.at("simulate"):
            return self._simulate_query()
        if self.at("E"):
            return self._expected_query()
        if self.at("constraint"):
            return self._constraint_query()
        if self.at("observer"):
            return self._observer_decl()
        raise ParseError(f"expected a query, found {self.tok.text!r}",
                         self.tok.span,
                         expected={"Pr", "simulate", "E", "constraint",
                                   "observer"})

    def _bound(self) -> float:
        self.expect("[")
        if not self.accept("<="):
            self.expect(">=")  # both spellings denote the simulation horizon
        bound = self.number()
        self.expect("]")
        if bound <= 0:
            raise ParseError("bound must be > 0", self.tok.span)
        return bound

    def _path_formula(self) -> Q.PathFormula:
        self.expect("(")
        if self.accept("[]"):
            f = Q.globally(self.expression())
        elif self.accept("<>"):
            f = Q.eventually(self.expression())
        else:
            raise ParseError("expected '[]' or '<>'", self.tok.span,
                             expected={"[]", "<>"})
        self.expect(")")
        return f

    def _pr_query(self):
        self.expect("Pr")
        bound = self._bound()
        formula = self._path_formula()
        if self.accept(">="):
            if self.at("Pr"):
                self.expect("Pr")
                bound2 = self._bound()
                formula2 = self._path_formula()
                return Q.Compare(formula, bound, formula2, bound2)
            p0 = self.number()
            if not 0 <= p0 <= 1:
                raise ParseError("p0 must be within [0, 1]", self.tok.span)
            return Q.Hypothesis(formula, bound, p0)
        return Q.Estimate(formula, bound)

    def _simulate_query(self) -> Q.Simulate:
        self.expect("simulate")
        n_runs = int(self.number())
        if n_runs < 1:
            raise ParseError("simulate needs n_runs >= 1", self.tok.span)
        bound = self._bound()
        self.expect("{")
        exprs = [self.expression()]
        while self.accept(","):
            exprs.append(self.expression())
        self.expect("}")
        return Q.Simulate(n_runs, bound, tuple(exprs))

    def _expected_query(self) -> Q.Expected:
        self.expect("E")
        self.expect("[")
        if not self.accept("<="):
            self.accept(">=")
        bound = self.number()
        self.expect(";")
        n_runs = int(self.number())
        self.expect("]")
        self.expect("(")
        if self.accept("max"):
            mode = "max"
        elif self.accept("min"):
            mode = "min"
        else:
            raise ParseError("expected 'max' or 'min'", self.tok.span,
                             expected={"max", "min"})
        self.expect(":")
        e = self.expression()
        self.expect(")")
        if n_runs < 1:
            raise ParseError("E query needs n_runs >= 1", self.tok.span)
        return Q.Expected(bound, n_runs, mode, e)

    def _constraint_query(self) -> Q.ConstraintQuery:
        # constraint [Name] execution(lower=10, upper=20, m=19, k=20,
        #   bound=3000) on start=sig_start, stop=sig_done;
        self.expect("constraint")
        kind = self.ident("constraint kind")
        if self.tok.kind == "ident":
            self._inline_name = kind
            kind = self.ident("constraint kind")
        constraint, bound = self._constraint_tail(kind)
        return Q.ConstraintQuery(constraint, bound)

    def _observer_decl(self) -> Q.ObserverDecl:
        # observer Name endtoend(lower=10, upper=30, m=19, k=20)
        #   on source=cam_start, target=sign_ready;
        self.expect("observer")
        name = self.ident("observer name")
        kind = self.ident("constraint kind")
        constraint, _ = self._constraint_tail(kind)
        return Q.ObserverDecl(name, constraint)

    def _constraint_tail(self, kind: str):
        if kind == "end" or kind == "endtoend":
            kind = "endtoend"
        self.expect("(")
        params = {}
        while True:
            key = self.ident("parameter name")
            self.expect("=")
            params[key] = self.number()
            if not self.accept(","):
                break
        self.expect(")")
        self.expect("on")
        bindings = []
        while True:
            event = self.ident("event name")
            self.expect("=")
            chan = self.ident("channel name")
            bindings.append((event, EventBinding(channel=chan)))
            if not self.accept(","):
                break
        bound = params.pop("bound", 3000.0)
        kwargs = {}
        for key in ("lower", "upper", "tolerance", "jitter"):
            if key in params:
                kwargs[key] = params.pop(key)
        m = int(params.pop("m", 1))
        k = int(params.pop("k", 1))
        if params:
            raise ParseError(f"unknown constraint parameter(s) {sorted(params)}",
                             self.tok.span)
        constraint = WhConstraint(kind=kind, m=m, k=k,
                                  bindings=tuple(bindings), **kwargs)
        return constraint, bound


def parse_model(text: str, filename: str = "<input>") -> Model:
    return _Parser(text, filename).model()


def parse_queries(text: str, filename: str = "<input>") -> list:
    return _Parser(text, filename).queries()


def parse_expression(text: str, filename: str = "<expr>") -> E.Expr:
    p = _Parser(text, filename)
    e = p.expression()
    if p.tok.kind != "eof":
        raise ParseError(f"trailing input {p.tok.text!r}", p.tok.span)
    return e


# --- pretty printing -------------------------------------------------------


def print_model(model: Model) -> str:
    out = []
    for d in model.decls:
        init = f" = {_fmt_num(d.init)}" if d.init else ""
        out.append(f"{d.type} {d.name}{init};")
    for c in model.channels:
        out.append(f"{'broadcast ' if c.broadcast else ''}chan {c.name};")
    for tpl in model.templates:
        params = ", ".join(f"{p}: {t}" for p, t in tpl.params)
        out.append(f"template {tpl.name}({params}) {{")
        for d in tpl.decls:
            init = f" = {_fmt_num(d.init)}" if d.init else ""
            out.append(f"  {d.type} {d.name}{init};")
        for loc in tpl.locations:
            head = "  "
            if loc.id == tpl.initial:
                head += "init "
            if loc.kind == "committed":
                head += "committed "
            head += f"loc {loc.id}"
            body = []
            if loc.invariant is not None:
                body.append(f"inv {E.to_text(loc.invariant)};")
            for clk, rate in loc.rates:
                body.append(f"rate {clk} = {E.to_text(rate)};")
            if loc.exit_rate is not None:
                body.append(f"exitrate {_fmt_num(loc.exit_rate)};")
            if body:
                out.append(head + " { " + " ".join(body) + " }")
            else:
                out.append(head + ";")
        for e in tpl.edges:
            parts = []
            if e.guard is not None:
                parts.append(f"guard {E.to_text(e.guard)};")
            if e.sync is not None:
                mark = "!" if e.sync.direction == "emit" else "?"
                parts.append(f"sync {e.sync.channel}{mark};")
            if e.weight != 1.0:
                parts.append(f"weight {_fmt_num(e.weight)};")
            if e.updates:
                ups = ", ".join(f"{n} := {E.to_text(x)}" for n, x in e.updates)
                parts.append(f"update {ups};")
            out.append(f"  {e.source} -> {e.target} {{ " + " ".join(parts) + " }")
        out.append("}")
    insts = ", ".join(
        f"{i.name} = {i.template}({', '.join(_fmt_num(a) for a in i.args)})"
        for i in model.system)
    out.append(f"system {insts};")
    return "\n".join(out) + "\n"


def print_query(q) -> str:
    if isinstance(q, Q.NamedQuery):
        prefix = f"{q.name}: " if q.name else ""
        if isinstance(q.query, Q.ObserverDecl) and q.name == q.query.name:
            prefix = ""
        suffix = f" expect {q.expected}" if q.expected else ""
        return prefix + print_query(q.query) + suffix + ";"
    if isinstance(q, Q.Estimate):
        return f"Pr[<={_fmt_num(q.bound)}]({_fmt_path(q.formula)})"
    if isinstance(q, Q.Hypothesis):
        return (f"Pr[<={_fmt_num(q.bound)}]({_fmt_path(q.formula)})"
                f" >= {_fmt_num(q.p0)}")
    if isinstance(q, Q.Compare):
        return (f"Pr[<={_fmt_num(q.bound1)}]({_fmt_path(q.formula1)}) >= "
                f"Pr[<={_fmt_num(q.bound2)}]({_fmt_path(q.formula2)})")
    if isinstance(q, Q.Simulate):
        exprs = ", ".join(E.to_text(e) for e in q.exprs)
        return f"simulate {q.n_runs} [<={_fmt_num(q.bound)}] {{{exprs}}}"
    if isinstance(q, Q.Expected):
        return (f"E[<={_fmt_num(q.bound)}; {q.n_runs}]"
                f"({q.mode}: {E.to_text(q.expr)})")
    if isinstance(q, Q.ConstraintQuery):
        c = q.constraint
        params = [f"m={c.m}", f"k={c.k}", f"bound={_fmt_num(q.bound)}"]
        if c.kind in ("execution", "periodic", "endtoend"):
            params += [f"lower={_fmt_num(c.lower)}", f"upper={_fmt_num(c.upper)}"]
        if c.kind == "synchronization":
            params.append(f"tolerance={_fmt_num(c.tolerance)}")
        if c.kind == "periodic":
            params.append(f"jitter={_fmt_num(c.jitter)}")
        binds = ", ".join(f"{n}={b.channel}" for n, b in c.bindings)
        return f"constraint {c.kind}({', '.join(params)}) on {binds}"
    if isinstance(q, Q.ObserverDecl):
        c = q.constraint
        params = [f"m={c.m}", f"k={c.k}"]
        if c.kind in ("execution", "periodic", "endtoend"):
            params += [f"lower={_fmt_num(c.lower)}", f"upper={_fmt_num(c.upper)}"]
        if c.kind == "synchronization":
            params.append(f"tolerance={_fmt_num(c.tolerance)}")
        if c.kind == "periodic":
            params.append(f"jitter={_fmt_num(c.jitter)}")
        binds = ", ".join(f"{n}={b.channel}" for n, b in c.bindings)
        return f"observer {q.name} {c.kind}({', '.join(params)}) on {binds}"
    raise TypeError(f"not a query: {q!r}")


def _fmt_path(f: Q.PathFormula) -> str:
    op = "[]" if f.op == "globally" else "<>"
    return f"{op} {E.to_text(f.state_expr)}"


def _fmt_num(v: float) -> str:
    return repr(int(v)) if float(v).is_integer() else repr(v)
