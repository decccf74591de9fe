"""Concrete syntax for ``.qccs`` model files.

A model file is a sequence of ``;``-terminated statements::

    qubits q, r;
    cchan c, d;
    cchan e : {0, 1, 2};          # classical input needs a finite domain
    qchan a;
    super E = { [[1,0],[0,0]], [[0,0],[0,1]] };
    measure M = { 0: [[1,0],[0,0]], 1: [[0,0],[0,1]] };
    proc A(q; x) := (if x = 0 then c!0) + (if x = 1 then d!0);
    config C = M[q;x].(c!0 + d!0) @ q=|+>;
    context R = e?y.nil;
    env E[r];                      # environment super-operator for open bisimulation

Process grammar, loosest first: ``+``, then ``||``, then the postfix
operators ``P[c->d]`` and ``P\\{c}``, then prefixes and ``if b then P``.
A prefix with no ``.P`` continuation ends in ``nil``.  Whether ``a?x`` and
``a!e`` are classical or quantum is decided by the declared channel kind.
"""
from __future__ import annotations

import cmath
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import qterm as T
from .qstate import Measurement, QState, QStateError, SuperOperator


@dataclass(frozen=True)
class SourceSpan:
    begin: int
    end: int
    line: int
    col: int

    def __str__(self):
        return f"{self.line}:{self.col}"


class ParseError(ValueError):
    def __init__(self, message: str, span: SourceSpan):
        super().__init__(f"{span}: {message}")
        self.message = message
        self.span = span


@dataclass
class ModelFile:
    register: tuple[str, ...] = ()
    defs: T.Definitions = field(default_factory=T.Definitions)
    configs: dict[str, tuple[T.Process, QState]] = field(default_factory=dict)
    contexts: dict[str, T.Process] = field(default_factory=dict)
    env_ops: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)

    def merged(self, other: "ModelFile") -> "ModelFile":
        """Combine two models over the same register (used to compare across files)."""
        if other.register != self.register:
            raise T.TermError(f"registers differ: {self.register} vs {other.register}")
        out = ModelFile(self.register, self.defs.merged(other.defs), dict(self.configs),
                        dict(self.contexts), list(self.env_ops))
        for attr in ("configs", "contexts"):
            mine = getattr(out, attr)
            for k, v in getattr(other, attr).items():
                if k in mine and mine[k] != v:
                    raise T.TermError(f"conflicting {attr[:-1]} {k!r}")
                mine[k] = v
        out.env_ops += [e for e in other.env_ops if e not in out.env_ops]
        return out


# --- lexer -----------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<ket>\|[01+\-]>)
  | (?P<imag>(?:\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)i(?![A-Za-z0-9_']))
  | (?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<op>:=|->|\|\||!=|<=|>=|[=<>+\-*/!?.;:,(){}\[\]\\@|])
""", re.VERBOSE)

KEYWORDS = {"nil", "tau", "if", "then", "true", "false", "and", "or", "not",
            "qubits", "cchan", "qchan", "super", "measure", "proc", "config", "context", "env"}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    span: SourceSpan


def tokenize(text: str) -> list[Token]:
    out = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}",
                             SourceSpan(pos, pos + 1, line, pos - line_start + 1))
        kind, s = m.lastgroup, m.group()
        span = SourceSpan(pos, m.end(), line, pos - line_start + 1)
        if kind != "ws":
            if kind == "ident" and s in KEYWORDS:
                kind = "kw"
            out.append(Token(kind, s, span))
        for i, ch in enumerate(s):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        pos = m.end()
    out.append(Token("eof", "", SourceSpan(len(text), len(text), line, len(text) - line_start + 1)))
    return out


# --- parser ----------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = tokenize(text)
        self.i = 0
        self.model = ModelFile()
        self.defs = self.model.defs
        self._register_span: Optional[SourceSpan] = None

    # token helpers
    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, *texts: str) -> bool:
        t = self.peek()
        return t.kind in ("op", "kw") and t.text in texts

    def take(self) -> Token:
        t = self.peek()
        self.i = min(self.i + 1, len(self.toks) - 1)
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected {text!r}")
        return self.take()

    def ident(self, what: str = "identifier") -> Token:
        if self.peek().kind != "ident":
            self.fail(f"expected {what}")
        return self.take()

    def fail(self, message: str, tok: Token | None = None):
        tok = tok or self.peek()
        found = tok.text or "end of input"
        raise ParseError(f"{message}, found {found!r}", tok.span)

    def error(self, message: str, tok: Token):
        raise ParseError(message, tok.span)

    # statements
    def parse_model(self) -> ModelFile:
        # pass 1: declarations that later process text depends on
        starts = []
        while self.peek().kind != "eof":
            starts.append(self.i)
            self.skip_statement()
        deferred = []
        for s in starts:
            self.i = s
            kw = self.peek()
            if kw.kind != "kw" or kw.text not in ("qubits", "cchan", "qchan", "super", "measure",
                                                  "proc", "config", "context", "env"):
                self.fail("expected a declaration keyword", kw)
            if kw.text in ("qubits", "cchan", "qchan", "super", "measure"):
                getattr(self, "stmt_" + kw.text)()
            elif kw.text == "proc":
                deferred.append((s, self.proc_header()))
            else:
                deferred.append((s, None))
        # pass 2: process bodies
        for s, header in deferred:
            self.i = s
            kw = self.take()
            if kw.text == "proc":
                self.stmt_proc_body(*header)
            else:
                getattr(self, "stmt_" + kw.text)()
        return self.model

    def skip_statement(self):
        depth = 0
        while True:
            t = self.take()
            if t.kind == "eof":
                self.fail("missing ';' at end of statement", t)
            if t.text in "([{" and t.kind == "op":
                depth += 1
            elif t.text in ")]}" and t.kind == "op":
                depth -= 1
            elif t.text == ";" and t.kind == "op" and depth == 0:
                return

    def name_list(self, what: str) -> list[Token]:
        names = [self.ident(what)]
        while self.at(","):
            self.take()
            names.append(self.ident(what))
        return names

    def declare(self, tok: Token):
        n = tok.text
        if n in self.defs.channels or n in self.defs.supers or n in self.defs.measures \
                or n in self.model.register:
            self.error(f"{n!r} is already declared", tok)

    def stmt_qubits(self):
        kw = self.take()
        if self._register_span is not None:
            self.error("register declared twice", kw)
        self._register_span = kw.span
        names = self.name_list("qubit name")
        reg = []
        for t in names:
            if t.text in reg:
                self.error(f"duplicate qubit {t.text!r}", t)
            reg.append(t.text)
        self.model.register = tuple(reg)
        self.expect(";")

    def stmt_cchan(self):
        self.take()
        names = self.name_list("channel name")
        domain = None
        if self.at(":"):
            self.take()
            self.expect("{")
            vals = [self.signed_number()]
            while self.at(","):
                self.take()
                vals.append(self.signed_number())
            self.expect("}")
            domain = tuple(dict.fromkeys(vals))
        for t in names:
            self.declare(t)
            self.defs.channels[t.text] = T.Channel(t.text, T.CLASSICAL, domain)
        self.expect(";")

    def stmt_qchan(self):
        self.take()
        for t in self.name_list("channel name"):
            self.declare(t)
            self.defs.channels[t.text] = T.Channel(t.text, T.QUANTUM)
        self.expect(";")

    def signed_number(self) -> float:
        neg = False
        if self.at("-"):
            self.take()
            neg = True
        t = self.peek()
        if t.kind != "num":
            self.fail("expected a number")
        self.take()
        return -float(t.text) if neg else float(t.text)

    def stmt_super(self):
        self.take()
        name = self.ident("super-operator name")
        self.declare(name)
        self.expect("=")
        start = self.peek()
        self.expect("{")
        mats = [self.matrix()]
        while self.at(","):
            self.take()
            mats.append(self.matrix())
        self.expect("}")
        try:
            self.defs.supers[name.text] = SuperOperator(tuple(mats), name=name.text)
        except QStateError as e:
            self.error(f"illegal Kraus data for {name.text}: {e}", start)
        self.expect(";")

    def stmt_measure(self):
        self.take()
        name = self.ident("measurement name")
        self.declare(name)
        self.expect("=")
        start = self.peek()
        self.expect("{")
        branches = []
        while True:
            v = self.signed_number()
            self.expect(":")
            branches.append((v, self.matrix()))
            if not self.at(","):
                break
            self.take()
        self.expect("}")
        try:
            self.defs.measures[name.text] = Measurement(tuple(branches), name=name.text)
        except QStateError as e:
            self.error(f"illegal projector data for {name.text}: {e}", start)
        self.expect(";")

    def proc_header(self):
        self.take()
        name = self.ident("process name")
        if name.text in self.defs.procs:
            self.error(f"process {name.text!r} defined twice", name)
        qparams: list[str] = []
        cparams: list[str] = []
        if self.at("("):
            self.take()
            first = []
            while self.peek().kind == "ident":
                first.append(self.take().text)
                if not self.at(","):
                    break
                self.take()
            if self.at(";"):
                self.take()
                qparams = first
                while self.peek().kind == "ident":
                    cparams.append(self.take().text)
                    if not self.at(","):
                        break
                    self.take()
            else:
                cparams = first
            self.expect(")")
        for group in (qparams, cparams):
            if len(set(group)) != len(group):
                self.error(f"repeated parameter in {name.text}", name)
        self.expect(":=")
        self.defs.procs[name.text] = T.ProcDef(name.text, tuple(qparams), tuple(cparams), T.Nil())
        return name, tuple(qparams), tuple(cparams), self.i

    def stmt_proc_body(self, name, qparams, cparams, body_at):
        self.i = body_at
        body = self.process(bound_q=set(qparams))
        self.defs.procs[name.text] = T.ProcDef(name.text, qparams, cparams, body)
        self.expect(";")

    def stmt_config(self):
        name = self.ident("configuration name")
        if name.text in self.model.configs:
            self.error(f"configuration {name.text!r} defined twice", name)
        self.expect("=")
        at = self.peek()
        proc = self.process(bound_q=set())
        free = T.qv(proc) - set(self.model.register)
        if free:
            self.error(f"undeclared qubits {sorted(free)}", at)
        if T.fv(proc):
            self.error(f"configuration process has free variables {sorted(T.fv(proc))}", at)
        state = QState.product(self.model.register)
        if self.at("@"):
            self.take()
            state = self.state()
        self.model.configs[name.text] = (proc, state)
        self.expect(";")

    def stmt_context(self):
        name = self.ident("context name")
        self.expect("=")
        at = self.peek()
        proc = self.process(bound_q=set())
        free = T.qv(proc) - set(self.model.register)
        if free:
            self.error(f"undeclared qubits {sorted(free)}", at)
        self.model.contexts[name.text] = proc
        self.expect(";")

    def stmt_env(self):
        name = self.ident("super-operator name")
        op = self.defs.supers.get(name.text)
        if op is None:
            self.error(f"undeclared super-operator {name.text!r}", name)
        qubits = self.qubit_list(set())
        if len(qubits) != op.arity:
            self.error(f"{name.text} has arity {op.arity}, applied to {len(qubits)} qubits", name)
        self.model.env_ops.append((name.text, tuple(qubits)))
        self.expect(";")

    def qubit_list(self, bound_q: set[str], stop: tuple[str, ...] = ("]",)) -> list[str]:
        self.expect("[")
        qs = []
        while not self.at(*stop):
            t = self.ident("qubit name")
            if t.text not in self.model.register and t.text not in bound_q:
                self.error(f"undeclared qubit {t.text!r}", t)
            if t.text in qs:
                self.error(f"repeated qubit {t.text!r}", t)
            qs.append(t.text)
            if not self.at(","):
                break
            self.take()
        if not self.at(*stop):
            self.fail("expected " + " or ".join(repr(s) for s in stop))
        if stop == ("]",):
            self.take()
        return qs

    def state(self) -> QState:
        at = self.peek()
        try:
            if self.at("["):
                return QState(self.model.register, self.matrix())
            presets = {}
            while True:
                q = self.ident("qubit name")
                if q.text not in self.model.register:
                    self.error(f"undeclared qubit {q.text!r}", q)
                self.expect("=")
                k = self.peek()
                if k.kind != "ket":
                    self.fail("expected a preset |0>, |1>, |+> or |->")
                self.take()
                presets[q.text] = k.text[1]
                if not self.at(","):
                    break
                self.take()
            return QState.product(self.model.register, presets)
        except QStateError as e:
            self.error(f"invalid state: {e}", at)

    # matrices of complex scalar expressions
    def matrix(self) -> np.ndarray:
        at = self.peek()
        self.expect("[")
        rows = []
        while True:
            self.expect("[")
            row = [self.cexpr()]
            while self.at(","):
                self.take()
                row.append(self.cexpr())
            self.expect("]")
            rows.append(row)
            if not self.at(","):
                break
            self.take()
        self.expect("]")
        if len({len(r) for r in rows}) != 1 or len(rows) != len(rows[0]):
            self.error("matrix must be square", at)
        n = len(rows)
        if n & (n - 1):
            self.error(f"matrix dimension {n} is not a power of two", at)
        return np.array(rows, dtype=complex)

    def cexpr(self) -> complex:
        v = self.cterm()
        while self.at("+", "-"):
            op = self.take().text
            w = self.cterm()
            v = v + w if op == "+" else v - w
        return v

    def cterm(self) -> complex:
        v = self.cfactor()
        while self.at("*", "/"):
            op = self.take()
            w = self.cfactor()
            if op.text == "/" and w == 0:
                self.error("division by zero", op)
            v = v * w if op.text == "*" else v / w
        return v

    def cfactor(self) -> complex:
        t = self.peek()
        if self.at("-"):
            self.take()
            return -self.cfactor()
        if self.at("("):
            self.take()
            v = self.cexpr()
            self.expect(")")
            return v
        if t.kind == "num":
            self.take()
            return complex(float(t.text))
        if t.kind == "imag":
            self.take()
            return complex(0, float(t.text[:-1]))
        if t.kind == "ident" and t.text == "i":
            self.take()
            return 1j
        if t.kind == "ident" and t.text == "sqrt":
            self.take()
            self.expect("(")
            v = self.cexpr()
            self.expect(")")
            return cmath.sqrt(v)
        self.fail("expected a complex number")

    # processes
    def process(self, bound_q: set[str]) -> T.Process:
        p = self.par(bound_q)
        while self.at("+"):
            self.take()
            p = T.Sum(p, self.par(bound_q))
        return p

    def par(self, bound_q) -> T.Process:
        p = self.post(bound_q)
        while self.at("||"):
            self.take()
            p = T.Par(p, self.post(bound_q))
        return p

    def post(self, bound_q) -> T.Process:
        p = self.pre(bound_q)
        while True:
            if self.at("[") and self.peek(1).kind == "ident" and self.peek(2).text == "->":
                p = self.relabeling(p)
            elif self.at("\\"):
                self.take()
                self.expect("{")
                chans = []
                while not self.at("}"):
                    t = self.ident("channel name")
                    if t.text not in self.defs.channels:
                        self.error(f"undeclared channel {t.text!r}", t)
                    chans.append(t.text)
                    if not self.at(","):
                        break
                    self.take()
                self.expect("}")
                p = T.restrict(p, chans)
            else:
                return p

    def relabeling(self, p: T.Process) -> T.Process:
        self.expect("[")
        mapping: dict[str, str] = {}
        while True:
            a = self.chan()
            self.expect("->")
            b = self.chan()
            if self.defs.channels[a.text].kind != self.defs.channels[b.text].kind:
                self.error(f"relabeling {a.text} -> {b.text} mixes classical and quantum channels", b)
            if a.text in mapping:
                self.error(f"channel {a.text!r} relabeled twice", a)
            mapping[a.text] = b.text
            if not self.at(","):
                break
            self.take()
        self.expect("]")
        return T.relabel(p, mapping)

    def chan(self) -> Token:
        t = self.ident("channel name")
        if t.text not in self.defs.channels:
            self.error(f"undeclared channel {t.text!r}", t)
        return t

    def cont(self, bound_q) -> T.Process:
        if self.at("."):
            self.take()
            return self.pre(bound_q)
        return T.Nil()

    def pre(self, bound_q) -> T.Process:
        t = self.peek()
        if self.at("nil"):
            self.take()
            return T.Nil()
        if self.at("tau"):
            self.take()
            return T.Tau(self.cont(bound_q))
        if self.at("("):
            self.take()
            p = self.process(bound_q)
            self.expect(")")
            return p
        if self.at("if"):
            self.take()
            b = self.bexpr()
            self.expect("then")
            return T.If(b, self.pre(bound_q))
        if t.kind != "ident":
            self.fail("expected a process")
        nxt = self.peek(1)
        if nxt.text in ("?", "!") and nxt.kind == "op":
            return self.channel_prefix(bound_q)
        if nxt.text == "[" and nxt.kind == "op":
            return self.operator_prefix(bound_q)
        if nxt.text == "(" and nxt.kind == "op":
            return self.call(bound_q)
        if t.text in self.defs.procs:
            self.take()
            return T.Call(t.text)
        self.fail("expected a process")

    def channel_prefix(self, bound_q) -> T.Process:
        c = self.take()
        ch = self.defs.channels.get(c.text)
        if ch is None:
            self.error(f"undeclared channel {c.text!r}", c)
        direction = self.take().text
        if ch.kind == T.CLASSICAL:
            if direction == "?":
                x = self.ident("variable name")
                return T.CIn(c.text, x.text, self.cont(bound_q))
            e = self.expr_atom()
            return T.COut(c.text, e, self.cont(bound_q))
        q = self.ident("quantum variable")
        if direction == "?":
            return T.QIn(c.text, q.text, self.cont(bound_q | {q.text}))
        if q.text not in self.model.register and q.text not in bound_q:
            self.error(f"undeclared qubit {q.text!r}", q)
        return T.QOut(c.text, q.text, self.cont(bound_q))

    def operator_prefix(self, bound_q) -> T.Process:
        name = self.take()
        if name.text in self.defs.supers:
            op = self.defs.supers[name.text]
            qs = self.qubit_list(bound_q)
            if len(qs) != op.arity:
                self.error(f"{name.text} has arity {op.arity}, applied to {len(qs)} qubits", name)
            return T.SuperOp(name.text, tuple(qs), self.cont(bound_q))
        if name.text in self.defs.measures:
            m = self.defs.measures[name.text]
            qs = self.qubit_list(bound_q, stop=(";",))
            self.expect(";")
            x = self.ident("variable name")
            self.expect("]")
            if len(qs) != m.arity:
                self.error(f"{name.text} has arity {m.arity}, applied to {len(qs)} qubits", name)
            return T.Measure(name.text, tuple(qs), x.text, self.cont(bound_q))
        self.error(f"undeclared super-operator or measurement {name.text!r}", name)

    def call(self, bound_q) -> T.Process:
        name = self.take()
        if name.text not in self.defs.procs:
            self.error(f"undeclared process constant {name.text!r}", name)
        self.expect("(")
        first: list = []
        second: list = []
        semicolon = False
        group = first
        while not self.at(")"):
            if self.at(";") and not semicolon:
                self.take()
                semicolon = True
                group = second
                continue
            group.append((self.peek(), self.expr()))
            if self.at(","):
                self.take()
        self.expect(")")
        d = self.defs.procs[name.text]
        if semicolon:
            qtoks, ctoks = first, second
        elif d.cparams or not d.qparams:
            qtoks, ctoks = [], first
        else:
            qtoks, ctoks = first, []
        qargs = []
        for tok, e in qtoks:
            if not isinstance(e, T.Var):
                self.error("quantum argument must be a qubit name", tok)
            if e.name not in self.model.register and e.name not in bound_q:
                self.error(f"undeclared qubit {e.name!r}", tok)
            qargs.append(e.name)
        if len(qargs) != len(d.qparams) or len(ctoks) != len(d.cparams):
            self.error(f"{name.text} expects {len(d.qparams)} quantum and {len(d.cparams)} classical "
                       f"arguments", name)
        return T.Call(name.text, tuple(qargs), tuple(e for _, e in ctoks))

    # classical expressions
    def expr(self) -> T.Expr:
        e = self.term()
        while self.at("+", "-"):
            op = self.take().text
            e = T.BinOp(op, e, self.term())
        return e

    def term(self) -> T.Expr:
        e = self.expr_atom()
        while self.at("*"):
            self.take()
            e = T.BinOp("*", e, self.expr_atom())
        return e

    def expr_atom(self) -> T.Expr:
        t = self.peek()
        if self.at("-"):
            self.take()
            if self.peek().kind == "num":
                return T.Num(-float(self.take().text))
            return T.Neg(self.expr_atom())
        if t.kind == "num":
            self.take()
            return T.Num(float(t.text))
        if t.kind == "ident":
            self.take()
            return T.Var(t.text)
        if self.at("("):
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        self.fail("expected an expression")

    def bexpr(self) -> T.BExpr:
        b = self.bconj()
        while self.at("or"):
            self.take()
            b = T.Or(b, self.bconj())
        return b

    def bconj(self) -> T.BExpr:
        b = self.bneg()
        while self.at("and"):
            self.take()
            b = T.And(b, self.bneg())
        return b

    def bneg(self) -> T.BExpr:
        if self.at("not"):
            self.take()
            return T.Not(self.bneg())
        if self.at("true", "false"):
            return T.BoolLit(self.take().text == "true")
        if self.at("("):
            save = self.i
            try:
                return self.comparison()
            except ParseError:
                self.i = save
            self.take()
            b = self.bexpr()
            self.expect(")")
            return b
        return self.comparison()

    def comparison(self) -> T.BExpr:
        left = self.expr()
        if not self.at("=", "!=", "<", "<=", ">", ">="):
            self.fail("expected a comparison operator")
        op = self.take().text
        return T.Cmp(op, left, self.expr())


def parse_model(text: str) -> ModelFile:
    """Parse a whole model file; raises ParseError with a SourceSpan."""
    return _Parser(text).parse_model()


def parse_process(text: str, model: ModelFile) -> T.Process:
    """Parse a single process expression against an existing model's declarations."""
    p = _Parser(text)
    p.model = model
    p.defs = model.defs
    proc = p.process(bound_q=set())
    if p.peek().kind != "eof":
        p.fail("unexpected trailing input")
    return proc


# --- printer ---------------------------------------------------------------

def fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


_PREC = {"+": 1, "-": 1, "*": 2}


def print_expr(e: T.Expr, level: int = 0) -> str:
    if isinstance(e, T.Num):
        return fmt_num(e.value)
    if isinstance(e, T.Var):
        return e.name
    if isinstance(e, T.Neg):
        if isinstance(e.arg, T.Num):
            return f"-({print_expr(e.arg)})"
        return "-" + print_expr(e.arg, 3)
    p = _PREC[e.op]
    s = f"{print_expr(e.left, p)} {e.op} {print_expr(e.right, p + 1)}"
    return f"({s})" if p < level else s


def print_bexpr(b: T.BExpr, level: int = 0) -> str:
    if isinstance(b, T.BoolLit):
        return "true" if b.value else "false"
    if isinstance(b, T.Cmp):
        return f"{print_expr(b.left)} {b.op} {print_expr(b.right)}"
    if isinstance(b, T.Not):
        return "not " + print_bexpr(b.arg, 3)
    p = 1 if isinstance(b, T.Or) else 2
    word = "or" if isinstance(b, T.Or) else "and"
    s = f"{print_bexpr(b.left, p)} {word} {print_bexpr(b.right, p + 1)}"
    return f"({s})" if p < level else s


SUM, PAR, POST, PRE = 0, 1, 2, 3


def print_process(p: T.Process, level: int = SUM) -> str:
    """Concrete syntax for ``p``; ``parse_process`` inverts it."""
    s, own = _print(p)
    return f"({s})" if own < level else s


def _cont(p: T.Process) -> str:
    if isinstance(p, T.Nil):
        return ""
    return "." + print_process(p, PRE)


def _print(p: T.Process) -> tuple[str, int]:
    if isinstance(p, T.Nil):
        return "nil", PRE
    if isinstance(p, T.Call):
        if not p.qargs and not p.cargs:
            return f"{p.name}()", PRE
        cs = ", ".join(print_expr(e) for e in p.cargs)
        if p.qargs:
            return f"{p.name}({', '.join(p.qargs)}; {cs})".replace("; )", ";)"), PRE
        return f"{p.name}({cs})", PRE
    if isinstance(p, T.Tau):
        return "tau" + _cont(p.cont), PRE
    if isinstance(p, T.CIn):
        return f"{p.chan}?{p.var}" + _cont(p.cont), PRE
    if isinstance(p, T.COut):
        return f"{p.chan}!{print_expr(p.expr, 3)}" + _cont(p.cont), PRE
    if isinstance(p, T.QIn):
        return f"{p.chan}?{p.var}" + _cont(p.cont), PRE
    if isinstance(p, T.QOut):
        return f"{p.chan}!{p.qvar}" + _cont(p.cont), PRE
    if isinstance(p, T.SuperOp):
        return f"{p.op}[{', '.join(p.qubits)}]" + _cont(p.cont), PRE
    if isinstance(p, T.Measure):
        return f"{p.op}[{', '.join(p.qubits)}; {p.var}]" + _cont(p.cont), PRE
    if isinstance(p, T.If):
        return f"if {print_bexpr(p.cond)} then {print_process(p.cont, PRE)}", PRE
    if isinstance(p, T.Sum):
        return f"{print_process(p.left, SUM)} + {print_process(p.right, PAR)}", SUM
    if isinstance(p, T.Par):
        return f"{print_process(p.left, PAR)} || {print_process(p.right, POST)}", PAR
    if isinstance(p, T.Relabel):
        inner = print_process(p.cont, POST)
        return inner + "[" + ", ".join(f"{a} -> {b}" for a, b in p.mapping) + "]", POST
    if isinstance(p, T.Restrict):
        return print_process(p.cont, POST) + "\\{" + ", ".join(sorted(p.chans)) + "}", POST
    raise TypeError(f"not a process: {p!r}")
