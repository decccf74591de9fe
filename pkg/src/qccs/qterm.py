"""Abstract syntax of qCCS processes and the analyses defined on it.

Terms are immutable frozen dataclasses; structural ``==`` is term equality.
Classical data are Python floats, quantum variables and channels are names.
"""
from __future__ import annotations

import itertools
import operator
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

from .qstate import Measurement, SuperOperator

CLASSICAL = "classical"
QUANTUM = "quantum"


class TermError(ValueError):
    """Unresolved names, arity mismatches and non-closed evaluation."""


# --- classical expressions -------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - *
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


Expr = Union[Num, Var, BinOp, Neg]


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class Cmp:
    op: str  # one of = != < <= > >=
    left: Expr
    right: Expr


@dataclass(frozen=True)
class And:
    left: "BExpr"
    right: "BExpr"


@dataclass(frozen=True)
class Or:
    left: "BExpr"
    right: "BExpr"


@dataclass(frozen=True)
class Not:
    arg: "BExpr"


BExpr = Union[BoolLit, Cmp, And, Or, Not]

_ARITH = {"+": operator.add, "-": operator.sub, "*": operator.mul}
_CMP = {"=": operator.eq, "!=": operator.ne, "<": operator.lt,
        "<=": operator.le, ">": operator.gt, ">=": operator.ge}


def eval_expr(e: Expr) -> float:
    if isinstance(e, Num):
        return float(e.value)
    if isinstance(e, Var):
        raise TermError(f"free classical variable {e.name!r} in evaluated expression")
    if isinstance(e, Neg):
        return -eval_expr(e.arg)
    return float(_ARITH[e.op](eval_expr(e.left), eval_expr(e.right)))


def eval_bexpr(b: BExpr) -> bool:
    if isinstance(b, BoolLit):
        return b.value
    if isinstance(b, Cmp):
        return bool(_CMP[b.op](eval_expr(b.left), eval_expr(b.right)))
    if isinstance(b, And):
        return eval_bexpr(b.left) and eval_bexpr(b.right)
    if isinstance(b, Or):
        return eval_bexpr(b.left) or eval_bexpr(b.right)
    return not eval_bexpr(b.arg)


def expr_fv(e) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset([e.name])
    if isinstance(e, (Num, BoolLit)):
        return frozenset()
    if isinstance(e, (Neg, Not)):
        return expr_fv(e.arg)
    return expr_fv(e.left) | expr_fv(e.right)


def subst_expr(e, sigma: Mapping[str, Expr]):
    """Replace variables in an Expr or BExpr; no binders occur inside expressions."""
    if isinstance(e, Var):
        return sigma.get(e.name, e)
    if isinstance(e, (Num, BoolLit)):
        return e
    if isinstance(e, (Neg, Not)):
        return type(e)(subst_expr(e.arg, sigma))
    if isinstance(e, (BinOp, Cmp)):
        return type(e)(e.op, subst_expr(e.left, sigma), subst_expr(e.right, sigma))
    return type(e)(subst_expr(e.left, sigma), subst_expr(e.right, sigma))


# --- processes -------------------------------------------------------------

@dataclass(frozen=True)
class Nil:
    pass


@dataclass(frozen=True)
class Call:
    name: str
    qargs: tuple[str, ...] = ()
    cargs: tuple[Expr, ...] = ()


@dataclass(frozen=True)
class Tau:
    cont: "Process"


@dataclass(frozen=True)
class CIn:
    chan: str
    var: str
    cont: "Process"


@dataclass(frozen=True)
class COut:
    chan: str
    expr: Expr
    cont: "Process"


@dataclass(frozen=True)
class QIn:
    chan: str
    var: str
    cont: "Process"


@dataclass(frozen=True)
class QOut:
    chan: str
    qvar: str
    cont: "Process"


@dataclass(frozen=True)
class SuperOp:
    op: str
    qubits: tuple[str, ...]
    cont: "Process"


@dataclass(frozen=True)
class Measure:
    op: str
    qubits: tuple[str, ...]
    var: str
    cont: "Process"


@dataclass(frozen=True)
class Sum:
    left: "Process"
    right: "Process"


@dataclass(frozen=True)
class Par:
    left: "Process"
    right: "Process"


@dataclass(frozen=True)
class Relabel:
    cont: "Process"
    mapping: tuple[tuple[str, str], ...]  # sorted (from, to) pairs

    def apply(self, chan: str) -> str:
        return dict(self.mapping).get(chan, chan)


@dataclass(frozen=True)
class Restrict:
    cont: "Process"
    chans: frozenset[str]


@dataclass(frozen=True)
class If:
    cond: BExpr
    cont: "Process"


Process = Union[Nil, Call, Tau, CIn, COut, QIn, QOut, SuperOp, Measure, Sum, Par, Relabel, Restrict, If]
PREFIXES = (Tau, CIn, COut, QIn, QOut, SuperOp, Measure)


def relabel(p: Process, mapping: Mapping[str, str]) -> Process:
    pairs = tuple(sorted((a, b) for a, b in mapping.items() if a != b))
    return Relabel(p, pairs) if pairs else p


def restrict(p: Process, chans) -> Restrict:
    return Restrict(p, frozenset(chans))


def proc_str(p: Process) -> str:
    from .parser import print_process
    return print_process(p)


for _cls in (Nil, Call, Tau, CIn, COut, QIn, QOut, SuperOp, Measure, Sum, Par, Relabel, Restrict, If):
    _cls.__str__ = proc_str


# --- declarations ----------------------------------------------------------

@dataclass(frozen=True)
class Channel:
    name: str
    kind: str
    domain: Optional[tuple[float, ...]] = None  # finite value domain for classical input


@dataclass(frozen=True)
class ProcDef:
    name: str
    qparams: tuple[str, ...]
    cparams: tuple[str, ...]
    body: Process


@dataclass
class Definitions:
    """Registry of channels, process constants, super-operators and measurements."""

    channels: dict[str, Channel] = field(default_factory=dict)
    procs: dict[str, ProcDef] = field(default_factory=dict)
    supers: dict[str, SuperOperator] = field(default_factory=dict)
    measures: dict[str, Measurement] = field(default_factory=dict)

    def classical_channels(self) -> list[str]:
        return sorted(c.name for c in self.channels.values() if c.kind == CLASSICAL)

    def proc(self, name: str) -> ProcDef:
        try:
            return self.procs[name]
        except KeyError:
            raise TermError(f"unknown process constant {name!r}") from None

    def merged(self, other: "Definitions") -> "Definitions":
        """Union of two registries; a name may only be shared if both agree."""
        out = Definitions(dict(self.channels), dict(self.procs), dict(self.supers), dict(self.measures))
        for attr in ("channels", "procs", "supers", "measures"):
            mine = getattr(out, attr)
            for name, value in getattr(other, attr).items():
                if name in mine and not _same_decl(mine[name], value):
                    raise TermError(f"conflicting declarations of {name!r}")
                mine[name] = value
        return out


def _same_decl(a, b) -> bool:
    if isinstance(a, Measurement):
        return isinstance(b, Measurement) and len(a.branches) == len(b.branches) and all(
            va == vb and (pa == pb).all() for (va, pa), (vb, pb) in zip(a.branches, b.branches))
    return a == b


# --- variable analyses -----------------------------------------------------

def qv(p: Process, defs: Definitions | None = None) -> frozenset[str]:
    """Free quantum variables."""
    if isinstance(p, Nil):
        return frozenset()
    if isinstance(p, Call):
        if defs is not None:
            defs.proc(p.name)
        return frozenset(p.qargs)
    if isinstance(p, QIn):
        return qv(p.cont, defs) - {p.var}
    if isinstance(p, QOut):
        return qv(p.cont, defs) | {p.qvar}
    if isinstance(p, (SuperOp, Measure)):
        return qv(p.cont, defs) | frozenset(p.qubits)
    if isinstance(p, (Sum, Par)):
        return qv(p.left, defs) | qv(p.right, defs)
    return qv(p.cont, defs)


def fv(p: Process, defs: Definitions | None = None) -> frozenset[str]:
    """Free classical variables; ``c?x`` and ``M[q;x]`` bind ``x``."""
    if isinstance(p, Nil):
        return frozenset()
    if isinstance(p, Call):
        if defs is not None:
            defs.proc(p.name)
        return frozenset().union(*(expr_fv(e) for e in p.cargs))
    if isinstance(p, (CIn, Measure)):
        return fv(p.cont, defs) - {p.var}
    if isinstance(p, COut):
        return fv(p.cont, defs) | expr_fv(p.expr)
    if isinstance(p, If):
        return fv(p.cont, defs) | expr_fv(p.cond)
    if isinstance(p, (Sum, Par)):
        return fv(p.left, defs) | fv(p.right, defs)
    return fv(p.cont, defs)


def children(p: Process) -> tuple[Process, ...]:
    if isinstance(p, (Nil, Call)):
        return ()
    if isinstance(p, (Sum, Par)):
        return (p.left, p.right)
    return (p.cont,)


def calls(p: Process) -> set[str]:
    out = {p.name} if isinstance(p, Call) else set()
    for c in children(p):
        out |= calls(c)
    return out


def names_in(p: Process) -> set[str]:
    """Every variable name occurring in ``p``, free or bound, classical or quantum."""
    out: set[str] = set()
    if isinstance(p, Call):
        out |= set(p.qargs)
        for e in p.cargs:
            out |= expr_fv(e)
    elif isinstance(p, (CIn, QIn, Measure)):
        out.add(p.var)
    elif isinstance(p, COut):
        out |= expr_fv(p.expr)
    elif isinstance(p, If):
        out |= expr_fv(p.cond)
    if isinstance(p, QOut):
        out.add(p.qvar)
    if isinstance(p, (SuperOp, Measure)):
        out |= set(p.qubits)
    for c in children(p):
        out |= names_in(c)
    return out


# --- legality --------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    condition: int
    subterm: Process
    message: str

    def __str__(self):
        return f"legality condition {self.condition} violated: {self.message} in `{self.subterm}`"


def check_legal(p: Process, defs: Definitions) -> Optional[Violation]:
    """First violation of the three legality conditions, searching pre-order.

    Condition 3 is checked both at the call site (the constant exists and
    arities agree) and once per reachable defining equation.
    """
    seen: set[str] = set()

    def walk(t: Process) -> Optional[Violation]:
        if isinstance(t, QOut) and t.qvar in qv(t.cont):
            return Violation(1, t, f"{t.qvar} is sent but still used by the continuation")
        if isinstance(t, Par):
            shared = qv(t.left) & qv(t.right)
            if shared:
                return Violation(2, t, f"parallel components share {sorted(shared)}")
        if isinstance(t, Call):
            d = defs.procs.get(t.name)
            if d is None:
                return Violation(3, t, f"no defining equation for {t.name}")
            if len(d.qparams) != len(t.qargs) or len(d.cparams) != len(t.cargs):
                return Violation(3, t, f"{t.name} expects {len(d.qparams)} quantum and "
                                       f"{len(d.cparams)} classical arguments")
            if len(set(t.qargs)) != len(t.qargs):
                return Violation(3, t, f"repeated quantum argument to {t.name}")
            if t.name not in seen:
                seen.add(t.name)
                extra_q = qv(d.body) - set(d.qparams)
                if extra_q:
                    return Violation(3, d.body, f"body of {t.name} uses quantum variables {sorted(extra_q)} "
                                                "outside its parameters")
                extra_c = fv(d.body) - set(d.cparams)
                if extra_c:
                    return Violation(3, d.body, f"body of {t.name} uses classical variables {sorted(extra_c)} "
                                                "outside its parameters")
                v = walk(d.body)
                if v is not None:
                    return v
        for c in children(t):
            v = walk(c)
            if v is not None:
                return v
        return None

    return walk(p)


# --- substitution ----------------------------------------------------------

def _fresh(base: str, avoid: set[str]) -> str:
    for i in itertools.count(1):
        name = f"{base}_{i}"
        if name not in avoid:
            return name
    raise AssertionError


def substitute(p: Process, sigma: Mapping[str, Union[float, Expr]]) -> Process:
    """Capture-avoiding classical substitution ``p{v/x}``.

    Values may be numbers or expressions.  A binder for a substituted name
    cuts substitution beneath it; a binder that would capture a free variable
    of an incoming expression is renamed to a fresh name.
    """
    sig = {k: (v if isinstance(v, (Num, Var, BinOp, Neg)) else Num(float(v))) for k, v in sigma.items()}
    return _subst(p, sig)


def _subst(p: Process, sig: dict[str, Expr]) -> Process:
    if not sig:
        return p
    if isinstance(p, Nil):
        return p
    if isinstance(p, Call):
        return Call(p.name, p.qargs, tuple(subst_expr(e, sig) for e in p.cargs))
    if isinstance(p, COut):
        return COut(p.chan, subst_expr(p.expr, sig), _subst(p.cont, sig))
    if isinstance(p, If):
        return If(subst_expr(p.cond, sig), _subst(p.cont, sig))
    if isinstance(p, (CIn, Measure)):
        inner = {k: v for k, v in sig.items() if k != p.var}
        var, cont = p.var, p.cont
        incoming = set().union(*(expr_fv(v) for k, v in inner.items() if k in fv(cont)))
        if var in incoming:
            new = _fresh(var, names_in(cont) | incoming | set(inner))
            cont = _subst(cont, {var: Var(new)})
            var = new
        cont = _subst(cont, inner)
        if isinstance(p, CIn):
            return CIn(p.chan, var, cont)
        return Measure(p.op, p.qubits, var, cont)
    if isinstance(p, Sum):
        return Sum(_subst(p.left, sig), _subst(p.right, sig))
    if isinstance(p, Par):
        return Par(_subst(p.left, sig), _subst(p.right, sig))
    return _rebuild(p, _subst(p.cont, sig))


def _rebuild(p: Process, cont: Process) -> Process:
    if isinstance(p, Tau):
        return Tau(cont)
    if isinstance(p, QIn):
        return QIn(p.chan, p.var, cont)
    if isinstance(p, QOut):
        return QOut(p.chan, p.qvar, cont)
    if isinstance(p, SuperOp):
        return SuperOp(p.op, p.qubits, cont)
    if isinstance(p, Relabel):
        return Relabel(cont, p.mapping)
    if isinstance(p, Restrict):
        return Restrict(cont, p.chans)
    raise TypeError(f"not a unary process node: {p!r}")


def rename_qubits(p: Process, mapping: Mapping[str, str]) -> Process:
    """Rename free quantum variables, alpha-renaming quantum-input binders on capture."""
    m = {k: v for k, v in mapping.items() if k != v}
    return _qren(p, m) if m else p


def _qren(p: Process, m: dict[str, str]) -> Process:
    if not m:
        return p
    r = lambda q: m.get(q, q)
    if isinstance(p, Nil):
        return p
    if isinstance(p, Call):
        return Call(p.name, tuple(r(q) for q in p.qargs), p.cargs)
    if isinstance(p, QIn):
        inner = {k: v for k, v in m.items() if k != p.var}
        var, cont = p.var, p.cont
        live = {v for k, v in inner.items() if k in qv(cont)}
        if var in live:
            new = _fresh(var, names_in(cont) | live | set(inner))
            cont = _qren(cont, {var: new})
            var = new
        return QIn(p.chan, var, _qren(cont, inner))
    if isinstance(p, QOut):
        return QOut(p.chan, r(p.qvar), _qren(p.cont, m))
    if isinstance(p, SuperOp):
        return SuperOp(p.op, tuple(r(q) for q in p.qubits), _qren(p.cont, m))
    if isinstance(p, Measure):
        return Measure(p.op, tuple(r(q) for q in p.qubits), p.var, _qren(p.cont, m))
    if isinstance(p, Sum):
        return Sum(_qren(p.left, m), _qren(p.right, m))
    if isinstance(p, Par):
        return Par(_qren(p.left, m), _qren(p.right, m))
    if isinstance(p, CIn):
        return CIn(p.chan, p.var, _qren(p.cont, m))
    if isinstance(p, COut):
        return COut(p.chan, p.expr, _qren(p.cont, m))
    if isinstance(p, If):
        return If(p.cond, _qren(p.cont, m))
    return _rebuild(p, _qren(p.cont, m))


def unfold(call: Call, defs: Definitions) -> Process:
    """Instantiate the defining equation of ``call``."""
    d = defs.proc(call.name)
    if len(d.qparams) != len(call.qargs) or len(d.cparams) != len(call.cargs):
        raise TermError(f"{call.name} expects ({len(d.qparams)}; {len(d.cparams)}) arguments, "
                        f"got ({len(call.qargs)}; {len(call.cargs)})")
    body = rename_qubits(d.body, dict(zip(d.qparams, call.qargs)))
    return substitute(body, dict(zip(d.cparams, call.cargs)))


def head_normal(p: Process, defs: Definitions, limit: int = 1000) -> Process:
    """Unfold top-level constant calls until the head is not a call."""
    for _ in range(limit):
        if not isinstance(p, Call):
            return p
        p = unfold(p, defs)
    raise TermError(f"unguarded recursion: more than {limit} nested unfoldings")
