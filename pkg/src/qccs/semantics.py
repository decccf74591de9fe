"""Probabilistic labelled transition system of qCCS configurations.

Two independent routes compute the transitions of a configuration:

* ``transitions`` applies the rules directly to ``<P, rho>``;
* ``transition_schemas`` works on the process alone and produces, for each
  transition, target processes with super-operators and projectors, which
  ``instantiate`` evaluates at any state.

The two must agree; the test-suite checks this on random terms.
"""
from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import qterm as T
from .parser import fmt_num, print_process
from .qstate import PRUNE, TOL, QState, apply_super, format_matrix, lift, measure, sandwich

MAX_NODES = 10_000
_MAX_UNFOLD = 200


class SemanticsError(ValueError):
    """Illegal or non-closed configurations, or missing value domains."""


class StateSpaceExceeded(SemanticsError):
    """The reachable configuration set is larger than the node bound."""


# --- actions ---------------------------------------------------------------

@dataclass(frozen=True)
class Action:
    kind: str  # tau | cin | cout | qin | qout
    chan: Optional[str] = None
    value: object = None  # float for classical actions, qubit name for quantum ones

    @property
    def is_tau(self) -> bool:
        return self.kind == "tau"

    def cn(self) -> frozenset[str]:
        return frozenset() if self.chan is None else frozenset([self.chan])

    def relabeled(self, f: T.Relabel) -> "Action":
        if self.chan is None:
            return self
        return Action(self.kind, f.apply(self.chan), self.value)

    def __str__(self):
        if self.kind == "tau":
            return "tau"
        sym = "?" if self.kind in ("cin", "qin") else "!"
        v = fmt_num(self.value) if self.kind in ("cin", "cout") else self.value
        return f"{self.chan}{sym}{v}"


TAU = Action("tau")


# --- configurations and distributions -------------------------------------

@dataclass(frozen=True, eq=False)
class Configuration:
    process: T.Process
    state: QState

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.process == other.process and self.state == other.state

    def __hash__(self):
        return hash(self.process)

    def __str__(self):
        return f"<{print_process(self.process)}, {self.state.describe()}>"


class Distribution:
    """Finite-support probability distribution over configurations.

    Construction merges equal configurations and drops zero entries; the
    entry order is the order of first appearance, which keeps output stable.
    """

    __slots__ = ("_items",)

    def __init__(self, items: Iterable[tuple[Configuration, float]]):
        merged: dict[Configuration, float] = {}
        for c, p in items:
            merged[c] = merged.get(c, 0.0) + float(p)
        self._items = tuple((c, p) for c, p in merged.items() if p > PRUNE)

    @classmethod
    def point(cls, c: Configuration) -> "Distribution":
        return cls([(c, 1.0)])

    @classmethod
    def mix(cls, parts: Iterable[tuple[float, "Distribution"]]) -> "Distribution":
        return cls((c, w * p) for w, d in parts for c, p in d.items())

    def items(self) -> tuple[tuple[Configuration, float], ...]:
        return self._items

    def support(self) -> list[Configuration]:
        return [c for c, _ in self._items]

    def __getitem__(self, c: Configuration) -> float:
        for d, p in self._items:
            if d == c:
                return p
        return 0.0

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def total(self) -> float:
        return sum(p for _, p in self._items)

    def __eq__(self, other):
        if not isinstance(other, Distribution):
            return NotImplemented
        if len(self) != len(other):
            return False
        return all(abs(other[c] - p) <= TOL for c, p in self._items)

    def __hash__(self):
        return hash(frozenset(hash(c) for c in self.support()))

    def __str__(self):
        if len(self._items) == 1:
            return str(self._items[0][0])
        return " (+) ".join(f"{fmt_num(p)} * {c}" for c, p in self._items)

    def map_processes(self, f) -> "Distribution":
        return Distribution((Configuration(f(c.process), c.state), p) for c, p in self._items)


# --- the transition rules --------------------------------------------------

# A raw transition: action plus (probability, process, state) branches.
Raw = tuple[Action, list[tuple[float, T.Process, QState]]]


def _closed_value(e: T.Expr) -> float:
    try:
        return T.eval_expr(e)
    except T.TermError as exc:
        raise SemanticsError(str(exc)) from None


def _rules(p: T.Process, rho: QState, defs: T.Definitions, depth: int) -> list[Raw]:
    if depth > _MAX_UNFOLD:
        raise SemanticsError(f"unguarded recursion: more than {_MAX_UNFOLD} nested unfoldings")
    if isinstance(p, T.Nil):
        return []
    if isinstance(p, T.Tau):
        return [(TAU, [(1.0, p.cont, rho)])]
    if isinstance(p, T.COut):
        return [(Action("cout", p.chan, _closed_value(p.expr)), [(1.0, p.cont, rho)])]
    if isinstance(p, T.CIn):
        domain = defs.channels[p.chan].domain if p.chan in defs.channels else None
        if domain is None:
            raise SemanticsError(f"classical input on {p.chan!r} needs a declared value domain")
        return [(Action("cin", p.chan, v), [(1.0, T.substitute(p.cont, {p.var: v}), rho)]) for v in domain]
    if isinstance(p, T.QOut):
        return [(Action("qout", p.chan, p.qvar), [(1.0, p.cont, rho)])]
    if isinstance(p, T.QIn):
        busy = T.qv(p)
        return [(Action("qin", p.chan, r), [(1.0, T.rename_qubits(p.cont, {p.var: r}), rho)])
                for r in rho.register if r not in busy]
    if isinstance(p, T.SuperOp):
        return [(TAU, [(1.0, p.cont, apply_super(rho, defs.supers[p.op], p.qubits))])]
    if isinstance(p, T.Measure):
        branches = [(prob, T.substitute(p.cont, {p.var: v}), post)
                    for v, prob, post in measure(rho, defs.measures[p.op], p.qubits)]
        return [(TAU, branches)]
    if isinstance(p, T.Sum):
        return _rules(p.left, rho, defs, depth) + _rules(p.right, rho, defs, depth)
    if isinstance(p, T.If):
        try:
            ok = T.eval_bexpr(p.cond)
        except T.TermError as exc:
            raise SemanticsError(str(exc)) from None
        return _rules(p.cont, rho, defs, depth) if ok else []
    if isinstance(p, T.Restrict):
        return [(a, [(q, T.Restrict(t, p.chans), s) for q, t, s in bs])
                for a, bs in _rules(p.cont, rho, defs, depth) if not (a.cn() & p.chans)]
    if isinstance(p, T.Relabel):
        return [(a.relabeled(p), [(q, T.Relabel(t, p.mapping), s) for q, t, s in bs])
                for a, bs in _rules(p.cont, rho, defs, depth)]
    if isinstance(p, T.Call):
        try:
            body = T.unfold(p, defs)
        except T.TermError as exc:
            raise SemanticsError(str(exc)) from None
        return _rules(body, rho, defs, depth + 1)
    if isinstance(p, T.Par):
        return _par_rules(p, rho, defs, depth)
    raise TypeError(f"not a process: {p!r}")


def _par_rules(p: T.Par, rho: QState, defs: T.Definitions, depth: int) -> list[Raw]:
    left = _rules(p.left, rho, defs, depth)
    right = _rules(p.right, rho, defs, depth)
    out: list[Raw] = []
    qv_l, qv_r = T.qv(p.left), T.qv(p.right)
    # interleaving; a received qubit must not belong to the other component
    for a, bs in left:
        if a.kind != "qin" or a.value not in qv_r:
            out.append((a, [(q, T.Par(t, p.right), s) for q, t, s in bs]))
    for a, bs in right:
        if a.kind != "qin" or a.value not in qv_l:
            out.append((a, [(q, T.Par(p.left, t), s) for q, t, s in bs]))
    # synchronisation: input on one side meets the matching output on the other
    for (a, bs), (b, cs), flip in [(x, y, False) for x in left for y in right] + \
                                  [(y, x, True) for x in left for y in right]:
        if (a.kind, b.kind) in (("cin", "cout"), ("qin", "qout")) and a.chan == b.chan and a.value == b.value:
            (_, ti, _), (_, to, _) = bs[0], cs[0]
            target = T.Par(to, ti) if flip else T.Par(ti, to)
            out.append((TAU, [(1.0, target, rho)]))
    return out


def _to_transitions(raw: list[Raw]) -> list[tuple[Action, Distribution]]:
    out: list[tuple[Action, Distribution]] = []
    for a, bs in raw:
        d = Distribution((Configuration(t, s), q) for q, t, s in bs)
        if not any(a == b and d == e for b, e in out):
            out.append((a, d))
    return out


def check_configuration(c: Configuration, defs: T.Definitions):
    if T.fv(c.process):
        raise SemanticsError(f"configuration is not closed: free {sorted(T.fv(c.process))}")
    v = T.check_legal(c.process, defs)
    if v is not None:
        raise SemanticsError(str(v))
    extra = T.qv(c.process) - set(c.state.register)
    if extra:
        raise SemanticsError(f"quantum variables {sorted(extra)} are not in the register")


def transitions(c: Configuration, defs: T.Definitions, check: bool = True) -> list[tuple[Action, Distribution]]:
    """All transitions ``c --a--> mu``, duplicate-free, in rule order."""
    if check:
        check_configuration(c, defs)
    return _to_transitions(_rules(c.process, c.state, defs, 0))


# --- process-level transition schemas --------------------------------------

@dataclass(frozen=True, eq=False)
class LocalOp:
    """Operators ``K_j`` on ``qubits``; the branch maps sigma to sum_j K_j sigma K_j^dagger."""

    kraus: tuple[np.ndarray, ...]
    qubits: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class SchemaBranch:
    target: T.Process
    ops: tuple[LocalOp, ...] = ()
    projector: Optional[tuple[np.ndarray, tuple[str, ...]]] = None  # None means the identity


@dataclass(frozen=True, eq=False)
class TransitionSchema:
    source: T.Process
    action: Action
    branches: tuple[SchemaBranch, ...]

    def projector_sum(self, register: Sequence[str]) -> np.ndarray:
        n = len(register)
        total = np.zeros((2**n, 2**n), dtype=complex)
        for b in self.branches:
            if b.projector is None:
                total += np.eye(2**n)
            else:
                m, qs = b.projector
                total += lift(m, [register.index(q) for q in qs], n)
        return total


def _map_schema(s: TransitionSchema, source, action=None, target=lambda t: t) -> TransitionSchema:
    return TransitionSchema(source, action or s.action,
                            tuple(SchemaBranch(target(b.target), b.ops, b.projector) for b in s.branches))


def transition_schemas(p: T.Process, defs: T.Definitions, register: Sequence[str],
                       _depth: int = 0) -> list[TransitionSchema]:
    """State-independent description of every transition of ``<p, sigma>``.

    ``register`` is only consulted by quantum input, which ranges over the
    register qubits not already owned by the process.
    """
    if _depth > _MAX_UNFOLD:
        raise SemanticsError(f"unguarded recursion: more than {_MAX_UNFOLD} nested unfoldings")
    rec = lambda q: transition_schemas(q, defs, register, _depth)
    single = lambda a, t, ops=(): [TransitionSchema(p, a, (SchemaBranch(t, ops),))]
    if isinstance(p, T.Nil):
        return []
    if isinstance(p, T.Tau):
        return single(TAU, p.cont)
    if isinstance(p, T.COut):
        return single(Action("cout", p.chan, _closed_value(p.expr)), p.cont)
    if isinstance(p, T.CIn):
        domain = defs.channels[p.chan].domain if p.chan in defs.channels else None
        if domain is None:
            raise SemanticsError(f"classical input on {p.chan!r} needs a declared value domain")
        return [s for v in domain for s in single(Action("cin", p.chan, v), T.substitute(p.cont, {p.var: v}))]
    if isinstance(p, T.QOut):
        return single(Action("qout", p.chan, p.qvar), p.cont)
    if isinstance(p, T.QIn):
        busy = T.qv(p)
        return [s for r in register if r not in busy
                for s in single(Action("qin", p.chan, r), T.rename_qubits(p.cont, {p.var: r}))]
    if isinstance(p, T.SuperOp):
        return single(TAU, p.cont, (LocalOp(defs.supers[p.op].kraus, p.qubits),))
    if isinstance(p, T.Measure):
        branches = tuple(SchemaBranch(T.substitute(p.cont, {p.var: v}), (LocalOp((e,), p.qubits),), (e, p.qubits))
                         for v, e in defs.measures[p.op].branches)
        return [TransitionSchema(p, TAU, branches)]
    if isinstance(p, T.Sum):
        return [_map_schema(s, p) for s in rec(p.left) + rec(p.right)]
    if isinstance(p, T.If):
        try:
            ok = T.eval_bexpr(p.cond)
        except T.TermError as exc:
            raise SemanticsError(str(exc)) from None
        return [_map_schema(s, p) for s in rec(p.cont)] if ok else []
    if isinstance(p, T.Restrict):
        return [_map_schema(s, p, target=lambda t: T.Restrict(t, p.chans))
                for s in rec(p.cont) if not (s.action.cn() & p.chans)]
    if isinstance(p, T.Relabel):
        return [_map_schema(s, p, s.action.relabeled(p), lambda t: T.Relabel(t, p.mapping)) for s in rec(p.cont)]
    if isinstance(p, T.Call):
        try:
            body = T.unfold(p, defs)
        except T.TermError as exc:
            raise SemanticsError(str(exc)) from None
        return [_map_schema(s, p) for s in transition_schemas(body, defs, register, _depth + 1)]
    if isinstance(p, T.Par):
        left, right = rec(p.left), rec(p.right)
        qv_l, qv_r = T.qv(p.left), T.qv(p.right)
        out = [_map_schema(s, p, target=lambda t: T.Par(t, p.right)) for s in left
               if s.action.kind != "qin" or s.action.value not in qv_r]
        out += [_map_schema(s, p, target=lambda t: T.Par(p.left, t)) for s in right
                if s.action.kind != "qin" or s.action.value not in qv_l]
        for s in left:
            for r in right:
                for i, o, flip in ((s, r, False), (r, s, True)):
                    a, b = i.action, o.action
                    if (a.kind, b.kind) in (("cin", "cout"), ("qin", "qout")) and a.chan == b.chan \
                            and a.value == b.value:
                        ti, to = i.branches[0].target, o.branches[0].target
                        out.append(TransitionSchema(p, TAU, (SchemaBranch(T.Par(to, ti) if flip else T.Par(ti, to)),)))
        return out
    raise TypeError(f"not a process: {p!r}")


def instantiate(s: TransitionSchema, rho: QState) -> tuple[Action, Distribution]:
    """Evaluate a schema at a state: weights tr(E_i rho), targets E_i(rho)/weight."""
    parts = []
    for b in s.branches:
        if b.projector is None:
            weight = 1.0
        else:
            m, qs = b.projector
            weight = float(np.trace(lift(m, rho.index(qs), rho.n) @ rho.matrix).real)
        if weight <= PRUNE:
            continue
        mat = rho.matrix
        for op in b.ops:
            mat = sandwich(mat, op.kraus, rho.index(op.qubits), rho.n)
        parts.append((Configuration(b.target, QState(rho.register, mat / weight)), weight))
    return s.action, Distribution(parts)


# --- lifting to distributions ---------------------------------------------

def lift_transition(mu: Distribution, action: Action, defs: T.Definitions,
                    trans=None) -> list[Distribution]:
    """All nu with ``mu --action--> nu``: every support element moves by ``action``."""
    trans = trans or (lambda c: transitions(c, defs))
    options = []
    for c, _ in mu:
        opts = [d for a, d in trans(c) if a == action]
        if not opts:
            return []
        options.append(opts)
    out: list[Distribution] = []
    for choice in itertools.product(*options):
        nu = Distribution.mix((p, d) for (_, p), d in zip(mu, choice))
        if nu not in out:
            out.append(nu)
    return out


# --- reachable graphs ------------------------------------------------------

@dataclass(frozen=True)
class Edge:
    action: Action
    targets: tuple[tuple[int, float], ...]  # (node id, probability)


class PltsGraph:
    """Finite reachable part of the pLTS from ``root`` (node 0).

    Nodes are numbered in breadth-first order and edges keep rule order, so
    every traversal of the graph is deterministic.
    """

    def __init__(self, defs: T.Definitions):
        self.defs = defs
        self.nodes: list[Configuration] = []
        self.edges: list[list[Edge]] = []
        self._index: dict[T.Process, list[tuple[QState, int]]] = {}

    @property
    def root(self) -> int:
        return 0

    def lookup(self, c: Configuration) -> Optional[int]:
        for s, i in self._index.get(c.process, ()):
            if s == c.state:
                return i
        return None

    def _add(self, c: Configuration) -> int:
        i = len(self.nodes)
        self.nodes.append(c)
        self.edges.append([])
        self._index.setdefault(c.process, []).append((c.state, i))
        return i

    def __len__(self):
        return len(self.nodes)

    def distribution(self, e: Edge) -> Distribution:
        return Distribution((self.nodes[j], p) for j, p in e.targets)

    def is_dead(self, i: int) -> bool:
        return not self.edges[i]

    def edge_count(self) -> int:
        return sum(len(es) for es in self.edges)


def build_plts(root: Configuration, defs: T.Definitions, max_nodes: int = MAX_NODES) -> PltsGraph:
    check_configuration(root, defs)
    g = PltsGraph(defs)
    g._add(root)
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for a, d in transitions(g.nodes[i], defs, check=False):
            targets = []
            for c, p in d:
                j = g.lookup(c)
                if j is None:
                    if len(g.nodes) >= max_nodes:
                        raise StateSpaceExceeded(f"more than {max_nodes} reachable configurations")
                    j = g._add(c)
                    queue.append(j)
                targets.append((j, p))
            g.edges[i].append(Edge(a, tuple(targets)))
    return g


def unfold_tree(g: PltsGraph, max_nodes: int = MAX_NODES) -> PltsGraph:
    """Tree unfolding of an acyclic graph, one node per path from the root."""
    t = PltsGraph(g.defs)

    def visit(i: int, on_path: frozenset[int]) -> int:
        if i in on_path:
            raise SemanticsError("graph has a cycle; its tree unfolding is infinite")
        if len(t.nodes) >= max_nodes:
            raise StateSpaceExceeded(f"tree unfolding exceeds {max_nodes} nodes")
        k = len(t.nodes)
        t.nodes.append(g.nodes[i])
        t.edges.append([])
        for e in g.edges[i]:
            t.edges[k].append(Edge(e.action, tuple((visit(j, on_path | {i}), p) for j, p in e.targets)))
        return k

    visit(g.root, frozenset())
    return t


# --- export ----------------------------------------------------------------

def _state_json(s: QState):
    return [[[float(z.real), float(z.imag)] for z in row] for row in s.matrix]


def graph_to_json(g: PltsGraph) -> dict:
    return {
        "format": "qccs-plts/1",
        "register": list(g.nodes[0].state.register) if g.nodes else [],
        "root": g.root,
        "nodes": [{"id": i, "process": print_process(c.process), "state": c.state.describe(),
                   "matrix": _state_json(c.state)} for i, c in enumerate(g.nodes)],
        "edges": [{"source": i, "action": str(e.action),
                   "targets": [{"node": j, "probability": p} for j, p in e.targets]}
                  for i, es in enumerate(g.edges) for e in es],
    }


def graph_to_dot(g: PltsGraph, name: str = "plts") -> str:
    """Graphviz rendering; probabilistic edges fan out from a small point node."""
    esc = lambda s: s.replace("\\", "\\\\").replace('"', '\\"')
    lines = [f'digraph "{esc(name)}" {{', "  node [shape=box, fontname=monospace];"]
    for i, c in enumerate(g.nodes):
        style = ", peripheries=2" if i == g.root else ""
        lines.append(f'  n{i} [label="{esc(print_process(c.process))}\\n{esc(c.state.describe())}"{style}];')
    k = 0
    for i, es in enumerate(g.edges):
        for e in es:
            if len(e.targets) == 1:
                lines.append(f'  n{i} -> n{e.targets[0][0]} [label="{esc(str(e.action))}"];')
                continue
            lines.append(f"  b{k} [shape=point];")
            lines.append(f'  n{i} -> b{k} [label="{esc(str(e.action))}", arrowhead=none];')
            for j, p in e.targets:
                lines.append(f'  b{k} -> n{j} [label="{fmt_num(p)}", style=dashed];')
            k += 1
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_text(g: PltsGraph) -> str:
    out = []
    for i, c in enumerate(g.nodes):
        out.append(f"[{i}] {c}")
        for e in g.edges[i]:
            tgt = " (+) ".join(f"{fmt_num(p)}*[{j}]" for j, p in e.targets)
            out.append(f"    --{e.action}--> {tgt}")
    return "\n".join(out) + "\n"


def dumps_graph(g: PltsGraph) -> str:
    return json.dumps(graph_to_json(g), indent=2, sort_keys=True) + "\n"


def state_text(s: QState) -> str:
    return format_matrix(s.matrix)
