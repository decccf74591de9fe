"""Schedulers, strategies and the observation predicate over a finite graph.

A scheduler picks one outgoing edge per node (``None`` only at dead nodes).
A strategy picks one transition schema per process term, so every node
sharing that term makes the same choice whatever its quantum state.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Union

from . import qterm as T
from .parser import fmt_num, print_process
from .qstate import TOL
from .semantics import Distribution, Edge, PltsGraph, SemanticsError, instantiate, transition_schemas

DEFAULT_CAP = 10**7

Vector = Optional[tuple[float, ...]]  # None means the observation is undefined


class TauDivergence(SemanticsError):
    """The scheduler drives some reachable node around a cycle of tau steps."""

    def __init__(self, cycle: Sequence[int]):
        super().__init__(f"tau-divergence through nodes {list(cycle)}")
        self.cycle = tuple(cycle)


class EnumerationCapExceeded(RuntimeError):
    pass


class WitnessError(ValueError):
    pass


# --- strategy keys ---------------------------------------------------------

def strategy_key(p: T.Process, defs: T.Definitions, _depth: int = 0) -> T.Process:
    """Unfold constants everywhere except under prefixes.

    Two terms which differ only in whether a constant is still folded get
    the same key, so a strategy treats them as one process.
    """
    if _depth > 1000:
        raise SemanticsError("unguarded recursion while normalising a strategy key")
    k = lambda q: strategy_key(q, defs, _depth + 1)
    if isinstance(p, T.Call):
        return k(T.unfold(p, defs))
    if isinstance(p, T.Sum):
        return T.Sum(k(p.left), k(p.right))
    if isinstance(p, T.Par):
        return T.Par(k(p.left), k(p.right))
    if isinstance(p, T.Restrict):
        return T.Restrict(k(p.cont), p.chans)
    if isinstance(p, T.Relabel):
        return T.Relabel(k(p.cont), p.mapping)
    if isinstance(p, T.If):
        return T.If(p.cond, k(p.cont))
    return p


class StrategyIndex:
    """Per-graph table linking schema choices to concrete edges.

    ``edge_of(node, k)`` is the edge obtained by instantiating the ``k``-th
    schema of the node's process at the node's state.
    """

    def __init__(self, graph: PltsGraph):
        self.graph = graph
        defs = graph.defs
        register = graph.nodes[0].state.register
        self.node_key: list[T.Process] = []
        self.keys: list[T.Process] = []
        self.arity: dict[T.Process, int] = {}
        self._edge: list[list[int]] = []
        for i, c in enumerate(graph.nodes):
            key = strategy_key(c.process, defs)
            schemas = transition_schemas(c.process, defs, register)
            if key not in self.arity:
                self.keys.append(key)
                self.arity[key] = len(schemas)
            elif self.arity[key] != len(schemas):
                raise SemanticsError(f"processes with key {print_process(key)} disagree on their schemas")
            self.node_key.append(key)
            self._edge.append([self._match(i, *instantiate(s, c.state)) for s in schemas])

    def _match(self, i: int, action, dist: Distribution) -> int:
        for k, e in enumerate(self.graph.edges[i]):
            if e.action == action and self.graph.distribution(e) == dist:
                return k
        raise SemanticsError(f"schema instance {action} at node {i} is not an edge of the graph")

    def edge_of(self, node: int, schema: Optional[int]) -> Optional[int]:
        return None if schema is None else self._edge[node][schema]

    def schema_labels(self, key: T.Process) -> list[str]:
        i = self.node_key.index(key)
        return [str(self.graph.edges[i][k].action) for k in self._edge[i]]


# --- schedulers and strategies --------------------------------------------

@dataclass(frozen=True, eq=False)
class Scheduler:
    graph: PltsGraph
    choice: tuple[Optional[int], ...]  # edge index per node

    def __post_init__(self):
        if len(self.choice) != len(self.graph):
            raise ValueError("a scheduler needs one choice per node")
        for i, k in enumerate(self.choice):
            n = len(self.graph.edges[i])
            if k is None and n or k is not None and not 0 <= k < n:
                raise ValueError(f"node {i}: choice {k} is not valid for {n} outgoing edges")

    def edge(self, i: int) -> Optional[Edge]:
        k = self.choice[i]
        return None if k is None else self.graph.edges[i][k]

    def __eq__(self, other):
        return isinstance(other, Scheduler) and other.graph is self.graph and other.choice == self.choice

    def __hash__(self):
        return hash(self.choice)


@dataclass(frozen=True, eq=False)
class Strategy:
    index: StrategyIndex
    choice: tuple[tuple[T.Process, Optional[int]], ...]  # schema index per key, in key order

    def __post_init__(self):
        got = dict(self.choice)
        if set(got) != set(self.index.keys):
            raise ValueError("a strategy needs one choice per process key")
        for key, k in got.items():
            n = self.index.arity[key]
            if k is None and n or k is not None and not 0 <= k < n:
                raise ValueError(f"{print_process(key)}: choice {k} is not valid for {n} schemas")

    @property
    def graph(self) -> PltsGraph:
        return self.index.graph

    def schema(self, key: T.Process) -> Optional[int]:
        return dict(self.choice)[key]

    def edge(self, i: int) -> Optional[Edge]:
        k = self.index.edge_of(i, self.schema(self.index.node_key[i]))
        return None if k is None else self.graph.edges[i][k]

    def __eq__(self, other):
        return isinstance(other, Strategy) and other.index is self.index and other.choice == self.choice

    def __hash__(self):
        return hash(self.choice)


Resolver = Union[Scheduler, Strategy]


def strategy_to_scheduler(s: Strategy) -> Scheduler:
    g = s.graph
    return Scheduler(g, tuple(s.index.edge_of(i, s.schema(s.index.node_key[i])) for i in range(len(g))))


# --- tau closure and observation ------------------------------------------

def _closure(graph: PltsGraph, pick: Callable[[int], Optional[Edge]], start: dict[int, float]) -> dict[int, float]:
    """Push mass along chosen tau edges until every node holding mass is F-stable."""
    # iterative depth-first search for a chosen-tau cycle, recording post-order
    state: dict[int, int] = {}  # 1 on the stack, 2 finished
    order: list[int] = []
    for s in start:
        if s in state:
            continue
        stack = [(s, iter(_tau_succ(pick, s)))]
        state[s] = 1
        while stack:
            i, it = stack[-1]
            j = next(it, None)
            if j is None:
                stack.pop()
                state[i] = 2
                order.append(i)
            elif state.get(j) == 1:
                path = [n for n, _ in stack]
                raise TauDivergence(path[path.index(j):] + [j])
            elif j not in state:
                state[j] = 1
                stack.append((j, iter(_tau_succ(pick, j))))
    mass = {i: 0.0 for i in order}
    for i, p in start.items():
        mass[i] += p
    out: dict[int, float] = {}
    for i in reversed(order):  # topological order of the chosen-tau graph
        e = pick(i)
        if e is not None and e.action.is_tau:
            for j, q in e.targets:
                mass[j] += mass[i] * q
        elif mass[i]:
            out[i] = mass[i]
    return out


def _tau_succ(pick, i: int) -> list[int]:
    e = pick(i)
    return [j for j, _ in e.targets] if e is not None and e.action.is_tau else []


def weak_tau_closure(mu: Distribution, f: Resolver) -> Distribution:
    g = f.graph
    start: dict[int, float] = {}
    for c, p in mu:
        i = g.lookup(c)
        if i is None:
            raise SemanticsError(f"{c} is not a node of the graph")
        start[i] = start.get(i, 0.0) + p
    return Distribution((g.nodes[i], p) for i, p in _closure(g, f.edge, start).items())


def _vector(graph: PltsGraph, pick, channels: Sequence[str], start: int) -> Vector:
    try:
        stable = _closure(graph, pick, {start: 1.0})
    except TauDivergence:
        return None
    totals = dict.fromkeys(channels, 0.0)
    for i, p in stable.items():
        e = pick(i)
        if e is not None and e.action.kind == "cout" and e.action.chan in totals:
            totals[e.action.chan] += p
    return tuple(min(1.0, totals[c]) for c in channels)


def observe(f: Resolver, channel: str, node: int = 0) -> Optional[float]:
    """Probability that the configuration stabilises into an output on ``channel``; None on divergence."""
    v = _vector(f.graph, f.edge, [channel], node)
    return None if v is None else v[0]


def observation_vector(f: Resolver, channels: Optional[Sequence[str]] = None, node: int = 0) -> Vector:
    channels = f.graph.defs.classical_channels() if channels is None else channels
    return _vector(f.graph, f.edge, channels, node)


# --- exhaustive enumeration -----------------------------------------------

def scheduler_count(graph: PltsGraph) -> int:
    return math.prod(max(1, len(es)) for es in graph.edges)


def strategy_count(index: StrategyIndex) -> int:
    return math.prod(max(1, index.arity[k]) for k in index.keys)


def _options(n: int) -> Sequence[Optional[int]]:
    return range(n) if n else (None,)


def enumerate_schedulers(graph: PltsGraph, cap: int = DEFAULT_CAP) -> Iterator[Scheduler]:
    if scheduler_count(graph) > cap:
        raise EnumerationCapExceeded(f"{scheduler_count(graph)} schedulers exceed the cap {cap}")
    for choice in itertools.product(*(_options(len(es)) for es in graph.edges)):
        yield Scheduler(graph, choice)


def enumerate_strategies(graph: PltsGraph, cap: int = DEFAULT_CAP,
                         index: Optional[StrategyIndex] = None) -> Iterator[Strategy]:
    index = index or StrategyIndex(graph)
    if strategy_count(index) > cap:
        raise EnumerationCapExceeded(f"{strategy_count(index)} strategies exceed the cap {cap}")
    for choice in itertools.product(*(_options(index.arity[k]) for k in index.keys)):
        yield Strategy(index, tuple(zip(index.keys, choice)))


@dataclass(frozen=True)
class Achievable:
    """One achievable observation vector with a resolver that attains it."""

    vector: Vector
    witness: Resolver


def achievable_observations(graph: PltsGraph, mode: str, channels: Optional[Sequence[str]] = None,
                            cap: int = DEFAULT_CAP, index: Optional[StrategyIndex] = None) -> list[Achievable]:
    """Distinct observation vectors over all schedulers (or strategies) of ``graph``.

    Choices are only branched on at nodes the partial resolver can actually
    reach by tau steps, so the search visits far fewer resolvers than the
    full product while producing the same set of vectors.
    """
    channels = graph.defs.classical_channels() if channels is None else list(channels)
    if mode not in ("schedulers", "strategies"):
        raise ValueError(f"unknown mode {mode!r}")
    strat = mode == "strategies"
    if strat:
        index = index or StrategyIndex(graph)
    found: list[Achievable] = []
    leaves = 0
    stack: list[tuple[dict, frozenset, tuple[int, ...]]] = [({}, frozenset(), (graph.root,))]
    while stack:
        assign, seen, frontier = stack.pop()
        branched = False
        while frontier:
            i, frontier = frontier[-1], frontier[:-1]
            if i in seen:
                continue
            seen = seen | {i}
            slot = index.node_key[i] if strat else i
            if slot in assign:
                k = index.edge_of(i, assign[slot]) if strat else assign[slot]
                frontier += _tau_targets(graph, i, k)
                continue
            n = index.arity[slot] if strat else len(graph.edges[i])
            opts = list(_options(n))
            for o in reversed(opts):
                k = index.edge_of(i, o) if strat else o
                stack.append(({**assign, slot: o}, seen, frontier + _tau_targets(graph, i, k)))
            branched = True
            break
        if branched:
            continue
        leaves += 1
        if leaves > cap:
            raise EnumerationCapExceeded(f"more than {cap} resolvers")
        witness = _complete(graph, index, assign) if strat else _complete(graph, None, assign)
        v = _vector(graph, witness.edge, channels, graph.root)
        if not any(vectors_match(v, a.vector) for a in found):
            found.append(Achievable(v, witness))
    return found


def _tau_targets(graph: PltsGraph, i: int, k: Optional[int]) -> tuple[int, ...]:
    if k is None:
        return ()
    e = graph.edges[i][k]
    return tuple(j for j, _ in e.targets) if e.action.is_tau else ()


def _complete(graph: PltsGraph, index: Optional[StrategyIndex], assign: dict) -> Resolver:
    """Fill unassigned slots with their first option."""
    if index is None:
        return Scheduler(graph, tuple(assign.get(i, 0 if es else None) for i, es in enumerate(graph.edges)))
    return Strategy(index, tuple((k, assign.get(k, 0 if index.arity[k] else None)) for k in index.keys))


def vectors_match(a: Vector, b: Vector, tol: float = TOL) -> bool:
    if a is None or b is None:
        return a is b
    return len(a) == len(b) and all(abs(x - y) <= tol for x, y in zip(a, b))


# --- witness tables --------------------------------------------------------

def format_witness(f: Resolver, header: Optional[dict[str, str]] = None) -> str:
    """Tab-separated table, one row per node (schedulers) or process key (strategies)."""
    g = f.graph
    kind = "strategy" if isinstance(f, Strategy) else "scheduler"
    lines = ["# qccs witness", f"kind\t{kind}"]
    lines += [f"{k}\t{v}" for k, v in (header or {}).items()]
    if isinstance(f, Strategy):
        lines.append("key\tprocess\tschema\taction")
        for n, (key, k) in enumerate(f.choice):
            label = "-" if k is None else f.index.schema_labels(key)[k]
            lines.append(f"{n}\t{print_process(key)}\t{'-' if k is None else k}\t{label}")
    else:
        lines.append("node\tprocess\tstate\tedge\taction")
        for i, c in enumerate(g.nodes):
            e = f.edge(i)
            k = f.choice[i]
            lines.append(f"{i}\t{print_process(c.process)}\t{c.state.describe()}\t"
                         f"{'-' if k is None else k}\t{'-' if e is None else e.action}")
    return "\n".join(lines) + "\n"


def witness_header(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines()[1:]:
        parts = line.split("\t")
        if len(parts) != 2:
            break
        out[parts[0]] = parts[1]
    return out


def parse_witness(text: str, graph: PltsGraph, index: Optional[StrategyIndex] = None) -> Resolver:
    """Reload a table produced by ``format_witness`` against a freshly built graph."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "# qccs witness":
        raise WitnessError("not a qccs witness table")
    kind = witness_header(text).get("kind")
    try:
        start = next(n for n, ln in enumerate(lines) if ln.split("\t")[0] in ("node", "key")) + 1
    except StopIteration:
        raise WitnessError("witness table has no column header") from None
    rows = [ln.split("\t") for ln in lines[start:]]
    pick = lambda s: None if s == "-" else int(s)
    try:
        if kind == "scheduler":
            if len(rows) != len(graph):
                raise WitnessError(f"witness has {len(rows)} rows, graph has {len(graph)} nodes")
            for i, row in enumerate(rows):
                if int(row[0]) != i or row[1] != print_process(graph.nodes[i].process):
                    raise WitnessError(f"row {i} does not describe node {i} of this graph")
            return Scheduler(graph, tuple(pick(r[3]) for r in rows))
        if kind == "strategy":
            index = index or StrategyIndex(graph)
            by_text = {print_process(k): k for k in index.keys}
            choice = {}
            for row in rows:
                if row[1] not in by_text:
                    raise WitnessError(f"process {row[1]!r} is not reachable in this graph")
                choice[by_text[row[1]]] = pick(row[2])
            return Strategy(index, tuple((k, choice.get(k)) for k in index.keys))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, WitnessError):
            raise
        raise WitnessError(f"malformed witness row: {exc}") from None
    raise WitnessError(f"unknown witness kind {kind!r}")


def format_vector(channels: Sequence[str], v: Vector) -> str:
    if v is None:
        return "undefined (tau-divergence)"
    return ", ".join(f"{c}={fmt_num(round(p, 12))}" for c, p in zip(channels, v))
