"""Relating configurations: lifting, open bisimulation, observational equivalence.

Observational equivalence quantifies over every context, resolver and
channel; here contexts come from a finite ``TestBasis`` and resolvers are
enumerated exhaustively, so a refutation is definite while a positive
answer only holds for the inputs that were tried.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import qterm as T
from .parser import fmt_num
from .qstate import TOL, SuperOperator, apply_super, partial_trace
from .sched import (DEFAULT_CAP, Achievable, EnumerationCapExceeded, Resolver, Vector,
                    achievable_observations, format_vector, format_witness, observe, vectors_match)
from .semantics import (Action, Configuration, Distribution, SemanticsError, StateSpaceExceeded,
                        build_plts, transitions)

Weight = Union[Fraction, float]

EQUIVALENT = "equivalent-on-inputs"
REFUTED = "refuted"
INCONCLUSIVE = "inconclusive"


# --- weight functions ------------------------------------------------------

@dataclass(frozen=True)
class WeightFunction:
    """Coupling of two distributions supported on related pairs only."""

    weights: tuple[tuple[Hashable, Hashable, Weight], ...]

    def __getitem__(self, pair) -> Weight:
        return sum((w for a, b, w in self.weights if (a, b) == pair), 0)

    def marginals(self) -> tuple[dict, dict]:
        left: dict = {}
        right: dict = {}
        for a, b, w in self.weights:
            left[a] = left.get(a, 0) + w
            right[b] = right.get(b, 0) + w
        return left, right


def _as_weights(d) -> list[tuple[Hashable, Weight]]:
    if isinstance(d, Distribution):
        return list(d.items())
    if isinstance(d, Mapping):
        return [(k, v) for k, v in d.items() if v]
    return [(k, v) for k, v in d if v]


def _is_exact(*ws: Iterable[Weight]) -> bool:
    return all(isinstance(w, (Fraction, int)) for group in ws for w in group)


def lift_relation(related, mu, nu, tol: float = TOL) -> Optional[WeightFunction]:
    """A weight function for (mu, nu) within ``related``, or None.

    ``related`` is a set of pairs or a predicate on two support elements.
    Solved as a maximum flow from mu's support to nu's support through the
    related pairs; the lifting exists iff the flow saturates both sides.
    The arithmetic is exact when every weight is a Fraction or int.
    """
    left, right = _as_weights(mu), _as_weights(nu)
    exact = _is_exact([w for _, w in left], [w for _, w in right])
    eps = 0 if exact else tol
    total_l = sum((w for _, w in left), Fraction(0) if exact else 0.0)
    total_r = sum((w for _, w in right), Fraction(0) if exact else 0.0)
    if abs(total_l - total_r) > eps:
        return None
    rel = related if callable(related) else (lambda a, b, s=frozenset(related): (a, b) in s)
    n, m = len(left), len(right)
    # nodes: 0 source, 1..n left, n+1..n+m right, n+m+1 sink
    size = n + m + 2
    sink = size - 1
    cap = [[Fraction(0) if exact else 0.0] * size for _ in range(size)]
    adj: list[set[int]] = [set() for _ in range(size)]
    big = total_l + 1

    def arc(u, v, c):
        cap[u][v] = c
        adj[u].add(v)
        adj[v].add(u)

    for i, (_, w) in enumerate(left):
        arc(0, 1 + i, w)
    for j, (_, w) in enumerate(right):
        arc(n + 1 + j, sink, w)
    for i, (a, _) in enumerate(left):
        for j, (b, _) in enumerate(right):
            if rel(a, b):
                arc(1 + i, n + 1 + j, big)
    flow = _max_flow(cap, adj, 0, sink, eps)
    if abs(flow - total_l) > eps or abs(flow - total_r) > eps:
        return None
    out = []
    for i, (a, _) in enumerate(left):
        for j, (b, _) in enumerate(right):
            u, v = 1 + i, n + 1 + j
            if v in adj[u] and rel(a, b):
                w = big - cap[u][v]
                if w > eps:
                    out.append((a, b, w))
    return WeightFunction(tuple(out))


def _max_flow(cap, adj, s: int, t: int, eps) -> Weight:
    """Edmonds-Karp on a residual capacity matrix, modified in place."""
    total = 0
    while True:
        parent = {s: None}
        queue = deque([s])
        while queue and t not in parent:
            u = queue.popleft()
            for v in sorted(adj[u]):
                if v not in parent and cap[u][v] > eps:
                    parent[v] = u
                    queue.append(v)
        if t not in parent:
            return total
        path, v = [], t
        while parent[v] is not None:
            path.append((parent[v], v))
            v = parent[v]
        push = min(cap[u][v] for u, v in path)
        for u, v in path:
            cap[u][v] -= push
            cap[v][u] += push
        total += push


def decompose_lifting(related, mu, nu, tol: float = TOL) -> Optional[list[tuple[Weight, Hashable, Hashable]]]:
    """Triples (p_i, C_i, D_i) with mu = sum p_i C_i and nu = sum p_i D_i, each C_i related to D_i."""
    delta = lift_relation(related, mu, nu, tol)
    return None if delta is None else [(w, a, b) for a, b, w in delta.weights]


def recompose(triples: Iterable[tuple[Weight, Hashable, Hashable]]) -> tuple[dict, dict]:
    left: dict = {}
    right: dict = {}
    for w, a, b in triples:
        left[a] = left.get(a, 0) + w
        right[b] = right.get(b, 0) + w
    return left, right


# --- weak transitions ------------------------------------------------------

class WeakExplosion(RuntimeError):
    pass


class _Weak:
    """Enumerates pure weak derivatives; convex hulls are handled by the caller.

    A derivation that would revisit a configuration already on its own path
    is cut, which keeps the enumeration finite on cyclic systems.
    """

    def __init__(self, defs: T.Definitions, cap: int = 10_000):
        self.defs = defs
        self.cap = cap
        self._trans: dict[Configuration, list] = {}
        self._tau: dict[Configuration, list[Distribution]] = {}

    def trans(self, c: Configuration):
        got = self._trans.get(c)
        if got is None:
            got = self._trans[c] = transitions(c, self.defs, check=False)
        return got

    def tau_closure(self, c: Configuration, path: frozenset = frozenset()) -> list[Distribution]:
        if not path and c in self._tau:
            return self._tau[c]
        out = [Distribution.point(c)]
        for a, mu in self.trans(c):
            if not a.is_tau or any(d in path or d == c for d in mu.support()):
                continue
            for nu in self._mix(mu, lambda d: self.tau_closure(d, path | {c})):
                if nu not in out:
                    out.append(nu)
        if not path:
            self._tau[c] = out
        return out

    def _mix(self, mu: Distribution, f) -> list[Distribution]:
        opts = [f(d) for d in mu.support()]
        count = 1
        for o in opts:
            count *= len(o)
        if count > self.cap:
            raise WeakExplosion(f"more than {self.cap} weak derivatives")
        return [Distribution.mix((p, nu) for (_, p), nu in zip(mu.items(), combo))
                for combo in itertools.product(*opts)]

    def weak(self, c: Configuration, action: Action) -> list[Distribution]:
        """All pure nu with c ==action-hat==> nu."""
        if action.is_tau:
            return self.tau_closure(c)
        out: list[Distribution] = []

        def step(d: Configuration) -> list[Distribution]:
            res = []
            for a, mu in self.trans(d):
                if a == action:
                    for nu in self._mix(mu, self.tau_closure):
                        if nu not in res:
                            res.append(nu)
            return res

        for pre in self.tau_closure(c):
            if any(not step(d) for d in pre.support()):
                continue
            for nu in self._mix(pre, step):
                if nu not in out:
                    out.append(nu)
        return out

    def s_transition(self, mu: Distribution, actions: Sequence[Action]) -> list[Distribution]:
        current = self._mix(mu, self.tau_closure)
        for a in (x for x in actions if not x.is_tau):
            nxt: list[Distribution] = []
            for d in current:
                for nu in self._mix(d, lambda c: self.weak(c, a)):
                    if nu not in nxt:
                        nxt.append(nu)
            current = nxt
        return current


def weak_s_transition(mu: Distribution, actions: Sequence[Action], defs: T.Definitions,
                      cap: int = 10_000) -> list[Distribution]:
    """Pure weak derivatives of ``mu`` along ``actions`` with tau deleted.

    Every nu with ``mu ==s==> nu`` is a convex combination of the returned
    distributions.
    """
    return _Weak(defs, cap).s_transition(mu, actions)


def lift_into_hull(related, mu: Distribution, candidates: Sequence[Distribution],
                   tol: float = TOL) -> Optional[Distribution]:
    """Some convex combination nu of ``candidates`` with mu lifted to nu, or None."""
    for nu in candidates:
        if lift_relation(related, mu, nu, tol) is not None:
            return nu
    if len(candidates) < 2:
        return None
    from scipy.optimize import linprog

    left = mu.support()
    right: list[Configuration] = []
    for nu in candidates:
        for d in nu.support():
            if d not in right:
                right.append(d)
    pairs = [(i, j) for i, a in enumerate(left) for j, b in enumerate(right) if related(a, b)]
    k = len(candidates)
    nvar = k + len(pairs)
    rows, rhs = [], []
    rows.append([1.0] * k + [0.0] * len(pairs))
    rhs.append(1.0)
    for i, a in enumerate(left):
        rows.append([0.0] * k + [1.0 if p[0] == i else 0.0 for p in pairs])
        rhs.append(mu[a])
    for j, b in enumerate(right):
        rows.append([-nu[b] for nu in candidates] + [1.0 if p[1] == j else 0.0 for p in pairs])
        rhs.append(0.0)
    res = linprog(np.zeros(nvar), A_eq=np.array(rows), b_eq=np.array(rhs), bounds=[(0, None)] * nvar,
                  method="highs")
    if res.status != 0:
        return None
    lam = res.x[:k]
    return Distribution.mix((float(w), nu) for w, nu in zip(lam, candidates) if w > tol)


# --- open bisimulation -----------------------------------------------------

@dataclass(frozen=True)
class EnvOp:
    """A super-operator applied by the environment to qubits the processes do not own."""

    op: Optional[SuperOperator]
    qubits: tuple[str, ...]

    @property
    def label(self) -> str:
        if not self.qubits:
            return "identity"
        return f"{self.op.name or 'E'}[{', '.join(self.qubits)}]"


IDENTITY = EnvOp(None, ())


def _apply_env(c: Configuration, env: EnvOp) -> Configuration:
    if not env.qubits:
        return c
    return Configuration(c.process, apply_super(c.state, env.op, env.qubits))


@dataclass(frozen=True)
class TestBasis:
    """Finite stand-ins for the universally quantified contexts and environments."""

    __test__ = False  # not a pytest class

    contexts: tuple[tuple[str, T.Process], ...] = (("nil", T.Nil()),)
    env_ops: tuple[EnvOp, ...] = ()

    def environments(self) -> list[EnvOp]:
        return [IDENTITY] + [e for e in self.env_ops if e.qubits]


@dataclass
class OpenBisimResult:
    verified: bool
    pair: Optional[tuple[Configuration, Configuration]] = None
    env: Optional[EnvOp] = None
    action: Optional[Action] = None
    target: Optional[Distribution] = None
    reason: str = ""

    def __bool__(self):
        return self.verified

    def describe(self) -> str:
        if self.verified:
            return "verified (relative to the environment basis)"
        lines = [f"counterexample: {self.reason}"]
        if self.pair:
            lines.append(f"  pair: {self.pair[0]}  vs  {self.pair[1]}")
        if self.env:
            lines.append(f"  environment: {self.env.label}")
        if self.action:
            lines.append(f"  move: --{self.action}--> {self.target}")
        return "\n".join(lines)


class _Relation:
    def __init__(self, pairs: Iterable[tuple[Configuration, Configuration]]):
        self.pairs: list[tuple[Configuration, Configuration]] = []
        self._by: dict[tuple, list[tuple[Configuration, Configuration]]] = {}
        for a, b in pairs:
            self.add(a, b)

    def add(self, a, b):
        if not self(a, b):
            self.pairs.append((a, b))
            self._by.setdefault((a.process, b.process), []).append((a, b))

    def __call__(self, a: Configuration, b: Configuration) -> bool:
        return any(x == a and y == b for x, y in self._by.get((a.process, b.process), ()))

    def inverse(self) -> "_Relation":
        return _Relation((b, a) for a, b in self.pairs)


def static_match(a: Configuration, b: Configuration, tol: float = TOL) -> Optional[str]:
    """Why ``a`` and ``b`` cannot be related at all, or None."""
    if a.state.register != b.state.register:
        return "configurations use different registers"
    qa, qb = T.qv(a.process), T.qv(b.process)
    if qa != qb:
        return f"quantum variables differ: {sorted(qa)} vs {sorted(qb)}"
    ra, rb = partial_trace(a.state, qa), partial_trace(b.state, qb)
    if not np.allclose(ra, rb, atol=tol, rtol=0):
        return "environment states differ after tracing out the owned qubits"
    return None


def _check_pair(a, b, rel: _Relation, weak: _Weak, envs, tol) -> Optional[OpenBisimResult]:
    why = static_match(a, b, tol)
    if why:
        return OpenBisimResult(False, (a, b), reason=why)
    owned = T.qv(a.process)
    for env in envs:
        if set(env.qubits) & owned:
            continue
        ea, eb = _apply_env(a, env), _apply_env(b, env)
        for x, y, r, side in ((ea, eb, rel, "left"), (eb, ea, rel.inverse(), "right")):
            for act, mu in weak.trans(x):
                if lift_into_hull(r, mu, weak.weak(y, act), tol) is None:
                    return OpenBisimResult(False, (a, b), env, act, mu,
                                           f"a move of the {side} configuration has no weak match")
    return None


def verify_open_bisim(pairs: Iterable[tuple[Configuration, Configuration]], defs: T.Definitions,
                      basis: TestBasis = TestBasis(), tol: float = TOL) -> OpenBisimResult:
    """Check that ``pairs`` is an open bisimulation for the environments in ``basis``."""
    rel = _Relation(pairs)
    weak = _Weak(defs)
    envs = basis.environments()
    for a, b in rel.pairs:
        bad = _check_pair(a, b, rel, weak, envs, tol)
        if bad is not None:
            return bad
    return OpenBisimResult(True)


def reachable_universe(roots: Sequence[Configuration], defs: T.Definitions, envs: Sequence[EnvOp],
                       max_nodes: int = 2000) -> list[Configuration]:
    seen: list[Configuration] = []
    index: set = set()
    queue = deque(roots)
    weak = _Weak(defs)
    while queue:
        c = queue.popleft()
        if c in index:
            continue
        if len(seen) >= max_nodes:
            raise StateSpaceExceeded(f"more than {max_nodes} configurations under environment moves")
        seen.append(c)
        index.add(c)
        owned = T.qv(c.process)
        for env in envs:
            if set(env.qubits) & owned:
                continue
            e = _apply_env(c, env)
            queue.append(e)
            for _, mu in weak.trans(e):
                queue.extend(mu.support())
    return seen


def largest_open_bisim(c1: Configuration, c2: Configuration, defs: T.Definitions,
                       basis: TestBasis = TestBasis(), tol: float = TOL,
                       max_nodes: int = 2000) -> list[tuple[Configuration, Configuration]]:
    """Greatest open bisimulation over everything reachable from c1 and c2."""
    envs = basis.environments()
    universe = reachable_universe([c1, c2], defs, envs, max_nodes)
    rel = _Relation((a, b) for a in universe for b in universe if static_match(a, b, tol) is None)
    weak = _Weak(defs)
    changed = True
    while changed:
        changed = False
        keep = [(a, b) for a, b in rel.pairs if _check_pair(a, b, rel, weak, envs, tol) is None]
        if len(keep) != len(rel.pairs):
            rel = _Relation(keep)
            changed = True
    return rel.pairs


def open_bisimilar(c1: Configuration, c2: Configuration, defs: T.Definitions,
                   basis: TestBasis = TestBasis(), tol: float = TOL) -> OpenBisimResult:
    why = static_match(c1, c2, tol)
    if why:
        return OpenBisimResult(False, (c1, c2), reason=why)
    rel = _Relation(largest_open_bisim(c1, c2, defs, basis, tol))
    if rel(c1, c2):
        return OpenBisimResult(True)
    bad = _check_pair(c1, c2, rel, _Weak(defs), basis.environments(), tol)
    return bad or OpenBisimResult(False, (c1, c2), reason="pair is not in the largest open bisimulation")


# --- observational equivalence --------------------------------------------

@dataclass
class Witness:
    """A resolver on one side whose observations the other side cannot reproduce."""

    context: str
    side: str  # "left" or "right"
    resolver: Resolver
    channels: tuple[str, ...]
    vector: Vector
    channel: Optional[str]
    probability: Optional[float]
    other_vectors: list[Vector] = field(default_factory=list)

    def replay(self) -> Optional[float]:
        return None if self.channel is None else observe(self.resolver, self.channel)

    def table(self) -> str:
        return format_witness(self.resolver, {"context": self.context, "side": self.side})


@dataclass
class EquivVerdict:
    result: str
    mode: str
    reason: str = ""
    witness: Optional[Witness] = None
    table: list[dict] = field(default_factory=list)
    channels: tuple[str, ...] = ()

    @property
    def refuted(self) -> bool:
        return self.result == REFUTED

    def to_json(self) -> dict:
        w = self.witness
        return {
            "format": "qccs-verdict/1",
            "result": self.result,
            "mode": self.mode,
            "reason": self.reason,
            "channels": list(self.channels),
            "witness": None if w is None else {
                "context": w.context, "side": w.side, "channel": w.channel, "probability": w.probability,
                "vector": None if w.vector is None else list(w.vector),
                "other_vectors": [None if v is None else list(v) for v in w.other_vectors],
                "table": w.table(),
            },
            "table": self.table,
        }

    def to_text(self) -> str:
        lines = [f"result: {self.result}", f"mode: {self.mode}"]
        if self.reason:
            lines.append(f"reason: {self.reason}")
        for row in self.table:
            got = format_vector(self.channels, _vec(row["vector"]))
            match = "unmatched" if row["matched"] is False else \
                "vacuous" if row["matched"] is None else format_vector(self.channels, _vec(row["matched"]))
            lines.append(f"  [{row['context']}] {row['side']}: {got}  ->  {match}")
        if self.witness:
            w = self.witness
            lines.append(f"witness ({w.side} side, context {w.context}): {format_vector(w.channels, w.vector)}")
            if w.channel is not None:
                lines.append(f"  channel {w.channel} with probability {fmt_num(round(w.probability, 12))} "
                             f"is not reached by the other side")
            lines.append("  other side achieves: " +
                         "; ".join(format_vector(w.channels, v) for v in w.other_vectors))
            lines.append(w.table().rstrip("\n"))
        return "\n".join(lines) + "\n"


def _vec(v):
    return None if v is None else tuple(v)


def _with_context(c: Configuration, r: T.Process) -> Configuration:
    return c if isinstance(r, T.Nil) else Configuration(T.Par(c.process, r), c.state)


def check_context(r: T.Process, c: Configuration, defs: T.Definitions) -> Optional[str]:
    if T.fv(r):
        return f"context has free variables {sorted(T.fv(r))}"
    v = T.check_legal(r, defs)
    if v is not None:
        return f"context is not legal: {v}"
    if T.qv(r) & T.qv(c.process):
        return "context shares quantum variables with the process under test"
    if T.qv(r) - set(c.state.register):
        return "context uses qubits outside the register"
    return None


def check_obs_equiv(c1: Configuration, c2: Configuration, defs: T.Definitions,
                    basis: TestBasis = TestBasis(), mode: str = "schedulers",
                    cap: int = DEFAULT_CAP, tol: float = TOL, max_nodes: int = 10_000) -> EquivVerdict:
    """Compare achievable observation vectors in every context of ``basis``.

    For each resolver on one side some single resolver on the other side must
    give the same probability on every classical channel.  A resolver whose
    tau steps diverge makes no observation and needs no match.
    """
    channels = tuple(defs.classical_channels())
    verdict = EquivVerdict(EQUIVALENT, mode, channels=channels)
    why = static_match(c1, c2, tol)
    if why:
        verdict.result, verdict.reason = REFUTED, why
        return verdict
    for name, r in basis.contexts:
        for c in (c1, c2):
            bad = check_context(r, c, defs)
            if bad:
                raise SemanticsError(f"context {name}: {bad}")
        try:
            g1 = build_plts(_with_context(c1, r), defs, max_nodes)
            g2 = build_plts(_with_context(c2, r), defs, max_nodes)
            a1 = achievable_observations(g1, mode, channels, cap)
            a2 = achievable_observations(g2, mode, channels, cap)
        except (EnumerationCapExceeded, StateSpaceExceeded) as exc:
            verdict.result, verdict.reason = INCONCLUSIVE, f"context {name}: {exc}"
            return verdict
        for side, mine, other in (("left", a1, a2), ("right", a2, a1)):
            for a in mine:
                if a.vector is None:
                    verdict.table.append({"context": name, "side": side, "vector": None, "matched": None})
                    continue
                hit = next((b for b in other if vectors_match(a.vector, b.vector, tol)), None)
                verdict.table.append({"context": name, "side": side, "vector": list(a.vector),
                                      "matched": False if hit is None else list(hit.vector)})
                if hit is None and verdict.witness is None:
                    verdict.result = REFUTED
                    verdict.reason = f"context {name}: a {side}-side resolver has no matching resolver"
                    verdict.witness = _witness(name, side, a, other, channels, tol)
    return verdict


def _witness(context: str, side: str, a: Achievable, other: list[Achievable], channels, tol) -> Witness:
    others = [b.vector for b in other]
    chan, prob = None, None
    for k, c in enumerate(channels):
        if not any(v is not None and abs(v[k] - a.vector[k]) <= tol for v in others):
            chan, prob = c, a.vector[k]
            break
    return Witness(context, side, a.witness, tuple(channels), a.vector, chan, prob, others)
