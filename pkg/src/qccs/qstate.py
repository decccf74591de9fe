"""Dense density-matrix algebra over a finite, named qubit register.

Qubit ``register[0]`` is the most significant tensor factor.  All operators
are lifted to the full register by axis permutation, so a k-qubit operator
can act on any ordered selection of k register qubits.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

TOL = 1e-9
PRUNE = 1e-12
MAX_QUBITS = 8

# Exact density matrices for the named single-qubit presets.
PRESETS: dict[str, np.ndarray] = {
    "0": np.array([[1, 0], [0, 0]], dtype=complex),
    "1": np.array([[0, 0], [0, 1]], dtype=complex),
    "+": np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex),
    "-": np.array([[0.5, -0.5], [-0.5, 0.5]], dtype=complex),
}


class QStateError(ValueError):
    """Raised for malformed states, operators, or qubit selections."""


_trackers: list[list["QState"]] = []


@contextlib.contextmanager
def track_states() -> Iterator[list["QState"]]:
    """Collect every QState constructed inside the ``with`` block."""
    seen: list[QState] = []
    _trackers.append(seen)
    try:
        yield seen
    finally:
        _trackers.remove(seen)


def _as_matrix(m) -> np.ndarray:
    a = np.array(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise QStateError(f"expected a square matrix, got shape {a.shape}")
    k = a.shape[0].bit_length() - 1
    if a.shape[0] != 2**k:
        raise QStateError(f"matrix dimension {a.shape[0]} is not a power of two")
    return a


def _arity(m: np.ndarray) -> int:
    return m.shape[0].bit_length() - 1


def state_problems(matrix: np.ndarray, tol: float = TOL) -> list[str]:
    """Return the density-operator invariants that ``matrix`` violates."""
    problems = []
    if np.max(np.abs(matrix - matrix.conj().T), initial=0.0) > tol:
        problems.append("not Hermitian")
    if abs(np.trace(matrix) - 1) > tol:
        problems.append(f"trace {np.trace(matrix).real:.12g} != 1")
    herm = (matrix + matrix.conj().T) / 2
    if np.linalg.eigvalsh(herm).min() < -tol:
        problems.append("not positive semidefinite")
    return problems


@dataclass(frozen=True, eq=False)
class QState:
    """A density operator over an ordered register of qubit names.

    Equality is entrywise within ``TOL``; the hash only covers the register,
    so approximately-equal states collide as required for dict lookup.
    """

    register: tuple[str, ...]
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        reg = tuple(self.register)
        if len(set(reg)) != len(reg):
            raise QStateError(f"duplicate qubit names in register {reg}")
        if len(reg) > MAX_QUBITS:
            raise QStateError(f"register of {len(reg)} qubits exceeds MAX_QUBITS={MAX_QUBITS}")
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (2 ** len(reg), 2 ** len(reg)):
            raise QStateError(f"matrix shape {m.shape} does not fit a {len(reg)}-qubit register")
        problems = state_problems(m)
        if problems:
            raise QStateError("invalid density operator: " + ", ".join(problems))
        m.setflags(write=False)
        object.__setattr__(self, "register", reg)
        object.__setattr__(self, "matrix", m)
        for seen in _trackers:
            seen.append(self)

    @classmethod
    def product(cls, register: Sequence[str], presets: dict[str, str] | None = None) -> "QState":
        """Product state; qubits missing from ``presets`` default to ``|0>``."""
        presets = presets or {}
        unknown = set(presets) - set(register)
        if unknown:
            raise QStateError(f"unknown qubits {sorted(unknown)}")
        m = np.ones((1, 1), dtype=complex)
        for q in register:
            label = presets.get(q, "0")
            if label not in PRESETS:
                raise QStateError(f"unknown preset |{label}>")
            m = np.kron(m, PRESETS[label])
        return cls(tuple(register), m)

    @property
    def n(self) -> int:
        return len(self.register)

    def index(self, qubits: Iterable[str]) -> list[int]:
        idx = []
        for q in qubits:
            if q not in self.register:
                raise QStateError(f"unknown qubit {q!r}")
            idx.append(self.register.index(q))
        if len(set(idx)) != len(idx):
            raise QStateError(f"repeated qubit in {list(qubits)}")
        return idx

    def is_valid(self, tol: float = TOL) -> bool:
        return not state_problems(self.matrix, tol)

    def __eq__(self, other):
        if not isinstance(other, QState):
            return NotImplemented
        return state_eq(self, other)

    def __hash__(self):
        return hash(self.register)

    def describe(self) -> str:
        if self.n == 0:
            return "[]"
        labels = {}
        for q in self.register:
            red = partial_trace(self, [r for r in self.register if r != q])
            name = next((k for k, pm in PRESETS.items() if np.max(np.abs(red - pm)) <= TOL), None)
            if name is None:
                break
            labels[q] = name
        else:
            if state_eq(QState.product(self.register, labels), self):
                return ", ".join(f"{q}=|{v}>" for q, v in labels.items())
        d = np.diag(self.matrix).real
        off = self.matrix - np.diag(np.diag(self.matrix))
        if np.max(np.abs(off), initial=0.0) <= TOL:
            return "diag(" + ", ".join(_fmt(x) for x in d) + ")"
        return "matrix" + format_matrix(self.matrix)


@dataclass(frozen=True, eq=False)
class SuperOperator:
    """A trace-preserving super-operator given by its Kraus operators."""

    kraus: tuple[np.ndarray, ...]
    name: str = ""

    def __post_init__(self):
        ks = tuple(_as_matrix(k) for k in self.kraus)
        if not ks:
            raise QStateError("super-operator needs at least one Kraus operator")
        if len({k.shape for k in ks}) != 1:
            raise QStateError("Kraus operators have mismatched dimensions")
        total = sum(k.conj().T @ k for k in ks)
        if np.max(np.abs(total - np.eye(ks[0].shape[0]))) > TOL:
            raise QStateError(f"Kraus family {self.name!r} is not trace preserving")
        for k in ks:
            k.setflags(write=False)
        object.__setattr__(self, "kraus", ks)

    @property
    def arity(self) -> int:
        return _arity(self.kraus[0])

    @classmethod
    def identity(cls, arity: int = 1) -> "SuperOperator":
        return cls((np.eye(2**arity, dtype=complex),), name="I")

    def then(self, other: "SuperOperator") -> "SuperOperator":
        """The channel applying ``self`` first and ``other`` second."""
        if other.arity != self.arity:
            raise QStateError("cannot compose super-operators of different arity")
        return SuperOperator(tuple(b @ a for a in self.kraus for b in other.kraus),
                             name=f"{other.name}.{self.name}")

    def __eq__(self, other):
        if not isinstance(other, SuperOperator):
            return NotImplemented
        return self.arity == other.arity and np.allclose(self.choi(), other.choi(), atol=TOL)

    def __hash__(self):
        return hash(self.arity)

    def choi(self) -> np.ndarray:
        d = 2**self.arity
        return sum(np.kron(k, np.eye(d)) @ _max_entangled(d) @ np.kron(k, np.eye(d)).conj().T
                   for k in self.kraus)


def _max_entangled(d: int) -> np.ndarray:
    v = np.zeros(d * d, dtype=complex)
    for i in range(d):
        v[i * d + i] = 1
    return np.outer(v, v.conj())


@dataclass(frozen=True, eq=False)
class Measurement:
    """A non-degenerate projective measurement: (outcome, projector) branches."""

    branches: tuple[tuple[float, np.ndarray], ...]
    name: str = ""

    def __post_init__(self):
        bs = tuple((float(v), _as_matrix(p)) for v, p in self.branches)
        if not bs:
            raise QStateError("measurement needs at least one branch")
        if len({p.shape for _, p in bs}) != 1:
            raise QStateError("projectors have mismatched dimensions")
        values = [v for v, _ in bs]
        if len(set(values)) != len(values):
            raise QStateError("measurement outcome values must be distinct")
        dim = bs[0][1].shape[0]
        for i, (_, p) in enumerate(bs):
            if np.max(np.abs(p @ p - p)) > TOL or np.max(np.abs(p - p.conj().T)) > TOL:
                raise QStateError(f"branch {i} is not an orthogonal projector")
            if np.max(np.abs(p)) <= TOL:
                raise QStateError(f"branch {i} has a zero projector")
            for _, p2 in bs[i + 1:]:
                if np.max(np.abs(p @ p2)) > TOL:
                    raise QStateError("projectors are not mutually orthogonal")
        if np.max(np.abs(sum(p for _, p in bs) - np.eye(dim))) > TOL:
            raise QStateError("projectors do not sum to the identity")
        for _, p in bs:
            p.setflags(write=False)
        object.__setattr__(self, "branches", bs)

    @property
    def arity(self) -> int:
        return _arity(self.branches[0][1])

    @classmethod
    def computational(cls, arity: int = 1) -> "Measurement":
        d = 2**arity
        return cls(tuple((float(i), np.diag(np.eye(d)[i]).astype(complex)) for i in range(d)), name="M")

    def dephasing(self) -> SuperOperator:
        """The channel obtained by forgetting the outcome."""
        return SuperOperator(tuple(p for _, p in self.branches), name=f"forget({self.name})")


def lift(op: np.ndarray, idx: Sequence[int], n: int) -> np.ndarray:
    """Embed a k-qubit operator acting on register positions ``idx``."""
    k = len(idx)
    if op.shape != (2**k, 2**k):
        raise QStateError(f"operator of dimension {op.shape[0]} cannot act on {k} qubits")
    rest = [i for i in range(n) if i not in idx]
    order = list(idx) + rest
    full = np.kron(op, np.eye(2 ** (n - k), dtype=complex))
    if n == 0:
        return full
    inv = list(np.argsort(order))
    t = full.reshape([2] * (2 * n)).transpose(inv + [n + p for p in inv])
    return t.reshape(2**n, 2**n)


def sandwich(matrix: np.ndarray, ops: Iterable[np.ndarray], idx: Sequence[int], n: int) -> np.ndarray:
    """sum_j L_j matrix L_j^dagger with every L_j lifted to the register."""
    out = np.zeros_like(matrix)
    for k in ops:
        big = lift(k, idx, n)
        out = out + big @ matrix @ big.conj().T
    return out


def _check_arity(rho: QState, arity: int, qubits: Sequence[str]) -> list[int]:
    if len(qubits) != arity:
        raise QStateError(f"operator of arity {arity} applied to {len(qubits)} qubits")
    return rho.index(qubits)


def apply_super(rho: QState, op: SuperOperator, qubits: Sequence[str]) -> QState:
    idx = _check_arity(rho, op.arity, qubits)
    return QState(rho.register, sandwich(rho.matrix, op.kraus, idx, rho.n))


def measure(rho: QState, m: Measurement, qubits: Sequence[str]) -> list[tuple[float, float, QState]]:
    """Born-rule branches ``(outcome, probability, post-state)``, zero branches pruned."""
    idx = _check_arity(rho, m.arity, qubits)
    out = []
    for value, proj in m.branches:
        big = lift(proj, idx, rho.n)
        p = float(np.trace(big @ rho.matrix).real)
        if p > PRUNE:
            out.append((value, p, QState(rho.register, big @ rho.matrix @ big / p)))
    return out


def partial_trace(rho: QState, traced: Iterable[str]) -> np.ndarray:
    """Trace out ``traced``; the result is over the remaining qubits in register order."""
    drop = sorted(set(rho.index(list(traced))), reverse=True)
    n = rho.n
    t = rho.matrix.reshape([2] * (2 * n)) if n else rho.matrix
    for i in drop:
        t = np.trace(t, axis1=i, axis2=i + n)
        n -= 1
    return t.reshape(2**n, 2**n)


def state_eq(a: QState, b: QState, tol: float = TOL) -> bool:
    if a.register != b.register:
        raise QStateError(f"register mismatch {a.register} vs {b.register}")
    return bool(np.max(np.abs(a.matrix - b.matrix), initial=0.0) <= tol)


def _fmt(x: float) -> str:
    r = round(x, 10)
    if r == int(r):
        return str(int(r))
    return f"{r:.10g}"


def format_complex(z: complex) -> str:
    re, im = round(z.real, 10), round(z.imag, 10)
    if im == 0:
        return _fmt(re)
    if re == 0:
        return _fmt(im) + "i"
    return f"{_fmt(re)}{'+' if im > 0 else '-'}{_fmt(abs(im))}i"


def format_matrix(m: np.ndarray) -> str:
    return "[" + ", ".join("[" + ", ".join(format_complex(z) for z in row) + "]" for row in m) + "]"
