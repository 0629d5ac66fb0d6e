"""Gate-level circuit IR: native gates, coupling maps, layout tracking and a text format."""

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CircuitError
from .linalg import PauliString, apply_operator

GATE_KINDS = ("RZ", "SX", "X", "U", "CNOT", "BARRIER")
SINGLE_QUBIT_KINDS = ("RZ", "SX", "X", "U")
MEASURE_BASES = ("X", "Y", "Z")
MAX_UNITARY_QUBITS = 6

_PARAM_COUNT = {"RZ": 1, "SX": 0, "X": 0, "U": 3, "CNOT": 0, "BARRIER": 0}


@dataclass(frozen=True)
class Gate:
    """One gate on physical qubits. CNOT qubits are (control, target)."""
    kind: str
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if self.kind not in GATE_KINDS:
            raise CircuitError(f"Unknown gate kind {self.kind!r}")
        if len(self.params) != _PARAM_COUNT[self.kind]:
            raise CircuitError(f"{self.kind} takes {_PARAM_COUNT[self.kind]} parameters, got {len(self.params)}")
        if not all(math.isfinite(p) for p in self.params):
            raise CircuitError(f"{self.kind} has non-finite angle {self.params}")
        if self.kind == "CNOT":
            if len(self.qubits) != 2:
                raise CircuitError("CNOT acts on exactly two qubits")
            if self.qubits[0] == self.qubits[1]:
                raise CircuitError(f"CNOT control equals target ({self.qubits[0]})")
        elif self.kind == "BARRIER":
            if not self.qubits or len(set(self.qubits)) != len(self.qubits):
                raise CircuitError(f"Invalid barrier qubits {self.qubits}")
        elif len(self.qubits) != 1:
            raise CircuitError(f"{self.kind} acts on exactly one qubit")

    @property
    def is_single_qubit(self) -> bool:
        return self.kind in SINGLE_QUBIT_KINDS

    def inverse(self) -> "Gate":
        if self.kind == "RZ":
            return Gate("RZ", self.qubits, (-self.params[0],))
        if self.kind == "U":
            theta, phi, lam = self.params
            return Gate("U", self.qubits, (-theta, -lam, -phi))
        if self.kind == "SX":
            # SX† equals RX(-π/2) up to phase
            return Gate("U", self.qubits, (-math.pi / 2, -math.pi / 2, math.pi / 2))
        return self


def rz(qubit: int, theta: float) -> Gate:
    return Gate("RZ", (qubit,), (theta,))


def sx(qubit: int) -> Gate:
    return Gate("SX", (qubit,))


def x(qubit: int) -> Gate:
    return Gate("X", (qubit,))


def u(qubit: int, theta: float, phi: float, lam: float) -> Gate:
    return Gate("U", (qubit,), (theta, phi, lam))


def cnot(control: int, target: int) -> Gate:
    return Gate("CNOT", (control, target))


def barrier(*qubits: int) -> Gate:
    return Gate("BARRIER", tuple(qubits))


_PAULI_U_PARAMS = {
    "I": (0.0, 0.0, 0.0),
    "X": (math.pi, 0.0, math.pi),
    "Y": (math.pi, math.pi / 2, math.pi / 2),
    "Z": (0.0, 0.0, math.pi),
}


def pauli_gate(label: str, qubit: int) -> Gate:
    """Exact single-qubit Pauli as a U gate (identity included)."""
    return u(qubit, *_PAULI_U_PARAMS[label])


def rotation_gate(axis: str, angle: float, qubit: int) -> Gate:
    """R_axis(angle) = exp(-i·angle/2·σ^axis)."""
    if axis == "x":
        return u(qubit, angle, -math.pi / 2, math.pi / 2)
    if axis == "y":
        return u(qubit, angle, 0.0, 0.0)
    if axis == "z":
        return rz(qubit, angle)
    raise CircuitError(f"Unknown rotation axis {axis!r}")


_CNOT = np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex)
_SX = 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]], dtype=complex)
_XM = np.array([[0, 1], [1, 0]], dtype=complex)


def u_matrix(theta: float, phi: float, lam: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([
        [c, -np.exp(1j * lam) * s],
        [np.exp(1j * phi) * s, np.exp(1j * (phi + lam)) * c],
    ], dtype=complex)


@lru_cache(maxsize=8192)
def gate_matrix(gate: Gate) -> np.ndarray:
    """Local matrix of a gate; for CNOT the control is the low bit."""
    if gate.kind == "RZ":
        theta = gate.params[0]
        m = np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])
    elif gate.kind == "SX":
        m = _SX.copy()
    elif gate.kind == "X":
        m = _XM.copy()
    elif gate.kind == "U":
        m = u_matrix(*gate.params)
    elif gate.kind == "CNOT":
        m = _CNOT.copy()
    else:
        raise CircuitError("BARRIER has no matrix")
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple[Gate, ...] = ()
    measure_basis: tuple[Optional[str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        basis = tuple(self.measure_basis) or (None,) * self.n_qubits
        if len(basis) != self.n_qubits:
            raise CircuitError(f"measure_basis has {len(basis)} entries for {self.n_qubits} qubits")
        for b in basis:
            if b is not None and b not in MEASURE_BASES:
                raise CircuitError(f"Invalid measurement basis {b!r}")
        object.__setattr__(self, "measure_basis", basis)
        for gate in self.gates:
            for q in gate.qubits:
                if not 0 <= q < self.n_qubits:
                    raise CircuitError(f"{gate.kind} on qubit {q} outside a {self.n_qubits}-qubit circuit")

    def __len__(self) -> int:
        return len(self.gates)

    def append(self, *gates: Gate) -> "Circuit":
        return Circuit(self.n_qubits, self.gates + tuple(gates), self.measure_basis)

    def extend(self, gates: Iterable[Gate]) -> "Circuit":
        return self.append(*gates)

    def with_measure_basis(self, basis: Sequence[Optional[str]]) -> "Circuit":
        return Circuit(self.n_qubits, self.gates, tuple(basis))

    def inverse(self) -> "Circuit":
        return Circuit(self.n_qubits, tuple(g.inverse() for g in reversed(self.gates)), self.measure_basis)

    @property
    def measured_qubits(self) -> tuple[int, ...]:
        return tuple(q for q, b in enumerate(self.measure_basis) if b is not None)


@dataclass(frozen=True)
class CouplingMap:
    """Undirected set of junctions on which CNOTs are allowed."""
    n_qubits: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        normalized = set()
        for a, b in self.edges:
            if a == b:
                raise CircuitError(f"Coupling map self-loop on qubit {a}")
            if not (0 <= a < self.n_qubits and 0 <= b < self.n_qubits):
                raise CircuitError(f"Coupling edge ({a}, {b}) outside {self.n_qubits} qubits")
            normalized.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def linear(cls, n_qubits: int) -> "CouplingMap":
        return cls(n_qubits, frozenset((q, q + 1) for q in range(n_qubits - 1)))

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def neighbors(self, qubit: int) -> set[int]:
        return {b if a == qubit else a for a, b in self.edges if qubit in (a, b)}

    def junction_neighbors(self, a: int, b: int) -> tuple[int, ...]:
        """Qubits adjacent to either end of junction (a, b), excluding a and b."""
        return tuple(sorted((self.neighbors(a) | self.neighbors(b)) - {a, b}))


@dataclass(frozen=True)
class LayoutTracker:
    """Logical -> physical qubit permutation."""
    mapping: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "mapping", tuple(self.mapping))
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise CircuitError(f"Layout {self.mapping} is not a permutation")

    @classmethod
    def identity(cls, n_qubits: int) -> "LayoutTracker":
        return cls(tuple(range(n_qubits)))

    @property
    def n_qubits(self) -> int:
        return len(self.mapping)

    def physical(self, logical: int) -> int:
        return self.mapping[logical]

    def logical(self, physical: int) -> int:
        return self.mapping.index(physical)

    def swap(self, a: int, b: int) -> "LayoutTracker":
        """Layout after exchanging the contents of physical qubits a and b."""
        if a == b:
            raise CircuitError("Cannot swap a qubit with itself")
        swapped = {a: b, b: a}
        return LayoutTracker(tuple(swapped.get(p, p) for p in self.mapping))

    def to_physical(self, obs: PauliString) -> PauliString:
        """Move a logical-qubit observable onto the physical qubits holding them."""
        factors = ["I"] * self.n_qubits
        for logical, label in enumerate(obs.factors):
            factors[self.mapping[logical]] = label
        return PauliString("".join(factors), obs.phase)

    def permutation_matrix(self) -> np.ndarray:
        """Unitary moving the bit of logical qubit l onto physical qubit mapping[l]."""
        n = self.n_qubits
        dim = 2 ** n
        perm = np.zeros((dim, dim), dtype=complex)
        for index in range(dim):
            moved = 0
            for logical, phys in enumerate(self.mapping):
                moved |= ((index >> logical) & 1) << phys
            perm[moved, index] = 1.0
        return perm


def validate(c: Circuit, coupling: CouplingMap) -> list[tuple[int, int]]:
    """Every CNOT (control, target) that is not a junction of the map."""
    return [g.qubits for g in c.gates if g.kind == "CNOT" and not coupling.has_edge(*g.qubits)]


def decompose_swap(a: int, b: int) -> list[Gate]:
    if a == b:
        raise CircuitError(f"SWAP needs two distinct qubits, got ({a}, {b})")
    return [cnot(a, b), cnot(b, a), cnot(a, b)]


def strip_single_qubit_gates(c: Circuit) -> Circuit:
    return Circuit(c.n_qubits, tuple(g for g in c.gates if not g.is_single_qubit), c.measure_basis)


def count_cnots(c: Circuit) -> int:
    return sum(1 for g in c.gates if g.kind == "CNOT")


def circuit_unitary(c: Circuit) -> np.ndarray:
    """Product of embedded gate matrices; measurement rotations are not included."""
    if c.n_qubits > MAX_UNITARY_QUBITS:
        raise CircuitError(f"circuit_unitary limited to {MAX_UNITARY_QUBITS} qubits, got {c.n_qubits}")
    unitary = np.eye(2 ** c.n_qubits, dtype=complex)
    for gate in c.gates:
        if gate.kind == "BARRIER":
            continue
        unitary = apply_operator(unitary, gate_matrix(gate), gate.qubits, c.n_qubits)
    return unitary


def basis_rotation_gates(basis: Optional[str], qubit: int) -> list[Gate]:
    """Native gates mapping the ``basis`` axis onto Z."""
    if basis == "X":
        return [rz(qubit, math.pi / 2), sx(qubit), rz(qubit, math.pi / 2)]
    if basis == "Y":
        # S† followed by H; the leading RZ pair cancels
        return [sx(qubit), rz(qubit, math.pi / 2)]
    return []


@lru_cache(maxsize=8)
def basis_change_matrix(basis: Optional[str]) -> np.ndarray:
    m = np.eye(2, dtype=complex)
    for gate in basis_rotation_gates(basis, 0):
        m = gate_matrix(gate) @ m
    m.setflags(write=False)
    return m


def append_basis_rotation(c: Circuit) -> Circuit:
    gates = list(c.gates)
    for qubit, basis in enumerate(c.measure_basis):
        gates.extend(basis_rotation_gates(basis, qubit))
    rotated = tuple("Z" if b is not None else None for b in c.measure_basis)
    return Circuit(c.n_qubits, tuple(gates), rotated)


def lower_to_native(c: Circuit) -> Circuit:
    """Rewrite U gates as RZ·SX·RZ·SX·RZ (equal up to global phase)."""
    gates = []
    for gate in c.gates:
        if gate.kind != "U":
            gates.append(gate)
            continue
        theta, phi, lam = gate.params
        q = gate.qubits[0]
        gates.extend([rz(q, lam), sx(q), rz(q, theta + math.pi), sx(q), rz(q, phi + math.pi)])
    return Circuit(c.n_qubits, tuple(gates), c.measure_basis)


def dumps(c: Circuit) -> str:
    """Serialize to the line-oriented text format."""
    lines = [f"QUBITS {c.n_qubits}"]
    for gate in c.gates:
        parts = [gate.kind] + [f"q{q}" for q in gate.qubits] + [repr(p) for p in gate.params]
        lines.append(" ".join(parts))
    for qubit, basis in enumerate(c.measure_basis):
        if basis is not None:
            lines.append(f"MEASURE q{qubit} {basis}")
    return "\n".join(lines) + "\n"


def _parse_qubit(token: str, lineno: int) -> int:
    if not token.startswith("q") or not token[1:].isdigit():
        raise CircuitError(f"line {lineno}: expected qubit token like 'q0', got {token!r}")
    return int(token[1:])


def loads(text: str) -> Circuit:
    n_qubits: Optional[int] = None
    gates: list[Gate] = []
    measures: dict[int, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *args = line.split()
        try:
            if kind == "QUBITS":
                n_qubits = int(args[0])
            elif kind == "MEASURE":
                measures[_parse_qubit(args[0], lineno)] = args[1]
            elif kind in ("CNOT", "BARRIER"):
                gates.append(Gate(kind, tuple(_parse_qubit(a, lineno) for a in args)))
            elif kind in SINGLE_QUBIT_KINDS:
                gates.append(Gate(kind, (_parse_qubit(args[0], lineno),), tuple(float(a) for a in args[1:])))
            else:
                raise CircuitError(f"unknown instruction {kind!r}")
        except (IndexError, ValueError) as e:
            raise CircuitError(f"line {lineno}: {e}") from e
    if n_qubits is None:
        used = [q for g in gates for q in g.qubits] + list(measures)
        n_qubits = max(used) + 1 if used else 0
    basis = tuple(measures.get(q) for q in range(n_qubits))
    return Circuit(n_qubits, tuple(gates), basis)
