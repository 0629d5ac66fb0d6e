"""BCS pairing model: Hamiltonian, mean-field preparation and Trotter circuits.

Level j is qubit j; |1⟩ means the level holds a Cooper pair.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .circuit import (
    Circuit,
    CouplingMap,
    LayoutTracker,
    circuit_unitary,
    cnot,
    decompose_swap,
    rotation_gate,
    rz,
    u,
)
from .errors import CircuitError, GapEquationError, InvariantViolation
from .linalg import (
    DensityMatrix,
    PauliString,
    conjugate,
    expectation_value,
    hermitian_evolve,
    pauli_to_matrix,
)

logger = logging.getLogger(__name__)

MAX_LEVELS = 6
ENERGY_TOL = 1e-9
INTERACTION_FORMS = ("compressed", "standard")


@dataclass(frozen=True)
class BcsParams:
    """Pairing-model parameters and the Trotter discretisation."""
    levels: tuple[float, ...]
    g: float
    dt: float
    n_steps: int = 1

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(e) for e in self.levels))
        if len(self.levels) < 2:
            raise ValueError(f"BCS model needs at least 2 levels, got {len(self.levels)}")
        if self.g < 0:
            raise ValueError(f"Coupling g must be non-negative, got {self.g}")
        if self.dt <= 0:
            raise ValueError(f"Trotter step dt must be positive, got {self.dt}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be non-negative, got {self.n_steps}")

    @property
    def n_qubits(self) -> int:
        return len(self.levels)

    @property
    def times(self) -> list[float]:
        return [k * self.dt for k in range(1, self.n_steps + 1)]


@dataclass(frozen=True)
class MeanFieldState:
    delta: complex
    thetas: tuple[float, ...]
    phi: float


def build_hamiltonian(p: BcsParams) -> np.ndarray:
    """H = -Σ(ε_j - g/2)Z_j - (g/2)Σ_{i<j}(X_iX_j + Y_iY_j)."""
    n = p.n_qubits
    if n > MAX_LEVELS:
        raise ValueError(f"Dense Hamiltonian limited to {MAX_LEVELS} levels, got {n}")
    h = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for j, eps in enumerate(p.levels):
        h -= (eps - p.g / 2) * pauli_to_matrix(PauliString.on_qubits(n, {j: "Z"}))
    for i in range(n):
        for j in range(i + 1, n):
            for label in "XY":
                h -= (p.g / 2) * pauli_to_matrix(PauliString.on_qubits(n, {i: label, j: label}))
    return h


def gap_equation_root(levels: Sequence[float], g: float) -> float:
    """Positive root of 1 = g Σ 1/(2√(ε² + Δ²))."""
    levels = np.asarray(levels, dtype=float)
    if g <= 0:
        raise GapEquationError(f"Gap equation needs g > 0, got {g}")

    def f(delta: float) -> float:
        return g * np.sum(0.5 / np.sqrt(levels ** 2 + delta ** 2)) - 1.0

    lo = 1e-12
    if f(lo) <= 0:
        raise GapEquationError(f"No positive gap for g={g}: coupling too weak for levels {levels.tolist()}")
    hi = g * len(levels)
    while f(hi) > 0:
        hi *= 2
    delta = optimize.bisect(f, lo, hi, xtol=1e-15, maxiter=500)
    logger.debug("Gap equation solved: delta=%.12f residual=%.2e", delta, f(delta))
    return float(delta)


def solve_gap(p: BcsParams) -> float:
    return gap_equation_root(p.levels, p.g)


def mean_field_angles(p: BcsParams, delta: complex) -> MeanFieldState:
    magnitude = abs(delta)
    if magnitude <= 0:
        raise GapEquationError("Mean-field angles need a non-zero gap")
    thetas = []
    for eps in p.levels:
        energy = math.hypot(eps, magnitude)
        # E - ε written without cancellation for large positive ε
        numerator = energy - eps if eps <= 0 else magnitude ** 2 / (energy + eps)
        thetas.append(2 * math.atan(numerator / magnitude))
    phi = -float(np.angle(delta))
    return MeanFieldState(delta=delta, thetas=tuple(thetas), phi=phi)


def prep_circuit(mf: MeanFieldState) -> Circuit:
    """R_y(θ_i) then R_z(φ) on every qubit."""
    gates = []
    for qubit, theta in enumerate(mf.thetas):
        gates.append(rotation_gate("y", theta, qubit))
        gates.append(rz(qubit, mf.phi))
    return Circuit(len(mf.thetas), tuple(gates))


def _hadamard(q: int):
    return u(q, math.pi / 2, 0.0, math.pi)


def _o_y(q: int):
    return u(q, math.pi / 2, math.pi / 2, -math.pi / 2)


def _o_y_dagger(q: int):
    return u(q, math.pi / 2, -math.pi / 2, math.pi / 2)


def interaction_block(
    alpha: float,
    qubit_a: int,
    qubit_b: int,
    n_qubits: Optional[int] = None,
    form: str = "compressed",
    coupling: Optional[CouplingMap] = None,
) -> Circuit:
    """exp(-i(α/2)(XX + YY)) on an adjacent pair.

    ``standard`` conjugates a CNOT-RZ-CNOT ZZ rotation into the XX and YY
    frames (4 CNOTs). ``compressed`` builds exp(-i(α/2)(XX + ZZ)) from one
    CNOT pair and rotates ZZ into YY (2 CNOTs).
    """
    adjacent = coupling.has_edge(qubit_a, qubit_b) if coupling else abs(qubit_a - qubit_b) == 1
    if not adjacent:
        raise CircuitError(f"Interaction block on non-adjacent qubits ({qubit_a}, {qubit_b})")
    n_qubits = n_qubits if n_qubits is not None else max(qubit_a, qubit_b) + 1
    a, b = qubit_a, qubit_b
    if form == "standard":
        gates = [
            _hadamard(a), _hadamard(b), cnot(a, b), rz(b, alpha), cnot(a, b), _hadamard(a), _hadamard(b),
            _o_y(a), _o_y(b), cnot(a, b), rz(b, alpha), cnot(a, b), _o_y_dagger(a), _o_y_dagger(b),
        ]
    elif form == "compressed":
        gates = [
            _o_y(a), _o_y(b), cnot(a, b), rotation_gate("x", alpha, a), rz(b, alpha), cnot(a, b),
            _o_y_dagger(a), _o_y_dagger(b),
        ]
    else:
        raise CircuitError(f"Unknown interaction form {form!r}; expected one of {INTERACTION_FORMS}")
    return Circuit(n_qubits, tuple(gates))


def trotter_step(
    p: BcsParams,
    layout: LayoutTracker,
    form: str = "compressed",
    coupling: Optional[CouplingMap] = None,
) -> tuple[Circuit, LayoutTracker]:
    """One first-order Trotter step on a linear chain, carrying the layout.

    Adjacent logical pairs interact first; remaining pairs are brought
    together by alternating even/odd SWAP layers.
    """
    n = p.n_qubits
    coupling = coupling or CouplingMap.linear(n)
    if coupling.edges != CouplingMap.linear(n).edges:
        raise CircuitError("trotter_step requires a linear coupling map")
    if layout.n_qubits != n:
        raise CircuitError(f"Layout covers {layout.n_qubits} qubits, model has {n}")

    gates = []
    for j, eps in enumerate(p.levels):
        gates.append(rz(layout.physical(j), -p.dt * (2 * eps - p.g)))
    if p.g == 0:
        return Circuit(n, tuple(gates)), layout

    alpha = -p.g * p.dt
    pending = {frozenset((i, j)) for i in range(n) for j in range(i + 1, n)}

    def interact_adjacent(current: LayoutTracker) -> None:
        for phys in range(n - 1):
            pair = frozenset((current.logical(phys), current.logical(phys + 1)))
            if pair in pending:
                gates.extend(interaction_block(alpha, phys, phys + 1, n, form, coupling).gates)
                pending.discard(pair)

    interact_adjacent(layout)
    parity = 0
    layers = 0
    while pending:
        layers += 1
        if layers > n + 1:
            raise CircuitError(f"SWAP schedule failed to cover pairs {sorted(map(sorted, pending))}")
        for phys in range(parity, n - 1, 2):
            gates.extend(decompose_swap(phys, phys + 1))
            layout = layout.swap(phys, phys + 1)
        parity ^= 1
        interact_adjacent(layout)
    return Circuit(n, tuple(gates)), layout


def trotter_circuit(
    p: BcsParams,
    mf: MeanFieldState,
    n_steps: int,
    basis: Optional[str] = None,
    form: str = "compressed",
) -> tuple[Circuit, LayoutTracker]:
    """Prep plus ``n_steps`` Trotter steps; ``basis`` gives one axis per logical qubit."""
    circuit = prep_circuit(mf)
    layout = LayoutTracker.identity(p.n_qubits)
    for _ in range(n_steps):
        step, layout = trotter_step(p, layout, form)
        circuit = circuit.extend(step.gates)
    if basis is not None:
        if len(basis) != p.n_qubits:
            raise CircuitError(f"Basis {basis!r} does not cover {p.n_qubits} qubits")
        physical_basis = [None] * p.n_qubits
        for logical, axis in enumerate(basis):
            physical_basis[layout.physical(logical)] = axis
        circuit = circuit.with_measure_basis(physical_basis)
    return circuit, layout


def initial_state(mf: MeanFieldState) -> DensityMatrix:
    psi = circuit_unitary(prep_circuit(mf))[:, 0]
    return DensityMatrix.from_statevector(psi)


def exact_evolution(p: BcsParams, mf: MeanFieldState, times: Sequence[float]) -> list[DensityMatrix]:
    """ρ(t) = U(t)ρ(0)U(t)† with energy conservation checked."""
    h = build_hamiltonian(p)
    rho0 = initial_state(mf)
    energy0 = expectation_value(rho0.matrix, h)
    n = p.n_qubits
    states = []
    for t in times:
        evolved = conjugate(rho0.matrix, hermitian_evolve(h, t), list(range(n)), n)
        drift = abs(expectation_value(evolved, h) - energy0)
        if drift > ENERGY_TOL:
            raise InvariantViolation(f"Energy drifted by {drift:.3e} at t={t}")
        states.append(DensityMatrix(n, evolved))
    return states
