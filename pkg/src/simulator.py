"""Density-matrix execution with per-CNOT noise, shot sampling and readout calibration."""

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .channels import Channel, DepolarizingChannel, QuasiLocalChannel, channel_map
from .circuit import Circuit, CouplingMap, Gate, basis_change_matrix, gate_matrix, x
from .errors import SimulationError
from .linalg import DensityMatrix, check_density_matrix, conjugate, reduce_matrix
from .readout import ReadoutModel, full_confusion

logger = logging.getLogger(__name__)

CALIBRATION_MODES = ("full", "per-qubit")

# (index of the CNOT, the CNOT, state after it) -> replacement state
CnotHook = Callable[[int, Gate, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class JunctionNoise:
    """Channel applied after every CNOT on one junction."""
    channel: Channel
    neighbors: tuple[int, ...] = ()
    coherent_angle: float = 0.0  # RZ on each neighbor after the channel

    def targets(self, junction: tuple[int, int]) -> tuple[int, ...]:
        if self.channel.n_qubits == 2:
            return junction
        return junction + self.neighbors


@dataclass(frozen=True)
class NoiseModel:
    n_qubits: int
    junctions: Mapping[tuple[int, int], JunctionNoise] = field(default_factory=dict)
    strict: bool = True
    single_qubit_lambda: float = 0.0
    readout: Optional[ReadoutModel] = None

    def __post_init__(self):
        normalized = {}
        for (a, b), noise in self.junctions.items():
            key = (min(a, b), max(a, b))
            width = noise.channel.n_qubits
            if width not in (2, 2 + len(noise.neighbors)):
                raise SimulationError(
                    f"Channel on junction {key} acts on {width} qubits but the junction has "
                    f"{len(noise.neighbors)} neighbors"
                )
            if set(noise.neighbors) & set(key):
                raise SimulationError(f"Junction {key} lists one of its own qubits as a neighbor")
            normalized[key] = noise
        object.__setattr__(self, "junctions", normalized)
        if not 0 <= self.single_qubit_lambda <= 4 / 3:
            raise SimulationError(f"single_qubit_lambda must be in [0, 4/3], got {self.single_qubit_lambda}")
        if self.readout is not None and self.readout.n_bits != self.n_qubits:
            raise SimulationError(f"Readout model covers {self.readout.n_bits} bits, register has {self.n_qubits}")

    @classmethod
    def noiseless(cls, n_qubits: int, strict: bool = False) -> "NoiseModel":
        return cls(n_qubits, {}, strict=strict)

    @classmethod
    def quasi_local(
        cls,
        coupling: CouplingMap,
        lam_cnot: Mapping[tuple[int, int], float],
        lam_neigh: Optional[Mapping[tuple[int, int], float]] = None,
        lam_glob: float = 0.0,
        coherent_angle: float = 0.0,
        **kwargs,
    ) -> "NoiseModel":
        """One quasi-local channel per junction of ``coupling``, neighbors taken from the map."""
        lam_neigh = lam_neigh or {}
        junctions = {}
        for edge in sorted(coupling.edges):
            neighbors = coupling.junction_neighbors(*edge)
            channel = QuasiLocalChannel(
                lam_cnot=lam_cnot.get(edge, 0.0),
                lam_neigh=lam_neigh.get(edge, 0.0),
                lam_glob=lam_glob,
                n_neighbors=len(neighbors),
            )
            junctions[edge] = JunctionNoise(channel, neighbors, coherent_angle)
        return cls(coupling.n_qubits, junctions, **kwargs)

    @property
    def coupling(self) -> CouplingMap:
        return CouplingMap(self.n_qubits, frozenset(self.junctions))

    def for_junction(self, a: int, b: int) -> Optional[JunctionNoise]:
        key = (min(a, b), max(a, b))
        noise = self.junctions.get(key)
        if noise is None and self.strict:
            raise SimulationError(f"No channel assigned to junction {key}")
        return noise


def _apply_junction_noise(matrix: np.ndarray, gate: Gate, nm: NoiseModel) -> np.ndarray:
    noise = nm.for_junction(*gate.qubits)
    if noise is None:
        return matrix
    key = (min(gate.qubits), max(gate.qubits))
    matrix = channel_map(noise.channel, matrix, noise.targets(key), nm.n_qubits)
    if noise.coherent_angle:
        phase = np.exp(0.5j * noise.coherent_angle)
        rotation = np.diag([np.conj(phase), phase])
        for qubit in noise.neighbors:
            matrix = conjugate(matrix, rotation, [qubit], nm.n_qubits)
    return matrix


def run_gates(
    matrix: np.ndarray,
    gates: Sequence[Gate],
    nm: NoiseModel,
    after_cnot: Optional[CnotHook] = None,
    first_cnot_index: int = 0,
) -> np.ndarray:
    """Evolve a raw 2^n matrix through ``gates`` with noise attached after each CNOT."""
    n = nm.n_qubits
    single_qubit_noise = DepolarizingChannel(1, nm.single_qubit_lambda) if nm.single_qubit_lambda else None
    cnot_index = first_cnot_index
    for gate in gates:
        if gate.kind == "BARRIER":
            continue
        matrix = conjugate(matrix, gate_matrix(gate), gate.qubits, n)
        if gate.kind == "CNOT":
            matrix = _apply_junction_noise(matrix, gate, nm)
            if after_cnot is not None:
                matrix = after_cnot(cnot_index, gate, matrix)
            cnot_index += 1
        elif single_qubit_noise is not None:
            matrix = channel_map(single_qubit_noise, matrix, gate.qubits, n)
    return matrix


def simulate(
    c: Circuit,
    nm: NoiseModel,
    initial: Optional[DensityMatrix] = None,
    after_cnot: Optional[CnotHook] = None,
) -> DensityMatrix:
    """Final state of ``c`` under ``nm``, starting from |0…0⟩ unless ``initial`` is given.

    Measurement bases are not applied here; see measurement_probabilities.
    """
    if c.n_qubits != nm.n_qubits:
        raise SimulationError(f"Circuit has {c.n_qubits} qubits, noise model {nm.n_qubits}")
    rho = initial if initial is not None else DensityMatrix.zero_state(c.n_qubits)
    if rho.n_qubits != c.n_qubits:
        raise SimulationError(f"Initial state has {rho.n_qubits} qubits, circuit {c.n_qubits}")
    matrix = run_gates(rho.matrix, c.gates, nm, after_cnot)
    check_density_matrix(matrix)
    return DensityMatrix(c.n_qubits, matrix, validate=False)


def measurement_probabilities(
    rho: DensityMatrix,
    bases: Sequence[Optional[str]],
    confusion: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Outcome distribution over the measured qubits (those with a basis), bit k = k-th measured qubit."""
    if len(bases) != rho.n_qubits:
        raise SimulationError(f"{len(bases)} bases given for {rho.n_qubits} qubits")
    measured = [q for q, b in enumerate(bases) if b is not None]
    matrix = rho.matrix
    for qubit in measured:
        if bases[qubit] != "Z":
            matrix = conjugate(matrix, basis_change_matrix(bases[qubit]), [qubit], rho.n_qubits)
    reduced = reduce_matrix(matrix, measured, rho.n_qubits)
    probs = np.clip(np.real(np.diag(reduced)), 0.0, None)
    probs /= probs.sum()
    if confusion is not None:
        if confusion.shape != (probs.size, probs.size):
            raise SimulationError(f"Confusion {confusion.shape} does not match {len(measured)} measured qubits")
        probs = confusion @ probs
    return probs


def bitstring(index: int, n_bits: int) -> str:
    """Character k is bit k (the k-th measured qubit)."""
    return "".join(str((index >> k) & 1) for k in range(n_bits))


def bitstring_index(bits: str) -> int:
    return sum(int(b) << k for k, b in enumerate(bits))


@dataclass(frozen=True)
class Counts:
    shots: int
    histogram: Mapping[str, int]
    n_bits: int

    def __post_init__(self):
        if self.n_bits < 1:
            raise SimulationError(f"Counts need at least one bit, got {self.n_bits}")
        total = sum(self.histogram.values())
        if total != self.shots:
            raise SimulationError(f"Histogram totals {total}, expected {self.shots} shots")
        for key in self.histogram:
            if len(key) != self.n_bits or set(key) - {"0", "1"}:
                raise SimulationError(f"Invalid bitstring {key!r} for {self.n_bits} bits")

    @classmethod
    def from_vector(cls, counts: np.ndarray) -> "Counts":
        n_bits = int(len(counts)).bit_length() - 1
        histogram = {bitstring(i, n_bits): int(c) for i, c in enumerate(counts) if c}
        return cls(int(np.sum(counts)), histogram, n_bits)

    def to_vector(self) -> np.ndarray:
        vector = np.zeros(2 ** self.n_bits, dtype=np.int64)
        for bits, count in self.histogram.items():
            vector[bitstring_index(bits)] = count
        return vector

    def frequencies(self) -> np.ndarray:
        return self.to_vector() / self.shots

    def to_json(self) -> str:
        return json.dumps({
            "shots": self.shots,
            "n_bits": self.n_bits,
            "histogram": dict(sorted(self.histogram.items())),
        })

    @classmethod
    def from_json(cls, text: str) -> "Counts":
        data = json.loads(text)
        histogram = {str(k): int(v) for k, v in data["histogram"].items()}
        if "n_bits" in data:
            n_bits = int(data["n_bits"])
        elif histogram:
            n_bits = len(next(iter(histogram)))
        else:
            raise SimulationError("Empty histogram without n_bits; register width unknown")
        return cls(int(data["shots"]), histogram, n_bits)


def sample_counts(
    rho: DensityMatrix,
    bases: Sequence[Optional[str]],
    shots: int,
    confusion: Optional[np.ndarray] = None,
    rng: np.random.Generator | int | None = None,
) -> Counts:
    """Rotate into ``bases``, push through the readout confusion and draw multinomial shots."""
    if shots < 1:
        raise SimulationError(f"shots must be positive, got {shots}")
    rng = np.random.default_rng(rng)
    probs = measurement_probabilities(rho, bases, confusion)
    probs = np.clip(probs, 0.0, None)
    counts = rng.multinomial(shots, probs / probs.sum())
    return Counts.from_vector(counts)


def expectation_from_probabilities(probs: np.ndarray, bits: Sequence[int]) -> float:
    """Σ_outcomes p·Π(−1)^bit over the selected outcome bits."""
    indices = np.arange(len(probs))
    parity = np.zeros(len(probs), dtype=np.int64)
    for b in bits:
        parity ^= (indices >> b) & 1
    return float(np.dot(probs, 1 - 2 * parity))


def expectation_from_counts(counts: Counts, bits: Sequence[int]) -> float:
    if any(not 0 <= b < counts.n_bits for b in bits):
        raise SimulationError(f"Observable bits {list(bits)} outside {counts.n_bits} measured qubits")
    return expectation_from_probabilities(counts.frequencies(), bits)


def all_observables(n_bits: int) -> list[tuple[int, ...]]:
    """Every non-empty subset of the measured bits, singles first."""
    return [s for size in range(1, n_bits + 1) for s in itertools.combinations(range(n_bits), size)]


def observable_label(basis: str, qubits: Sequence[int]) -> str:
    """'X0Y1'-style label for a product observable in a per-qubit basis."""
    return "".join(f"{basis[q]}{q}" for q in qubits)


def _prep_circuit(bits: str) -> Circuit:
    return Circuit(len(bits), tuple(x(q) for q, b in enumerate(bits) if b == "1"), ("Z",) * len(bits))


def calibration_confusion(
    readout: ReadoutModel,
    shots: int,
    rng: np.random.Generator | int | None = None,
    mode: str = "full",
) -> np.ndarray:
    """Estimate the confusion matrix by preparing basis states and measuring them.

    ``full`` runs one circuit per bitstring (2^m); ``per-qubit`` runs two per
    qubit (2m) and returns the tensor product of the 2×2 estimates.
    """
    rng = np.random.default_rng(rng)
    m = readout.n_bits
    nm = NoiseModel.noiseless(m)
    if mode == "full":
        estimate = np.zeros((2 ** m, 2 ** m))
        for column in range(2 ** m):
            prep = _prep_circuit(bitstring(column, m))
            counts = sample_counts(simulate(prep, nm), prep.measure_basis, shots, readout.matrix, rng)
            estimate[:, column] = counts.frequencies()
        logger.debug("Calibrated full %dx%d confusion matrix", 2 ** m, 2 ** m)
        return estimate
    if mode == "per-qubit":
        factors = []
        for qubit in range(m):
            factor = np.zeros((2, 2))
            for prepared in (0, 1):
                prep = _prep_circuit(bitstring(prepared << qubit, m))
                counts = sample_counts(simulate(prep, nm), prep.measure_basis, shots, readout.matrix, rng)
                flipped = (counts.to_vector()[(np.arange(2 ** m) >> qubit) & 1 == 1]).sum() / shots
                factor[:, prepared] = (1 - flipped, flipped)
            factors.append(factor)
        logger.debug("Calibrated %d per-qubit readout factors", m)
        return full_confusion(factors)
    raise SimulationError(f"Unknown calibration mode {mode!r}; expected one of {CALIBRATION_MODES}")
