"""Dense linear algebra for small qubit registers.

Qubit 0 is the least-significant bit of a basis-state index, so an operator
acting as op_k on qubit k has the matrix kron(op_{n-1}, ..., op_1, op_0).
Pauli strings store one label per qubit with ``factors[k]`` acting on qubit k.
"""

from dataclasses import InitVar, dataclass
from functools import lru_cache, reduce
from typing import Iterator, Sequence

import numpy as np
from scipy import linalg as sla

from .errors import InvariantViolation

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-9
IMAG_TOL = 1e-8

PAULI_LABELS = "IXYZ"
PAULI_PHASES = (1, -1, 1j, -1j)

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)

PAULI_MATRICES = {"I": _I2, "X": _X, "Y": _Y, "Z": _Z}
for _m in PAULI_MATRICES.values():
    _m.setflags(write=False)

# Single-qubit products a·b = phase·c
_PAULI_PRODUCTS = {
    ("I", "I"): (1, "I"), ("I", "X"): (1, "X"), ("I", "Y"): (1, "Y"), ("I", "Z"): (1, "Z"),
    ("X", "I"): (1, "X"), ("X", "X"): (1, "I"), ("X", "Y"): (1j, "Z"), ("X", "Z"): (-1j, "Y"),
    ("Y", "I"): (1, "Y"), ("Y", "X"): (-1j, "Z"), ("Y", "Y"): (1, "I"), ("Y", "Z"): (1j, "X"),
    ("Z", "I"): (1, "Z"), ("Z", "X"): (1j, "Y"), ("Z", "Y"): (-1j, "X"), ("Z", "Z"): (1, "I"),
}


def _normalize_phase(phase: complex) -> complex:
    for candidate in PAULI_PHASES:
        if abs(phase - candidate) < 1e-12:
            return complex(candidate)
    raise ValueError(f"Pauli phase must be one of ±1, ±i, got {phase}")


@dataclass(frozen=True)
class PauliString:
    """A phased tensor product of single-qubit Paulis."""
    factors: str
    phase: complex = 1

    def __post_init__(self):
        if not self.factors:
            raise ValueError("PauliString needs at least one factor")
        bad = set(self.factors) - set(PAULI_LABELS)
        if bad:
            raise ValueError(f"Invalid Pauli labels {sorted(bad)} in {self.factors!r}")
        object.__setattr__(self, "phase", _normalize_phase(complex(self.phase)))

    @property
    def n_qubits(self) -> int:
        return len(self.factors)

    @property
    def weight(self) -> int:
        return sum(1 for f in self.factors if f != "I")

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(k for k, f in enumerate(self.factors) if f != "I")

    @property
    def index(self) -> int:
        """Position in the base-4 enumeration used by Pauli channels."""
        return sum(PAULI_LABELS.index(f) << (2 * k) for k, f in enumerate(self.factors))

    @classmethod
    def from_index(cls, index: int, n_qubits: int) -> "PauliString":
        return cls("".join(PAULI_LABELS[(index >> (2 * k)) & 3] for k in range(n_qubits)))

    @classmethod
    def on_qubits(cls, n_qubits: int, labels: dict[int, str]) -> "PauliString":
        """Build a string that is identity except on the given qubits."""
        factors = ["I"] * n_qubits
        for qubit, label in labels.items():
            factors[qubit] = label
        return cls("".join(factors))

    def commutes_with(self, other: "PauliString") -> bool:
        anti = sum(1 for a, b in zip(self.factors, other.factors) if "I" not in (a, b) and a != b)
        return anti % 2 == 0

    def __mul__(self, other: "PauliString") -> "PauliString":
        if self.n_qubits != other.n_qubits:
            raise ValueError(f"Cannot multiply {self.n_qubits}- and {other.n_qubits}-qubit Pauli strings")
        phase = self.phase * other.phase
        factors = []
        for a, b in zip(self.factors, other.factors):
            p, c = _PAULI_PRODUCTS[(a, b)]
            phase *= p
            factors.append(c)
        return PauliString("".join(factors), phase)

    def __str__(self) -> str:
        prefix = {1: "+", -1: "-", 1j: "+i", -1j: "-i"}[self.phase]
        return f"{prefix}{self.factors}"


def all_pauli_strings(n_qubits: int) -> Iterator[PauliString]:
    """Yield all 4^n unphased Pauli strings in index order."""
    for index in range(4 ** n_qubits):
        yield PauliString.from_index(index, n_qubits)


def kron(*matrices: np.ndarray) -> np.ndarray:
    """Kronecker product, leftmost factor most significant."""
    return reduce(np.kron, matrices)


@lru_cache(maxsize=4096)
def _unphased_pauli_matrix(factors: str) -> np.ndarray:
    m = kron(*(PAULI_MATRICES[f] for f in reversed(factors)))
    m.setflags(write=False)
    return m


def pauli_to_matrix(p: PauliString) -> np.ndarray:
    base = _unphased_pauli_matrix(p.factors)
    if p.phase == 1:
        return base.copy()
    return p.phase * base


def check_qubits(qubits: Sequence[int], n_qubits: int) -> None:
    if len(set(qubits)) != len(qubits):
        raise ValueError(f"Duplicate qubit index in {list(qubits)}")
    for q in qubits:
        if not 0 <= q < n_qubits:
            raise ValueError(f"Qubit index {q} out of range for {n_qubits} qubits")


def _row_axes(qubits: Sequence[int], n_qubits: int) -> list[int]:
    return [n_qubits - 1 - q for q in reversed(qubits)]


def _apply_left(tensor: np.ndarray, op: np.ndarray, axes: list[int]) -> np.ndarray:
    k = len(axes)
    op_t = op.reshape((2,) * (2 * k))
    out = np.tensordot(op_t, tensor, axes=(list(range(k, 2 * k)), axes))
    return np.moveaxis(out, list(range(k)), axes)


def _check_operator(op: np.ndarray, qubits: Sequence[int], n_qubits: int) -> None:
    check_qubits(qubits, n_qubits)
    dim = 2 ** len(qubits)
    if op.shape != (dim, dim):
        raise ValueError(f"Operator of shape {op.shape} does not act on {len(qubits)} qubits")


def apply_operator(matrix: np.ndarray, op: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Return op_embedded @ matrix without forming the embedded operator."""
    _check_operator(op, qubits, n_qubits)
    dim = 2 ** n_qubits
    t = matrix.reshape((2,) * (2 * n_qubits))
    t = _apply_left(t, op, _row_axes(qubits, n_qubits))
    return t.reshape(dim, dim)


def conjugate(matrix: np.ndarray, u: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Return U m U† with U acting on ``qubits``."""
    _check_operator(u, qubits, n_qubits)
    dim = 2 ** n_qubits
    rows = _row_axes(qubits, n_qubits)
    cols = [a + n_qubits for a in rows]
    t = matrix.reshape((2,) * (2 * n_qubits))
    t = _apply_left(t, u, rows)
    t = _apply_left(t, u.conj(), cols)
    return t.reshape(dim, dim)


def embed(op: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Full 2^n matrix of ``op`` acting on ``qubits``."""
    return apply_operator(np.eye(2 ** n_qubits, dtype=complex), op, qubits, n_qubits)


def reduce_matrix(matrix: np.ndarray, keep: Sequence[int], n_qubits: int) -> np.ndarray:
    """Partial trace of a raw operator onto ``keep`` (kept qubits renumbered in ascending order)."""
    keep = sorted(set(keep))
    if not keep:
        raise ValueError("partial trace needs at least one kept qubit")
    check_qubits(keep, n_qubits)
    if len(keep) == n_qubits:
        return matrix.copy()
    rows = list(range(n_qubits))
    cols = [n_qubits + a for a in range(n_qubits)]
    for q in range(n_qubits):
        if q not in keep:
            axis = n_qubits - 1 - q
            cols[axis] = rows[axis]
    out = [n_qubits - 1 - q for q in reversed(keep)]
    out = out + [n_qubits + a for a in out]
    t = matrix.reshape((2,) * (2 * n_qubits))
    dim = 2 ** len(keep)
    return np.einsum(t, rows + cols, out).reshape(dim, dim)


def mix_qubits(matrix: np.ndarray, qubits: Sequence[int], n_qubits: int) -> np.ndarray:
    """Replace the state of ``qubits`` with the maximally mixed state: Tr_q(m) ⊗ I/2^k."""
    qubits = sorted(set(qubits))
    check_qubits(qubits, n_qubits)
    dim = 2 ** n_qubits
    k = len(qubits)
    if k == 0:
        return matrix.copy()
    keep = [q for q in range(n_qubits) if q not in qubits]
    if not keep:
        return np.trace(matrix) * np.eye(dim, dtype=complex) / dim
    reduced = reduce_matrix(matrix, keep, n_qubits).reshape((2,) * (2 * len(keep)))
    identity = np.eye(2 ** k, dtype=complex).reshape((2,) * (2 * k))
    kept_desc = keep[::-1]
    mixed_desc = qubits[::-1]
    all_desc = list(range(n_qubits - 1, -1, -1))
    out = np.einsum(
        reduced, kept_desc + [n_qubits + q for q in kept_desc],
        identity, mixed_desc + [n_qubits + q for q in mixed_desc],
        all_desc + [n_qubits + q for q in all_desc],
    )
    return out.reshape(dim, dim) / 2 ** k


def expectation_value(matrix: np.ndarray, op: np.ndarray) -> float:
    """Tr(m·op), checked to be real."""
    value = np.einsum("ij,ji->", matrix, op)
    if abs(value.imag) > IMAG_TOL:
        raise InvariantViolation(f"Expectation value has imaginary part {value.imag:.3e}")
    return float(value.real)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A validated n-qubit density matrix."""
    n_qubits: int
    matrix: np.ndarray
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        dim = 2 ** self.n_qubits
        matrix = np.asarray(self.matrix, dtype=complex)
        if matrix.shape != (dim, dim):
            raise ValueError(f"Density matrix of shape {matrix.shape} does not match {self.n_qubits} qubits")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        if validate:
            check_density_matrix(matrix)

    @classmethod
    def zero_state(cls, n_qubits: int) -> "DensityMatrix":
        return cls.basis_state(0, n_qubits)

    @classmethod
    def basis_state(cls, index: int, n_qubits: int) -> "DensityMatrix":
        dim = 2 ** n_qubits
        m = np.zeros((dim, dim), dtype=complex)
        m[index, index] = 1.0
        return cls(n_qubits, m)

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        dim = 2 ** n_qubits
        return cls(n_qubits, np.eye(dim, dtype=complex) / dim)

    @classmethod
    def from_statevector(cls, psi: np.ndarray) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        n_qubits = int(round(np.log2(psi.size)))
        psi = psi / np.linalg.norm(psi)
        return cls(n_qubits, np.outer(psi, psi.conj()))

    @property
    def dim(self) -> int:
        return 2 ** self.n_qubits

    def probabilities(self) -> np.ndarray:
        """Computational-basis outcome distribution."""
        p = np.clip(np.real(np.diag(self.matrix)), 0.0, None)
        return p / p.sum()


def check_density_matrix(matrix: np.ndarray) -> None:
    """Raise InvariantViolation unless ``matrix`` is a valid state."""
    if not np.all(np.isfinite(matrix)):
        raise InvariantViolation("Density matrix has non-finite entries")
    herm = np.max(np.abs(matrix - matrix.conj().T))
    if herm > HERMITIAN_TOL:
        raise InvariantViolation(f"Density matrix not Hermitian (deviation {herm:.3e})")
    trace = np.trace(matrix)
    if abs(trace - 1.0) > TRACE_TOL:
        raise InvariantViolation(f"Density matrix trace is {trace.real:.12f}")
    min_eig = sla.eigvalsh(matrix).min()
    if min_eig < -PSD_TOL:
        raise InvariantViolation(f"Density matrix has negative eigenvalue {min_eig:.3e}")


def apply_unitary(rho: DensityMatrix, u: np.ndarray, qubits: Sequence[int]) -> DensityMatrix:
    return DensityMatrix(rho.n_qubits, conjugate(rho.matrix, np.asarray(u, dtype=complex), qubits, rho.n_qubits))


def partial_trace(rho: DensityMatrix, keep: Sequence[int] | set[int]) -> DensityMatrix:
    keep = sorted(set(keep))
    return DensityMatrix(len(keep), reduce_matrix(rho.matrix, keep, rho.n_qubits))


def expectation(rho: DensityMatrix, obs: PauliString) -> float:
    if obs.n_qubits != rho.n_qubits:
        raise ValueError(f"{obs.n_qubits}-qubit observable on {rho.n_qubits}-qubit state")
    return expectation_value(rho.matrix, pauli_to_matrix(obs))


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return m.shape[0] == m.shape[1] and np.max(np.abs(m - m.conj().T)) <= tol


def is_unitary(u: np.ndarray, tol: float = 1e-10) -> bool:
    return np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) <= tol


def equal_up_to_phase(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    """True when a = e^{iγ} b for some global phase γ."""
    if a.shape != b.shape:
        return False
    k = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    if abs(b[k]) < tol:
        return np.max(np.abs(a)) <= tol
    phase = a[k] / b[k]
    if abs(abs(phase) - 1.0) > tol:
        return False
    return np.max(np.abs(a - phase * b)) <= tol


def hermitian_evolve(h: np.ndarray, t: float) -> np.ndarray:
    """e^{-iHt} via eigendecomposition."""
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h):
        raise ValueError("hermitian_evolve requires a Hermitian generator")
    energies, vectors = sla.eigh(h)
    return (vectors * np.exp(-1j * energies * t)) @ vectors.conj().T
