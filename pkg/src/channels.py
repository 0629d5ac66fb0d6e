"""Noise channels, Pauli transfer matrices and twirl averages.

Channels are position-free: they act on ``n_qubits`` local qubits and are
placed on physical qubits by the ``targets`` passed to ``apply_channel``.
For a QuasiLocalChannel local qubits 0 and 1 are the active CNOT pair and
the remaining ones are its neighbors.
"""

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg as sla

from .errors import ChannelError
from .linalg import (
    DensityMatrix,
    PAULI_MATRICES,
    PauliString,
    all_pauli_strings,
    conjugate,
    kron,
    mix_qubits,
    pauli_to_matrix,
)

logger = logging.getLogger(__name__)

CPTP_TOL = 1e-10
PROBABILITY_TOL = 1e-12
ROTATION_AXES = ("x", "y", "z")

_SIGN_1Q = np.array([[1, 1, 1, 1], [1, 1, -1, -1], [1, -1, 1, -1], [1, -1, -1, 1]], dtype=float)


@dataclass(frozen=True, eq=False)
class KrausChannel:
    n_qubits: int
    kraus: tuple[np.ndarray, ...]

    def __post_init__(self):
        dim = 2 ** self.n_qubits
        ops = tuple(np.asarray(k, dtype=complex) for k in self.kraus)
        if not ops:
            raise ChannelError("Kraus channel needs at least one operator")
        for k in ops:
            if k.shape != (dim, dim):
                raise ChannelError(f"Kraus operator of shape {k.shape} on {self.n_qubits} qubits")
        completeness = sum(k.conj().T @ k for k in ops)
        deviation = np.max(np.abs(completeness - np.eye(dim)))
        if deviation > CPTP_TOL:
            raise ChannelError(f"Kraus operators not trace preserving (deviation {deviation:.3e})")
        object.__setattr__(self, "kraus", ops)

    @classmethod
    def identity(cls, n_qubits: int) -> "KrausChannel":
        return cls(n_qubits, (np.eye(2 ** n_qubits, dtype=complex),))

    @classmethod
    def unitary(cls, u: np.ndarray) -> "KrausChannel":
        u = np.asarray(u, dtype=complex)
        return cls(int(round(np.log2(u.shape[0]))), (u,))


@dataclass(frozen=True, eq=False)
class PauliChannel:
    """Probabilistic Pauli errors; probabilities indexed by PauliString.index."""
    n_qubits: int
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.shape != (4 ** self.n_qubits,):
            raise ChannelError(f"Pauli channel on {self.n_qubits} qubits needs {4 ** self.n_qubits} probabilities")
        if p.min() < -PROBABILITY_TOL:
            raise ChannelError(f"Negative Pauli probability {p.min():.3e}")
        if abs(p.sum() - 1.0) > PROBABILITY_TOL:
            raise ChannelError(f"Pauli probabilities sum to {p.sum():.15f}")
        p = np.clip(p, 0.0, None)
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @classmethod
    def identity(cls, n_qubits: int) -> "PauliChannel":
        p = np.zeros(4 ** n_qubits)
        p[0] = 1.0
        return cls(n_qubits, p)

    def probability(self, label: str) -> float:
        return float(self.probabilities[PauliString(label).index])

    def marginal(self, qubits: Sequence[int]) -> "PauliChannel":
        """Pauli channel seen by ``qubits`` alone (renumbered in ascending order)."""
        qubits = sorted(set(qubits))
        n = self.n_qubits
        tensor = self.probabilities.reshape((4,) * n)
        traced = tuple(n - 1 - q for q in range(n) if q not in qubits)
        reduced = tensor.sum(axis=traced) if traced else tensor
        return PauliChannel(len(qubits), np.asarray(reduced).reshape(-1))


@dataclass(frozen=True)
class DepolarizingChannel:
    n_qubits: int
    lam: float

    def __post_init__(self):
        upper = 4 ** self.n_qubits / (4 ** self.n_qubits - 1)
        if not 0 <= self.lam <= upper + 1e-12:
            raise ChannelError(f"Depolarizing λ={self.lam} outside [0, {upper:.6f}]")
        if self.lam > 1:
            logger.warning("Depolarizing λ=%s exceeds 1; the convex mixture form no longer applies", self.lam)

    def to_pauli_channel(self) -> PauliChannel:
        size = 4 ** self.n_qubits
        p = np.full(size, self.lam / size)
        p[0] += 1 - self.lam
        return PauliChannel(self.n_qubits, p)


@dataclass(frozen=True)
class QuasiLocalChannel:
    """(1-Σλ)ρ + λ_cnot·mix(pair) + λ_neigh·mix(neighbors) + λ_glob·mix(all)."""
    lam_cnot: float
    lam_neigh: float = 0.0
    lam_glob: float = 0.0
    n_neighbors: int = 1

    def __post_init__(self):
        for name in ("lam_cnot", "lam_neigh", "lam_glob"):
            if getattr(self, name) < 0:
                raise ChannelError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.total > 1 + 1e-12:
            raise ChannelError(f"λ_cnot + λ_neigh + λ_glob = {self.total} exceeds 1")
        if self.n_neighbors < 0:
            raise ChannelError("n_neighbors must be non-negative")

    @property
    def n_qubits(self) -> int:
        return 2 + self.n_neighbors

    @property
    def total(self) -> float:
        return self.lam_cnot + self.lam_neigh + self.lam_glob

    def to_pauli_channel(self) -> PauliChannel:
        n = self.n_qubits
        p = np.zeros(4 ** n)
        p[0] = 1 - self.total
        neighbors = set(range(2, n))
        for pauli in all_pauli_strings(n):
            support = set(pauli.support)
            if support <= {0, 1}:
                p[pauli.index] += self.lam_cnot / 16
            if support <= neighbors and self.n_neighbors:
                p[pauli.index] += self.lam_neigh / 4 ** self.n_neighbors
            p[pauli.index] += self.lam_glob / 4 ** n
        if not self.n_neighbors:
            p[0] += self.lam_neigh
        return PauliChannel(n, p)


Channel = Union[KrausChannel, PauliChannel, DepolarizingChannel, QuasiLocalChannel]


def _check_targets(ch: Channel, targets: Sequence[int], n_qubits: int) -> None:
    if len(targets) != ch.n_qubits:
        raise ChannelError(f"{type(ch).__name__} acts on {ch.n_qubits} qubits, got targets {list(targets)}")
    if len(set(targets)) != len(targets) or not all(0 <= t < n_qubits for t in targets):
        raise ChannelError(f"Invalid channel targets {list(targets)} for {n_qubits} qubits")


def channel_map(ch: Channel, matrix: np.ndarray, targets: Sequence[int], n_qubits: int) -> np.ndarray:
    """Apply a channel to a raw 2^n operator."""
    targets = list(targets)
    _check_targets(ch, targets, n_qubits)
    if isinstance(ch, KrausChannel):
        return sum(conjugate(matrix, k, targets, n_qubits) for k in ch.kraus)
    if isinstance(ch, PauliChannel):
        out = np.zeros_like(matrix, dtype=complex)
        for index in np.flatnonzero(ch.probabilities > 0):
            pauli = pauli_to_matrix(PauliString.from_index(int(index), ch.n_qubits))
            out += ch.probabilities[index] * conjugate(matrix, pauli, targets, n_qubits)
        return out
    if isinstance(ch, DepolarizingChannel):
        return (1 - ch.lam) * matrix + ch.lam * mix_qubits(matrix, targets, n_qubits)
    if isinstance(ch, QuasiLocalChannel):
        out = (1 - ch.total) * matrix
        if ch.lam_cnot:
            out = out + ch.lam_cnot * mix_qubits(matrix, targets[:2], n_qubits)
        if ch.lam_neigh:
            out = out + ch.lam_neigh * mix_qubits(matrix, targets[2:], n_qubits)
        if ch.lam_glob:
            out = out + ch.lam_glob * mix_qubits(matrix, targets, n_qubits)
        return out
    raise ChannelError(f"Unsupported channel type {type(ch).__name__}")


def apply_channel(rho: DensityMatrix, ch: Channel, targets: Sequence[int]) -> DensityMatrix:
    return DensityMatrix(rho.n_qubits, channel_map(ch, rho.matrix, targets, rho.n_qubits))


def to_pauli_channel(ch: Channel) -> Optional[PauliChannel]:
    """Exact Pauli form where one exists without twirling, else None."""
    if isinstance(ch, PauliChannel):
        return ch
    if isinstance(ch, (DepolarizingChannel, QuasiLocalChannel)):
        return ch.to_pauli_channel()
    return None


def to_kraus(ch: Channel) -> KrausChannel:
    if isinstance(ch, KrausChannel):
        return ch
    pauli = to_pauli_channel(ch)
    ops = [
        np.sqrt(p) * pauli_to_matrix(PauliString.from_index(int(i), pauli.n_qubits))
        for i, p in enumerate(pauli.probabilities) if p > 0
    ]
    return KrausChannel(pauli.n_qubits, tuple(ops))


def compose(first: Channel, second: Channel) -> KrausChannel:
    """Channel applying ``first`` then ``second`` on the same qubits."""
    a, b = to_kraus(first), to_kraus(second)
    if a.n_qubits != b.n_qubits:
        raise ChannelError(f"Cannot compose {a.n_qubits}- and {b.n_qubits}-qubit channels")
    return KrausChannel(a.n_qubits, tuple(kb @ ka for kb in b.kraus for ka in a.kraus))


@lru_cache(maxsize=8)
def _pauli_stack(n_qubits: int) -> np.ndarray:
    stack = np.array([pauli_to_matrix(p) for p in all_pauli_strings(n_qubits)])
    stack.setflags(write=False)
    return stack


@lru_cache(maxsize=8)
def _commutation_signs(n_qubits: int) -> np.ndarray:
    signs = kron(*([_SIGN_1Q] * n_qubits)) if n_qubits else np.ones((1, 1))
    signs.setflags(write=False)
    return signs


def ptm(ch: Channel) -> np.ndarray:
    """Pauli transfer matrix R_ij = Tr(P_i E(P_j)) / 2^n."""
    pauli = to_pauli_channel(ch)
    if pauli is not None:
        return np.diag(_commutation_signs(pauli.n_qubits) @ pauli.probabilities)
    n = ch.n_qubits
    stack = _pauli_stack(n)
    targets = list(range(n))
    columns = [np.einsum("kij,ji->k", stack, channel_map(ch, p, targets, n)) for p in stack]
    return np.real(np.array(columns).T) / 2 ** n


def unitary_ptm(u: np.ndarray) -> np.ndarray:
    n = int(round(np.log2(u.shape[0])))
    stack = _pauli_stack(n)
    conjugated = np.einsum("ab,kbc,dc->kad", u, stack, u.conj())
    return np.real(np.einsum("iab,jba->ij", stack, conjugated)) / 2 ** n


def pauli_channel_from_ptm(transfer: np.ndarray) -> PauliChannel:
    """Invert the diagonal of a Pauli-channel PTM into probabilities."""
    n = int(round(np.log(transfer.shape[0]) / np.log(4)))
    probabilities = _commutation_signs(n) @ np.diag(transfer) / 4 ** n
    return PauliChannel(n, probabilities)


def ptm_distance(a: Channel, b: Channel) -> float:
    if a.n_qubits != b.n_qubits:
        raise ChannelError(f"Cannot compare {a.n_qubits}- and {b.n_qubits}-qubit channels")
    return float(np.linalg.norm(ptm(a) - ptm(b)))


def rotation_matrix(axis: str, angle: float) -> np.ndarray:
    """exp(-i·angle/2·σ^axis)."""
    sigma = PAULI_MATRICES[axis.upper()]
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * sigma


def _trace_coefficients(kraus: Sequence[np.ndarray], n_qubits: int) -> np.ndarray:
    stack = _pauli_stack(n_qubits)
    total = np.zeros(4 ** n_qubits)
    for m in kraus:
        total += np.abs(np.einsum("kij,ji->k", stack, m)) ** 2
    return total


def pauli_twirl_average(ch: KrausChannel, method: str = "trace") -> PauliChannel:
    """Pauli channel left after averaging over the full Pauli twirl group.

    ``trace`` uses p_P = (1/4^n) Σ_M |Tr(M P)|²; ``operational`` averages the
    PTMs of w·E(w ρ w)·w over all 4^n Paulis w.
    """
    n = ch.n_qubits
    if method == "trace":
        return PauliChannel(n, _trace_coefficients(ch.kraus, n) / 4 ** n)
    if method == "operational":
        return pauli_channel_from_ptm(twirled_ptm(ch))
    raise ChannelError(f"Unknown twirl method {method!r}")


def twirled_ptm(ch: Channel, rotations: bool = False, active: Sequence[int] = (0, 1)) -> np.ndarray:
    """Exhaustive average of conjugated PTMs over the Pauli (and optional neighbor rotation) group."""
    n = ch.n_qubits
    base = ptm(ch)
    neighbors = [q for q in range(n) if q not in active] if rotations else []
    rotation_sets = itertools.product(ROTATION_AXES, repeat=len(neighbors)) if neighbors else [()]
    total = np.zeros_like(base)
    count = 0
    for axes in rotation_sets:
        local = [np.eye(2, dtype=complex)] * n
        for q, axis in zip(neighbors, axes):
            local[q] = rotation_matrix(axis, np.pi / 2)
        r = kron(*reversed(local))
        r_ptm = unitary_ptm(r)
        for pauli in _pauli_stack(n):
            # V = R·w applied before the noise, V† after
            v_ptm = r_ptm @ unitary_ptm(pauli)
            total += v_ptm.T @ base @ v_ptm
            count += 1
    return total / count


def crosstalk_twirl_average(
    ch: KrausChannel,
    active: Sequence[int] = (0, 1),
    method: str = "trace",
) -> PauliChannel:
    """Pauli twirl on every qubit plus a π/2 rotation twirl on the neighbors."""
    n = ch.n_qubits
    neighbors = [q for q in range(n) if q not in active]
    if not neighbors:
        raise ChannelError("Crosstalk twirl needs at least one neighbor qubit")
    if method == "operational":
        return pauli_channel_from_ptm(twirled_ptm(ch, rotations=True, active=active))
    if method != "trace":
        raise ChannelError(f"Unknown twirl method {method!r}")
    total = np.zeros(4 ** n)
    for axes in itertools.product(ROTATION_AXES, repeat=len(neighbors)):
        local = [np.eye(2, dtype=complex)] * n
        for q, axis in zip(neighbors, axes):
            local[q] = rotation_matrix(axis, np.pi / 2)
        r = kron(*reversed(local))
        total += _trace_coefficients([r.conj().T @ m @ r for m in ch.kraus], n)
    return PauliChannel(n, total / (4 ** n * 3 ** len(neighbors)))


def marginal_on_neighbor(twirled: PauliChannel, neighbor: int = 2) -> DepolarizingChannel:
    marginal = twirled.marginal([neighbor])
    weights = marginal.probabilities[1:]
    if np.ptp(weights) > 1e-9:
        raise ChannelError(f"Neighbor marginal is not depolarizing: weights {weights.tolist()}")
    q = 1.0 - marginal.probabilities[0]
    return DepolarizingChannel(1, float(np.clip(4 * q / 3, 0.0, 4 / 3)))


def marginal_on_active_pair(twirled: PauliChannel, active: Sequence[int] = (0, 1)) -> PauliChannel:
    return twirled.marginal(active)


def random_kraus_channel(n_qubits: int, rng: np.random.Generator, n_kraus: int = 4) -> KrausChannel:
    """Random CPTP map from Gaussian Kraus operators normalized by a Cholesky factor."""
    dim = 2 ** n_qubits
    g = (rng.normal(size=(n_kraus, dim, dim)) + 1j * rng.normal(size=(n_kraus, dim, dim))) / np.sqrt(2)
    s = sum(k.conj().T @ k for k in g)
    lower = sla.cholesky(s, lower=True)
    inverse = sla.solve_triangular(lower, np.eye(dim), lower=True)
    return KrausChannel(n_qubits, tuple(k @ inverse.conj().T for k in g))


def channel_to_dict(ch: Channel) -> dict:
    if isinstance(ch, KrausChannel):
        return {
            "type": "kraus",
            "n_qubits": ch.n_qubits,
            "kraus": [np.stack([k.real, k.imag], axis=-1).tolist() for k in ch.kraus],
        }
    if isinstance(ch, PauliChannel):
        return {"type": "pauli", "n_qubits": ch.n_qubits, "parameters": {"probabilities": ch.probabilities.tolist()}}
    if isinstance(ch, DepolarizingChannel):
        return {"type": "depolarizing", "n_qubits": ch.n_qubits, "parameters": {"lam": ch.lam}}
    return {
        "type": "quasi_local",
        "n_qubits": ch.n_qubits,
        "parameters": {"lam_cnot": ch.lam_cnot, "lam_neigh": ch.lam_neigh, "lam_glob": ch.lam_glob},
    }


def channel_from_dict(data: dict) -> Channel:
    kind = data.get("type")
    n = int(data["n_qubits"])
    params = data.get("parameters", {})
    if kind == "kraus":
        ops = []
        for entry in data["kraus"]:
            arr = np.asarray(entry, dtype=float)
            ops.append(arr[..., 0] + 1j * arr[..., 1])
        return KrausChannel(n, tuple(ops))
    if kind == "pauli":
        return PauliChannel(n, np.asarray(params["probabilities"]))
    if kind == "depolarizing":
        return DepolarizingChannel(n, float(params["lam"]))
    if kind == "quasi_local":
        return QuasiLocalChannel(params["lam_cnot"], params["lam_neigh"], params["lam_glob"], n - 2)
    raise ChannelError(f"Unknown channel type {kind!r}")
