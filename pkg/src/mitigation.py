"""Noise-estimation circuits, mitigation and error propagation."""

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .circuit import Circuit, CouplingMap, Gate, LayoutTracker, strip_single_qubit_gates, u
from .errors import MitigationError
from .linalg import DensityMatrix, mix_qubits
from .simulator import NoiseModel, expectation_from_probabilities, measurement_probabilities, simulate

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-3
FIRST_ORDER_WARN = 0.05


def build_nec(c: Circuit, layout: Optional[LayoutTracker], rng: np.random.Generator | int | None = None) -> Circuit:
    """CNOT skeleton of ``c`` wrapped in a random product-state preparation and its inverse.

    The preparation on qubit q is undone where the SWAPs left it,
    ``layout.physical(q)``, so the noiseless circuit returns every qubit to |0⟩.
    """
    if layout is None:
        raise MitigationError("Noise-estimation circuit needs the final layout of the source circuit")
    if layout.n_qubits != c.n_qubits:
        raise MitigationError(f"Layout covers {layout.n_qubits} qubits, circuit has {c.n_qubits}")
    angles = random_product_angles(c.n_qubits, rng)
    skeleton = strip_single_qubit_gates(c).gates
    gates = tuple(prep_gates(angles)) + skeleton + tuple(unprep_gates(angles, layout))
    return Circuit(c.n_qubits, gates, ("Z",) * c.n_qubits)


def random_product_angles(
    n_qubits: int,
    rng: np.random.Generator | int | None = None,
) -> list[tuple[float, float, float]]:
    """Haar-random single-qubit states as U angles: cos θ uniform on [-1, 1]."""
    rng = np.random.default_rng(rng)
    angles = []
    for _ in range(n_qubits):
        theta = math.acos(1 - 2 * rng.random())
        phi, lam = rng.uniform(0, 2 * math.pi, size=2)
        angles.append((theta, float(phi), float(lam)))
    return angles


def prep_gates(angles: Sequence[tuple[float, float, float]]) -> list[Gate]:
    return [u(q, theta, phi, lam) for q, (theta, phi, lam) in enumerate(angles)]


def unprep_gates(angles: Sequence[tuple[float, float, float]], layout: LayoutTracker) -> list[Gate]:
    """Inverse preparations placed where the layout moved each qubit."""
    return [u(layout.physical(q), -theta, -lam, -phi) for q, (theta, phi, lam) in enumerate(angles)]


@dataclass(frozen=True)
class MitigatedValue:
    value: float
    reliable: bool


def mitigate(o_noisy: float, e_noisy: float, floor: float = DENOMINATOR_FLOOR) -> MitigatedValue:
    """⟨O⟩/⟨E⟩, flagged unreliable when |⟨E⟩| is below ``floor``."""
    if e_noisy == 0:
        logger.warning("Noise-estimation expectation is exactly zero; mitigated value undefined")
        return MitigatedValue(math.nan, False)
    reliable = abs(e_noisy) >= floor
    if not reliable:
        logger.warning("Unreliable denominator %.3e below floor %.1e", e_noisy, floor)
    return MitigatedValue(o_noisy / e_noisy, reliable)


def mitigation_uncertainty(o_noisy: float, e_noisy: float, sigma_o: float, sigma_e: float) -> float:
    """σ_m² = (⟨O⟩²σ_E² + ⟨E⟩²σ_O²) / ⟨E⟩⁴."""
    if e_noisy == 0:
        raise MitigationError("Uncertainty of a ratio with zero denominator")
    return math.sqrt((o_noisy ** 2 * sigma_e ** 2 + e_noisy ** 2 * sigma_o ** 2) / e_noisy ** 4)


def mitigation_uncertainty_from_ratio(mitigated: float, e_noisy: float, sigma_o: float, sigma_e: float) -> float:
    """Same σ_m written through the mitigated value: (m²σ_E² + σ_O²) / ⟨E⟩²."""
    if e_noisy == 0:
        raise MitigationError("Uncertainty of a ratio with zero denominator")
    return math.sqrt((mitigated ** 2 * sigma_e ** 2 + sigma_o ** 2) / e_noisy ** 2)


@dataclass(frozen=True)
class EnsembleStats:
    mean: float
    sigma: float
    n_configs: int


def ensemble_statistics(values: Sequence[float], shots: Optional[int]) -> EnsembleStats:
    """Mean over twirl configurations with shot-noise and twirl-variance terms.

    σ² = Σ(1 − v_r²)/(N_s·N_t²) + Var(v)/N_t. ``shots=None`` drops the shot
    term (exact-channel evaluation). A single configuration keeps only the
    shot term.
    """
    v = np.asarray(values, dtype=float)
    n_t = v.size
    if n_t == 0:
        raise MitigationError("Ensemble statistics of an empty ensemble")
    if shots is not None and shots < 1:
        raise MitigationError(f"shots must be positive, got {shots}")
    shot_term = 0.0 if shots is None else float(np.sum(1 - v ** 2)) / (shots * n_t ** 2)
    twirl_term = float(np.var(v, ddof=1)) / n_t if n_t > 1 else 0.0
    return EnsembleStats(float(v.mean()), math.sqrt(max(shot_term + twirl_term, 0.0)), n_t)


@dataclass(frozen=True)
class FirstOrderTerms:
    """Noiseless value and the summed single-fault values of one observable."""
    o0: float
    o1: float
    o1_neigh: float
    n_cnot: int


def _z_expectation(rho: np.ndarray, c: Circuit, qubits: Sequence[int]) -> float:
    probs = measurement_probabilities(DensityMatrix(c.n_qubits, rho, validate=False), c.measure_basis)
    measured = c.measured_qubits
    missing = set(qubits) - set(measured)
    if missing:
        raise MitigationError(f"Observable qubits {sorted(missing)} are not measured")
    return expectation_from_probabilities(probs, [measured.index(q) for q in qubits])


def one_error_sums(
    c: Circuit,
    qubits: Sequence[int],
    coupling: Optional[CouplingMap] = None,
    initial: Optional[DensityMatrix] = None,
) -> FirstOrderTerms:
    """Brute-force single-fault sums: after each CNOT mix its pair (o1) or its neighbors (o1_neigh)."""
    coupling = coupling or CouplingMap.linear(c.n_qubits)
    noiseless = NoiseModel.noiseless(c.n_qubits)
    n_cnot = sum(1 for g in c.gates if g.kind == "CNOT")

    def evaluate(hook=None) -> float:
        return _z_expectation(simulate(c, noiseless, initial, hook).matrix, c, qubits)

    def fault_at(k: int, neighbors: bool):
        def hook(index: int, gate: Gate, matrix: np.ndarray) -> np.ndarray:
            if index != k:
                return matrix
            targets = coupling.junction_neighbors(*gate.qubits) if neighbors else gate.qubits
            return mix_qubits(matrix, targets, c.n_qubits)
        return hook

    o0 = evaluate()
    o1 = sum(evaluate(fault_at(k, False)) for k in range(n_cnot))
    o1_neigh = sum(evaluate(fault_at(k, True)) for k in range(n_cnot))
    return FirstOrderTerms(o0, float(o1), float(o1_neigh), n_cnot)


def first_order_prediction(
    terms: FirstOrderTerms,
    lam_cnot: float,
    lam_neigh: float = 0.0,
    lam_glob: float = 0.0,
) -> float:
    """Noisy expectation to first order in the local rates, exact in the global rate.

    (1−λ_g)^n·[⟨O⟩₀ + λ_c(⟨O⟩₁ − n⟨O⟩₀) + λ_n(⟨O'⟩₁ − n⟨O⟩₀)]
    """
    if max(lam_cnot, lam_neigh, lam_glob) > FIRST_ORDER_WARN:
        logger.warning(
            "First-order prediction used with large rates (%.3f, %.3f, %.3f)", lam_cnot, lam_neigh, lam_glob
        )
    n = terms.n_cnot
    bracket = (
        terms.o0
        + lam_cnot * (terms.o1 - n * terms.o0)
        + lam_neigh * (terms.o1_neigh - n * terms.o0)
    )
    return (1 - lam_glob) ** n * bracket


def _skeleton_blocks(c: Circuit) -> list[tuple[str, tuple[int, int], int]]:
    """Split a CNOT skeleton into SWAP triples and cancelling CNOT pairs."""
    cnots = [g.qubits for g in strip_single_qubit_gates(c).gates if g.kind == "CNOT"]
    blocks = []
    i = 0
    while i < len(cnots):
        a, b = cnots[i]
        if cnots[i:i + 3] == [(a, b), (b, a), (a, b)]:
            blocks.append(("swap", (a, b), 3))
            i += 3
        elif cnots[i:i + 2] == [(a, b), (a, b)]:
            blocks.append(("identity", (a, b), 2))
            i += 2
        else:
            raise MitigationError(f"CNOT {i} on ({a}, {b}) is neither part of a SWAP nor a cancelling pair")
    return blocks


def nec_prefactor(c: Circuit, eps: Mapping[tuple[int, int], float], measured: Sequence[int]) -> float:
    """Predicted ⟨E⟩ of a noise-estimation circuit under local pair depolarizing noise.

    ``measured`` are the starting positions of the observable's qubits; they
    are carried through SWAP blocks, and every block touching one of them
    contributes (1−ε)^(CNOTs in the block).
    """
    tracked = set(measured)
    factor = 1.0
    for kind, (a, b), size in _skeleton_blocks(c):
        key = (min(a, b), max(a, b))
        if key not in eps:
            raise MitigationError(f"No error rate given for junction {key}")
        if tracked & {a, b}:
            factor *= (1 - eps[key]) ** size
        if kind == "swap":
            tracked = {b if q == a else a if q == b else q for q in tracked}
    return factor


def relative_error(noiseless: float, noisy: float) -> float:
    """|(n − p)/n| with n the noisy and p the noiseless value; nan when the noisy value is zero."""
    if noisy == 0:
        return math.nan
    return abs((noisy - noiseless) / noisy)


def mean_relative_error(noiseless: Sequence[float], noisy: Sequence[float]) -> float:
    errors = np.array([relative_error(n, p) for n, p in zip(noiseless, noisy)])
    finite = errors[np.isfinite(errors)]
    return float(finite.mean()) if finite.size else math.nan
