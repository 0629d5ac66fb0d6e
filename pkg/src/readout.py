"""Readout error model and iterative Bayesian unfolding.

Confusion matrices are column-stochastic: A[i, j] = P(measure i | prepared j).
Outcome index bit k belongs to the k-th measured qubit.
"""

import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import SimulationError, UnfoldingError
from .linalg import kron

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-9
MAX_CONDITION = 1e12
DEFAULT_ITERATIONS = 20
CONVERGENCE_TOL = 1e-8


def check_column_stochastic(matrix: np.ndarray) -> None:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise SimulationError(f"Confusion matrix must be square, got shape {matrix.shape}")
    if np.any(matrix < -STOCHASTIC_TOL):
        raise SimulationError("Confusion matrix has negative entries")
    sums = matrix.sum(axis=0)
    if np.max(np.abs(sums - 1)) > STOCHASTIC_TOL:
        raise SimulationError(f"Confusion matrix columns sum to {sums.tolist()}, expected 1")


def symmetric_flip_matrix(flip: float) -> np.ndarray:
    if not 0 <= flip <= 1:
        raise SimulationError(f"Flip probability must be in [0, 1], got {flip}")
    return np.array([[1 - flip, flip], [flip, 1 - flip]])


def full_confusion(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Tensor product of per-qubit 2×2 factors; factors[k] acts on bit k."""
    return kron(*reversed([np.asarray(f, dtype=float) for f in factors]))


@dataclass(frozen=True, eq=False)
class ReadoutModel:
    """True readout behavior of the device."""
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        check_column_stochastic(m)
        if m.shape[0] & (m.shape[0] - 1):
            raise SimulationError(f"Confusion dimension {m.shape[0]} is not a power of two")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def ideal(cls, n_bits: int) -> "ReadoutModel":
        return cls(np.eye(2 ** n_bits))

    @classmethod
    def symmetric(cls, n_bits: int, flip: float) -> "ReadoutModel":
        return cls(full_confusion([symmetric_flip_matrix(flip)] * n_bits))

    @classmethod
    def from_factors(cls, factors: Sequence[np.ndarray]) -> "ReadoutModel":
        return cls(full_confusion(factors))

    @property
    def n_bits(self) -> int:
        return int(self.matrix.shape[0]).bit_length() - 1


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def unfold(
    measured: np.ndarray,
    confusion: np.ndarray,
    iterations: int = DEFAULT_ITERATIONS,
    prior: Optional[np.ndarray] = None,
    tol: float = CONVERGENCE_TOL,
) -> np.ndarray:
    """Iterative Bayesian unfolding of a measured histogram.

    t_j <- Σ_i A_ij t_j m_i / Σ_l A_il t_l, starting from ``prior`` (uniform
    by default) and stopping early once successive iterates differ by less
    than ``tol`` in total variation.
    """
    a = np.asarray(confusion, dtype=float)
    check_column_stochastic(a)
    m = np.asarray(measured, dtype=float)
    if m.shape != (a.shape[0],):
        raise SimulationError(f"Histogram of length {m.size} does not match confusion {a.shape}")
    if m.sum() <= 0:
        raise SimulationError("Cannot unfold an empty histogram")
    m = m / m.sum()
    condition = float(np.linalg.cond(a))
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise UnfoldingError(condition)

    t = np.full(a.shape[1], 1 / a.shape[1]) if prior is None else np.asarray(prior, dtype=float) / np.sum(prior)
    for iteration in range(1, iterations + 1):
        folded = a @ t
        ratio = np.divide(m, folded, out=np.zeros_like(m), where=folded > 0)
        updated = t * (a.T @ ratio)
        updated /= updated.sum()
        change = total_variation(updated, t)
        t = updated
        if change < tol:
            logger.debug("Unfolding converged after %d iterations", iteration)
            break
    return t


def confusion_to_json(matrix: np.ndarray) -> str:
    return json.dumps(np.asarray(matrix).tolist())


def confusion_from_json(text: str) -> np.ndarray:
    matrix = np.asarray(json.loads(text), dtype=float)
    check_column_stochastic(matrix)
    return matrix
