"""Least-squares recovery of quasi-local noise rates from expectation series."""

import hashlib
import itertools
import json
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from .bcs import BcsParams, MeanFieldState, initial_state, trotter_step
from .circuit import CouplingMap, LayoutTracker, strip_single_qubit_gates
from .errors import SimulationError
from .linalg import DensityMatrix
from .mitigation import prep_gates, random_product_angles, unprep_gates
from .models import FIT_TARGETS, FitResult
from .simulator import (
    NoiseModel,
    all_observables,
    expectation_from_probabilities,
    measurement_probabilities,
    run_gates,
)

logger = logging.getLogger(__name__)

PARAMETER_BOUNDS = (0.0, 1.0)


@dataclass(frozen=True)
class ForwardModel:
    """Exact-channel expectations of every observable at every Trotter step.

    Parameters are (λ_cnot per junction, λ_neigh per junction, λ_glob) with
    junctions in sorted order; for three levels that is
    (λc01, λc12, λn01, λn12, λg).
    """
    params: BcsParams
    mf: MeanFieldState
    basis: str
    n_steps: int
    form: str = "compressed"
    target: str = "observables"
    nec_seed: int = 0
    coherent_angle: float = 0.0

    def __post_init__(self):
        if self.target not in FIT_TARGETS:
            raise ValueError(f"Unknown fit target {self.target!r}; expected one of {FIT_TARGETS}")
        if len(self.basis) != self.params.n_qubits:
            raise ValueError(f"Basis {self.basis!r} does not cover {self.params.n_qubits} qubits")

    @property
    def coupling(self) -> CouplingMap:
        return CouplingMap.linear(self.params.n_qubits)

    @property
    def junctions(self) -> list[tuple[int, int]]:
        return sorted(self.coupling.edges)

    @property
    def n_parameters(self) -> int:
        return 2 * len(self.junctions) + 1

    def noise_model(self, lambdas: np.ndarray) -> NoiseModel:
        lambdas = np.asarray(lambdas, dtype=float)
        if lambdas.shape != (self.n_parameters,):
            raise ValueError(f"Expected {self.n_parameters} rates, got {lambdas.shape}")
        k = len(self.junctions)
        lam_cnot = dict(zip(self.junctions, lambdas[:k]))
        lam_neigh = dict(zip(self.junctions, lambdas[k:2 * k]))
        total = max(lam_cnot[j] + lam_neigh[j] for j in self.junctions) + lambdas[-1]
        if total > 1:
            # keep the summed rates of every junction at most 1
            lam_cnot = {j: v / total for j, v in lam_cnot.items()}
            lam_neigh = {j: v / total for j, v in lam_neigh.items()}
            lambdas = lambdas.copy()
            lambdas[-1] /= total
        return NoiseModel.quasi_local(self.coupling, lam_cnot, lam_neigh, float(lambdas[-1]), self.coherent_angle)

    def _expectations(self, matrix: np.ndarray, bases: list, layout: LayoutTracker) -> list[float]:
        n = self.params.n_qubits
        probs = measurement_probabilities(DensityMatrix(n, matrix, validate=False), bases)
        return [
            expectation_from_probabilities(probs, [layout.physical(q) for q in obs])
            for obs in all_observables(n)
        ]

    def __call__(self, lambdas: np.ndarray) -> np.ndarray:
        nm = self.noise_model(lambdas)
        n = self.params.n_qubits
        layout = LayoutTracker.identity(n)
        columns = []
        if self.target == "observables":
            matrix = initial_state(self.mf).matrix
            for _ in range(self.n_steps):
                step, layout = trotter_step(self.params, layout, self.form)
                matrix = run_gates(matrix, step.gates, nm)
                physical_basis = [None] * n
                for logical, axis in enumerate(self.basis):
                    physical_basis[layout.physical(logical)] = axis
                columns.append(self._expectations(matrix, physical_basis, layout))
        else:
            angles = random_product_angles(n, self.nec_seed)
            matrix = run_gates(DensityMatrix.zero_state(n).matrix, prep_gates(angles), nm)
            for _ in range(self.n_steps):
                step, layout = trotter_step(self.params, layout, self.form)
                matrix = run_gates(matrix, strip_single_qubit_gates(step).gates, nm)
                closed = run_gates(matrix, unprep_gates(angles, layout), nm)
                columns.append(self._expectations(closed, ["Z"] * n, layout))
        return np.array(columns).T


@dataclass(frozen=True)
class FitProblem:
    data: np.ndarray  # observable × time
    forward: Callable[[np.ndarray], np.ndarray]
    n_parameters: int = 5

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if not np.all(np.isfinite(data)):
            raise SimulationError("Fit targets contain non-finite values")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class FitSettings:
    grid: tuple[float, ...] = (0.005, 0.03)
    restarts: int = 3
    max_iterations: int = 4000
    initial_step: float = 0.01
    xatol: float = 1e-7
    fatol: float = 1e-14

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def residuals(params: np.ndarray, problem: FitProblem) -> np.ndarray:
    """Simulated minus target over every (observable, time) cell."""
    params = np.clip(np.asarray(params, dtype=float), *PARAMETER_BOUNDS)
    simulated = problem.forward(params)
    if simulated.shape != problem.data.shape:
        raise SimulationError(f"Forward model returned {simulated.shape}, data is {problem.data.shape}")
    return (simulated - problem.data).ravel()


def chi_squared(params: np.ndarray, problem: FitProblem) -> float:
    return float(np.mean(residuals(params, problem) ** 2))


def _initial_simplex(start: np.ndarray, step: float, rng: np.random.Generator) -> np.ndarray:
    signs = rng.choice([-1.0, 1.0], size=start.size)
    simplex = [start]
    for i, sign in enumerate(signs):
        vertex = start.copy()
        moved = vertex[i] + sign * step
        if not PARAMETER_BOUNDS[0] <= moved <= PARAMETER_BOUNDS[1]:
            moved = vertex[i] - sign * step
        vertex[i] = moved
        simplex.append(vertex)
    return np.array(simplex)


def fit(
    problem: FitProblem,
    settings: Optional[FitSettings] = None,
    seed: int = 0,
    target: str = "observables",
) -> FitResult:
    """Bounded Nelder-Mead from the best points of a coarse grid."""
    settings = settings or FitSettings()
    dim = problem.n_parameters
    rng = np.random.default_rng(seed)

    grid = [np.array(point) for point in itertools.product(settings.grid, repeat=dim)]
    scores = [chi_squared(point, problem) for point in grid]
    order = np.argsort(scores, kind="stable")[: settings.restarts]
    logger.info("Grid search over %d points, best χ²=%.3e", len(grid), scores[order[0]])

    best_x, best_chi2 = grid[order[0]], scores[order[0]]
    converged = False
    iterations = 0
    for index in order:
        start = grid[index]
        result = optimize.minimize(
            chi_squared,
            start,
            args=(problem,),
            method="Nelder-Mead",
            bounds=[PARAMETER_BOUNDS] * dim,
            options={
                "initial_simplex": _initial_simplex(start, settings.initial_step, rng),
                "maxiter": settings.max_iterations,
                "xatol": settings.xatol,
                "fatol": settings.fatol,
            },
        )
        iterations += int(result.nit)
        logger.debug("Restart from %s: χ²=%.3e after %d iterations", start.tolist(), result.fun, result.nit)
        if result.fun <= best_chi2:
            best_x, best_chi2, converged = result.x, float(result.fun), bool(result.success)

    if not converged:
        logger.warning("Noise fit did not converge after %d restarts; reporting best point", settings.restarts)
    lambdas = np.clip(best_x, *PARAMETER_BOUNDS)
    return FitResult(
        lambdas=[float(v) for v in lambdas],
        chi2=float(best_chi2),
        converged=converged,
        iterations=iterations,
        settings_digest=settings.digest(),
        target=target,
    )
