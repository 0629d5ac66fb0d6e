"""Randomized compiling: Pauli twirls around CNOTs and rotation twirls on idle neighbors."""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .circuit import (
    Circuit,
    CouplingMap,
    Gate,
    barrier,
    circuit_unitary,
    dumps,
    gate_matrix,
    cnot,
    pauli_gate,
    rotation_gate,
)
from .errors import InvariantViolation, TwirlError
from .linalg import PAULI_LABELS, PAULI_PHASES, PauliString, equal_up_to_phase, pauli_to_matrix

logger = logging.getLogger(__name__)

RC_MODES = ("none", "standard", "crosstalk")
ROTATION_AXES = ("x", "y", "z")

NeighborMap = Mapping[tuple[int, int], Sequence[int]]


def _find_correction(p: str, q: str) -> tuple[str, str, complex]:
    cx = gate_matrix(cnot(0, 1))
    conjugated = cx @ pauli_to_matrix(PauliString(p + q)) @ cx
    for r in PAULI_LABELS:
        for s in PAULI_LABELS:
            candidate = pauli_to_matrix(PauliString(r + s))
            for phase in PAULI_PHASES:
                if np.max(np.abs(conjugated - phase * candidate)) < 1e-14:
                    return r, s, complex(phase)
    raise InvariantViolation(f"CNOT·({p}⊗{q})·CNOT is not a Pauli string")


def build_correction_table() -> dict[tuple[str, str], tuple[str, str, complex]]:
    """(P, Q) before a CNOT -> (R, S, phase) after it, checked for all 16 pairs."""
    table = {}
    cx = gate_matrix(cnot(0, 1))
    for p in PAULI_LABELS:
        for q in PAULI_LABELS:
            r, s, phase = _find_correction(p, q)
            dressed = pauli_to_matrix(PauliString(r + s)) @ cx @ pauli_to_matrix(PauliString(p + q))
            if not equal_up_to_phase(dressed, cx, tol=1e-14):
                raise InvariantViolation(f"Correction ({r}, {s}) for ({p}, {q}) does not restore the CNOT")
            table[(p, q)] = (r, s, phase)
    return table


CORRECTIONS = build_correction_table()


def correction_for(p: str, q: str) -> tuple[str, str, complex]:
    """R⊗S·phase = CNOT·(P⊗Q)·CNOT with P on the control and Q on the target."""
    if p not in PAULI_LABELS or q not in PAULI_LABELS:
        raise TwirlError(f"Twirl gates must be Paulis, got ({p!r}, {q!r})")
    return CORRECTIONS[(p, q)]


@dataclass(frozen=True)
class CnotTwirl:
    index: int
    control: int
    target: int
    pre: tuple[str, str]
    post: tuple[str, str]
    phase: complex


@dataclass(frozen=True)
class NeighborTwirl:
    cnot_index: int
    qubit: int
    pauli: str
    axis: str


@dataclass(frozen=True)
class TwirlConfig:
    mode: str
    cnots: tuple[CnotTwirl, ...] = ()
    neighbors: tuple[NeighborTwirl, ...] = ()

    def to_dict(self) -> dict:
        data = asdict(self)
        for record in data["cnots"]:
            record["phase"] = [record["phase"].real, record["phase"].imag]
        return data

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class RcMember:
    seed: int
    config: TwirlConfig
    circuit: Circuit


@dataclass(frozen=True)
class RcEnsemble:
    base: Circuit
    mode: str
    master_seed: int
    members: tuple[RcMember, ...]

    @property
    def base_id(self) -> str:
        return hashlib.sha256(dumps(self.base).encode()).hexdigest()[:16]

    def __len__(self) -> int:
        return len(self.members)


def neighbor_map_for(coupling: CouplingMap) -> dict[tuple[int, int], tuple[int, ...]]:
    """Every junction mapped to the qubits adjacent to either of its ends."""
    return {edge: coupling.junction_neighbors(*edge) for edge in sorted(coupling.edges)}


def twirl_crosstalk(
    c: Circuit,
    neighbor_map: NeighborMap,
    rng: np.random.Generator | int | None = None,
    mode: str = "crosstalk",
) -> tuple[Circuit, TwirlConfig]:
    """Dress every CNOT with a Pauli twirl and its neighbors with Pauli+rotation pairs."""
    rng = np.random.default_rng(rng)
    gates: list[Gate] = []
    cnot_records = []
    neighbor_records = []
    cnot_index = 0
    for gate in c.gates:
        if gate.kind != "CNOT":
            gates.append(gate)
            continue
        control, target = gate.qubits
        neighbors = tuple(neighbor_map.get((min(control, target), max(control, target)), ()))
        if control in neighbors or target in neighbors:
            raise TwirlError(f"Neighbor set {neighbors} collides with CNOT({control}, {target})")
        p, q = (PAULI_LABELS[i] for i in rng.integers(0, 4, size=2))
        r, s, phase = correction_for(p, q)
        draws = [(b, PAULI_LABELS[rng.integers(0, 4)], ROTATION_AXES[rng.integers(0, 3)]) for b in neighbors]

        gates += [pauli_gate(p, control), pauli_gate(q, target)]
        for b, t, axis in draws:
            gates += [pauli_gate(t, b), rotation_gate(axis, math.pi / 2, b)]
        fence = barrier(control, target, *neighbors)
        gates += [fence, gate, fence]
        for b, t, axis in draws:
            gates += [rotation_gate(axis, -math.pi / 2, b), pauli_gate(t, b)]
        gates += [pauli_gate(r, control), pauli_gate(s, target)]

        cnot_records.append(CnotTwirl(cnot_index, control, target, (p, q), (r, s), phase))
        neighbor_records += [NeighborTwirl(cnot_index, b, t, axis) for b, t, axis in draws]
        cnot_index += 1
    config = TwirlConfig(mode, tuple(cnot_records), tuple(neighbor_records))
    return Circuit(c.n_qubits, tuple(gates), c.measure_basis), config


def twirl_standard(c: Circuit, rng: np.random.Generator | int | None = None) -> tuple[Circuit, TwirlConfig]:
    return twirl_crosstalk(c, {}, rng, mode="standard")


def member_seed(master_seed: int, index: int) -> int:
    """Seed of ensemble member ``index``: a SeedSequence hash of (master, index)."""
    state = np.random.SeedSequence([master_seed, index]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def generate_ensemble(
    c: Circuit,
    mode: str,
    count: int,
    master_seed: int,
    neighbor_map: Optional[NeighborMap] = None,
) -> RcEnsemble:
    if mode not in RC_MODES:
        raise TwirlError(f"Unknown RC mode {mode!r}; expected one of {RC_MODES}")
    if count < 1:
        raise TwirlError(f"Ensemble count must be at least 1, got {count}")
    if mode == "crosstalk" and neighbor_map is None:
        neighbor_map = neighbor_map_for(CouplingMap.linear(c.n_qubits))
    members = []
    for index in range(count):
        seed = member_seed(master_seed, index)
        if mode == "none":
            members.append(RcMember(seed, TwirlConfig("none"), c))
            continue
        if mode == "standard":
            dressed, config = twirl_standard(c, np.random.default_rng(seed))
        else:
            dressed, config = twirl_crosstalk(c, neighbor_map, np.random.default_rng(seed))
        members.append(RcMember(seed, config, dressed))
    logger.debug("Generated %d %s-twirled circuits from master seed %d", count, mode, master_seed)
    return RcEnsemble(c, mode, master_seed, tuple(members))


def verify_equivalence(ensemble: RcEnsemble, tol: float = 1e-9) -> bool:
    """Every dressed circuit implements the base unitary up to global phase."""
    reference = circuit_unitary(ensemble.base)
    return all(equal_up_to_phase(circuit_unitary(m.circuit), reference, tol) for m in ensemble.members)


def save_ensemble(ensemble: RcEnsemble, directory: str | Path) -> Path:
    """Write one circuit file per member plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, member in enumerate(ensemble.members):
        name = f"member_{index:04d}.txt"
        (directory / name).write_text(dumps(member.circuit))
        entries.append({"index": index, "seed": member.seed, "config_digest": member.config.digest(), "file": name})
    manifest = {
        "base_id": ensemble.base_id,
        "master_seed": ensemble.master_seed,
        "mode": ensemble.mode,
        "count": len(ensemble),
        "members": entries,
    }
    manifest_path = directory / "manifest.json"
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest_path
