"""Tests for randomized compiling."""

import json

import numpy as np
import pytest

from src.bcs import trotter_circuit
from src.channels import crosstalk_twirl_average, pauli_channel_from_ptm, ptm, random_kraus_channel, unitary_ptm
from src.circuit import Circuit, circuit_unitary, cnot, count_cnots, loads, rz, validate
from src.errors import TwirlError
from src.linalg import equal_up_to_phase
from src.twirling import (
    CORRECTIONS,
    correction_for,
    generate_ensemble,
    member_seed,
    neighbor_map_for,
    save_ensemble,
    twirl_crosstalk,
    twirl_standard,
    verify_equivalence,
)


def non_barrier(c: Circuit) -> int:
    return sum(1 for g in c.gates if g.kind != "BARRIER")


class TestCorrections:
    """Tests for the CNOT correction table."""

    def test_table_complete(self):
        """Test every Pauli pair has a correction."""
        assert len(CORRECTIONS) == 16

    def test_x_on_control_spreads(self):
        """Test X on the control becomes X on both qubits."""
        assert correction_for("X", "I")[:2] == ("X", "X")

    def test_z_on_target_spreads(self):
        """Test Z on the target becomes Z on both qubits."""
        assert correction_for("I", "Z")[:2] == ("Z", "Z")

    def test_commuting_pairs_unchanged(self):
        """Test Z on the control and X on the target pass through."""
        assert correction_for("Z", "I")[:2] == ("Z", "I")
        assert correction_for("I", "X")[:2] == ("I", "X")

    def test_rejects_non_pauli(self):
        """Test labels outside IXYZ raise."""
        with pytest.raises(TwirlError):
            correction_for("H", "I")


class TestStandardTwirl:
    """Tests for the Pauli twirl around each CNOT."""

    def test_unitary_preserved(self, chain_params, mean_field):
        """Test a twirled Trotter step equals the bare one up to phase."""
        c, _ = trotter_circuit(chain_params, mean_field, 1)
        dressed, _ = twirl_standard(c, 3)
        assert equal_up_to_phase(circuit_unitary(dressed), circuit_unitary(c))

    def test_inserted_gate_count(self, chain_params, mean_field):
        """Test 9 CNOTs receive 36 Pauli gates and keep their count."""
        c, _ = trotter_circuit(chain_params, mean_field, 1)
        dressed, config = twirl_standard(c, 11)
        assert non_barrier(dressed) - non_barrier(c) == 36
        assert count_cnots(dressed) == 9
        assert len(config.cnots) == 9
        assert config.neighbors == ()

    def test_deterministic(self, chain_params, mean_field):
        """Test the same seed gives the same circuit."""
        c, _ = trotter_circuit(chain_params, mean_field, 2)
        assert twirl_standard(c, 5) == twirl_standard(c, 5)

    def test_barriers_fence_each_cnot(self):
        """Test every CNOT sits between two barriers on its pair."""
        dressed, _ = twirl_standard(Circuit(2, (cnot(0, 1),)), 0)
        kinds = [g.kind for g in dressed.gates]
        i = kinds.index("CNOT")
        assert kinds[i - 1] == "BARRIER" and kinds[i + 1] == "BARRIER"
        assert dressed.gates[i - 1].qubits == (0, 1)


class TestCrosstalkTwirl:
    """Tests for the neighbor-rotation twirl."""

    def test_four_gates_per_neighbor(self, linear_map):
        """Test each neighbor gets a Pauli and rotation on both sides."""
        base = Circuit(3, (cnot(0, 1), cnot(2, 1)))
        standard, _ = twirl_standard(base, 2)
        crosstalk, config = twirl_crosstalk(base, neighbor_map_for(linear_map), 2)
        assert non_barrier(crosstalk) - non_barrier(standard) == 8
        assert [n.qubit for n in config.neighbors] == [2, 0]

    def test_unitary_preserved(self, chain_params, mean_field, linear_map):
        """Test crosstalk-twirled circuits keep the unitary and coupling."""
        c, _ = trotter_circuit(chain_params, mean_field, 2)
        dressed, _ = twirl_crosstalk(c, neighbor_map_for(linear_map), 9)
        assert equal_up_to_phase(circuit_unitary(dressed), circuit_unitary(c))
        assert validate(dressed, linear_map) == []

    def test_neighbor_collision(self):
        """Test a neighbor equal to the control raises."""
        with pytest.raises(TwirlError):
            twirl_crosstalk(Circuit(3, (cnot(0, 1),)), {(0, 1): (0,)}, 0)

    def test_barrier_covers_neighbors(self, linear_map):
        """Test the fence spans the pair and its neighbors."""
        dressed, _ = twirl_crosstalk(Circuit(3, (cnot(1, 2),)), neighbor_map_for(linear_map), 0)
        fences = [g for g in dressed.gates if g.kind == "BARRIER"]
        assert fences[0].qubits == (1, 2, 0)

    def test_exhaustive_average_matches_closed_form(self, rng):
        """Test averaging every distinct twirl of a noisy CNOT gives the crosstalk-twirled channel."""
        noise = random_kraus_channel(3, rng)
        base = Circuit(3, (cnot(0, 1),))
        cnot_ptm = unitary_ptm(circuit_unitary(base))
        seen = {}
        for seed in range(3000):
            dressed, config = twirl_crosstalk(base, {(0, 1): (2,)}, seed)
            key = (config.cnots[0].pre, config.neighbors[0].pauli, config.neighbors[0].axis)
            seen.setdefault(key, dressed)
        assert len(seen) == 16 * 4 * 3

        total = np.zeros((64, 64))
        noise_ptm = ptm(noise)
        for dressed in seen.values():
            split = [g.kind for g in dressed.gates].index("CNOT") + 1
            before = circuit_unitary(Circuit(3, dressed.gates[:split]))
            after = circuit_unitary(Circuit(3, dressed.gates[split:]))
            total += unitary_ptm(after) @ noise_ptm @ unitary_ptm(before) @ cnot_ptm.T
        averaged = pauli_channel_from_ptm(total / len(seen))
        expected = crosstalk_twirl_average(noise)
        np.testing.assert_allclose(averaged.probabilities, expected.probabilities, atol=1e-10)


class TestEnsemble:
    """Tests for ensemble generation."""

    def test_member_seeds_distinct(self):
        """Test member seeds differ and are reproducible."""
        seeds = [member_seed(42, i) for i in range(50)]
        assert len(set(seeds)) == 50
        assert member_seed(42, 3) == seeds[3]

    def test_none_mode_keeps_base(self):
        """Test mode none repeats the base circuit."""
        base = Circuit(2, (cnot(0, 1),))
        ensemble = generate_ensemble(base, "none", 3, 1)
        assert len(ensemble) == 3
        assert all(m.circuit == base for m in ensemble.members)

    def test_modes_and_counts_checked(self):
        """Test unknown modes and empty ensembles raise."""
        base = Circuit(2, (cnot(0, 1),))
        with pytest.raises(TwirlError):
            generate_ensemble(base, "full", 3, 1)
        with pytest.raises(TwirlError):
            generate_ensemble(base, "standard", 0, 1)

    def test_crosstalk_defaults_to_chain(self):
        """Test crosstalk mode without a map uses the linear chain."""
        ensemble = generate_ensemble(Circuit(3, (cnot(0, 1),)), "crosstalk", 2, 4)
        assert all(len(m.config.neighbors) == 1 for m in ensemble.members)

    def test_equivalence(self, chain_params, mean_field):
        """Test every member implements the base unitary."""
        c, _ = trotter_circuit(chain_params, mean_field, 2)
        assert verify_equivalence(generate_ensemble(c, "crosstalk", 4, 8))

    def test_equivalence_detects_change(self):
        """Test a tampered member fails verification."""
        base = Circuit(2, (cnot(0, 1),))
        ensemble = generate_ensemble(base, "standard", 2, 0)
        member = ensemble.members[0]
        tampered = type(member)(member.seed, member.config, member.circuit.append(rz(0, 0.3)))
        broken = type(ensemble)(base, "standard", 0, (tampered,))
        assert not verify_equivalence(broken)

    def test_reproducible(self, chain_params, mean_field):
        """Test equal master seeds give equal ensembles and digests."""
        c, _ = trotter_circuit(chain_params, mean_field, 1)
        a = generate_ensemble(c, "crosstalk", 3, 17)
        b = generate_ensemble(c, "crosstalk", 3, 17)
        assert [m.config.digest() for m in a.members] == [m.config.digest() for m in b.members]
        assert a.members[0].config.digest() != a.members[1].config.digest()

    def test_save_ensemble(self, tmp_path, chain_params, mean_field):
        """Test the manifest lists every member file."""
        c, _ = trotter_circuit(chain_params, mean_field, 1, basis="ZZZ")
        ensemble = generate_ensemble(c, "standard", 3, 21)
        path = save_ensemble(ensemble, tmp_path / "rc")
        manifest = json.loads(path.read_text())
        assert manifest["count"] == 3
        assert manifest["mode"] == "standard"
        assert manifest["base_id"] == ensemble.base_id
        first = manifest["members"][0]
        assert first["seed"] == ensemble.members[0].seed
        assert loads((tmp_path / "rc" / first["file"]).read_text()) == ensemble.members[0].circuit
