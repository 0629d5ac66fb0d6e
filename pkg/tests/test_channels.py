"""Tests for noise channels and twirl averages."""

import json

import numpy as np
import pytest

from src.channels import (
    DepolarizingChannel,
    KrausChannel,
    PauliChannel,
    QuasiLocalChannel,
    apply_channel,
    channel_from_dict,
    channel_map,
    channel_to_dict,
    compose,
    crosstalk_twirl_average,
    marginal_on_active_pair,
    marginal_on_neighbor,
    pauli_twirl_average,
    ptm,
    ptm_distance,
    random_kraus_channel,
    rotation_matrix,
    to_kraus,
    twirled_ptm,
)
from src.errors import ChannelError
from src.linalg import DensityMatrix, PauliString, kron, mix_qubits


def random_state(n_qubits: int, rng: np.random.Generator) -> DensityMatrix:
    dim = 2 ** n_qubits
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return DensityMatrix(n_qubits, rho / np.trace(rho))


class TestConstruction:
    """Tests for channel validation."""

    def test_kraus_not_trace_preserving(self):
        """Test incomplete Kraus sets raise."""
        with pytest.raises(ChannelError):
            KrausChannel(1, (0.5 * np.eye(2),))

    def test_pauli_probabilities_must_sum(self):
        """Test Pauli probabilities must sum to one."""
        with pytest.raises(ChannelError):
            PauliChannel(1, np.array([0.5, 0.2, 0.2, 0.0]))

    def test_negative_probability(self):
        """Test negative Pauli probabilities raise."""
        with pytest.raises(ChannelError):
            PauliChannel(1, np.array([1.1, -0.1, 0.0, 0.0]))

    def test_depolarizing_range(self):
        """Test λ above 4/3 is rejected for one qubit."""
        with pytest.raises(ChannelError):
            DepolarizingChannel(1, 1.5)

    def test_quasi_local_total(self):
        """Test the summed rates may not exceed one."""
        with pytest.raises(ChannelError):
            QuasiLocalChannel(0.6, 0.3, 0.2)

    def test_random_channel_is_cptp(self, rng):
        """Test random Kraus channels satisfy completeness."""
        ch = random_kraus_channel(2, rng)
        total = sum(k.conj().T @ k for k in ch.kraus)
        np.testing.assert_allclose(total, np.eye(4), atol=1e-10)


class TestApplication:
    """Tests for applying channels to states."""

    def test_identity_channel(self, rng):
        """Test the identity channel leaves ρ unchanged."""
        rho = random_state(2, rng)
        out = apply_channel(rho, KrausChannel.identity(1), [1])
        np.testing.assert_allclose(out.matrix, rho.matrix, atol=1e-12)

    def test_full_depolarizing(self, rng):
        """Test λ=1 depolarizing on every qubit gives I/d."""
        rho = random_state(2, rng)
        out = apply_channel(rho, DepolarizingChannel(2, 1.0), [0, 1])
        np.testing.assert_allclose(out.matrix, np.eye(4) / 4, atol=1e-12)

    def test_forms_agree(self, rng):
        """Test mixture, Pauli and Kraus forms of a quasi-local channel agree."""
        ch = QuasiLocalChannel(0.05, 0.02, 0.01)
        rho = random_state(3, rng).matrix
        targets = [2, 0, 1]
        direct = channel_map(ch, rho, targets, 3)
        np.testing.assert_allclose(channel_map(ch.to_pauli_channel(), rho, targets, 3), direct, atol=1e-12)
        np.testing.assert_allclose(channel_map(to_kraus(ch), rho, targets, 3), direct, atol=1e-12)

    def test_quasi_local_without_neighbors(self, rng):
        """Test a pair-only channel mixes the pair."""
        ch = QuasiLocalChannel(1.0, n_neighbors=0)
        rho = random_state(3, rng).matrix
        np.testing.assert_allclose(channel_map(ch, rho, [0, 1], 3), mix_qubits(rho, [0, 1], 3), atol=1e-12)

    def test_wrong_target_count(self, rng):
        """Test targets must match the channel width."""
        with pytest.raises(ChannelError):
            channel_map(DepolarizingChannel(2, 0.1), random_state(3, rng).matrix, [0], 3)

    def test_compose_depolarizing(self):
        """Test two depolarizing channels compose multiplicatively."""
        composed = compose(DepolarizingChannel(1, 0.1), DepolarizingChannel(1, 0.2))
        expected = DepolarizingChannel(1, 1 - 0.9 * 0.8)
        assert ptm_distance(composed, expected) < 1e-12


class TestPtm:
    """Tests for Pauli transfer matrices."""

    def test_depolarizing_ptm(self):
        """Test the depolarizing PTM is diag(1, 1-λ, 1-λ, 1-λ)."""
        np.testing.assert_allclose(ptm(DepolarizingChannel(1, 0.3)), np.diag([1, 0.7, 0.7, 0.7]), atol=1e-12)

    def test_kraus_and_pauli_paths_agree(self):
        """Test the PTM of a Pauli channel via Kraus matches the closed form."""
        ch = PauliChannel(1, np.array([0.7, 0.1, 0.15, 0.05]))
        np.testing.assert_allclose(ptm(to_kraus(ch)), ptm(ch), atol=1e-12)

    def test_trace_preserving_row(self, rng):
        """Test the first PTM row is (1, 0, ..., 0) for a CPTP map."""
        row = ptm(random_kraus_channel(2, rng))[0]
        np.testing.assert_allclose(row, np.eye(16)[0], atol=1e-10)


class TestPauliTwirl:
    """Tests for the full Pauli twirl."""

    def test_twirled_ptm_is_diagonal(self, rng):
        """Test the exhaustive twirl removes every off-diagonal PTM entry."""
        twirled = twirled_ptm(random_kraus_channel(2, rng))
        off = twirled - np.diag(np.diag(twirled))
        assert np.max(np.abs(off)) < 1e-10

    def test_methods_agree(self, rng):
        """Test closed form and operational average give the same probabilities."""
        for _ in range(20):
            ch = random_kraus_channel(2, rng)
            np.testing.assert_allclose(
                pauli_twirl_average(ch, "trace").probabilities,
                pauli_twirl_average(ch, "operational").probabilities,
                atol=1e-10,
            )

    def test_diagonal_preserved(self, rng):
        """Test twirling keeps the PTM diagonal."""
        ch = random_kraus_channel(2, rng)
        np.testing.assert_allclose(np.diag(ptm(pauli_twirl_average(ch))), np.diag(ptm(ch)), atol=1e-10)

    def test_pauli_channel_fixed_point(self):
        """Test a Pauli channel is its own twirl."""
        ch = QuasiLocalChannel(0.04, 0.01, 0.0, n_neighbors=0)
        twirled = pauli_twirl_average(to_kraus(ch))
        np.testing.assert_allclose(twirled.probabilities, ch.to_pauli_channel().probabilities, atol=1e-12)

    def test_unknown_method(self, rng):
        """Test an unknown method raises."""
        with pytest.raises(ChannelError):
            pauli_twirl_average(random_kraus_channel(1, rng), "sampled")


class TestCrosstalkTwirl:
    """Tests for the neighbor-rotation twirl."""

    def test_methods_agree(self, rng):
        """Test closed form and operational crosstalk averages agree."""
        for _ in range(5):
            ch = random_kraus_channel(3, rng)
            np.testing.assert_allclose(
                crosstalk_twirl_average(ch, method="trace").probabilities,
                crosstalk_twirl_average(ch, method="operational").probabilities,
                atol=1e-10,
            )

    def test_neighbor_marginal_is_depolarizing(self, rng):
        """Test the neighbor sees equal X, Y and Z weights."""
        for _ in range(20):
            twirled = crosstalk_twirl_average(random_kraus_channel(3, rng))
            weights = twirled.marginal([2]).probabilities[1:]
            assert np.ptp(weights) < 1e-10
            marginal_on_neighbor(twirled)

    def test_active_pair_marginal_unchanged(self, rng):
        """Test the pair marginal matches the plain Pauli twirl."""
        ch = random_kraus_channel(3, rng)
        np.testing.assert_allclose(
            marginal_on_active_pair(crosstalk_twirl_average(ch)).probabilities,
            pauli_twirl_average(ch).marginal([0, 1]).probabilities,
            atol=1e-10,
        )

    def test_plain_twirl_can_be_anisotropic(self):
        """Test a coherent neighbor rotation leaves only Z weight after a Pauli twirl."""
        u = kron(rotation_matrix("z", 0.3), np.eye(4))
        ch = KrausChannel.unitary(u)
        marginal = pauli_twirl_average(ch).marginal([2]).probabilities
        assert marginal[1] == pytest.approx(0.0, abs=1e-12)
        assert marginal[3] > 0.02
        with pytest.raises(ChannelError):
            marginal_on_neighbor(pauli_twirl_average(ch))
        assert marginal_on_neighbor(crosstalk_twirl_average(ch)).lam > 0

    def test_needs_a_neighbor(self, rng):
        """Test the crosstalk twirl needs at least one neighbor."""
        with pytest.raises(ChannelError):
            crosstalk_twirl_average(random_kraus_channel(2, rng))


class TestMarginals:
    """Tests for Pauli channel marginals."""

    def test_single_qubit_marginal(self):
        """Test marginal probabilities of a product channel."""
        p = np.zeros(16)
        p[PauliString("II").index] = 0.9
        p[PauliString("XZ").index] = 0.1
        ch = PauliChannel(2, p)
        np.testing.assert_allclose(ch.marginal([0]).probabilities, [0.9, 0.1, 0, 0])
        np.testing.assert_allclose(ch.marginal([1]).probabilities, [0.9, 0, 0, 0.1])

    def test_probability_lookup(self):
        """Test probability() uses the label index."""
        ch = DepolarizingChannel(1, 0.4).to_pauli_channel()
        assert ch.probability("Y") == pytest.approx(0.1)


class TestSerialization:
    """Tests for channel dictionaries."""

    @pytest.mark.parametrize("ch", [
        DepolarizingChannel(2, 0.05),
        QuasiLocalChannel(0.01, 0.02, 0.003),
        PauliChannel(1, np.array([0.8, 0.1, 0.05, 0.05])),
    ])
    def test_json_round_trip(self, ch):
        """Test channels survive JSON serialization."""
        restored = channel_from_dict(json.loads(json.dumps(channel_to_dict(ch))))
        assert ptm_distance(restored, ch) < 1e-12

    def test_kraus_dict(self, rng):
        """Test Kraus operators are stored as real/imaginary pairs."""
        ch = random_kraus_channel(1, rng, n_kraus=2)
        data = channel_to_dict(ch)
        assert data["type"] == "kraus"
        assert np.array(data["kraus"]).shape == (2, 2, 2, 2)
        assert ptm_distance(channel_from_dict(data), ch) < 1e-12

    def test_unknown_type(self):
        """Test unknown channel types raise."""
        with pytest.raises(ChannelError):
            channel_from_dict({"type": "amplitude", "n_qubits": 1})
