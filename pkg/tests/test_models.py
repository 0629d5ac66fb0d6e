"""Tests for data models."""

import pytest

from src.models import (
    NOISE_PRESETS,
    SERIES_COLUMNS,
    BcsConfig,
    ExperimentSeries,
    FitResult,
    NoiseConfig,
    RunConfig,
    SeriesPoint,
    junction_key,
    parse_junction_key,
)


@pytest.fixture
def sample_series():
    points = [
        SeriesPoint(0.2 * (k + 1), "0", 0.5, 0.48, 0.01, 0.9, 0.005, 0.53, 0.012, 0.55, 0.56)
        for k in range(3)
    ]
    return ExperimentSeries("ZZZ", "0", 500, 4, {"rc": 11}, points)


class TestJunctionKeys:
    """Tests for junction key helpers."""

    def test_key_is_ordered(self):
        """Test keys always list the smaller qubit first."""
        assert junction_key(2, 1) == "1-2"

    def test_parse(self):
        """Test parsing normalizes order."""
        assert parse_junction_key("2-1") == (1, 2)

    @pytest.mark.parametrize("key", ["01", "a-b", "1-1", "-1"])
    def test_parse_rejects(self, key):
        """Test malformed keys raise ValueError."""
        with pytest.raises(ValueError):
            parse_junction_key(key)


class TestBcsConfig:
    """Tests for the BcsConfig dataclass."""

    def test_defaults(self):
        """Test the default model is three levels with 15 steps."""
        config = BcsConfig()
        assert config.levels == [-1.0, 0.0, 1.0]
        assert config.g == 0.5
        assert config.n_steps == 15

    def test_n_steps_rounds(self):
        """Test floating total times round to whole steps."""
        assert BcsConfig(total_time=0.6, dt=0.2).n_steps == 3


class TestNoiseConfig:
    """Tests for the NoiseConfig dataclass."""

    def test_preset_overrides_rates(self):
        """Test a preset replaces the explicit rates."""
        cnot, neigh, glob = NoiseConfig(preset="crosstalk-rc", lambda_glob=0.5).resolved_rates()
        assert cnot == {(0, 1): 0.0, (1, 2): 0.014}
        assert neigh == {(0, 1): 0.05, (1, 2): 0.01}
        assert glob == 0.002

    def test_explicit_rates(self):
        """Test explicit junction rates are parsed."""
        cnot, neigh, glob = NoiseConfig(lambda_cnot={"1-0": 0.01}, lambda_glob=0.001).resolved_rates()
        assert cnot == {(0, 1): 0.01}
        assert neigh == {}
        assert glob == 0.001

    def test_presets_have_five_rates(self):
        """Test every preset lists (λc01, λc12, λn01, λn12, λg)."""
        assert all(len(rates) == 5 for rates in NOISE_PRESETS.values())


class TestRunConfig:
    """Tests for the RunConfig dataclass."""

    def test_nec_count(self):
        """Test an explicit NEC count wins over the RC count."""
        config = RunConfig()
        config.nec.count = 7
        assert config.nec_count == 7

    def test_experiment_bases(self):
        """Test named experiments map to their basis strings."""
        assert RunConfig().experiment_bases() == {"ZZZ": "ZZZ", "XYZ": "XYZ"}


class TestExperimentSeries:
    """Tests for series containers."""

    def test_dataframe_columns(self, sample_series):
        """Test the frame has one row per point in the output column order."""
        frame = sample_series.to_dataframe()
        assert list(frame.columns) == SERIES_COLUMNS
        assert len(frame) == 3
        assert bool(frame["reliable_flag"].all())

    def test_from_dict(self, sample_series):
        """Test a series rebuilds from its dict form."""
        assert ExperimentSeries.from_dict(sample_series.to_dict()) == sample_series

    def test_file_name(self, sample_series):
        """Test output files are named by experiment and observable."""
        assert sample_series.file_name == "series_ZZZ_0.csv"


class TestFitResult:
    """Tests for FitResult."""

    def test_to_dict(self):
        """Test the dict form states how χ² is defined."""
        data = FitResult([0.01] * 5, 1e-6, True, 120).to_dict()
        assert data["chi2_definition"] == "mean squared residual"
        assert data["target"] == "observables"
