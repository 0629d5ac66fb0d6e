"""Tests for the experiment pipeline."""

import dataclasses
import json
import math
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from src.models import BcsConfig, FitConfig, NecConfig, NoiseConfig, RcConfig, RecConfig
from src.runner import (
    STAGE_CODES,
    ExperimentRunner,
    fit_from_config,
    load_fit_targets,
    stage_seed,
    summarize,
    twirl_check,
)


@pytest.fixture
def exact_config(small_config):
    """Noiseless exact-channel run without readout correction."""
    return dataclasses.replace(
        small_config,
        noise=NoiseConfig(),
        rec=RecConfig(mode="none"),
        evaluation="exact-channel",
    )


def read_series(run_dir) -> pd.DataFrame:
    return pd.concat([pd.read_csv(p) for p in sorted(run_dir.glob("series_*.csv"))], ignore_index=True)


class TestStageSeeds:
    """Tests for per-stage seed derivation."""

    def test_reproducible(self):
        """Test equal inputs give equal seeds."""
        assert stage_seed(7, "rc", 0, 3) == stage_seed(7, "rc", 0, 3)

    def test_distinct(self):
        """Test stages, indices and masters all change the seed."""
        seeds = {stage_seed(m, s, i) for m in (0, 1) for s in STAGE_CODES for i in range(5)}
        assert len(seeds) == 2 * len(STAGE_CODES) * 5


class TestExperimentRunner:
    """Tests for the full pipeline."""

    def test_outputs(self, small_config, tmp_path):
        """Test a run writes one CSV per experiment and observable plus its manifest."""
        manifest = ExperimentRunner(small_config).run(tmp_path / "run")
        run_dir = tmp_path / "run"

        csvs = sorted(p.name for p in run_dir.glob("series_*.csv"))
        assert len(csvs) == 14
        assert "series_ZZZ_Z0.csv" in csvs
        assert "series_XYZ_X0Y1Z2.csv" in csvs
        assert set(manifest.outputs) == {p.name for p in run_dir.iterdir()}
        assert not (tmp_path / "run.partial").exists()
        stored = json.loads((run_dir / "manifest.json").read_text())
        assert stored["seeds"]["master"] == 7
        assert stored["config_digest"] == manifest.config_digest

        frame = pd.read_csv(run_dir / csvs[0])
        assert len(frame) == 2
        np.testing.assert_allclose(frame["time"], [0.2, 0.4])

    def test_deterministic(self, small_config, tmp_path):
        """Test equal configs give byte-identical series, whatever the thread count."""
        ExperimentRunner(small_config).run(tmp_path / "a")
        ExperimentRunner(small_config, threads=2).run(tmp_path / "b")
        for path in sorted((tmp_path / "a").glob("series_*.csv")):
            assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()

    def test_nec_does_not_shift_rc(self, small_config, tmp_path):
        """Test disabling NEC leaves the RC means untouched and mitigation empty."""
        ExperimentRunner(small_config).run(tmp_path / "with")
        without = dataclasses.replace(small_config, nec=NecConfig(enabled=False))
        ExperimentRunner(without).run(tmp_path / "without")

        a, b = read_series(tmp_path / "with"), read_series(tmp_path / "without")
        np.testing.assert_array_equal(a["rc_mean"], b["rc_mean"])
        np.testing.assert_array_equal(a["raw"], b["raw"])
        assert b["mitigated"].isna().all()
        assert not b["reliable_flag"].any()

    def test_noiseless_exact_channel(self, exact_config, tmp_path):
        """Test a noiseless exact run matches the Trotter values and NEC is 1."""
        ExperimentRunner(exact_config).run(tmp_path / "run")
        data = read_series(tmp_path / "run")

        np.testing.assert_allclose(data["raw"], data["trotter_ideal"], atol=1e-10)
        np.testing.assert_allclose(data["rc_mean"], data["trotter_ideal"], atol=1e-10)
        np.testing.assert_allclose(data["nec_mean"], 1.0, atol=1e-10)
        np.testing.assert_allclose(data["rc_stderr"], 0.0, atol=1e-10)

    def test_trotter_tracks_exact(self, exact_config, tmp_path):
        """Test early Trotter values stay close to exact evolution."""
        ExperimentRunner(exact_config).run(tmp_path / "run")
        data = read_series(tmp_path / "run")
        assert np.max(np.abs(data["trotter_ideal"] - data["exact"])) < 0.25

    def test_failure_leaves_no_output(self, small_config, tmp_path):
        """Test a failing stage removes the staging directory."""
        with patch.object(ExperimentRunner, "assemble", side_effect=RuntimeError("boom")):
            with pytest.raises(RuntimeError):
                ExperimentRunner(small_config).run(tmp_path / "run")
        assert not (tmp_path / "run").exists()
        assert not (tmp_path / "run.partial").exists()

    def test_fit_written(self, exact_config, tmp_path):
        """Test an enabled fit writes fit.json."""
        config = dataclasses.replace(
            exact_config,
            rc=RcConfig(mode="none", count=1),
            fit=FitConfig(enabled=True, experiment="XYZ", grid=[0.005], restarts=1, max_iterations=30),
        )
        manifest = ExperimentRunner(config).run(tmp_path / "run")
        assert "fit.json" in manifest.outputs
        data = json.loads((tmp_path / "run" / "fit.json").read_text())
        assert len(data["lambdas"]) == 5
        assert data["target"] == "observables"


class TestFitFromConfig:
    """Tests for fitting outside a run."""

    def test_synthetic_targets(self, small_config):
        """Test synthetic targets from the configured preset give a bounded fit."""
        config = dataclasses.replace(
            small_config, fit=FitConfig(grid=[0.005], restarts=1, max_iterations=60)
        )
        result = fit_from_config(config)
        assert len(result.lambdas) == 5
        assert all(0.0 <= v <= 1.0 for v in result.lambdas)
        assert math.isfinite(result.chi2)

    def test_load_targets(self, exact_config, tmp_path):
        """Test fit targets come back as observable × step."""
        ExperimentRunner(exact_config).run(tmp_path / "run")
        data = load_fit_targets(tmp_path / "run", exact_config)
        assert data.shape == (7, 2)

    def test_missing_experiment(self, exact_config, tmp_path):
        """Test a run without the fit experiment raises."""
        config = dataclasses.replace(exact_config, experiments=["ZZZ"])
        ExperimentRunner(config).run(tmp_path / "run")
        with pytest.raises(FileNotFoundError):
            load_fit_targets(tmp_path / "run", config)


class TestTwirlCheck:
    """Tests for the twirl self-check."""

    def test_passes(self):
        """Test random channels pass every check."""
        report = twirl_check(2, seed=3)
        assert report.passed
        assert len(report.entries) == 10
        assert report.max_deviation < 1e-10

    def test_empty(self):
        """Test zero channels gives an empty passing report."""
        report = twirl_check(0)
        assert report.passed
        assert report.to_dataframe().empty


class TestSummarize:
    """Tests for the relative-error table."""

    def test_variants(self, exact_config, tmp_path):
        """Test one row for raw plus one per RC mode."""
        ExperimentRunner(exact_config).run(tmp_path / "crosstalk")
        ExperimentRunner(dataclasses.replace(exact_config, rc=RcConfig(mode="none", count=1))).run(tmp_path / "none")

        table = summarize([tmp_path / "crosstalk", tmp_path / "none"])

        assert table["variant"].tolist() == ["raw", "none", "crosstalk"]
        assert table["points"].tolist() == [56, 28, 28]
        assert list(table.columns) == ["variant", "mean_relative_error", "points"]

    def test_missing_series(self, tmp_path):
        """Test a directory without series raises."""
        with pytest.raises(FileNotFoundError):
            summarize([tmp_path])


@pytest.fixture
def accuracy_config(exact_config):
    """Three exact-channel steps under the crosstalk-fitted rates."""
    return dataclasses.replace(
        exact_config,
        bcs=BcsConfig(total_time=0.6),
        noise=NoiseConfig(preset="crosstalk-rc"),
        rc=RcConfig(mode="none", count=1),
        nec=NecConfig(enabled=True, count=10),
    )


class TestMitigationAccuracy:
    """End-to-end accuracy of the mitigated series."""

    def test_small_time_nec_adequacy(self, accuracy_config, tmp_path):
        """Test NEC cuts the early-time deviation from the Trotter values at least threefold."""
        ExperimentRunner(accuracy_config).run(tmp_path / "run")
        data = read_series(tmp_path / "run")

        assert sorted(data["time"].unique()) == pytest.approx([0.2, 0.4, 0.6])
        raw_error = np.sum(np.abs(data["raw"] - data["trotter_ideal"]))
        mitigated_error = np.sum(np.abs(data["mitigated"] - data["trotter_ideal"]))
        assert raw_error > 0
        assert 3 * mitigated_error <= raw_error

    def test_crosstalk_rc_beats_standard_rc(self, accuracy_config, tmp_path):
        """Test a coherent neighbor error orders the errors crosstalk < standard < raw."""
        noise = NoiseConfig(preset="crosstalk-rc", coherent_neighbor_angle=0.1)
        for mode in ("standard", "crosstalk"):
            config = dataclasses.replace(
                accuracy_config, noise=noise, rc=RcConfig(mode=mode, count=40), nec=NecConfig(count=40)
            )
            ExperimentRunner(config).run(tmp_path / mode)

        table = summarize([tmp_path / "standard", tmp_path / "crosstalk"]).set_index("variant")
        errors = table["mean_relative_error"]

        assert errors["crosstalk"] <= 0.8 * errors["standard"]
        assert errors["standard"] <= 0.8 * errors["raw"]
