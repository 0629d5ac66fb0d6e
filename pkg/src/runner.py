"""Experiment orchestration: circuits, ensembles, simulation, mitigation and outputs."""

import json
import logging
import math
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from . import __version__
from .bcs import BcsParams, MeanFieldState, exact_evolution, mean_field_angles, solve_gap, trotter_circuit
from .channels import (
    crosstalk_twirl_average,
    pauli_twirl_average,
    random_kraus_channel,
    twirled_ptm,
)
from .circuit import Circuit, CouplingMap, LayoutTracker
from .config import config_digest, get_output_dir
from .fitting import FitProblem, FitSettings, ForwardModel, fit
from .mitigation import (
    EnsembleStats,
    build_nec,
    ensemble_statistics,
    mean_relative_error,
    mitigate,
    mitigation_uncertainty,
)
from .models import ExperimentSeries, FitResult, RunConfig, RunManifest, SeriesPoint
from .readout import ReadoutModel, total_variation, unfold
from .simulator import (
    Counts,
    NoiseModel,
    all_observables,
    calibration_confusion,
    expectation_from_probabilities,
    measurement_probabilities,
    observable_label,
    sample_counts,
    simulate,
)
from .twirling import generate_ensemble, neighbor_map_for, twirl_crosstalk, twirl_standard

logger = logging.getLogger(__name__)

STAGE_CODES = {"raw": 0, "rc": 1, "nec": 2, "calibration": 3}
TWIRL_CHECK_TOL = 1e-10


def stage_seed(master: int, stage: str, *indices: int) -> int:
    """Independent seed for one pipeline stage, derived from (master, stage, indices)."""
    sequence = np.random.SeedSequence([master, STAGE_CODES[stage], *indices])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def stage_rng(master: int, stage: str, *indices: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master, STAGE_CODES[stage], *indices]))


def build_noise_model(config: RunConfig, coupling: CouplingMap) -> NoiseModel:
    noise = config.noise
    lam_cnot, lam_neigh, lam_glob = noise.resolved_rates()
    return NoiseModel.quasi_local(
        coupling,
        lam_cnot,
        lam_neigh,
        lam_glob,
        noise.coherent_neighbor_angle,
        strict=noise.strict,
        single_qubit_lambda=noise.single_qubit_lambda,
        readout=ReadoutModel.symmetric(coupling.n_qubits, noise.readout_flip),
    )


@dataclass
class PipelineContext:
    """Everything a step worker needs, shared read-only across threads."""
    config: RunConfig
    params: BcsParams
    mf: MeanFieldState
    coupling: CouplingMap
    noise_model: NoiseModel
    confusion: Optional[np.ndarray]  # calibrated estimate used for unfolding
    observables: list[tuple[int, ...]]
    exact: dict[str, np.ndarray] = field(default_factory=dict)  # experiment -> observable × step

    @property
    def exact_channel(self) -> bool:
        return self.config.evaluation == "exact-channel"


@dataclass
class StepResult:
    step: int
    raw: dict[str, list[float]]
    trotter_ideal: dict[str, list[float]]
    rc: dict[str, list[EnsembleStats]]
    nec: Optional[list[EnsembleStats]]


class StepWorker:
    """Runs every stage for one Trotter step across all experiments."""

    def __init__(self, context: PipelineContext, step: int):
        self.context = context
        self.step = step
        self.config = context.config

    def run(self) -> StepResult:
        ctx = self.context
        raw, ideal, rc = {}, {}, {}
        layout = None
        circuit = None
        for exp_index, (name, basis) in enumerate(self.config.experiment_bases().items()):
            circuit, layout = trotter_circuit(ctx.params, ctx.mf, self.step, basis, self.config.bcs.form)
            bits = self._observable_bits(layout)
            noiseless = simulate(circuit, NoiseModel.noiseless(circuit.n_qubits))
            ideal[name] = self._expectations(measurement_probabilities(noiseless, circuit.measure_basis), bits)
            raw[name] = self._evaluate(circuit, bits, stage_rng(self.config.seed, "raw", exp_index, self.step))
            rc[name] = self._rc_statistics(circuit, bits, raw[name], exp_index)
        nec = self._nec_statistics(circuit, layout) if self.config.nec.enabled else None
        logger.info("Step %d finished", self.step)
        return StepResult(self.step, raw, ideal, rc, nec)

    def _observable_bits(self, layout: LayoutTracker) -> list[list[int]]:
        return [[layout.physical(q) for q in obs] for obs in self.context.observables]

    @staticmethod
    def _expectations(probs: np.ndarray, bits: list[list[int]]) -> list[float]:
        return [expectation_from_probabilities(probs, b) for b in bits]

    def _probabilities(self, circuit: Circuit, rng: np.random.Generator) -> np.ndarray:
        ctx = self.context
        rho = simulate(circuit, ctx.noise_model)
        if ctx.exact_channel:
            return measurement_probabilities(rho, circuit.measure_basis)
        counts = sample_counts(rho, circuit.measure_basis, self.config.shots, ctx.noise_model.readout.matrix, rng)
        return self._corrected(counts)

    def _corrected(self, counts: Counts) -> np.ndarray:
        if self.context.confusion is None:
            return counts.frequencies()
        return unfold(counts.to_vector(), self.context.confusion, self.config.rec.iterations)

    def _evaluate(self, circuit: Circuit, bits: list[list[int]], rng: np.random.Generator) -> list[float]:
        return self._expectations(self._probabilities(circuit, rng), bits)

    def _shots(self) -> Optional[int]:
        return None if self.context.exact_channel else self.config.shots

    def _rc_statistics(self, circuit: Circuit, bits, raw: list[float], exp_index: int) -> list[EnsembleStats]:
        if self.config.rc.mode == "none":
            return [ensemble_statistics([v], self._shots()) for v in raw]
        ensemble = generate_ensemble(
            circuit,
            self.config.rc.mode,
            self.config.rc.count,
            stage_seed(self.config.seed, "rc", exp_index, self.step),
            neighbor_map_for(self.context.coupling),
        )
        values = np.array([
            self._evaluate(member.circuit, bits, np.random.default_rng([member.seed, STAGE_CODES["rc"]]))
            for member in ensemble.members
        ])
        return [ensemble_statistics(values[:, i], self._shots()) for i in range(len(bits))]

    def _nec_statistics(self, circuit: Circuit, layout: LayoutTracker) -> list[EnsembleStats]:
        bits = self._observable_bits(layout)
        values = []
        for member in range(self.config.nec_count):
            rng = stage_rng(self.config.seed, "nec", self.step, member)
            nec = build_nec(circuit, layout, rng)
            if self.config.rc.mode == "standard":
                nec, _ = twirl_standard(nec, rng)
            elif self.config.rc.mode == "crosstalk":
                nec, _ = twirl_crosstalk(nec, neighbor_map_for(self.context.coupling), rng)
            values.append(self._evaluate(nec, bits, rng))
        values = np.array(values)
        return [ensemble_statistics(values[:, i], self._shots()) for i in range(len(bits))]


class ExperimentRunner:
    """Wires the full pipeline for one RunConfig and writes its outputs."""

    def __init__(self, config: RunConfig, threads: int = 1):
        self.config = config
        self.threads = max(1, threads)
        self.timings: dict[str, float] = {}

    def _timed(self, name: str, start: float) -> None:
        self.timings[name] = round(time.perf_counter() - start, 6)

    def prepare(self) -> PipelineContext:
        start = time.perf_counter()
        cfg = self.config
        params = BcsParams(tuple(cfg.bcs.levels), cfg.bcs.g, cfg.bcs.dt, cfg.bcs.n_steps)
        delta = solve_gap(params)
        mf = mean_field_angles(params, delta)
        logger.info("Mean-field gap Δ=%.6f for %d levels", delta, params.n_qubits)
        coupling = CouplingMap.linear(params.n_qubits)
        noise_model = build_noise_model(cfg, coupling)

        confusion = None
        if cfg.rec.mode != "none" and cfg.evaluation == "shots":
            confusion = calibration_confusion(
                noise_model.readout,
                cfg.rec.calibration_shots,
                stage_rng(cfg.seed, "calibration"),
                "full" if cfg.rec.mode == "full" else "per-qubit",
            )
        observables = all_observables(params.n_qubits)

        states = exact_evolution(params, mf, params.times)
        exact = {}
        for name, basis in cfg.experiment_bases().items():
            exact[name] = np.array([
                [expectation_from_probabilities(measurement_probabilities(s, list(basis)), obs) for s in states]
                for obs in observables
            ])
        self._timed("prepare", start)
        return PipelineContext(cfg, params, mf, coupling, noise_model, confusion, observables, exact)

    def simulate_steps(self, context: PipelineContext) -> list[StepResult]:
        start = time.perf_counter()
        steps = range(1, context.params.n_steps + 1)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            results = list(pool.map(lambda k: StepWorker(context, k).run(), steps))
        self._timed("simulate", start)
        return results

    def assemble(self, context: PipelineContext, results: Sequence[StepResult]) -> list[ExperimentSeries]:
        cfg = self.config
        series = []
        for name, basis in cfg.experiment_bases().items():
            for i, obs in enumerate(context.observables):
                label = observable_label(basis, obs)
                points = []
                for r in results:
                    rc = r.rc[name][i]
                    nec = r.nec[i] if r.nec is not None else EnsembleStats(math.nan, math.nan, 0)
                    if r.nec is not None:
                        mitigated = mitigate(rc.mean, nec.mean)
                        error = (
                            mitigation_uncertainty(rc.mean, nec.mean, rc.sigma, nec.sigma)
                            if nec.mean != 0 else math.nan
                        )
                        value, reliable = mitigated.value, mitigated.reliable
                    else:
                        value, error, reliable = math.nan, math.nan, False
                    points.append(SeriesPoint(
                        time=round(r.step * cfg.bcs.dt, 12),
                        observable=label,
                        raw=r.raw[name][i],
                        rc_mean=rc.mean,
                        rc_stderr=rc.sigma,
                        nec_mean=nec.mean,
                        nec_stderr=nec.sigma,
                        mitigated=value,
                        mitigated_err=error,
                        trotter_ideal=r.trotter_ideal[name][i],
                        exact=float(context.exact[name][i, r.step - 1]),
                        reliable_flag=reliable,
                    ))
                seeds = {"master": cfg.seed}
                series.append(ExperimentSeries(name, label, cfg.shots, cfg.rc.count, seeds, points))
        return series

    def fit_series(self, context: PipelineContext, series: Sequence[ExperimentSeries]) -> FitResult:
        cfg = self.config
        target = cfg.fit.target
        column = "nec_mean" if target == "nec" else "rc_mean"
        chosen = [s for s in series if s.experiment == cfg.fit.experiment]
        data = np.array([[getattr(p, column) for p in s.points] for s in chosen])
        basis = cfg.experiment_bases()[cfg.fit.experiment]
        forward = ForwardModel(context.params, context.mf, basis, context.params.n_steps, cfg.bcs.form, target)
        settings = FitSettings(
            grid=tuple(cfg.fit.grid), restarts=cfg.fit.restarts, max_iterations=cfg.fit.max_iterations
        )
        return fit(FitProblem(data, forward, forward.n_parameters), settings, cfg.seed, target)

    def run(self, out_dir: Optional[Path] = None) -> RunManifest:
        """Run the pipeline and write series, manifest and fit files into ``out_dir``."""
        cfg = self.config
        digest = config_digest(cfg)
        out_dir = Path(out_dir or cfg.output_dir or get_output_dir() / digest[:12])
        staging = out_dir.with_name(out_dir.name + ".partial")
        if staging.exists():
            shutil.rmtree(staging)
        staging.mkdir(parents=True)
        try:
            context = self.prepare()
            results = self.simulate_steps(context)
            series = self.assemble(context, results)
            fit_result = self.fit_series(context, series) if cfg.fit.enabled else None

            start = time.perf_counter()
            outputs = self._write_outputs(staging, series, fit_result)
            self._timed("write", start)
            seeds = {stage: stage_seed(cfg.seed, stage) for stage in STAGE_CODES}
            seeds["master"] = cfg.seed
            manifest = RunManifest(digest, __version__, seeds, dict(self.timings), outputs + ["manifest.json"])
            with open(staging / "manifest.json", "w") as f:
                json.dump(manifest.to_dict(), f, indent=2)
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        if out_dir.exists():
            shutil.rmtree(out_dir)
        staging.rename(out_dir)
        logger.info("Run %s written to %s", digest[:12], out_dir)
        return manifest

    def _write_outputs(
        self,
        directory: Path,
        series: Sequence[ExperimentSeries],
        fit_result: Optional[FitResult],
    ) -> list[str]:
        outputs = []
        for s in series:
            s.to_dataframe().to_csv(directory / s.file_name, index=False)
            outputs.append(s.file_name)
        with open(directory / "series.json", "w") as f:
            json.dump([s.to_dict() for s in series], f, indent=2)
        with open(directory / "config.json", "w") as f:
            json.dump(self.config.to_dict(), f, indent=2)
        outputs += ["series.json", "config.json"]
        if fit_result is not None:
            with open(directory / "fit.json", "w") as f:
                json.dump(fit_result.to_dict(), f, indent=2)
            outputs.append("fit.json")
        return outputs


def fit_from_config(config: RunConfig, data: Optional[np.ndarray] = None) -> FitResult:
    """Fit the configured experiment; without ``data`` the targets are the configured noise's exact-channel values."""
    params = BcsParams(tuple(config.bcs.levels), config.bcs.g, config.bcs.dt, config.bcs.n_steps)
    mf = mean_field_angles(params, solve_gap(params))
    basis = config.experiment_bases()[config.fit.experiment]
    forward = ForwardModel(params, mf, basis, params.n_steps, config.bcs.form, config.fit.target)
    if data is None:
        lam_cnot, lam_neigh, lam_glob = config.noise.resolved_rates()
        truth = [lam_cnot.get(j, 0.0) for j in forward.junctions]
        truth += [lam_neigh.get(j, 0.0) for j in forward.junctions] + [lam_glob]
        data = forward(np.array(truth))
    settings = FitSettings(grid=tuple(config.fit.grid), restarts=config.fit.restarts,
                           max_iterations=config.fit.max_iterations)
    return fit(FitProblem(data, forward, forward.n_parameters), settings, config.seed, config.fit.target)


def load_fit_targets(run_dir: Path, config: RunConfig) -> np.ndarray:
    """Observable × step matrix of a finished run's rc_mean (or nec_mean) column."""
    with open(Path(run_dir) / "series.json") as f:
        series = [ExperimentSeries.from_dict(d) for d in json.load(f)]
    column = "nec_mean" if config.fit.target == "nec" else "rc_mean"
    chosen = [s for s in series if s.experiment == config.fit.experiment]
    if not chosen:
        raise FileNotFoundError(f"No {config.fit.experiment} series in {run_dir}")
    return np.array([[getattr(p, column) for p in s.points] for s in chosen])


@dataclass
class TwirlCheckEntry:
    check: str
    channel: int
    deviation: float

    @property
    def passed(self) -> bool:
        return self.deviation < TWIRL_CHECK_TOL


@dataclass
class TwirlReport:
    entries: list[TwirlCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_deviation(self) -> float:
        return max((e.deviation for e in self.entries), default=0.0)

    def to_dataframe(self) -> pd.DataFrame:
        rows = [{"check": e.check, "channel": e.channel, "deviation": e.deviation, "passed": e.passed}
                for e in self.entries]
        return pd.DataFrame(rows, columns=["check", "channel", "deviation", "passed"])


def twirl_check(n_channels: int, seed: int = 0) -> TwirlReport:
    """Exhaustive twirl averages of random channels against their closed forms."""
    report = TwirlReport()
    for index in range(n_channels):
        rng = np.random.default_rng([seed, index])
        pair = random_kraus_channel(2, rng)
        averaged = twirled_ptm(pair)
        off_diagonal = averaged - np.diag(np.diag(averaged))
        report.entries.append(TwirlCheckEntry("pauli_off_diagonal", index, float(np.max(np.abs(off_diagonal)))))
        closed = pauli_twirl_average(pair)
        operational = pauli_twirl_average(pair, method="operational")
        report.entries.append(TwirlCheckEntry(
            "pauli_closed_form", index, float(np.max(np.abs(closed.probabilities - operational.probabilities)))
        ))

        triple = random_kraus_channel(3, rng)
        crosstalk = crosstalk_twirl_average(triple)
        neighbor = crosstalk.marginal([2]).probabilities[1:]
        report.entries.append(TwirlCheckEntry("neighbor_depolarizing", index, float(np.ptp(neighbor))))
        standard = pauli_twirl_average(triple)
        report.entries.append(TwirlCheckEntry(
            "active_pair_marginal",
            index,
            float(np.max(np.abs(crosstalk.marginal([0, 1]).probabilities - standard.marginal([0, 1]).probabilities))),
        ))
        operational = crosstalk_twirl_average(triple, method="operational")
        report.entries.append(TwirlCheckEntry(
            "crosstalk_closed_form",
            index,
            float(np.max(np.abs(crosstalk.probabilities - operational.probabilities))),
        ))
    logger.info("Twirl check on %d channels: max deviation %.3e", n_channels, report.max_deviation)
    return report


def _variant(run_dir: Path) -> str:
    with open(run_dir / "config.json") as f:
        return json.load(f)["rc"]["mode"]


def summarize(run_dirs: Iterable[Path]) -> pd.DataFrame:
    """Mean relative error |(n − p)/n| of raw and mitigated values n against the noiseless Trotter values p."""
    rows: dict[str, tuple[list[float], list[float]]] = {}
    for run_dir in map(Path, run_dirs):
        frames = [pd.read_csv(p) for p in sorted(run_dir.glob("series_*.csv"))]
        if not frames:
            raise FileNotFoundError(f"No series files in {run_dir}")
        data = pd.concat(frames, ignore_index=True)
        reference = data["trotter_ideal"].tolist()
        raw = rows.setdefault("raw", ([], []))
        raw[0].extend(reference)
        raw[1].extend(data["raw"].tolist())
        mode = _variant(run_dir)
        column = "rc_mean" if data["mitigated"].isna().all() else "mitigated"
        variant = rows.setdefault(mode, ([], []))
        variant[0].extend(reference)
        variant[1].extend(data[column].tolist())
    order = ["raw", "none", "standard", "crosstalk"]
    table = [
        {"variant": name, "mean_relative_error": mean_relative_error(*rows[name]), "points": len(rows[name][0])}
        for name in sorted(rows, key=order.index)
    ]
    return pd.DataFrame(table, columns=["variant", "mean_relative_error", "points"])


@dataclass
class UnfoldReport:
    trials: int
    uncorrected_tv: float
    unfolded_tv: float

    @property
    def improvement(self) -> float:
        return self.uncorrected_tv / self.unfolded_tv if self.unfolded_tv > 0 else math.inf


def unfold_demo(
    trials: int = 100,
    shots: int = 32000,
    flip: float = 0.02,
    n_bits: int = 3,
    seed: int = 0,
    truth: Optional[np.ndarray] = None,
) -> UnfoldReport:
    """Total-variation error of raw vs unfolded histograms under symmetric readout flips."""
    readout = ReadoutModel.symmetric(n_bits, flip)
    rng = np.random.default_rng(seed)
    raw_errors, unfolded_errors = [], []
    for _ in range(trials):
        p = truth if truth is not None else rng.dirichlet(np.full(2 ** n_bits, 0.5))
        counts = rng.multinomial(shots, readout.matrix @ p)
        raw_errors.append(total_variation(counts / shots, p))
        unfolded_errors.append(total_variation(unfold(counts, readout.matrix), p))
    report = UnfoldReport(trials, float(np.mean(raw_errors)), float(np.mean(unfolded_errors)))
    logger.info("Unfolding reduced TV error %.4f -> %.4f", report.uncorrected_tv, report.unfolded_tv)
    return report
