"""Data models for the BCS mitigation workbench."""

from dataclasses import asdict, dataclass, field
from typing import Optional

import pandas as pd

# Randomized-compiling variants
RC_MODES = ("none", "standard", "crosstalk")

# Readout error correction
REC_MODES = ("none", "per-qubit", "full")

INTERACTION_FORMS = ("compressed", "standard")

# shots: sampled counts; exact-channel: expectations straight from density matrices
EVALUATION_MODES = ("shots", "exact-channel")

FIT_TARGETS = ("observables", "nec")

# Quasi-local rates (λc01, λc12, λn01, λn12, λg) fitted for each protocol
NOISE_PRESETS = {
    "standard-rc": (0.007, 0.0, 0.07, 0.009, 0.0002),
    "crosstalk-rc": (0.0, 0.014, 0.05, 0.01, 0.002),
    "nec-curve": (0.007, 0.016, 0.05, 0.009, 0.002),
}

# Measurement basis per logical qubit
NAMED_EXPERIMENTS = {
    "ZZZ": "ZZZ",
    "XYZ": "XYZ",
}

SERIES_COLUMNS = [
    "time", "observable", "raw", "rc_mean", "rc_stderr", "nec_mean", "nec_stderr",
    "mitigated", "mitigated_err", "trotter_ideal", "exact", "reliable_flag",
]


def junction_key(a: int, b: int) -> str:
    return f"{min(a, b)}-{max(a, b)}"


def parse_junction_key(key: str) -> tuple[int, int]:
    """'0-1' -> (0, 1); raises ValueError on anything else."""
    left, sep, right = key.partition("-")
    if not sep or not left.isdigit() or not right.isdigit() or int(left) == int(right):
        raise ValueError(f"Junction key must look like '0-1', got {key!r}")
    a, b = int(left), int(right)
    return min(a, b), max(a, b)


@dataclass
class BcsConfig:
    levels: list[float] = field(default_factory=lambda: [-1.0, 0.0, 1.0])
    g: float = 0.5
    dt: float = 0.2
    total_time: float = 3.0
    form: str = "compressed"

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.dt))


@dataclass
class NoiseConfig:
    preset: Optional[str] = None  # key of NOISE_PRESETS, overrides the rates below
    lambda_cnot: dict[str, float] = field(default_factory=dict)  # junction "a-b" -> rate
    lambda_neigh: dict[str, float] = field(default_factory=dict)
    lambda_glob: float = 0.0
    coherent_neighbor_angle: float = 0.0
    single_qubit_lambda: float = 0.0
    readout_flip: float = 0.02
    strict: bool = True

    def resolved_rates(self) -> tuple[dict[tuple[int, int], float], dict[tuple[int, int], float], float]:
        """Per-junction (λ_cnot, λ_neigh) maps and λ_glob, with any preset applied."""
        if self.preset is not None:
            c01, c12, n01, n12, glob = NOISE_PRESETS[self.preset]
            return {(0, 1): c01, (1, 2): c12}, {(0, 1): n01, (1, 2): n12}, glob
        cnot = {parse_junction_key(k): v for k, v in self.lambda_cnot.items()}
        neigh = {parse_junction_key(k): v for k, v in self.lambda_neigh.items()}
        return cnot, neigh, self.lambda_glob


@dataclass
class RcConfig:
    mode: str = "crosstalk"
    count: int = 300


@dataclass
class NecConfig:
    enabled: bool = True
    count: Optional[int] = None  # defaults to rc.count


@dataclass
class RecConfig:
    mode: str = "full"
    calibration_shots: int = 32000
    iterations: int = 20


@dataclass
class FitConfig:
    enabled: bool = False
    target: str = "observables"
    experiment: str = "XYZ"
    grid: list[float] = field(default_factory=lambda: [0.005, 0.03])
    restarts: int = 3
    max_iterations: int = 4000


@dataclass
class RunConfig:
    """Full description of one experiment run."""
    bcs: BcsConfig = field(default_factory=BcsConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    rc: RcConfig = field(default_factory=RcConfig)
    nec: NecConfig = field(default_factory=NecConfig)
    rec: RecConfig = field(default_factory=RecConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    shots: int = 32000
    experiments: list[str] = field(default_factory=lambda: ["ZZZ", "XYZ"])
    evaluation: str = "shots"
    seed: int = 0
    output_dir: Optional[str] = None

    @property
    def nec_count(self) -> int:
        return self.nec.count if self.nec.count is not None else self.rc.count

    def experiment_bases(self) -> dict[str, str]:
        """Experiment name -> measurement basis per logical qubit."""
        return {name: NAMED_EXPERIMENTS.get(name, name) for name in self.experiments}

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SeriesPoint:
    time: float
    observable: str
    raw: float
    rc_mean: float
    rc_stderr: float
    nec_mean: float
    nec_stderr: float
    mitigated: float
    mitigated_err: float
    trotter_ideal: float
    exact: float
    reliable_flag: bool = True


@dataclass
class ExperimentSeries:
    """Time series of one observable in one basis experiment."""
    experiment: str
    observable: str
    shots: int
    twirl_count: int
    seeds: dict[str, int] = field(default_factory=dict)
    points: list[SeriesPoint] = field(default_factory=list)

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(p) for p in self.points], columns=SERIES_COLUMNS)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSeries":
        points = [SeriesPoint(**p) for p in data.get("points", [])]
        return cls(data["experiment"], data["observable"], data["shots"], data["twirl_count"],
                   dict(data.get("seeds", {})), points)

    @property
    def file_name(self) -> str:
        return f"series_{self.experiment}_{self.observable}.csv"


@dataclass
class FitResult:
    lambdas: list[float]
    chi2: float  # mean squared residual over all cells
    converged: bool
    iterations: int
    settings_digest: str = ""
    target: str = "observables"

    def to_dict(self) -> dict:
        data = asdict(self)
        data["chi2_definition"] = "mean squared residual"
        return data


@dataclass
class RunManifest:
    config_digest: str
    version: str
    seeds: dict[str, int] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)
