"""Command-line application coordinating config, runner and outputs."""

import argparse
import fcntl
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigManager, config_digest, get_output_dir
from .errors import ConfigError, InvariantViolation, WorkbenchError
from .models import RunConfig
from .runner import ExperimentRunner, fit_from_config, load_fit_targets, summarize, twirl_check, unfold_demo

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


class RunLock:
    """Ensures only one run writes a given output directory at a time."""

    def __init__(self, out_dir: Path):
        out_dir = Path(out_dir)
        self.lockfile = out_dir.parent / f".{out_dir.name}.lock"
        self.lockfile.parent.mkdir(parents=True, exist_ok=True)
        self.fp = None

    def try_lock(self) -> bool:
        """Try to acquire the lock. Returns True if successful."""
        try:
            self.fp = open(self.lockfile, "w")
            fcntl.flock(self.fp.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
            self.fp.write(str(os.getpid()))
            self.fp.flush()
            return True
        except OSError:
            if self.fp:
                self.fp.close()
                self.fp = None
            return False

    def release(self):
        if self.fp:
            try:
                fcntl.flock(self.fp.fileno(), fcntl.LOCK_UN)
                self.fp.close()
                self.lockfile.unlink(missing_ok=True)
            except OSError:
                pass
            self.fp = None


class Workbench:
    """Applies CLI overrides to the loaded config and runs each subcommand."""

    def __init__(self, config_path: Optional[str] = None, seed: Optional[int] = None, threads: int = 1):
        self.config_manager = ConfigManager(config_path)
        self.config: RunConfig = self.config_manager.load()
        if seed is not None:
            self.config.seed = seed
        self.threads = threads

    def run(self, out: Optional[str]) -> int:
        out_dir = Path(out or self.config.output_dir or get_output_dir() / config_digest(self.config)[:12])
        lock = RunLock(out_dir)
        if not lock.try_lock():
            print(f"Another run is already writing {out_dir}.")
            return EXIT_FAILURE
        try:
            manifest = ExperimentRunner(self.config, self.threads).run(out_dir)
        finally:
            lock.release()
        print(f"Wrote {len(manifest.outputs)} files to {out_dir}")
        return EXIT_OK

    def twirl_check(self, n_channels: int) -> int:
        report = twirl_check(n_channels, self.config.seed)
        if report.entries:
            print(report.to_dataframe().to_string(index=False))
        print(f"{'PASS' if report.passed else 'FAIL'} (max deviation {report.max_deviation:.3e})")
        return EXIT_OK if report.passed else EXIT_FAILURE

    def fit(self, run_dir: Optional[str], out: Optional[str]) -> int:
        data = load_fit_targets(Path(run_dir), self.config) if run_dir else None
        result = fit_from_config(self.config, data)
        payload = json.dumps(result.to_dict(), indent=2)
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "fit.json").write_text(payload)
        print(payload)
        return EXIT_OK if result.converged else EXIT_FAILURE

    def summarize(self, run_dirs: Sequence[str]) -> int:
        print(summarize([Path(d) for d in run_dirs]).to_string(index=False))
        return EXIT_OK

    def unfold_demo(self, trials: int, shots: int, flip: float) -> int:
        report = unfold_demo(trials, shots, flip, seed=self.config.seed)
        print(f"uncorrected TV {report.uncorrected_tv:.5f}  unfolded TV {report.unfolded_tv:.5f}  "
              f"improvement {report.improvement:.1f}x")
        return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcs-workbench", description=__doc__)
    parser.add_argument("--config", help="JSON run configuration (defaults to the 3-level experiment)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full simulation and mitigation pipeline")
    run.add_argument("--out", help="output directory")

    check = sub.add_parser("twirl-check", help="verify twirl averages on random channels")
    check.add_argument("--channels", type=int, default=20)

    fit = sub.add_parser("fit", help="fit quasi-local noise rates")
    fit.add_argument("--run", dest="run_dir", help="fit a finished run instead of synthetic targets")
    fit.add_argument("--out", help="directory for fit.json")

    summary = sub.add_parser("summarize", help="relative-error table over run directories")
    summary.add_argument("runs", nargs="+")

    demo = sub.add_parser("unfold-demo", help="readout unfolding on synthetic histograms")
    demo.add_argument("--trials", type=int, default=100)
    demo.add_argument("--shots", type=int, default=32000)
    demo.add_argument("--flip", type=float, default=0.02)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point for the application."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        bench = Workbench(args.config, args.seed, args.threads)
        if args.command == "run":
            return bench.run(args.out)
        if args.command == "twirl-check":
            return bench.twirl_check(args.channels)
        if args.command == "fit":
            return bench.fit(args.run_dir, args.out)
        if args.command == "summarize":
            return bench.summarize(args.runs)
        return bench.unfold_demo(args.trials, args.shots, args.flip)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except InvariantViolation as e:
        logger.error("Numerical invariant violated: %s", e)
        return EXIT_INVARIANT
    except (WorkbenchError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_FAILURE
