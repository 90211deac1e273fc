#!/usr/bin/env python3
"""
Command-line interface for the semfuse benchmark.
Provides commands for scene generation, temperature calibration, benchmark runs,
hyperparameter search, reporting and map export.
All processing is done locally on your machine; no simulator install or GPU is required.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

import config
from calibration import (LogitDataset, fit_temperature, format_reliability_table, load_logit_file, mean_nll,
                         reliability_diagram, save_logit_file, softmax, scale_logits)
from episode_runner import EpisodeRunner, replay_episode, write_temperatures
from errors import ConfigError, EpisodeNotFoundError, InvalidInputError, SemFuseError
from hyperopt import format_trial_log, param_space_for, tune_strategy, write_best_params, write_trial_log
from metrics import (ablation_deltas, check_partition, compare_tables, format_ablation, format_metrics_table,
                     load_results, metrics_table, write_metrics_csv)
from scene_manager import SceneManager
from scene_sim import simulate_calibration_stream
from schemas import (NoiseModel, PerceptionConfig, PolicyKind, RunConfig, SceneSpec, StrategyConfig, StrategyKind,
                     load_run_config, parse_run_config)
from semantic_map import export_map

logger = logging.getLogger("semfuse_cli")


def _positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}")
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {number}")
    return number


def _positive_float(value: str) -> float:
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {value!r}")
    if not number > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {number}")
    return number


class SemFuseCLI:
    def __init__(self, argv: Optional[Sequence[str]] = None):
        """Initialize the CLI.

        Args:
            argv: Arguments to parse (default: sys.argv[1:])
        """
        self.argv = list(argv) if argv is not None else None
        self.parser = self._create_parser()
        self.args = None

    def _create_parser(self) -> argparse.ArgumentParser:
        """Create argument parser."""
        parser = argparse.ArgumentParser(prog="semfuse", description="Uncertainty-aware semantic map aggregation benchmark")
        subparsers = parser.add_subparsers(dest="command", help="Command to run")

        # Scene generation
        gen_parser = subparsers.add_parser("gen-scenes", help="Generate, list or remove scenes")
        gen_parser.add_argument("--count", type=_positive_int, default=5, help="Number of scenes to generate")
        gen_parser.add_argument("--seed", type=int, default=None, help="Base seed (default: SEMFUSE_SEED or 0)")
        gen_parser.add_argument("--out", type=str, default=config.SCENES_DIR, help="Scene directory")
        gen_parser.add_argument("--width", type=int, default=SceneSpec().width, help="Grid width in cells")
        gen_parser.add_argument("--height", type=int, default=SceneSpec().height, help="Grid height in cells")
        gen_parser.add_argument("--classes", type=int, default=SceneSpec().n_classes, help="Number of classes")
        gen_parser.add_argument("--density", type=float, default=SceneSpec().object_density, help="Object density")
        gen_parser.add_argument("--list", action="store_true", help="List registered scenes instead of generating")
        gen_parser.add_argument("--info", type=str, metavar="SCENE_ID", help="Show a registered scene")
        gen_parser.add_argument("--remove", type=str, metavar="SCENE_ID", help="Remove a registered scene")

        # Calibration
        cal_parser = subparsers.add_parser("calibrate", help="Fit a temperature and report calibration error")
        cal_parser.add_argument("--logits", type=str, help="SFLG logit dataset file (default: simulate a stream)")
        cal_parser.add_argument("--profile", type=str, default="default", help="Perception profile to simulate")
        cal_parser.add_argument("--k", type=_positive_float, default=None, help="Override the overconfidence factor")
        cal_parser.add_argument("--samples", type=_positive_int, default=config.CALIBRATION_STREAM_SIZE,
                                help="Simulated stream size")
        cal_parser.add_argument("--classes", type=int, default=SceneSpec().n_classes, help="Classes in the stream")
        cal_parser.add_argument("--seed", type=int, default=None, help="Stream seed (default: SEMFUSE_SEED or 0)")
        cal_parser.add_argument("--bins", type=_positive_int, default=config.DEFAULT_ECE_BINS, help="Reliability bins")
        cal_parser.add_argument("--save-logits", type=str, help="Write the simulated stream as an SFLG file")
        cal_parser.add_argument("--out", type=str, help="Write the fitted temperature and errors as JSON")

        # Benchmark run
        run_parser = subparsers.add_parser("run", help="Run a benchmark matrix from a configuration file")
        run_parser.add_argument("--config", type=str, required=True, help="Run configuration (JSON)")
        run_parser.add_argument("--episodes", type=_positive_int, help="Override the episode count")
        run_parser.add_argument("--seed", type=int, help="Override the run seed")
        run_parser.add_argument("--workers", type=_positive_int, help="Override the worker count")
        run_parser.add_argument("--out", "--output", dest="out", type=str, help="Override the output directory")
        run_parser.add_argument("--dump-trajectories", action="store_true", help="Write per-episode pose tables")

        # Hyperparameter search
        opt_parser = subparsers.add_parser("hyperopt", help="Random search over a strategy's parameters")
        opt_parser.add_argument("--strategy", type=str, required=True, help="Strategy kind to tune")
        opt_parser.add_argument("--budget", type=_positive_int, default=config.HYPEROPT_BUDGET, help="Number of trials")
        opt_parser.add_argument("--seed", type=int, default=None, help="Search seed (default: SEMFUSE_SEED or 0)")
        opt_parser.add_argument("--episodes", type=_positive_int, default=config.HYPEROPT_EPISODES,
                                help="Training episodes per trial")
        opt_parser.add_argument("--config", type=str, help="Run configuration supplying scene spec and sensor")
        opt_parser.add_argument("--profile", type=str, default="default", help="Perception profile")
        opt_parser.add_argument("--workers", type=_positive_int, help="Worker count")
        opt_parser.add_argument("--out", "--output", dest="out", type=str, default=config.RESULTS_DIR,
                                help="Output directory")

        # Reporting
        report_parser = subparsers.add_parser("report", help="Metrics, ablation deltas and comparisons")
        report_parser.add_argument("results", nargs="*", help="results.jsonl files (or run directories)")
        report_parser.add_argument("--csv", type=str, help="Write the metrics of the first input as CSV")

        # Map export
        export_parser = subparsers.add_parser("export-map", help="Replay an episode and export its final map")
        export_parser.add_argument("--results", type=str, required=True, help="Run output directory")
        export_parser.add_argument("--episode", type=str, required=True, help="Episode id")
        export_parser.add_argument("--out", type=str, required=True, help="Export directory")

        return parser

    def run(self) -> int:
        """Parse arguments, run the command and return the exit code."""
        try:
            self.args = self.parser.parse_args(self.argv)
        except SystemExit as e:
            return config.EXIT_OK if e.code in (0, None) else config.EXIT_USAGE

        if self.args.command is None:
            self.parser.print_help()
            return config.EXIT_USAGE
        return self._run_command()

    def _run_command(self) -> int:
        """Run the specified command."""
        handlers = {
            "gen-scenes": self._gen_scenes,
            "calibrate": self._calibrate,
            "run": self._run_benchmark,
            "hyperopt": self._hyperopt,
            "report": self._report,
            "export-map": self._export_map,
        }
        try:
            return handlers[self.args.command]()
        except ConfigError as e:
            logger.error(f"Configuration error: {e}")
            print(f"Configuration error: {e}", file=sys.stderr)
            return config.EXIT_CONFIG
        except (SemFuseError, OSError) as e:
            logger.error(f"Error: {e}")
            print(f"Error: {e}", file=sys.stderr)
            return config.EXIT_RUNTIME

    def _seed(self) -> int:
        return self.args.seed if self.args.seed is not None else config.default_seed()

    def _gen_scenes(self) -> int:
        """Generate scenes, or list / inspect / remove registered ones."""
        manager = SceneManager(self.args.out, logs_dir=os.path.join(self.args.out, "logs"))

        if self.args.list:
            scenes = manager.list_scenes()
            if not scenes:
                print(f"No scenes registered in {self.args.out}")
                return config.EXIT_OK
            print(f"{'scene':<16} {'seed':>8} {'size':>7} {'classes':>7} {'targets':>7}")
            for scene_id, info in sorted(scenes.items()):
                print(f"{scene_id:<16} {info['seed']:>8} {info['width']:>3}x{info['height']:<3} "
                      f"{info['n_classes']:>7} {info['n_targets']:>7}")
            return config.EXIT_OK

        if self.args.info:
            info = manager.get_scene_info(self.args.info)
            if info is None:
                raise EpisodeNotFoundError(f"Scene {self.args.info} is not registered in {self.args.out}")
            print(json.dumps(info, indent=2, sort_keys=True))
            return config.EXIT_OK

        if self.args.remove:
            if not manager.remove_scene(self.args.remove):
                raise EpisodeNotFoundError(f"Scene {self.args.remove} could not be removed from {self.args.out}")
            print(f"Removed {self.args.remove}")
            return config.EXIT_OK

        try:
            spec = SceneSpec(width=self.args.width, height=self.args.height, n_classes=self.args.classes,
                             object_density=self.args.density)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        ids = manager.generate_scenes(self.args.count, self._seed(), spec)
        for scene_id in ids:
            print(os.path.join(self.args.out, f"{scene_id}.json"))
        return config.EXIT_OK

    def _calibrate(self) -> int:
        """Fit a temperature on a logit file or a simulated stream and print reliability tables."""
        if self.args.logits:
            dataset = load_logit_file(self.args.logits)
            source = self.args.logits
        else:
            overrides = {} if self.args.k is None else {"overconfidence_factor": self.args.k}
            try:
                noise = PerceptionConfig(profile=self.args.profile).resolve_noise()
                noise = NoiseModel.model_validate({**noise.model_dump(), **overrides})
            except ValueError as e:
                raise ConfigError(str(e)) from e
            rng = np.random.default_rng(self._seed())
            dataset = simulate_calibration_stream(noise, self.args.samples, rng, self.args.classes)
            source = f"simulated {self.args.profile} stream (k={noise.overconfidence_factor:g}, n={len(dataset)})"
            if self.args.save_logits:
                save_logit_file(self.args.save_logits, dataset)

        report = self._calibration_summary(dataset, self.args.bins)
        print(f"Source: {source}")
        print(f"Fitted temperature t = {report['temperature']:.4f}")
        print(f"NLL   {report['nll_before']:.4f} -> {report['nll_after']:.4f}")
        print(f"ECE   {report['ece_before']:.4f} -> {report['ece_after']:.4f}")
        print(f"uECE  {report['uece_before']:.4f} -> {report['uece_after']:.4f}")
        print()
        print(report.pop("table_before"))
        print()
        print(report.pop("table_after"))

        if self.args.out:
            Path(os.path.dirname(os.path.abspath(self.args.out))).mkdir(parents=True, exist_ok=True)
            with open(self.args.out, "w") as f:
                json.dump(report, f, indent=2, sort_keys=True)
        return config.EXIT_OK

    @staticmethod
    def _calibration_summary(dataset: LogitDataset, n_bins: int) -> Dict:
        t = fit_temperature(dataset.logits, dataset.labels)
        before = reliability_diagram(softmax(dataset.logits), dataset.labels, n_bins)
        after = reliability_diagram(softmax(scale_logits(dataset.logits, t)), dataset.labels, n_bins)
        return {
            "temperature": t,
            "n_samples": len(dataset),
            "n_bins": n_bins,
            "nll_before": mean_nll(dataset.logits, dataset.labels, 1.0),
            "nll_after": mean_nll(dataset.logits, dataset.labels, t),
            "ece_before": before.ece,
            "ece_after": after.ece,
            "uece_before": before.uece,
            "uece_after": after.uece,
            "table_before": format_reliability_table(before, "Before scaling (t = 1)"),
            "table_after": format_reliability_table(after, f"After scaling (t = {t:.4f})"),
        }

    def _run_benchmark(self) -> int:
        """Run the full strategy x policy x profile matrix of a configuration file."""
        overrides = {
            "episodes": self.args.episodes,
            "seed": self.args.seed,
            "workers": self.args.workers,
            "output_dir": self.args.out,
        }
        run_config = load_run_config(self.args.config, overrides)
        runner = EpisodeRunner(logs_dir=os.path.join(run_config.output_dir, "logs"), workers=run_config.workers)
        rows = runner.run_benchmark(run_config, dump_trajectories=self.args.dump_trajectories)
        print(format_metrics_table(rows))
        print(f"\nResults written to {run_config.output_dir}")
        return config.EXIT_OK

    def _hyperopt_config(self, kind: StrategyKind) -> RunConfig:
        if self.args.config:
            run_config = load_run_config(self.args.config)
        else:
            run_config = parse_run_config({"schema_version": config.SCHEMA_VERSION,
                                           "strategies": [{"kind": kind.value}]})
        perception = [p for p in run_config.perception if p.profile == self.args.profile]
        if not perception:
            try:
                perception = [PerceptionConfig(profile=self.args.profile)]
            except ValueError as e:
                raise ConfigError(str(e)) from e
        seed = self.args.seed if self.args.seed is not None else run_config.run_seed
        return run_config.model_copy(update={"perception": perception, "seed": seed,
                                             "policies": [PolicyKind.SHORTEST_PATH]})

    def _hyperopt(self) -> int:
        """Tune one strategy on training scenes and write its best parameters and trial log."""
        try:
            kind = StrategyKind(self.args.strategy)
        except ValueError:
            raise ConfigError(f"Unknown strategy {self.args.strategy!r}; valid kinds: "
                              f"{', '.join(k.value for k in StrategyKind)}")
        space = param_space_for(kind.value)
        run_config = self._hyperopt_config(kind)
        runner = EpisodeRunner(logs_dir=os.path.join(self.args.out, "logs"),
                               workers=self.args.workers or run_config.workers)
        outcome = tune_strategy(runner, run_config, StrategyConfig(kind=kind), self.args.budget,
                                self.args.episodes, space)
        best, result, temperatures = outcome.strategy, outcome.result, outcome.temperatures

        Path(self.args.out).mkdir(parents=True, exist_ok=True)
        params_path = os.path.join(self.args.out, f"best_params_{kind.value}.json")
        trials_path = os.path.join(self.args.out, f"trials_{kind.value}.csv")
        write_best_params(params_path, best)
        write_trial_log(trials_path, result)
        write_temperatures(os.path.join(self.args.out, f"temperatures_{kind.value}.json"), temperatures)

        print(format_trial_log(result))
        print(f"\nBest trial {result.best_index}: SR {result.best_objective:.3f}")
        print(f"Best parameters written to {params_path}")
        return config.EXIT_OK

    @staticmethod
    def _results_path(path: str) -> str:
        if os.path.isdir(path):
            return os.path.join(path, "results.jsonl")
        return path

    def _report(self) -> int:
        """Metrics tables, ablation deltas and a side-by-side comparison of result files."""
        if not self.args.results:
            raise InvalidInputError("No result files given")
        tables = []
        labels = []
        for index, path in enumerate(self.args.results):
            results = load_results(self._results_path(path))
            if not results:
                raise InvalidInputError(f"{path} holds no episode records")
            tables.append(metrics_table(results))
            labels.append(str(index))

        for label, path, rows in zip(labels, self.args.results, tables):
            print(f"[{label}] {path}")
            print(format_metrics_table(rows))
            broken = check_partition(rows)
            if broken:
                raise InvalidInputError(f"SR + FPR + FNR != 100 for {', '.join(broken)}")
            deltas = ablation_deltas(rows)
            if deltas:
                print()
                print(format_ablation(deltas))
            print()

        if len(tables) > 1:
            print(compare_tables(tables, labels))

        if self.args.csv:
            write_metrics_csv(tables[0], self.args.csv)
        return config.EXIT_OK

    def _export_map(self) -> int:
        """Replay a recorded episode and write its final map as graymaps."""
        results_path = self._results_path(self.args.results)
        records = {r.episode_id: r for r in load_results(results_path)}
        record = records.get(self.args.episode)
        if record is None:
            raise EpisodeNotFoundError(f"Episode {self.args.episode} not found in {results_path}")
        if not record.valid:
            raise EpisodeNotFoundError(f"Episode {self.args.episode} is invalid and has no map")

        run = replay_episode(record, os.path.dirname(os.path.abspath(results_path)))
        paths = export_map(run.grid, run.strategy.target_mask(run.grid), self.args.out, prefix=record.episode_id)
        for name, path in sorted(paths.items()):
            print(f"{name}: {path}")
        return config.EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    return SemFuseCLI(argv).run()


if __name__ == "__main__":
    sys.exit(main())
