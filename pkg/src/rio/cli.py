"""Command line entry point.

Verbs::

    rio sim DIR [--kind stair --duration 60 ...]    synthetic dataset + ground_truth.txt
    rio run DIR --output traj.txt [--radars dual] [--config cfg.yaml]
    rio eval --gt gt.txt --est traj.txt [--rpe-delta 1.0] [--output report/]
    rio doppler-analysis DIR --reference gt.txt [--output doppler/]

Exit codes: 0 success, 1 usage error, 2 data error, 3 estimation failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import RADAR_SELECTIONS, PipelineConfig, load_config
from .errors import DataError, EstimationError
from .sim import KINDS

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ESTIMATION = 0, 1, 2, 3
GROUND_TRUTH = "ground_truth.txt"

log = logging.getLogger("rio")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would collide with data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rio", description="Multi-radar inertial odometry.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("sim", help="write a synthetic dataset and its ground truth")
    p.add_argument("output", type=Path, help="dataset directory to create")
    p.add_argument("--kind", default="line", choices=KINDS)
    p.add_argument("--duration", type=_positive(float), default=30.0, help="seconds")
    p.add_argument("--speed", type=float, default=1.0, help="m/s")
    p.add_argument("--radius", type=_positive(float), default=5.0, help="m")
    p.add_argument("--climb-rate", type=float, default=0.0, help="m/s (helix, stair)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--doppler-sigma", type=float, default=None, help="m/s")
    p.add_argument("--doppler-max", type=float, default=None,
                   help="unambiguous Doppler speed, m/s; faster points alias")
    p.add_argument("--noiseless", action="store_true", help="switch off every error source")

    p = sub.add_parser("run", help="estimate a trajectory from a dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--output", "-o", type=Path, required=True, help="trajectory file to write")
    p.add_argument("--radars", choices=sorted(RADAR_SELECTIONS), default=None,
                   help="radar subset (default from config, else dual)")
    p.add_argument("--config", type=Path, default=None, help="YAML configuration")

    p = sub.add_parser("eval", help="APE and RPE of an estimate against ground truth")
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--est", type=Path, required=True)
    p.add_argument("--rpe-delta", type=_positive(float), default=1.0, help="segment length, m")
    p.add_argument("--output", "-o", type=Path, default=None,
                   help="directory for summary.yaml and ape.csv")

    p = sub.add_parser("doppler-analysis", help="Doppler error histogram and fitted sigma")
    p.add_argument("dataset", type=Path)
    p.add_argument("--reference", type=Path, required=True, help="reference trajectory file")
    p.add_argument("--output", "-o", type=Path, default=None,
                   help="directory for histogram.csv and fit.yaml")
    p.add_argument("--bin-width", type=_positive(float), default=0.02, help="m/s")
    return parser


def _cmd_sim(args) -> None:
    from .dataset import write_dataset
    from .sim import SimConfig, TrajectoryModel, default_rig, simulate
    from .trajectory import write_trajectory

    overrides = {"outlier_fraction": args.outlier_fraction}
    if args.doppler_sigma is not None:
        overrides["doppler_sigma"] = args.doppler_sigma
    if args.doppler_max is not None:
        overrides["doppler_max"] = args.doppler_max
    try:
        model = TrajectoryModel(args.kind, speed=args.speed, radius=args.radius,
                                climb_rate=args.climb_rate, duration=args.duration)
        config = SimConfig(trajectory=model, radars=tuple(default_rig(**overrides)),
                           seed=args.seed, noiseless=args.noiseless)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dataset, truth = simulate(config)
    write_dataset(dataset, args.output)
    write_trajectory(truth, args.output / GROUND_TRUTH)
    print(f"wrote {args.output} ({len(dataset.imu)} IMU samples, "
          f"{sum(len(s) for s in dataset.scans.values())} radar scans)")


def _cmd_run(args) -> None:
    from .dataset import load_dataset
    from .pipeline import run
    from .trajectory import write_trajectory

    config = load_config(args.config) if args.config else PipelineConfig()
    if args.radars:
        config = replace(config, radars=args.radars)
    dataset = load_dataset(args.dataset)
    result = run(dataset, config)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory(result.trajectory, args.output)
    print(f"wrote {args.output} ({result.keyframes} poses, {result.velocity_factors} "
          f"velocity factors, {len(result.dropped_scans)} scans dropped)")


def _cmd_eval(args) -> None:
    from .evaluation import evaluate, write_report
    from .trajectory import read_trajectory

    report = evaluate(read_trajectory(args.gt), read_trajectory(args.est), args.rpe_delta)
    if args.output:
        write_report(report, args.output)
    for key, value in report.summary().items():
        print(f"{key}: {value}")


def _cmd_doppler(args) -> None:
    from .dataset import load_dataset
    from .evaluation import doppler_error_analysis, write_doppler_analysis
    from .trajectory import read_trajectory

    result = doppler_error_analysis(load_dataset(args.dataset), read_trajectory(args.reference),
                                    bin_width=args.bin_width)
    if args.output:
        write_doppler_analysis(result, args.output)
    print(f"points: {result.errors.size}\nexcluded: {result.excluded}\n"
          f"sigma_mad: {result.sigma_mad}\nsigma: {result.sigma}\nmean: {result.mean}")


COMMANDS = {"sim": _cmd_sim, "run": _cmd_run, "eval": _cmd_eval, "doppler-analysis": _cmd_doppler}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"rio: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.verb](args)
    except UsageError as exc:
        print(f"rio: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"rio: data error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"rio: estimation failed ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
