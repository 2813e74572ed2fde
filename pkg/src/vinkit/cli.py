"""Command-line entry points: ``simulate``, ``run`` and ``eval``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import DataFormatError, NumericalError
from .metrics import compute_errors, compute_loss
from .pipeline import (
    ExperimentConfig,
    load_config,
    make_synthetic,
    read_estimates_csv,
    run_experiment,
    write_dataset,
    write_loss_yaml,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the toolkit reserves 2 for
    # data errors, so usage problems remap to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def _load_cfg(args) -> ExperimentConfig:
    return load_config(args.config) if args.config else ExperimentConfig()


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg.sim.seed = args.seed
    data = make_synthetic(cfg)
    paths = write_dataset(args.out, cfg, data)
    print(f"simulate: wrote {len(data.samples)} IMU samples, "
          f"{len(data.tracks)} frames, {len(data.landmarks)} landmarks")
    for k, v in paths.items():
        print(f"  {k}: {v}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    out = run_experiment(cfg, args.out,
                         weights_path=args.weights,
                         use_dlam=not args.no_dlam,
                         seed=args.seed,
                         dataset_dir=args.dataset,
                         tracks_path=args.tracks,
                         use_vision=not args.no_vision)
    res = out["result"]
    print(f"run: {len(res.estimates)} frames "
          f"({res.frames_updated} updated, {res.frames_skipped} prediction-only, "
          f"{res.dropped_observations} observations dropped)")
    if out["loss"] is not None:
        print("run:", out["loss"].summary_row())
    for k, v in out["paths"].items():
        print(f"  {k}: {v}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .frontend import parse_groundtruth_csv

    estimates = read_estimates_csv(args.estimates)
    truth = parse_groundtruth_csv(args.truth)
    errors = compute_errors(estimates, truth, tol_ns=args.tolerance_ns)
    try:
        report = compute_loss(errors, skip=args.skip)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from None
    print("eval:", report.summary_row())
    if args.out:
        write_loss_yaml(args.out, report, extra={"skipped_timestamps": errors.skipped})
        print(f"  loss: {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vinkit",
                description="Visual-inertial navigation toolkit: simulate, "
                            "filter, evaluate")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="emit a synthetic truth/IMU/tracks dataset")
    sp.add_argument("--config", help="experiment config YAML (defaults are canonical)")
    sp.add_argument("--seed", type=int, help="override the scenario seed")
    sp.add_argument("--out", required=True, help="output dataset directory")
    sp.set_defaults(func=cmd_simulate)

    rp = sub.add_parser("run", help="run the filter on a dataset or synthetic scenario")
    rp.add_argument("--config", help="experiment config YAML")
    rp.add_argument("--dataset", help="dataset directory (imu.csv, tracks.csv, calib.yaml)")
    rp.add_argument("--tracks", help="override the track table path")
    rp.add_argument("--weights", help="weight-store file for the adaptation networks")
    rp.add_argument("--no-dlam", action="store_true",
                    help="disable learned noise adaptation (nominal sigmas)")
    rp.add_argument("--no-vision", action="store_true",
                    help="dead-reckoning mode: skip every vision update")
    rp.add_argument("--seed", type=int, help="override the scenario seed")
    rp.add_argument("--out", required=True, help="output directory for artifacts")
    rp.set_defaults(func=cmd_run)

    ep = sub.add_parser("eval", help="score an estimate CSV against ground truth")
    ep.add_argument("--estimates", required=True)
    ep.add_argument("--truth", required=True)
    ep.add_argument("--skip", type=int, default=50,
                    help="transient samples to disregard (default 50)")
    ep.add_argument("--tolerance-ns", type=int, default=2_500_000,
                    help="timestamp matching tolerance")
    ep.add_argument("--out", help="write the loss report to this YAML file")
    ep.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
