"""Training entry point: ``vintrain --config C --data DIR --out FILE``."""

from __future__ import annotations

import argparse
import sys

import yaml

from .data import NoiseProfile, load_dataset, relabeled_dataset
from .export import export_weights
from .train import TrainConfig, train


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vintrain",
        description="Train the noise-adaptation networks on a dataset "
                    "directory and export a weight store")
    p.add_argument("--config", help="training config YAML")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output weight-store path")
    p.add_argument("--seed", type=int, help="override the training seed")
    return p


def load_train_config(path) -> tuple[TrainConfig, dict | None]:
    if path is None:
        return TrainConfig(), None
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    relabel = doc.pop("relabel", None)
    return TrainConfig(**doc), relabel


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, relabel = load_train_config(args.config)
    except (OSError, TypeError, ValueError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    try:
        if relabel:
            profile = NoiseProfile(
                segments=tuple((float(a), float(b))
                               for a, b in relabel.get("segments",
                                                       NoiseProfile.segments)))
            dataset = relabeled_dataset(args.data, profile,
                                        seed=int(relabel.get("seed", 0)))
        else:
            dataset = load_dataset(args.data)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: bad dataset: {exc}", file=sys.stderr)
        return 2
    imunet, visionnet, history = train(cfg, dataset)
    export_weights(imunet, visionnet, args.out, upsilon=cfg.upsilon)
    print(f"trained {len(history)} epochs: first {history[0]:.4f}, "
          f"final {history[-1]:.4f}")
    print(f"weights written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
