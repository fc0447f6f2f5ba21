"""Trainer command line: train on a dataset manifest, export engine artifacts."""

from __future__ import annotations

import argparse
import sys

from .dataset import DatasetError
from .quantize import QuantizationError
from .train import TrainConfig, run_pipeline


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wobbletrainer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train, quantize, and export")
    p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--out-dir", required=True, help="artifact output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--patience", type=int, default=5)
    args = parser.parse_args(argv)

    cfg = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size,
        patience=args.patience, seed=args.seed,
    )
    try:
        report = run_pipeline(args.manifest, args.out_dir, cfg)
    except (DatasetError, QuantizationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"epochs {report['epochs_run']} (early stop: {report['stopped_early']}); "
        f"float accuracy {report['float_val_accuracy']:.4f}, "
        f"quantized {report['quantized_val_accuracy']:.4f}; "
        f"artifacts in {args.out_dir}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
