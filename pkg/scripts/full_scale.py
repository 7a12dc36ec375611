#!/usr/bin/env python3
"""Long-run harness for the full-size presets (hours to days on a CPU).

Expects directories of clean NetPBM images: a training set (e.g. 400 gray
180x180 crops) and a test set. Trains with a named profile, saves the model
and history, then reports test PSNR/SSIM at the given sigma.

    python3 scripts/full_scale.py --profile lfnet-4-5-gray-s25 \\
        --train-dir data/train400 --test-dir data/bsd68 --sigma 25 --out runs/4-5-s25
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from lfnet.cli import main as cli_main
from lfnet.training import PROFILES


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--profile", required=True, choices=sorted(PROFILES))
    ap.add_argument("--train-dir", required=True)
    ap.add_argument("--test-dir", required=True)
    ap.add_argument("--sigma", type=float, required=True, help="test noise level (0-255 scale)")
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, help="override the profile's epoch count")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = out / "model.lfn"
    train_args = ["train", "--profile", args.profile, "--train-dir", args.train_dir,
                  "--seed", str(args.seed), "--augment", "true", "--out", str(model)]
    channels = PROFILES[args.profile]["channels"]
    if channels == 1:
        train_args += ["--to-gray", "true"]
    if args.epochs:
        train_args += ["--epochs", str(args.epochs)]
    code = cli_main(train_args)
    if code:
        return code
    eval_args = ["eval", "--model", str(model), "--data", args.test_dir, "--sigma", str(args.sigma),
                 "--report", str(out / "eval.csv")]
    if channels == 1:
        eval_args.append("--to-gray")
    return cli_main(eval_args)


if __name__ == "__main__":
    sys.exit(main())
