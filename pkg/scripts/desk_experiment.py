#!/usr/bin/env python3
"""Desk-scale lattice vs. plain-chain run on synthetic textures.

Trains the (4,3) gray LFNet and its parameter-matched plain chain with the
same seed and patch stream, then writes the validation PSNR curves and a
short summary. Takes roughly half an hour on one CPU core.

    python3 scripts/desk_experiment.py --out results/desk
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import time
from pathlib import Path

from lfnet.evaluation import evaluate_dataset
from lfnet.experiments import DESK_CONFIG, DESK_LATTICE, compare, desk_data
from lfnet.model_io import save_model
from lfnet.training import Fixed


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/desk")
    ap.add_argument("--epochs", type=int, default=DESK_CONFIG.epochs)
    ap.add_argument("--seed", type=int, default=DESK_CONFIG.seed)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = dataclasses.replace(DESK_CONFIG, epochs=args.epochs, seed=args.seed)
    train_images, val_images = desk_data()
    start = time.perf_counter()

    def progress(label, rec):
        print(f"{label:<5} epoch {rec.epoch:>3}  loss {rec.mean_loss:.6f}  val {rec.val_psnr_db:.3f} dB"
              f"  [{time.perf_counter() - start:.0f} s]", flush=True)

    result = compare(DESK_LATTICE, config, train_images, val_images, on_epoch=progress)
    result.write_csv(out / "compare.csv")
    for label, model in result.models.items():
        save_model(model, out / f"{label}.lfn")

    final = evaluate_dataset(result.models["lfnet"], val_images, Fixed(25.0), seed=0)
    lat = [r.val_psnr_db for r in result.lattice_history.records]
    plain = [r.val_psnr_db for r in result.baseline_history.records]
    summary = {
        "lfnet_params": result.lattice_params,
        "plain_params": result.baseline_params,
        "plain_layers": result.baseline_spec.layers,
        "plain_wide_prefix": result.baseline_spec.wide_prefix,
        "noisy_psnr": final.mean_noisy_psnr,
        "lfnet_psnr": final.mean_psnr,
        "gain_db": final.mean_psnr - final.mean_noisy_psnr,
        "lfnet_final": lat[-1],
        "plain_final": plain[-1],
        "seconds": time.perf_counter() - start,
    }
    if len(plain) >= 5:
        summary["lfnet_epoch_reaching_plain_epoch5"] = next(
            (k + 1 for k, v in enumerate(lat) if v >= plain[4]), None)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
