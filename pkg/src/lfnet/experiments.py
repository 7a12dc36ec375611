"""Desk-scale lattice-vs-plain comparison shared by the CLI, scripts, and acceptance tests."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .lattice import LatticeSpec, count_parameters, initialize_model, matched_plain_spec, min_max_depth
from .synthetic import texture_set
from .training import Fixed, TrainConfig, train

DESK_LATTICE = LatticeSpec(4, 3)
DESK_CONFIG = TrainConfig(noise=Fixed(25.0), patch_size=16, pairs_per_epoch=2048, batch_size=16,
                          epochs=30, lr_start=1e-3, lr_end=1e-5, seed=0)


def desk_data(train_count=32, val_count=8, size=64, channels=1, seed=0):
    return (texture_set(train_count, size, channels, seed=seed),
            texture_set(val_count, size, channels, seed=seed + 10_000))


def matched_plain(lattice_spec):
    """Plain chain with the lattice's total depth and at least its parameter count."""
    _, depth = min_max_depth(lattice_spec, include_output=True)
    target, _ = count_parameters(lattice_spec)
    return matched_plain_spec(depth, target, lattice_spec.in_channels, lattice_spec.filters,
                              2 * lattice_spec.filters, lattice_spec.kernel_size)


@dataclass
class Comparison:
    lattice_spec: object
    baseline_spec: object
    lattice_params: int
    baseline_params: int
    lattice_history: object = None
    baseline_history: object = None
    models: dict = field(default_factory=dict)

    def rows(self):
        for a, b in zip(self.lattice_history.records, self.baseline_history.records):
            yield a.epoch, a.val_psnr_db, b.val_psnr_db

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "lfnet_psnr", "plain_psnr"])
            for epoch, a, b in self.rows():
                w.writerow([epoch, repr(a), repr(b)])


def compare(lattice_spec, config, train_images, val_images, baseline_spec=None, on_epoch=None):
    """Train the lattice and a baseline (default: matched plain chain) with identical seeds and data."""
    if baseline_spec is None:
        baseline_spec = matched_plain(lattice_spec)
    result = Comparison(lattice_spec, baseline_spec,
                        count_parameters(lattice_spec)[0], count_parameters(baseline_spec)[0])
    for label, spec in (("lfnet", lattice_spec), ("plain", baseline_spec)):
        model = initialize_model(spec, config.seed)
        hook = (lambda rec, label=label: on_epoch(label, rec)) if on_epoch else None
        _, hist = train(model, train_images, config, validation=val_images, on_epoch=hook)
        result.models[label] = model
        if label == "lfnet":
            result.lattice_history = hist
        else:
            result.baseline_history = hist
    return result
