"""Procedural texture images for desk-scale experiments and tests."""
from __future__ import annotations

import numpy as np


def texture_image(rng, size=64, channels=1):
    """One (C, size, size) image in [0.1, 0.9]: a smooth ramp, a grating, and a few flat shapes."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    planes = []
    shapes = []
    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.08, 0.3)
        level = rng.uniform(-0.3, 0.3)
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < rng.uniform(0.05, 0.3))
        shapes.append((mask, level))
    freq = rng.uniform(3, 12)
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    grating = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    for _ in range(channels):
        ramp = rng.uniform(-0.3, 0.3) * xx + rng.uniform(-0.3, 0.3) * yy
        img = 0.5 + ramp + rng.uniform(0.05, 0.15) * grating
        for mask, level in shapes:
            img = np.where(mask, img + level * rng.uniform(0.7, 1.0), img)
        lo, hi = img.min(), img.max()
        planes.append(0.1 + 0.8 * (img - lo) / max(hi - lo, 1e-6))
    return np.stack(planes).astype(np.float32)


def texture_set(count, size=64, channels=1, seed=0):
    rng = np.random.default_rng(seed)
    return [texture_image(rng, size, channels) for _ in range(count)]


def write_texture_dir(directory, count, size=64, channels=1, seed=0, prefix="tex"):
    """Write ``count`` textures as NetPBM files; returns the paths."""
    from pathlib import Path

    from .evaluation import ImageBuffer, save_image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    suffix = ".pgm" if channels == 1 else ".ppm"
    for k, img in enumerate(texture_set(count, size, channels, seed)):
        path = directory / f"{prefix}{k:03d}{suffix}"
        save_image(ImageBuffer.from_array(img), path)
        paths.append(path)
    return paths
