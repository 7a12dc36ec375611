"""Residual-learning training: noise synthesis, patches, loss, Adam, schedule, epoch loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import backward_pass, forward_pass
from .errors import ShapeError, TrainingDivergedError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Fixed:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    def draw(self, rng):
        return float(self.sigma)

    def __str__(self):
        return f"{self.sigma:g}"


@dataclass(frozen=True)
class UniformRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi:
            raise ValueError(f"need 0 <= lo <= hi, got [{self.lo}, {self.hi}]")

    def draw(self, rng):
        return float(rng.uniform(self.lo, self.hi))

    def __str__(self):
        return f"{self.lo:g}-{self.hi:g}"


def parse_noise(text):
    """``"25"`` -> Fixed(25); ``"0-55"`` or ``"0:55"`` -> UniformRange(0, 55)."""
    text = str(text).strip()
    for sep in (":", "-"):
        if sep in text.lstrip("-"):
            lo, hi = text.split(sep, 1)
            return UniformRange(float(lo), float(hi))
    return Fixed(float(text))


@dataclass
class TrainConfig:
    noise: Fixed | UniformRange = field(default_factory=lambda: Fixed(25.0))
    patch_size: int = 40
    pairs_per_epoch: int = 1024
    batch_size: int = 16
    epochs: int = 10
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    seed: int = 0
    augment: bool = False


# §4 hyper-parameters, keyed by profile name
PROFILES = {
    **{f"lfnet-4-5-gray-s{s}": dict(rows=4, cols=5, channels=1, noise=str(s), patch_size=50,
                                    pairs_per_epoch=128 * 1600, batch_size=128, epochs=50)
       for s in (15, 25, 50)},
    **{f"lfnet-4-6-gray-s{s}": dict(rows=4, cols=6, channels=1, noise=str(s), patch_size=60,
                                    pairs_per_epoch=128 * 1600, batch_size=128, epochs=50)
       for s in (15, 25, 50)},
    "lfnet-4-10-color-blind": dict(rows=4, cols=10, channels=3, noise="0-55", patch_size=90,
                                   pairs_per_epoch=128 * 3000, batch_size=128, epochs=40),
}


# ---------------------------------------------------------------------------
# data


def add_gaussian_noise(clean, sigma_255, rng):
    if sigma_255 < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma_255}")
    noise = rng.normal(0.0, sigma_255 / 255.0, size=clean.shape)
    return (clean + noise).astype(clean.dtype, copy=False)


def make_training_pair(clean_patch, noise_mode, rng):
    """``(noisy, residual)`` with residual = noisy - clean."""
    sigma = noise_mode.draw(rng)
    noisy = add_gaussian_noise(clean_patch, sigma, rng)
    return noisy, noisy - clean_patch


def _dihedral(patch, k):
    out = np.rot90(patch, k % 4, axes=(-2, -1))
    return out[..., ::-1] if k >= 4 else out


def sample_patches(images, patch_size, count, rng, augment=False, names=None):
    """``count`` random square crops from (C, H, W) images, as an (count, C, p, p) array."""
    images = list(images)
    for idx, img in enumerate(images):
        if img.shape[-2] < patch_size or img.shape[-1] < patch_size:
            name = names[idx] if names else f"#{idx}"
            raise ShapeError(f"image {name} is {img.shape[-2]}x{img.shape[-1]}, smaller than patch {patch_size}")
    if not images:
        raise ValueError("no images to sample from")
    channels = images[0].shape[0]
    out = np.empty((count, channels, patch_size, patch_size), images[0].dtype)
    for n in range(count):
        img = images[int(rng.integers(len(images)))]
        top = int(rng.integers(img.shape[-2] - patch_size + 1))
        left = int(rng.integers(img.shape[-1] - patch_size + 1))
        patch = img[:, top:top + patch_size, left:left + patch_size]
        if augment:
            patch = _dihedral(patch, int(rng.integers(8)))
        out[n] = patch
    return out


def make_epoch_pairs(images, config, rng, dtype=np.float32):
    clean = sample_patches(images, config.patch_size, config.pairs_per_epoch, rng, config.augment).astype(dtype)
    noisy = np.empty_like(clean)
    residual = np.empty_like(clean)
    for n in range(len(clean)):
        noisy[n], residual[n] = make_training_pair(clean[n], config.noise, rng)
    return noisy, residual


# ---------------------------------------------------------------------------
# optimization


def mse_loss(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ",
                         expected=target.shape, actual=pred.shape)
    diff = pred - target
    return float(np.mean(diff * diff, dtype=np.float64)), (2.0 / diff.size) * diff


def lr_at_epoch(config, epoch):
    """Geometric decay from ``lr_start`` (first epoch) to ``lr_end`` (last epoch)."""
    if config.epochs <= 1:
        return config.lr_start
    if not 0 <= epoch <= config.epochs - 1:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs - 1}]")
    if epoch == config.epochs - 1:
        return config.lr_end
    return config.lr_start * (config.lr_end / config.lr_start) ** (epoch / (config.epochs - 1))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """In-place bias-corrected Adam update of every array in ``params``."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {key} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        v = state.v[key]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        if lr:
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(p.dtype, copy=False)
    return params, state


# ---------------------------------------------------------------------------
# loop


@dataclass
class EpochRecord:
    epoch: int  # 1-based
    mean_loss: float
    val_psnr_db: float | None = None


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_loss", "val_psnr_db"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.mean_loss), "" if r.val_psnr_db is None else repr(r.val_psnr_db)])


def data_seed(seed):
    # patch/noise stream kept apart from the initialization stream
    return np.random.SeedSequence([seed, 1])


def train(model, clean_images, config, validation=None, on_epoch=None):
    """Train ``model`` in place on residual targets; returns ``(model, history)``.

    ``clean_images`` are (C, H, W) arrays in [0, 1]. With ``validation`` (a
    list of clean images) the mean denoised PSNR at the training noise level is
    recorded after every epoch.
    """
    from .evaluation import evaluate_dataset

    history = TrainHistory()
    if config.epochs <= 0:
        return model, history
    rng = np.random.default_rng(data_seed(config.seed))
    state = AdamState()
    params = model.parameters()
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config, epoch)
        noisy, residual = make_epoch_pairs(clean_images, config, rng, model.dtype)
        losses = []
        for b, start in enumerate(range(0, len(noisy), config.batch_size)):
            xb = noisy[start:start + config.batch_size]
            yb = residual[start:start + config.batch_size]
            pred, trace = forward_pass(model, xb, "train")
            loss, g = mse_loss(pred, yb)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch + 1, b, loss)
            grads = backward_pass(model, trace, g.astype(model.dtype, copy=False))
            adam_step(params, grads, state, lr)
            losses.append(loss)
        rec = EpochRecord(epoch + 1, float(np.mean(losses)))
        if validation is not None:
            val_noise = config.noise if isinstance(config.noise, Fixed) else Fixed(
                (config.noise.lo + config.noise.hi) / 2)
            rec.val_psnr_db = evaluate_dataset(model, validation, val_noise, seed=config.seed).mean_psnr
        history.records.append(rec)
        log.info("epoch %d lr %.3g loss %.6g val_psnr %s", rec.epoch, lr, rec.mean_loss, rec.val_psnr_db)
        if on_epoch is not None:
            on_epoch(rec)
    return model, history
