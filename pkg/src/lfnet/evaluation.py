"""NetPBM I/O, whole-image denoising, PSNR/SSIM, and dataset reports."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import forward_pass
from .errors import NetpbmHeaderError, ShapeError, TruncatedImageError, UnsupportedMaxvalError
from .training import add_gaussian_noise

LUMA = np.array([0.299, 0.587, 0.114])
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


@dataclass
class ImageBuffer:
    samples: np.ndarray  # uint8, (H, W, C)

    def __post_init__(self):
        if self.samples.ndim == 2:
            self.samples = self.samples[:, :, None]
        if self.samples.dtype != np.uint8 or self.samples.shape[2] not in (1, 3):
            raise ValueError(f"need uint8 samples with 1 or 3 channels, got {self.samples.dtype} {self.samples.shape}")

    @property
    def height(self):
        return self.samples.shape[0]

    @property
    def width(self):
        return self.samples.shape[1]

    @property
    def channels(self):
        return self.samples.shape[2]

    def to_array(self, dtype=np.float32):
        """(C, H, W) in [0, 1]."""
        return (self.samples.transpose(2, 0, 1) / 255.0).astype(dtype)

    @classmethod
    def from_array(cls, arr):
        q = np.clip(np.rint(np.asarray(arr) * 255.0), 0, 255).astype(np.uint8)
        return cls(np.ascontiguousarray(q.transpose(1, 2, 0)))

    def to_gray(self):
        if self.channels == 1:
            return self
        y = self.samples.astype(np.float64) @ LUMA
        return ImageBuffer(np.clip(np.rint(y), 0, 255).astype(np.uint8))


def _header_tokens(data, count):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise NetpbmHeaderError("header ends early")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise NetpbmHeaderError("unterminated comment in header")
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise NetpbmHeaderError(f"non-numeric header field {tok!r}")
        tokens.append(int(tok))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise NetpbmHeaderError("missing whitespace after maxval")
    return tokens, pos + 1


def decode_netpbm(data):
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise NetpbmHeaderError(f"unsupported magic {magic!r}; only binary P5/P6 are read")
    (width, height, maxval), start = _header_tokens(data, 3)
    if width < 1 or height < 1:
        raise NetpbmHeaderError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} not supported (only 255)")
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    payload = data[start:start + need]
    if len(payload) < need:
        raise TruncatedImageError(f"payload has {len(payload)} bytes, expected {need}")
    return ImageBuffer(np.frombuffer(payload, np.uint8).reshape(height, width, channels).copy())


def encode_netpbm(img):
    magic = b"P5" if img.channels == 1 else b"P6"
    return magic + f"\n{img.width} {img.height}\n255\n".encode() + img.samples.tobytes()


def load_image(path):
    return decode_netpbm(Path(path).read_bytes())


def save_image(img, path):
    Path(path).write_bytes(encode_netpbm(img))


def list_images(directory):
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_dataset(directory, channels=None, to_gray=False):
    """``(names, arrays)`` for every NetPBM file in ``directory``, arrays (C, H, W) in [0, 1]."""
    names, arrays = [], []
    for p in list_images(directory):
        img = load_image(p)
        if to_gray:
            img = img.to_gray()
        if channels is not None and img.channels != channels:
            raise ShapeError(f"{p} has {img.channels} channels, expected {channels}",
                             expected=channels, actual=img.channels)
        names.append(p.name)
        arrays.append(img.to_array())
    return names, arrays


# ---------------------------------------------------------------------------
# denoising and metrics


def predict_residual(model, noisy):
    out, _ = forward_pass(model, noisy, "infer")
    return out


def denoise_image(model, noisy, clip=True):
    """noisy - R(noisy) for an (N, C, H, W) or (C, H, W) tensor, clipped to [0, 1]."""
    single = noisy.ndim == 3
    x = noisy[None] if single else noisy
    if x.shape[1] != model.in_channels:
        raise ShapeError(f"model denoises {model.in_channels}-channel images, input has {x.shape[1]}",
                         expected=model.in_channels, actual=x.shape[1])
    est = x.astype(model.dtype) - predict_residual(model, x)
    if clip:
        est = np.clip(est, 0.0, 1.0)
    return est[0] if single else est


def psnr(a, b, max_value=1.0):
    if a.shape != b.shape:
        raise ShapeError(f"psnr inputs differ in shape: {a.shape} vs {b.shape}", expected=a.shape, actual=b.shape)
    diff = np.asarray(a, np.float64) - np.asarray(b, np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_value ** 2 / mse)


def gaussian_window(size=11, sigma=1.5):
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def _ssim_plane(a, b, g, c1, c2):
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM with a Gaussian window over valid positions; channels averaged.

    Accepts (H, W), (C, H, W) or (1, C, H, W).
    """
    if a.shape != b.shape:
        raise ShapeError(f"ssim inputs differ in shape: {a.shape} vs {b.shape}", expected=a.shape, actual=b.shape)
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.ndim == 4:
        if a.shape[0] != 1:
            raise ShapeError("ssim takes a single image, not a batch")
        a, b = a[0], b[0]
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < window or a.shape[-2] < window:
        raise ShapeError(f"image {a.shape[-2]}x{a.shape[-1]} is smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    return float(np.mean([_ssim_plane(a[c], b[c], g, c1, c2) for c in range(a.shape[0])]))


# ---------------------------------------------------------------------------
# datasets


@dataclass
class ImageResult:
    name: str
    psnr_db: float
    ssim: float
    noisy_psnr_db: float


@dataclass
class EvalReport:
    results: list = field(default_factory=list)
    noise: str = ""
    model_id: str = ""

    @property
    def mean_psnr(self):
        return float(np.mean([r.psnr_db for r in self.results]))

    @property
    def mean_ssim(self):
        return float(np.mean([r.ssim for r in self.results]))

    @property
    def mean_noisy_psnr(self):
        return float(np.mean([r.noisy_psnr_db for r in self.results]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["image", "psnr_db", "ssim"])
            for r in self.results:
                w.writerow([r.name, repr(r.psnr_db), repr(r.ssim)])

    def table(self):
        width = max([len(r.name) for r in self.results] + [7])
        lines = [f"model {self.model_id or '-'}  noise sigma {self.noise}",
                 f"{'image':<{width}}  {'PSNR dB':>9}  {'SSIM':>7}"]
        lines += [f"{r.name:<{width}}  {r.psnr_db:>9.3f}  {r.ssim:>7.4f}" for r in self.results]
        lines.append(f"{'mean':<{width}}  {self.mean_psnr:>9.3f}  {self.mean_ssim:>7.4f}")
        return "\n".join(lines)


def evaluate_dataset(model, images, noise_mode, seed=0, names=None, quantize=False, model_id=""):
    """Noise each clean (C, H, W) image, denoise it, and score it against the clean original.

    Image ``k`` draws its noise from the stream ``(seed, k)`` so results do not
    depend on evaluation order.
    """
    images = list(images)
    if not images:
        raise ValueError("cannot evaluate an empty dataset")
    report = EvalReport(noise=str(noise_mode), model_id=model_id)
    for k, clean in enumerate(images):
        rng = np.random.default_rng([seed, k])
        clean = clean.astype(np.float64)
        noisy = add_gaussian_noise(clean, noise_mode.draw(rng), rng)
        denoised = denoise_image(model, noisy.astype(model.dtype))
        shown_noisy = np.clip(noisy, 0, 1)
        if quantize:
            denoised = np.rint(denoised * 255) / 255
            shown_noisy = np.rint(shown_noisy * 255) / 255
        report.results.append(ImageResult(
            name=names[k] if names else f"image{k:03d}",
            psnr_db=psnr(denoised, clean),
            ssim=ssim(denoised, clean),
            noisy_psnr_db=psnr(shown_noisy, clean),
        ))
    return report
