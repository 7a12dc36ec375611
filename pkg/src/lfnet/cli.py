"""Command-line entry point: ``lfnet {analyze,train,denoise,eval,compare,synth}``.

Settings come from built-in defaults, then ``--profile``, then a flat
``key = value`` config file (``--config``), then command-line flags; later
sources win. Unknown config keys are rejected.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ImageFormatError, LFNetError, ModelFileError, ShapeError, TrainingDivergedError
from .evaluation import (ImageBuffer, denoise_image, evaluate_dataset, load_dataset, load_image, psnr,
                         save_image)
from .experiments import compare
from .lattice import (LatticeSpec, PlainSpec, analyze, build_lattice, count_parameters, initialize_model,
                      matched_plain_spec, min_max_depth)
from .model_io import load_model, save_model
from .synthetic import write_texture_dir
from .training import PROFILES, Fixed, TrainConfig, parse_noise, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_MODEL = 5


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    rows: int = 2
    cols: int = 3
    channels: int = 1
    filters: int = 32
    kernel: int = 3
    fusion: str = "concat"
    arch: str = "lattice"
    layers: int = 0  # plain arch: 0 = lattice-equivalent depth
    wide_prefix: int = -1  # plain arch: -1 = smallest prefix matching the lattice's parameters
    noise: str = "25"
    patch_size: int = 40
    pairs_per_epoch: int = 1024
    batch_size: int = 16
    epochs: int = 10
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    seed: int = 0
    augment: bool = False
    train_dir: str = ""
    val_dir: str = ""
    test_dir: str = ""
    model: str = ""
    history: str = ""
    report: str = ""
    precision: str = "single"
    deterministic: bool = True
    to_gray: bool = False

    def lattice_spec(self):
        return LatticeSpec(self.rows, self.cols, self.filters, self.kernel, self.channels, self.fusion)

    def network_spec(self):
        lattice = self.lattice_spec()
        if self.arch == "lattice":
            return lattice
        if self.arch != "plain":
            raise ConfigError(f"arch must be 'lattice' or 'plain', got {self.arch!r}")
        layers = self.layers or min_max_depth(lattice, include_output=True)[1]
        if self.wide_prefix < 0:
            return matched_plain_spec(layers, count_parameters(lattice)[0], self.channels, self.filters,
                                      2 * self.filters, self.kernel)
        return PlainSpec(layers, self.wide_prefix, self.filters, 2 * self.filters, self.kernel, self.channels)

    def train_config(self):
        return TrainConfig(noise=parse_noise(self.noise), patch_size=self.patch_size,
                           pairs_per_epoch=self.pairs_per_epoch, batch_size=self.batch_size,
                           epochs=self.epochs, lr_start=self.lr_start, lr_end=self.lr_end,
                           seed=self.seed, augment=self.augment)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str, "bool": _bool}


def _cast(key, value):
    kind = _FIELDS[key].type
    try:
        return _CASTS[kind](value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key != "profile" and key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve_config(args):
    file_values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        file_values = parse_config_text(path.read_text(), str(path))
    flag_values = {k: v for k, v in vars(args).items() if k in _FIELDS and v is not None}
    profile = getattr(args, "profile", None) or file_values.pop("profile", None)
    file_values.pop("profile", None)
    merged = {}
    if profile:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; known: {', '.join(sorted(PROFILES))}")
        merged.update(PROFILES[profile])
    merged.update(file_values)
    merged.update(flag_values)
    cfg = RunConfig(**{k: _cast(k, v) for k, v in merged.items()})
    try:
        cfg.train_config()
        cfg.network_spec()
    except (ValueError, LFNetError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _add_run_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--profile", help="full-size preset: " + ", ".join(sorted(PROFILES)))
    for name, f in _FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=name, type=_bool, default=None, metavar="BOOL")
        else:
            p.add_argument(flag, dest=name, type=_CASTS[f.type], default=None)


def _require_dir(path, what):
    if not path:
        raise CommandError(f"{what} is required", EXIT_USAGE)
    p = Path(path)
    if not p.is_dir():
        raise CommandError(f"{what} not found: {p}", EXIT_DATA)
    return p


def _load_images(directory, cfg, what):
    d = _require_dir(directory, what)
    try:
        names, images = load_dataset(d, channels=cfg.channels, to_gray=cfg.to_gray)
    except (ImageFormatError, ShapeError) as exc:
        raise CommandError(f"{what} {d}: {exc}", EXIT_DATA) from None
    if not images:
        raise CommandError(f"{what} {d} contains no .pgm/.ppm images", EXIT_DATA)
    return names, images


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(args):
    if args.rows < 1 or args.cols < 1:
        raise CommandError(f"rows and cols must be >= 1, got {args.rows}x{args.cols}", EXIT_USAGE)
    spec = LatticeSpec(args.rows, args.cols, args.filters, args.kernel, args.channels, args.fusion)
    report = analyze(spec)
    if args.graph:
        Path(args.graph).write_text(build_lattice(spec).to_graph_file())
    if args.adjacency:
        Path(args.adjacency).write_text(build_lattice(spec).to_adjacency())
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
        return EXIT_OK
    print(f"LFNet {spec.rows}x{spec.cols}  channels {spec.in_channels}  fusion {spec.fusion}")
    print(f"nodes {report['nodes']}  edges {report['edges']}")
    print(f"depth incl. output layer: min {report['min_depth']}  max {report['max_depth']}")
    print(f"depth excl. output layer: min {report['min_depth_excl_output']}  max {report['max_depth_excl_output']}")
    print(f"max in-degree {report['max_in_degree']}  max out-degree {report['max_out_degree']}")
    print(f"receptive field {report['receptive_field']}x{report['receptive_field']}")
    print(f"parameters {report['parameters']:,} ({report['parameters'] / 1e6:.2f} M)")
    print("node      distance  params")
    for nid, count in report["parameter_breakdown"].items():
        dist = report["distance_to_output"].get(nid, "-")
        print(f"{nid:<8}  {dist!s:>8}  {count:>6}")
    return EXIT_OK


def cmd_train(args):
    cfg = resolve_config(args)
    out = Path(args.out or cfg.model or "")
    if not str(out) or str(out) == ".":
        raise CommandError("output model path is required (--out)", EXIT_USAGE)
    if not out.parent.is_dir():
        raise CommandError(f"output directory not found: {out.parent}", EXIT_DATA)
    _, images = _load_images(cfg.train_dir, cfg, "train_dir")
    val = _load_images(cfg.val_dir, cfg, "val_dir")[1] if cfg.val_dir else None
    spec = cfg.network_spec()
    tc = cfg.train_config()
    model = initialize_model(spec, tc.seed, cfg.precision)

    def report(rec):
        val_txt = "" if rec.val_psnr_db is None else f"  val_psnr {rec.val_psnr_db:.3f} dB"
        print(f"epoch {rec.epoch:>3}  loss {rec.mean_loss:.6g}{val_txt}", flush=True)

    try:
        _, history = train(model, images, tc, validation=val, on_epoch=report)
    except ShapeError as exc:
        raise CommandError(str(exc), EXIT_DATA) from None
    save_model(model, out)
    hist_path = Path(cfg.history) if cfg.history else out.parent / "history.csv"
    history.write_csv(hist_path)
    print(f"wrote {out} and {hist_path}")
    return EXIT_OK


def _read_model(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CommandError(f"model file not found: {path}", EXIT_DATA) from None
    except ModelFileError as exc:
        raise CommandError(f"{path}: {exc}", EXIT_MODEL) from None


def cmd_denoise(args):
    model = _read_model(args.model)
    try:
        img = load_image(args.input)
    except (OSError, ImageFormatError) as exc:
        raise CommandError(f"{args.input}: {exc}", EXIT_DATA) from None
    if img.channels != model.in_channels:
        raise CommandError(f"channel mismatch: model expects {model.in_channels}, "
                           f"{args.input} has {img.channels}", EXIT_MODEL)
    clean = img.to_array(np.float64)
    if args.sigma is not None:
        rng = np.random.default_rng([args.seed, 0])
        noisy = clean + rng.normal(0, args.sigma / 255.0, clean.shape)
    else:
        noisy = clean
    written = ImageBuffer.from_array(denoise_image(model, noisy.astype(model.dtype)))
    save_image(written, args.output)
    if args.sigma is not None:
        # score what was written: the 8-bit image, not the float estimate
        print(f"psnr noisy {_fmt_db(psnr(np.clip(noisy, 0, 1), clean))}  "
              f"denoised {_fmt_db(psnr(written.to_array(np.float64), clean))}")
    print(f"wrote {args.output}")
    return EXIT_OK


def _fmt_db(value):
    return "inf" if value == float("inf") else f"{value:.3f}"


def cmd_eval(args):
    if args.sigma is None:
        raise CommandError("an explicit test noise level is required (--sigma); "
                           "evaluation is always reported at a fixed sigma", EXIT_USAGE)
    model = _read_model(args.model)
    d = _require_dir(args.data, "dataset directory")
    try:
        names, images = load_dataset(d, channels=model.in_channels, to_gray=args.to_gray)
    except (ImageFormatError, ShapeError) as exc:
        raise CommandError(f"{d}: {exc}", EXIT_DATA) from None
    if not images:
        raise CommandError(f"dataset directory {d} contains no .pgm/.ppm images", EXIT_DATA)
    report = evaluate_dataset(model, images, Fixed(args.sigma), seed=args.seed, names=names,
                              quantize=args.quantize, model_id=Path(args.model).name)
    if args.report:
        report.write_csv(args.report)
    print(report.table().replace(" inf", "inf"))
    print(f"mean psnr {_fmt_db(report.mean_psnr)} dB  mean ssim {report.mean_ssim:.4f}")
    return EXIT_OK


def cmd_compare(args):
    cfg = resolve_config(args)
    lattice = cfg.lattice_spec()
    tc = cfg.train_config()
    _, images = _load_images(cfg.train_dir, cfg, "train_dir")
    _, val = _load_images(cfg.val_dir, cfg, "val_dir")
    if args.baseline == "lattice":
        baseline = lattice
    else:
        cfg_plain = dataclasses.replace(cfg, arch="plain")
        baseline = cfg_plain.network_spec()
    lp, bp = count_parameters(lattice)[0], count_parameters(baseline)[0]
    print(f"lfnet {lattice.rows}x{lattice.cols}: {lp:,} parameters")
    if isinstance(baseline, PlainSpec):
        print(f"plain {baseline.layers} layers, wide_prefix {baseline.wide_prefix}: {bp:,} parameters "
              f"({100 * (bp - lp) / lp:+.1f}%)")
    else:
        print(f"baseline: identical lattice, {bp:,} parameters")

    def report(label, rec):
        print(f"{label:<5} epoch {rec.epoch:>3}  loss {rec.mean_loss:.6g}  val_psnr {rec.val_psnr_db:.3f} dB",
              flush=True)

    result = compare(lattice, tc, images, val, baseline_spec=baseline, on_epoch=report)
    out = Path(args.out or cfg.report or "compare.csv")
    result.write_csv(out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_synth(args):
    paths = write_texture_dir(args.out, args.count, args.size, args.channels, args.seed)
    print(f"wrote {len(paths)} images to {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="lfnet", description="Lattice fusion networks for Gaussian denoising")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="structural report for a lattice")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--channels", type=int, default=1, choices=(1, 3))
    p.add_argument("--filters", type=int, default=32)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--fusion", default="concat", choices=("concat", "sum"))
    p.add_argument("--json", action="store_true")
    p.add_argument("--graph", help="write 'src -> dst [role]' edge list here")
    p.add_argument("--adjacency", help="write adjacency listing here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train a model from a directory of clean images")
    _add_run_flags(p)
    p.add_argument("--out", help="output model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("denoise", help="denoise one NetPBM image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--sigma", type=float, help="synthesize noise at this level first (demo mode)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="evaluate a model on a directory of clean images")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="CSV output path")
    p.add_argument("--quantize", action="store_true", help="score 8-bit quantized images")
    p.add_argument("--to-gray", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train a lattice and a matched plain chain side by side")
    _add_run_flags(p)
    p.add_argument("--baseline", choices=("plain", "lattice"), default="plain")
    p.add_argument("--out", help="output CSV (epoch,lfnet_psnr,plain_psnr)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="write procedural texture images")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--channels", type=int, default=1, choices=(1, 3))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"lfnet {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"lfnet {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"lfnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except LFNetError as exc:
        print(f"lfnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"lfnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
