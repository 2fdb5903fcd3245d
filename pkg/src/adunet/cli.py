"""Command-line entry point: train, eval, infer, synth, params."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import CheckpointError, load_checkpoint
from .config import PRESETS, ConfigError, NetworkConfig, expand, load_config
from .data import DatasetError, SynthParams, load_paired, read_image, split, write_image, write_synth_dataset
from .network import build_model, count_parameters
from .trainer import NonFiniteLossError, TrainConfig, evaluate, train

log = logging.getLogger("adunet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for runtime failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("ADUNET_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"ADUNET_SEED must be an integer, got {env!r}")


def _size(text: str | None) -> tuple[int, int] | None:
    if text is None:
        return None
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--size expects HxW, got {text!r}")
    return h, w


def _config_arg(spec: str) -> NetworkConfig:
    path = Path(spec)
    if path.exists():
        return load_config(path)
    if spec in PRESETS:
        return expand({"preset": spec})
    raise FileNotFoundError(f"config file not found: {spec}")


def _checkpoint_model(path: str):
    store, _, epoch = load_checkpoint(path)
    if not store.config:
        raise CheckpointError(f"{path}: checkpoint carries no network config")
    config = expand(store.config)
    if config.hash() != store.config_hash:
        raise CheckpointError(
            f"{path}: config hash {config.hash()} does not match recorded {store.config_hash}"
        )
    model = build_model(config, store).eval()
    return model, config, epoch


# -- subcommands -------------------------------------------------------------------

def cmd_train(args) -> int:
    seed = _seed(args)
    config = _config_arg(args.config).replace(seed=seed)
    size = _size(args.size)
    data = Path(args.data)
    if (data / "train").is_dir() and (data / "val").is_dir():
        train_ds, val_ds = load_paired(data / "train", size), load_paired(data / "val", size)
    else:
        train_ds, val_ds = split(load_paired(data, size), 1.0 - args.val_fraction, seed)
    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=seed,
                     checkpoint_dir=args.out, max_steps=args.max_steps)
    report, _ = train(config, tc, train_ds, val_ds)
    print(f"trained {report.steps} steps, best val psnr {report.best_val_psnr:.3f} dB "
          f"at epoch {report.best_epoch}; outputs in {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, config, _ = _checkpoint_model(args.ckpt)
    ds = load_paired(args.data, _size(args.size))
    metrics = evaluate(model, config, ds)
    out = Path(args.metrics) if args.metrics else Path(args.ckpt).with_suffix(".metrics.json")
    out.write_text(json.dumps(metrics.as_dict(), indent=2))
    print(f"psnr {metrics.psnr:.4f} ssim {metrics.ssim:.4f} over {metrics.count} pairs")
    return 0


def pad_to_multiple(x: torch.Tensor, multiple: int = 16) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad ``[B,3,H,W]`` on the bottom/right to a multiple; returns the original size."""
    h, w = x.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        # reflect needs pad < dim; replicate covers tiny images
        mode = "reflect" if ph < h and pw < w else "replicate"
        x = F.pad(x, (0, pw, 0, ph), mode=mode)
    return x, (h, w)


def restore(model, image: torch.Tensor):
    """Run one ``[3,H,W]`` image of any size; returns raw ``(y, yc, ys)`` cropped back."""
    x, (h, w) = pad_to_multiple(image.unsqueeze(0))
    with torch.no_grad():
        y, yc, ys = model(x)
    crop = lambda t: t[0, :, :h, :w]
    # recompose on the cropped input so the identity holds on stored values
    yc, ys = crop(yc), crop(ys)
    return image - yc - ys, yc, ys


def _display(res: torch.Tensor) -> tuple[torch.Tensor, float, float]:
    lo, hi = float(res.min()), float(res.max())
    scale = hi - lo
    norm = (res - lo) / scale if scale > 0 else torch.zeros_like(res)
    return norm, lo, hi


def cmd_infer(args) -> int:
    model, _, _ = _checkpoint_model(args.ckpt)
    src, out = Path(args.input), Path(args.out)
    if not src.is_dir():
        raise FileNotFoundError(f"input directory not found: {src}")
    files = sorted(p for p in src.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not files:
        raise DatasetError(f"no images in {src}")
    out.mkdir(parents=True, exist_ok=True)
    for path in files:
        image = read_image(path)
        y, yc, ys = restore(model, image)
        write_image(out / f"{path.stem}.png", y.clamp(0, 1))
        if args.dump_residuals:
            ranges = {}
            for tag, res in (("cres", yc), ("sres", ys)):
                norm, lo, hi = _display(res)
                write_image(out / f"{path.stem}_{tag}.png", norm)
                ranges[tag] = {"min": lo, "max": hi}
            (out / f"{path.stem}_residuals.json").write_text(json.dumps(ranges, indent=2))
            np.savez(out / f"{path.stem}_residuals.npz", input=image.numpy(), cres=yc.numpy(),
                     sres=ys.numpy(), y_raw=y.numpy())
    print(f"restored {len(files)} images into {out}")
    return 0


def cmd_synth(args) -> int:
    seed = _seed(args)
    size = _size(args.size) or (64, 64)
    params = SynthParams(height=size[0], width=size[1], seed=seed)
    if args.beta is not None:
        params = params.with_beta(args.beta)
    stems = write_synth_dataset(args.out, args.n, params, start=args.start)
    print(f"wrote {len(stems)} pairs to {args.out}")
    return 0


def cmd_params(args) -> int:
    config = _config_arg(args.config)
    total, table = count_parameters(config)
    print(f"{'block':<20}{'params':>12}")
    for name, n in table["blocks"].items():
        print(f"{name:<20}{n:>12,}")
    print()
    for name, n in table["categories"].items():
        print(f"{name:<20}{n:>12,}")
    print(f"\n{'total':<20}{total:>12,}")
    if args.json:
        Path(args.json).write_text(json.dumps(table, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adunet", description="Joint rain and haze removal network.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a network on a paired dataset")
    p.add_argument("--config", required=True, help="JSON config or preset name")
    p.add_argument("--data", required=True, help="dataset root (input/ + gt/, or train/ + val/)")
    p.add_argument("--out", default="run")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--size", help="resize pairs to HxW")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mean PSNR/SSIM of a checkpoint on a paired dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", help="metrics JSON path (default: next to the checkpoint)")
    p.add_argument("--size")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="restore every image in a directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-residuals", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("synth", help="write a synthetic rain + haze dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beta", type=float, help="fixed haze density")
    p.add_argument("--size", help="HxW, default 64x64")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("params", help="parameter breakdown of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--json", help="also write the table as JSON")
    p.set_defaults(func=cmd_params, seed=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        torch.manual_seed(_seed(args))
        return args.func(args)
    except UsageError as exc:
        print(f"adunet: error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, DatasetError, CheckpointError, NonFiniteLossError,
            FileNotFoundError, ValueError, OSError) as exc:
        print(f"adunet {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
