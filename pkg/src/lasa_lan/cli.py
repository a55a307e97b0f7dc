"""Command-line entry point: train, infer, eval, verify, synth."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import data as D
from . import engine as E
from . import network as N


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--preset", choices=sorted(C.PRESETS), help="named starting configuration")
    p.add_argument("--seed", type=int, help="seed for initialisation, sampling and generation")
    p.add_argument("--precision", choices=("train", "verify"), help="32-bit training or 64-bit verification")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def _run_config(args) -> C.RunConfig:
    flat = C.parse("\n".join(args.overrides), "--set") if args.overrides else {}
    if args.seed is not None:
        flat.setdefault("train.seed", args.seed)
        flat.setdefault("model.seed", args.seed)
    if args.precision is not None:
        flat["train.precision"] = args.precision
    return C.build(args.preset, args.config, flat)


def pad_to_multiple(x: np.ndarray, m: int = 8) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflection-pad the trailing two axes up to a multiple of ``m``."""
    h, w = x.shape[-2:]
    if h == 0 or w == 0:
        raise ValueError(f"cannot pad an empty {h}x{w} image")
    ph, pw = -h % m, -w % m
    if ph or pw:
        pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
        x = np.pad(x, pad, mode="reflect" if min(h, w) > 1 else "edge")
    return x, (h, w)


def infer_array(model: N.LanModel, x: np.ndarray) -> np.ndarray:
    """Enhance one (C, H, W) image of any size; returns (3, H*s, W*s) in [0, 1]."""
    padded, (h, w) = pad_to_multiple(x)
    s = model.cfg.upscale
    return N.enhance(model, padded[None])[0, :, :h * s, :w * s]


def _load_model(path, precision: str | None) -> N.LanModel:
    model = N.load(path)
    if precision == "verify":
        model.to("verify")
    return model


def cmd_train(args) -> int:
    from .train import TrainingAborted, train

    cfg = _run_config(args)
    if args.out_dir:
        cfg = C.apply(cfg, {"train.out_dir": str(args.out_dir)})
    try:
        res = train(cfg)
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"done: {res.steps} steps, final checkpoint {res.final_checkpoint}")
    return 0


def cmd_infer(args) -> int:
    model = _load_model(args.model, args.precision)
    if args.input.suffix.lower() == D.RAW_SUFFIX:
        x = D.raw_to_input(D.read_raw(args.input))
    else:
        x = D.load_image(args.input)
    if x.shape[0] != model.cfg.in_channels:
        print(f"error: {args.input} has {x.shape[0]} channels, model expects {model.cfg.in_channels}",
              file=sys.stderr)
        return 2
    D.save_image(infer_array(model, x), args.output, bits=args.bits)
    print(f"wrote {args.output}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import MetricReport

    pairs = D.load_pair_dir(args.input_dir, args.gt_dir)
    if not pairs:
        print(f"error: no matched pairs between {args.input_dir} and {args.gt_dir}", file=sys.stderr)
        return 2
    model = _load_model(args.model, args.precision) if args.model else None
    report = MetricReport()
    for pair in pairs:
        pred = infer_array(model, pair.input_img) if model is not None else pair.input_img
        report.add(pair.identifier, pred, pair.gt_img)
    report.write_csv(args.report)
    print(f"{len(pairs)} images: mean PSNR {report.mean_psnr:.3f} dB, mean SSIM {report.mean_ssim:.4f}; "
          f"report {args.report}")
    return 0


def cmd_verify(args) -> int:
    from .verify import all_passed, run

    only = {int(s) for s in args.only.split(",")} if args.only else None
    if args.precision:
        E.set_precision(args.precision)
    return 0 if all_passed(run(args.level, only)) else 1


def cmd_synth(args) -> int:
    seed = 0 if args.seed is None else args.seed
    try:
        names = D.write_synth_dataset(args.out_dir, args.count, seed, args.size, args.gamma, args.gain,
                                      args.noise_sigma, overwrite=args.overwrite)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(names)} pairs to {args.out_dir}/low and {args.out_dir}/high")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lasa-lan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--out-dir", type=Path, help="run directory (train.out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="enhance one PNG or RAW container")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM report over a paired dataset")
    _common(p)
    p.add_argument("--model", type=Path, help="omit to score the inputs themselves")
    p.add_argument("--input-dir", type=Path, required=True)
    p.add_argument("--gt-dir", type=Path, required=True)
    p.add_argument("--report", type=Path, default=Path("report.csv"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the acceptance checks")
    _common(p)
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", help="generate a paired synthetic dataset")
    _common(p)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--gain", type=float, default=0.25)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
