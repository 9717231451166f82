"""Command-line entry point: ``apbsn <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import io, pd
from .bsn import build_bsn
from .metrics import evaluate
from .noise import NoiseSpec, correlation_profile, gen_noise, kernel_from_name
from .pipeline import InferConfig, denoise, train
from .synth import textured_image

log = logging.getLogger("apbsn")


def _cmd_generate(args) -> int:
    if args.clean_input:
        clean = io.read_image(args.clean_input)
    else:
        clean = textured_image(args.size, channels=args.channels, seed=args.seed)
        if args.channels == 1:
            clean = clean[:, :, 0]
    spec = NoiseSpec(args.sigma, kernel_from_name(args.kernel), seed=args.seed + 1)
    noisy = clean + gen_noise(clean.shape, spec)
    io.write_image(clean, args.clean)
    io.write_image(noisy, args.noisy)
    return 0


def _cmd_analyze(args) -> int:
    noisy, clean = io.read_image(args.noisy), io.read_image(args.clean)
    prof = correlation_profile(noisy, clean, args.max_offset)
    if args.out:
        prof.to_csv(args.out)
    else:
        print("dx,dy,rho,n")
        for dx, dy in prof.offsets:
            print(f"{dx},{dy},{prof[dx, dy]!r},{prof.sample_count.get((dx, dy), 0)}")
    return 0


def _cmd_pd(args) -> int:
    img = io.read_image(args.image)
    op = pd.pd_inverse if args.inverse else pd.pd_forward
    io.write_image(op(img, args.s), args.out)
    return 0


def _cmd_train(args) -> int:
    cfg = io.RunConfig.load(args.config) if args.config else io.RunConfig()
    tcfg = cfg.train
    if args.seed is not None:
        tcfg.seed = args.seed
    images = [io.read_image(p) for p in args.images]
    images = [im if im.ndim == 3 else im[:, :, None] for im in images]
    model = build_bsn(cfg.bsn, seed=tcfg.seed)
    log.info("training BSN with %d parameters", model.num_parameters())
    model, history = train(model, images, tcfg)
    io.save_checkpoint(args.out, model, tcfg, seed=tcfg.seed)
    if args.loss_csv:
        history.to_csv(args.loss_csv)
    return 0


def _cmd_denoise(args) -> int:
    model = io.load_checkpoint(args.checkpoint)
    noisy = io.read_image(args.image)
    icfg = InferConfig(b=args.b, r3_enabled=args.r3, p=args.p, T=args.t, seed=args.seed)
    squeeze = noisy.ndim == 2
    x = noisy[:, :, None] if squeeze else noisy
    if x.shape[2] != model.config.in_channels:
        raise ValueError(f"image has {x.shape[2]} channels, model expects {model.config.in_channels}")
    out = denoise(model, x, icfg)
    io.write_image(out[:, :, 0] if squeeze else out, args.out)
    return 0


def _cmd_evaluate(args) -> int:
    rep = evaluate(io.read_image(args.a), io.read_image(args.b))
    print(rep.format())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="apbsn", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a clean/noisy image pair")
    g.add_argument("--clean", required=True, help="output path of the clean image")
    g.add_argument("--noisy", required=True, help="output path of the noisy image")
    g.add_argument("--clean-input", help="use this image instead of a synthetic texture")
    g.add_argument("--size", type=int, default=128)
    g.add_argument("--channels", type=int, choices=(1, 3), default=3)
    g.add_argument("--sigma", type=float, default=0.1)
    g.add_argument("--kernel", default="tent", help="white, tent or boxN")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_generate)

    a = sub.add_parser("analyze", help="noise correlation profile as CSV")
    a.add_argument("noisy")
    a.add_argument("clean")
    a.add_argument("--max-offset", type=int, default=6)
    a.add_argument("--out", help="CSV path (default: stdout)")
    a.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("pd", help="pixel-shuffle downsampling of an image")
    p.add_argument("image")
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--inverse", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pd)

    t = sub.add_parser("train", help="self-supervised training on noisy images")
    t.add_argument("images", nargs="+")
    t.add_argument("--config", help="JSON run config")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--loss-csv")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=_cmd_train)

    d = sub.add_parser("denoise", help="denoise an image with a checkpoint")
    d.add_argument("image")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--b", type=int, default=2)
    d.add_argument("--r3", action=argparse.BooleanOptionalAction, default=True)
    d.add_argument("--p", type=float, default=0.16)
    d.add_argument("--t", type=int, default=8)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=_cmd_denoise)

    e = sub.add_parser("evaluate", help="PSNR/SSIM between two images")
    e.add_argument("a")
    e.add_argument("b")
    e.set_defaults(func=_cmd_evaluate)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as e:
        print(f"apbsn {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
