"""Command-line front door: train, enhance, eval, losses, envelope, serve."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .curves import CurveConfig, reachable_envelope
from .errors import ContractError
from .images import load_image, save_image
from .losses import LossWeights, evaluate_state
from .metrics import metric_report
from .refine import DenoiserSpec, noise_level_map, refine
from .training import (
    TrainConfig,
    enhance_image,
    load_checkpoint,
    train_unsupervised,
    train_zero_shot,
)


def _parse_weights(text: str) -> LossWeights:
    parts = text.split(",")
    if len(parts) != 4:
        raise ContractError(f"--weights wants spa,exp,tva,crl, got {text!r}")
    spa, exp, tva, crl = (float(p) for p in parts)
    return LossWeights(spa=spa, exp=exp, tva=tva, crl=crl)


def _cmd_train(args) -> int:
    config = TrainConfig(
        gamma=args.gamma,
        lr=args.lr,
        iterations=args.iters,
        steps=args.steps,
        weights=_parse_weights(args.weights) if args.weights else LossWeights(),
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
    )
    if args.mode == "zero-shot":
        result = train_zero_shot(args.data, config, out_path=args.out, log_path=args.log)
    else:
        result = train_unsupervised(args.data, config, out_path=args.out, log_path=args.log)
    last = result.log[-1] if result.log else {}
    print(f"wrote {args.out} after {len(result.log)} iterations "
          f"(L_total {last.get('L_total', float('nan')):.4f})")
    return 0


def _cmd_enhance(args) -> int:
    params = load_checkpoint(args.ckpt)
    image = load_image(args.infile)
    raw = np.ascontiguousarray(image, dtype=np.float32)
    rf_every = args.rf_every if args.rf_every else (1 if args.rf else 0)
    post_step = None
    if rf_every:
        spec = DenoiserSpec()

        def post_step(state, t):
            if t % rf_every != 0:
                return state
            return refine(state, noise_level_map(state, raw), spec)

    out = enhance_image(params, raw, args.steps, post_step=post_step)
    save_image(out, args.outfile)
    print(f"wrote {args.outfile}")
    return 0


def _cmd_eval(args) -> int:
    low_dir, high_dir = args.pairs
    params = load_checkpoint(args.ckpt)
    lows = sorted(Path(low_dir).iterdir())
    writer = csv.writer(sys.stdout)
    writer.writerow(["image", "psnr", "ssim"])
    reports = []
    for low_path in lows:
        high_path = Path(high_dir) / low_path.name
        if not high_path.is_file():
            continue
        enhanced = enhance_image(params, load_image(low_path), args.steps)
        report = metric_report(enhanced, load_image(high_path))
        reports.append(report)
        writer.writerow([low_path.name, f"{report.psnr:.4f}", f"{report.ssim:.6f}"])
    if not reports:
        raise ContractError(f"no paired images between {low_dir} and {high_dir}")
    mean_psnr = float(np.mean([r.psnr for r in reports]))
    mean_ssim = float(np.mean([r.ssim for r in reports]))
    writer.writerow(["mean", f"{mean_psnr:.4f}", f"{mean_ssim:.6f}"])
    return 0


def _cmd_losses(args) -> int:
    enhanced = load_image(args.infile)
    reference = load_image(args.ref) if args.ref else enhanced
    weights = _parse_weights(args.weights) if args.weights else LossWeights()
    breakdown, reward = evaluate_state(enhanced, reference, None, weights)
    payload = breakdown.as_dict()
    payload["mean_reward"] = float(reward.mean())
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_envelope(args) -> int:
    steps = [int(s) for s in args.steps.split(",")]
    tables = {n: reachable_envelope(n, skip_weight=args.omega, levels=args.levels) for n in steps}
    writer = csv.writer(sys.stdout)
    header = ["input"]
    for n in steps:
        header += [f"min_{n}", f"max_{n}"]
    writer.writerow(header)
    inputs = tables[steps[0]].inputs
    for i, v in enumerate(inputs):
        row = [f"{v:.4f}"]
        for n in steps:
            row += [f"{tables[n].lo[i]:.6f}", f"{tables[n].hi[i]:.6f}"]
        writer.writerow(row)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.ckpt_dir, idle_timeout=args.idle_timeout)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relight", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a policy on a corpus or a single image")
    p.add_argument("--mode", choices=["unsupervised", "zero-shot"], default="unsupervised")
    p.add_argument("--data", required=True, help="image directory (unsupervised) or file (zero-shot)")
    p.add_argument("--iters", type=int, default=None, help="default 20000 / 1000 by mode")
    p.add_argument("--steps", type=int, default=None, help="episode length, default 6 / 8 by mode")
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--weights", default=None, help="spa,exp,tva,crl")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="CSV metrics log path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("enhance", help="run a frozen policy on one image")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--rf", action="store_true", help="denoise after every step")
    p.add_argument("--rf-every", type=int, default=0, help="denoise after every k-th step")
    p.set_defaults(func=_cmd_enhance)

    p = sub.add_parser("eval", help="PSNR/SSIM over a paired directory, CSV on stdout")
    p.add_argument("--pairs", nargs=2, metavar=("LOW_DIR", "HIGH_DIR"), required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, default=8)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("losses", help="loss breakdown for an image (pair) as JSON")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--ref", default=None, help="raw input to score against (default: the image itself)")
    p.add_argument("--weights", default=None, help="spa,exp,tva,crl")
    p.set_defaults(func=_cmd_losses)

    p = sub.add_parser("envelope", help="reachable output range per input level, CSV on stdout")
    p.add_argument("--steps", default="1,2,3,4,5,6,7,8", help="comma-separated step counts")
    p.add_argument("--omega", type=float, default=CurveConfig().skip_weight)
    p.add_argument("--levels", type=int, default=101)
    p.set_defaults(func=_cmd_envelope)

    p = sub.add_parser("serve", help="run the session service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ckpt-dir", default="checkpoints")
    p.add_argument("--idle-timeout", type=float, default=30 * 60.0)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
