"""Synthesize a paired low-light / normal-light corpus for demos and eval.

Scenes are procedural (smooth illumination fields over random gradients); the
low-light half is a gamma darkening of the normal half, so PSNR/SSIM against
the originals is meaningful.
"""

import argparse
from pathlib import Path

from relight.images import gamma_darken, save_image, synthetic_scene


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data", help="output root (gets low/ and high/)")
    parser.add_argument("--count", type=int, default=8)
    parser.add_argument("--size", type=int, default=128)
    parser.add_argument("--gamma", type=float, default=2.5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    root = Path(args.out)
    (root / "low").mkdir(parents=True, exist_ok=True)
    (root / "high").mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        scene = synthetic_scene(args.size, args.size, seed=args.seed + i)
        name = f"scene_{i:03d}.png"
        save_image(scene, root / "high" / name)
        save_image(gamma_darken(scene, args.gamma), root / "low" / name)
    print(f"wrote {args.count} pairs under {root}/low and {root}/high")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
