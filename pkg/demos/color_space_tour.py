"""Walk one synthetic H&E tile through every color space the library knows.

Run:
    python3 demos/color_space_tour.py --out-dir /tmp/tour
"""

import argparse

import numpy as np

from pathaug import ColorSpace, derive_rng, from_space, save_png, to_space
from pathaug.synthetic import generate_he_tile


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default=None, help="where to drop PNGs (optional)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    tile = generate_he_tile(256, 256, derive_rng(args.seed))
    print(f"tile: {tile.width}x{tile.height}")

    for space in (ColorSpace.HSV, ColorSpace.LAB, ColorSpace.HED):
        planes = to_space(tile, space)
        mu = planes.planes.reshape(3, -1).mean(axis=1)
        sigma = planes.planes.reshape(3, -1).std(axis=1)
        back = from_space(planes)
        err = np.abs(back.pixels.astype(int) - tile.pixels.astype(int)).max()
        print(f"{space.value}:")
        print(f"  mu    = {np.round(mu, 3)}")
        print(f"  sigma = {np.round(sigma, 3)}")
        print(f"  round trip max channel error = {err}")

        if args.out_dir:
            import os

            os.makedirs(args.out_dir, exist_ok=True)
            # stretch each plane to [0,255] so the intermediate is viewable
            view = planes.planes.copy()
            for i in range(3):
                lo, hi = view[i].min(), view[i].max()
                if hi > lo:
                    view[i] = (view[i] - lo) / (hi - lo) * 255.0
            from pathaug import RasterImage

            vis = RasterImage(
                np.clip(view.transpose(1, 2, 0), 0, 255).astype(np.uint8)
            )
            save_png(vis, os.path.join(args.out_dir, f"{space.value.lower()}.png"))

    if args.out_dir:
        save_png(tile, f"{args.out_dir}/original.png")
        print(f"wrote planes to {args.out_dir}")


if __name__ == "__main__":
    main()
