"""Apply the default augmentation pipeline to one tile under several seeds.

Every call draws its gates and parameters from a derived generator, so the
same (seed, index) pair always produces the same output. The script saves a
strip of augmented variants next to the original.

Run:
    python3 demos/augment_walkthrough.py --variants 8 -o /tmp/aug_strip.png
"""

import argparse

import numpy as np

from pathaug import (
    RasterImage,
    apply_pipeline,
    derive_rng,
    fit_gmm,
    fit_unimodal,
    image_stats,
    preset_pipeline,
    save_png,
)
from pathaug.colorspace import default_stain_matrix
from pathaug.stainstats import ALL_SPACES, SpaceModels, StainModelFile
from pathaug.synthetic import generate_he_tile


def quick_model(seed, count=80, k=5):
    tiles = [generate_he_tile(32, 32, derive_rng(seed, 7, i)) for i in range(count)]
    spaces = {}
    for space in ALL_SPACES:
        stats = [image_stats(t, space) for t in tiles]
        spaces[space] = SpaceModels(
            fit_unimodal(stats, space), fit_gmm(stats, space, k, seed=seed)
        )
    return StainModelFile(default_stain_matrix(), 1.0, count, spaces)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--variants", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-o", "--output", default="/tmp/aug_strip.png")
    args = ap.parse_args()

    print("fitting a small stain model...")
    pipe = preset_pipeline("paper-default", model=quick_model(args.seed))

    tile = generate_he_tile(128, 128, derive_rng(args.seed, 1))
    panels = [tile.pixels]
    for i in range(args.variants):
        rng = derive_rng(args.seed, 0, i)
        out = apply_pipeline(pipe, tile, rng)
        panels.append(out.pixels)
        changed = (out.pixels != tile.pixels).any()
        print(f"variant {i}: {'changed' if changed else 'identity draw'}")

    gap = np.full((128, 4, 3), 255, dtype=np.uint8)
    cells = []
    for i, p in enumerate(panels):
        if i:
            cells.append(gap)
        cells.append(p)
    strip = RasterImage(np.concatenate(cells, axis=1))
    save_png(strip, args.output)
    print(f"saved {args.output} (original on the left)")


if __name__ == "__main__":
    main()
