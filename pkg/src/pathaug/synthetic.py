"""Synthetic imagery for tests and walkthroughs.

Real slide corpora are too heavy to ship with the package; these generators
produce images with the properties the pipeline cares about (stain-mixture
color structure, saturated tissue on white background, local texture) from a
seeded generator, so everything downstream stays reproducible.
"""

from __future__ import annotations

import numpy as np

from .colorspace import StainMatrix, default_stain_matrix
from .raster import RasterImage, quantize
from .rng import derive_rng


def constant_image(width: int, height: int, color) -> RasterImage:
    """A width x height image of one RGB color."""
    px = np.empty((height, width, 3), dtype=np.uint8)
    px[:] = np.asarray(color, dtype=np.uint8)
    return RasterImage(px)


def _coarse_field(height, width, cell, low, high, rng):
    """Blockwise-constant random field: smooth at patch scale, textured at cell scale."""
    gh = -(-height // cell)
    gw = -(-width // cell)
    grid = rng.uniform(low, high, size=(gh, gw))
    return np.kron(grid, np.ones((cell, cell)))[:height, :width]


def generate_he_tile(
    width: int,
    height: int,
    rng: np.random.Generator,
    matrix: StainMatrix | None = None,
    cell_size: int = 8,
) -> RasterImage:
    """A plausible H&E tile built by mixing two stains in optical density.

    Hematoxylin and eosin concentration fields are drawn blockwise (cell_size
    pixels per block) and combined through the stain matrix, so the result
    has realistic purple-pink color statistics and enough local contrast to
    pass the smoothness filter.
    """
    m = matrix or default_stain_matrix()
    hem = _coarse_field(height, width, cell_size, 0.15, 0.9, rng)
    eos = _coarse_field(height, width, cell_size, 0.05, 0.6, rng)
    od = hem[:, :, None] * m.rows[0] + eos[:, :, None] * m.rows[1]
    rgb = 256.0 * np.power(10.0, -od) - 1.0
    return RasterImage(quantize(rgb))


def disk_slide(
    width: int,
    height: int,
    disks,
    rng: np.random.Generator | None = None,
    noise: float = 12.0,
) -> tuple[RasterImage, np.ndarray]:
    """A white slide with purple tissue disks; returns (image, tissue map).

    ``disks`` is a sequence of (cx, cy, radius) in pixels. The boolean tissue
    map is the exact generator geometry, for checking recovered foreground
    masks against ground truth. With an rng, tissue pixels get uniform
    per-pixel noise so patches inside tissue carry texture.
    """
    yy, xx = np.mgrid[0:height, 0:width]
    tissue = np.zeros((height, width), dtype=bool)
    for cx, cy, radius in disks:
        tissue |= (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
    img = np.full((height, width, 3), 255.0)
    img[tissue] = (130.0, 60.0, 160.0)
    if rng is not None and noise > 0:
        jitter = rng.uniform(-noise, noise, size=(height, width, 3))
        img = np.where(tissue[:, :, None], img + jitter, img)
    return RasterImage(quantize(img)), tissue


def demo_corpus(count: int, width: int, height: int, seed: int) -> list[RasterImage]:
    """``count`` independent H&E tiles from streams derived off one seed."""
    return [
        generate_he_tile(width, height, derive_rng(seed, 7, i)) for i in range(count)
    ]
