"""Slide-level foreground masking, patch selection, and corpus curation.

Foreground is found by Otsu thresholding the downsampled HSV saturation
plane, then one 3x3 strict-majority smoothing pass. The candidate grid is
the non-overlapping patch tiling whose tile centers land in foreground; when
more candidates exist than the cap, every k-th candidate is kept in
row-major order with k = ceil(candidates / cap). Filters run after
selection: a selected patch is filtered_white when its mean saturation falls
below the threshold, otherwise filtered_smooth when its mean squared
Laplacian does, otherwise kept.

Everything here is deterministic; the optional seed is carried into
manifests purely so every written artifact names the seed of the run that
produced it.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .augment import LUMA_WEIGHTS
from .errors import DuplicateLevel, IoError, TooSmall
from .raster import RasterImage, crop, save_png

DEFAULT_CAP = 500
DEFAULT_SAT_THRESHOLD = 5.0
DEFAULT_LAP_THRESHOLD = 15.0
DEFAULT_DOWNSAMPLE = 32

MAGNIFICATIONS = ("20x", "40x")

VERDICT_KEPT = "kept"
VERDICT_WHITE = "filtered_white"
VERDICT_SMOOTH = "filtered_smooth"
VERDICT_BACKGROUND = "filtered_background"
VERDICTS = (VERDICT_KEPT, VERDICT_WHITE, VERDICT_SMOOTH, VERDICT_BACKGROUND)


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary foreground mask at 1/downsample of the slide resolution."""

    values: np.ndarray
    downsample: int

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-d, got shape {arr.shape}")
        ds = int(self.downsample)
        if ds < 1:
            raise ValueError(f"downsample must be >= 1, got {self.downsample}")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "downsample", ds)

    def contains(self, y: int, x: int) -> bool:
        """Whether full-resolution pixel (y, x) falls on foreground."""
        return bool(self.values[y // self.downsample, x // self.downsample])

    def coverage(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True, eq=False)
class SlideLevel:
    """One magnification level of one slide."""

    slide_id: str
    magnification: str
    image: RasterImage

    def __post_init__(self):
        if self.magnification not in MAGNIFICATIONS:
            raise ValueError(
                f"magnification must be one of {MAGNIFICATIONS}, got {self.magnification!r}"
            )
        sid = self.slide_id
        if not sid or sid in (".", "..") or "/" in sid or "\\" in sid:
            raise ValueError(f"slide_id must be a plain name, got {sid!r}")


@dataclass(frozen=True)
class PatchRecord:
    slide_id: str
    magnification: str
    x: int
    y: int
    size: int
    mean_saturation: float
    mean_sq_laplacian: float
    verdict: str

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")


@dataclass(frozen=True)
class LevelSummary:
    """Selection counts for one (slide, magnification) pair."""

    slide_id: str
    magnification: str
    candidates: int
    selected: int
    kept: int
    filtered_white: int
    filtered_smooth: int


@dataclass(frozen=True, eq=False)
class PatchManifest:
    """Records plus the parameters that produced them."""

    records: tuple
    levels: tuple
    patch_size: int
    cap: int
    sat_threshold: float
    lap_threshold: float
    no_filter: bool = False
    seed: int | None = None

    def summary(self) -> dict:
        return {
            "slides": len({lv.slide_id for lv in self.levels}),
            "levels": len(self.levels),
            "candidates": sum(lv.candidates for lv in self.levels),
            "selected": sum(lv.selected for lv in self.levels),
            "kept": sum(lv.kept for lv in self.levels),
            "filtered_white": sum(lv.filtered_white for lv in self.levels),
            "filtered_smooth": sum(lv.filtered_smooth for lv in self.levels),
            "patch_size": self.patch_size,
            "cap": self.cap,
            "sat_threshold": self.sat_threshold,
            "lap_threshold": self.lap_threshold,
            "no_filter": self.no_filter,
        }


# ---------------------------------------------------------------------------
# Measurements

def saturation_plane(image: RasterImage) -> np.ndarray:
    """HSV saturation on [0, 255] per pixel (same formula as the HSV planes)."""
    px = image.pixels.astype(np.float64)
    v = px.max(axis=2)
    c = v - px.min(axis=2)
    return np.divide(c, v, out=np.zeros_like(v), where=v > 0) * 255.0


def mean_saturation(image: RasterImage) -> float:
    return float(saturation_plane(image).mean())


def mean_sq_laplacian(image: RasterImage) -> float:
    """Mean squared response of the 4-neighbor Laplacian on interior pixels.

    Runs on the unquantized luminance so the smoothness threshold is not
    disturbed by rounding. Needs at least one interior pixel.
    """
    if image.height < 3 or image.width < 3:
        raise TooSmall(
            f"laplacian needs an image of at least 3x3, got "
            f"{image.width}x{image.height}"
        )
    lum = image.pixels.astype(np.float64) @ LUMA_WEIGHTS
    lap = (
        lum[:-2, 1:-1]
        + lum[2:, 1:-1]
        + lum[1:-1, :-2]
        + lum[1:-1, 2:]
        - 4.0 * lum[1:-1, 1:-1]
    )
    return float(np.mean(lap**2))


def otsu_threshold(values: np.ndarray) -> int:
    """Otsu's threshold over 256 unit-width bins [i, i+1).

    Returns the first bin index maximizing the between-class variance, so a
    constant plane yields 0 and the foreground test ``value > threshold``
    stays meaningful for degenerate inputs.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    bins = np.clip(np.floor(flat), 0.0, 255.0).astype(np.intp)
    hist = np.bincount(bins, minlength=256).astype(np.float64)
    prob = hist / hist.sum()
    omega = np.cumsum(prob)
    mu = np.cumsum(prob * np.arange(256))
    with np.errstate(invalid="ignore", divide="ignore"):
        sigma_b = (mu[-1] * omega - mu) ** 2 / (omega * (1.0 - omega))
    sigma_b[~np.isfinite(sigma_b)] = 0.0
    return int(np.argmax(sigma_b))


def _block_mean(arr: np.ndarray, ds: int) -> np.ndarray:
    """Mean over ds x ds blocks; trailing partial blocks average what exists."""
    if ds == 1:
        return arr.astype(np.float64, copy=True)
    h, w = arr.shape
    mh, mw = -(-h // ds), -(-w // ds)
    integral = np.zeros((h + 1, w + 1))
    integral[1:, 1:] = arr.cumsum(axis=0).cumsum(axis=1)
    ys = np.minimum(np.arange(mh + 1) * ds, h)
    xs = np.minimum(np.arange(mw + 1) * ds, w)
    corners = integral[np.ix_(ys, xs)]
    sums = corners[1:, 1:] - corners[:-1, 1:] - corners[1:, :-1] + corners[:-1, :-1]
    areas = np.outer(np.diff(ys), np.diff(xs)).astype(np.float64)
    return sums / areas


def _majority_smooth(fg: np.ndarray) -> np.ndarray:
    """One 3x3 strict-majority vote; border pixels vote over their real window."""
    h, w = fg.shape
    integral = np.zeros((h + 1, w + 1))
    integral[1:, 1:] = fg.astype(np.float64).cumsum(axis=0).cumsum(axis=1)
    y0 = np.maximum(np.arange(h) - 1, 0)
    y1 = np.minimum(np.arange(h) + 2, h)
    x0 = np.maximum(np.arange(w) - 1, 0)
    x1 = np.minimum(np.arange(w) + 2, w)
    counts = (
        integral[np.ix_(y1, x1)]
        - integral[np.ix_(y0, x1)]
        - integral[np.ix_(y1, x0)]
        + integral[np.ix_(y0, x0)]
    )
    areas = np.outer(y1 - y0, x1 - x0)
    return counts * 2 > areas


def foreground_mask(level: SlideLevel, downsample: int) -> Mask:
    """Otsu-on-saturation foreground at 1/downsample resolution.

    The saturation plane is block-mean downsampled, thresholded at the Otsu
    bin (foreground strictly above), then smoothed by one majority pass.
    """
    ds = int(downsample)
    if ds < 1:
        raise ValueError(f"downsample must be >= 1, got {downsample}")
    small = _block_mean(saturation_plane(level.image), ds)
    fg = small > otsu_threshold(small)
    return Mask(_majority_smooth(fg), ds)


def mask_from_image(mask_image: RasterImage, level: SlideLevel) -> Mask:
    """Adapt an externally produced mask image (nonzero = foreground).

    The downsample factor is inferred from the level/mask heights and the
    mask must tile the level exactly: shape == ceil(level / ds).
    """
    ds = max(1, -(-level.image.height // mask_image.height))
    expected = (-(-level.image.height // ds), -(-level.image.width // ds))
    got = (mask_image.height, mask_image.width)
    if got != expected:
        raise ValueError(
            f"mask shape {got} does not tile the {level.image.width}x"
            f"{level.image.height} level (expected {expected} at downsample {ds})"
        )
    return Mask(mask_image.pixels.max(axis=2) > 0, ds)


# ---------------------------------------------------------------------------
# Selection

def select_patches(
    level: SlideLevel,
    mask: Mask,
    patch_size: int,
    cap: int = DEFAULT_CAP,
    *,
    sat_threshold: float = DEFAULT_SAT_THRESHOLD,
    lap_threshold: float = DEFAULT_LAP_THRESHOLD,
    no_filter: bool = False,
    audit: bool = False,
    seed: int | None = None,
) -> PatchManifest:
    """Grid candidates, stride selection to the cap, then the two filters.

    Candidates are the non-overlapping patch_size tiles (row-major) whose
    center pixel maps into the foreground mask. With n > cap candidates,
    every k-th is selected, k = ceil(n / cap). ``audit`` additionally records
    the rejected grid tiles as filtered_background, after the selected
    records.
    """
    ps = int(patch_size)
    if ps < 3:
        raise ValueError(f"patch_size must be >= 3, got {patch_size}")
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    img = level.image
    ds = mask.downsample
    expected = (-(-img.height // ds), -(-img.width // ds))
    if mask.values.shape != expected:
        raise ValueError(
            f"mask shape {mask.values.shape} does not cover the level "
            f"(expected {expected} at downsample {ds})"
        )

    candidates = []
    background = []
    for row in range(img.height // ps):
        for col in range(img.width // ps):
            y, x = row * ps, col * ps
            if mask.values[(y + ps // 2) // ds, (x + ps // 2) // ds]:
                candidates.append((x, y))
            elif audit:
                background.append((x, y))

    if len(candidates) <= cap:
        selected = list(candidates)
    else:
        stride = math.ceil(len(candidates) / cap)
        selected = candidates[::stride]

    records = []
    kept = white = smooth = 0
    for x, y in selected:
        patch = crop(img, x, y, ps, ps)
        sat = mean_saturation(patch)
        lap = mean_sq_laplacian(patch)
        if no_filter:
            verdict = VERDICT_KEPT
        elif sat < sat_threshold:
            verdict = VERDICT_WHITE
        elif lap < lap_threshold:
            verdict = VERDICT_SMOOTH
        else:
            verdict = VERDICT_KEPT
        kept += verdict == VERDICT_KEPT
        white += verdict == VERDICT_WHITE
        smooth += verdict == VERDICT_SMOOTH
        records.append(
            PatchRecord(level.slide_id, level.magnification, x, y, ps, sat, lap, verdict)
        )
    for x, y in background:
        patch = crop(img, x, y, ps, ps)
        records.append(
            PatchRecord(
                level.slide_id,
                level.magnification,
                x,
                y,
                ps,
                mean_saturation(patch),
                mean_sq_laplacian(patch),
                VERDICT_BACKGROUND,
            )
        )

    summary = LevelSummary(
        level.slide_id,
        level.magnification,
        candidates=len(candidates),
        selected=len(selected),
        kept=kept,
        filtered_white=white,
        filtered_smooth=smooth,
    )
    return PatchManifest(
        records=tuple(records),
        levels=(summary,),
        patch_size=ps,
        cap=cap,
        sat_threshold=float(sat_threshold),
        lap_threshold=float(lap_threshold),
        no_filter=no_filter,
        seed=seed,
    )


def record_to_dict(record: PatchRecord, seed: int | None = None) -> dict:
    out = {
        "slide_id": record.slide_id,
        "magnification": record.magnification,
        "x": record.x,
        "y": record.y,
        "size": record.size,
        "mean_saturation": float(record.mean_saturation),
        "mean_sq_laplacian": float(record.mean_sq_laplacian),
        "verdict": record.verdict,
    }
    if seed is not None:
        out["seed"] = int(seed)
    return out


def write_manifest(manifest: PatchManifest, path) -> None:
    """One JSON record per line; the run's seed is echoed into each line."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for record in manifest.records:
                fh.write(json.dumps(record_to_dict(record, manifest.seed)))
                fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def curate_corpus(
    levels: Sequence[SlideLevel],
    out_dir,
    *,
    patch_size: int,
    cap: int = DEFAULT_CAP,
    downsample: int = DEFAULT_DOWNSAMPLE,
    sat_threshold: float = DEFAULT_SAT_THRESHOLD,
    lap_threshold: float = DEFAULT_LAP_THRESHOLD,
    no_filter: bool = False,
    audit: bool = False,
    seed: int | None = None,
    masks: Mapping | None = None,
) -> PatchManifest:
    """Curate every level: mask, select, filter, write patches and manifest.

    Kept patches land at {out_dir}/{slide_id}/{magnification}/{x}_{y}.png and
    the full manifest at {out_dir}/manifest.jsonl. Levels are processed in
    (slide_id, magnification) order so output is independent of input order.
    ``masks`` may supply a precomputed Mask per (slide_id, magnification).
    """
    seen = set()
    for level in levels:
        key = (level.slide_id, level.magnification)
        if key in seen:
            raise DuplicateLevel(f"duplicate level {key[0]}/{key[1]}")
        seen.add(key)

    ordered = sorted(levels, key=lambda lv: (lv.slide_id, lv.magnification))
    all_records = []
    all_levels = []
    for level in ordered:
        key = (level.slide_id, level.magnification)
        mask = masks.get(key) if masks else None
        if mask is None:
            mask = foreground_mask(level, downsample)
        part = select_patches(
            level,
            mask,
            patch_size,
            cap,
            sat_threshold=sat_threshold,
            lap_threshold=lap_threshold,
            no_filter=no_filter,
            audit=audit,
            seed=seed,
        )
        patch_dir = os.path.join(out_dir, level.slide_id, level.magnification)
        try:
            os.makedirs(patch_dir, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create {patch_dir}: {exc}") from exc
        for record in part.records:
            if record.verdict == VERDICT_KEPT:
                patch = crop(level.image, record.x, record.y, record.size, record.size)
                save_png(patch, os.path.join(patch_dir, f"{record.x}_{record.y}.png"))
        all_records.extend(part.records)
        all_levels.extend(part.levels)

    manifest = PatchManifest(
        records=tuple(all_records),
        levels=tuple(all_levels),
        patch_size=int(patch_size),
        cap=cap,
        sat_threshold=float(sat_threshold),
        lap_threshold=float(lap_threshold),
        no_filter=no_filter,
        seed=seed,
    )
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    write_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    return manifest


def assemble_tiles(tiles: Mapping) -> RasterImage:
    """Stitch a {(row, col): RasterImage} grid into one image.

    The grid must be complete and rectangular: every (row, col) within the
    maxima present, consistent heights per row and widths per column.
    """
    if not tiles:
        raise ValueError("no tiles to assemble")
    keys = set(tiles)
    rows = max(k[0] for k in keys) + 1
    cols = max(k[1] for k in keys) + 1
    missing = [(r, c) for r in range(rows) for c in range(cols) if (r, c) not in keys]
    if missing:
        raise ValueError(f"tile grid has gaps, first missing {missing[0]}")
    heights = [tiles[(r, 0)].height for r in range(rows)]
    widths = [tiles[(0, c)].width for c in range(cols)]
    for (r, c), tile in tiles.items():
        if tile.height != heights[r] or tile.width != widths[c]:
            raise ValueError(
                f"tile {(r, c)} is {tile.width}x{tile.height}, expected "
                f"{widths[c]}x{heights[r]}"
            )
    bands = [
        np.concatenate([tiles[(r, c)].pixels for c in range(cols)], axis=1)
        for r in range(rows)
    ]
    return RasterImage(np.concatenate(bands, axis=0))
