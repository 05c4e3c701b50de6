"""Conversions among RGB, HSV, CIELAB, and HED (stain) color spaces.

HSV and LAB channels are rescaled to [0, 255] so that dataset statistics are
comparable across spaces through one interface:

* HSV: hue maps the full circle onto [0, 255) (255 == 0, wraps), S and V are
  scaled to [0, 255], V == max(R, G, B).
* LAB: L* in [0, 100] maps to [0, 255]; a*, b* in [-128, 127] shift by +128.
* HED: raw optical-density units (unbounded), OD = -log10((I + 1) / 256).

Forward conversions take a :class:`~pathaug.raster.RasterImage` and return
float64 channel-planar :class:`FloatPlanes`; inverses quantize back to uint8,
clamping to the RGB gamut.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import WrongSpace
from .raster import RasterImage, quantize


class ColorSpace(enum.Enum):
    HSV = "HSV"
    LAB = "LAB"
    HED = "HED"


@dataclass(frozen=True, eq=False)
class FloatPlanes:
    """Channel-planar float64 image in one color space.

    ``planes`` has shape (3, height, width); channel order is (H, S, V),
    (L, a, b), or (Hematoxylin, Eosin, DAB) depending on ``space``.
    """

    width: int
    height: int
    planes: np.ndarray
    space: ColorSpace

    def __post_init__(self):
        arr = np.asarray(self.planes, dtype=np.float64)
        if arr.shape != (3, self.height, self.width):
            raise ValueError(
                f"planes shape {arr.shape} != (3, {self.height}, {self.width})"
            )
        object.__setattr__(self, "planes", arr)


def _planes_from_hwc(pixels: np.ndarray, space: ColorSpace) -> FloatPlanes:
    h, w = pixels.shape[:2]
    return FloatPlanes(w, h, np.ascontiguousarray(pixels.transpose(2, 0, 1)), space)


def _require_space(planes: FloatPlanes, space: ColorSpace):
    if planes.space is not space:
        raise WrongSpace(f"expected {space.value} planes, got {planes.space.value}")


# ---------------------------------------------------------------------------
# HSV (hexcone)

_HUE_SCALE = 255.0 / 360.0  # full circle -> [0, 255)


def hsv_from_rgb_array(rgb: np.ndarray) -> np.ndarray:
    """Hexcone HSV of a float64 (h, w, 3) RGB array in [0, 255].

    Returns (h, w, 3) with channels (H, S, V) on the package scaling.
    Exposed for the float paths in augmentation; most callers want
    :func:`rgb_to_hsv`.
    """
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = np.maximum(np.maximum(r, g), b)
    c = v - np.minimum(np.minimum(r, g), b)
    s = np.divide(c, v, out=np.zeros_like(v), where=v > 0) * 255.0
    safe_c = np.where(c > 0, c, 1.0)
    hr = (g - b) / safe_c
    hr += 6.0 * (hr < 0.0)  # ratio is in [-1, 1]; matches np.mod(x, 6)
    hg = (b - r) / safe_c + 2.0
    hb = (r - g) / safe_c + 4.0
    sector = np.where(c == 0, 0.0, np.where(v == r, hr, np.where(v == g, hg, hb)))
    out = np.empty_like(rgb)
    out[..., 0] = sector * (60.0 * _HUE_SCALE)
    out[..., 1] = s
    out[..., 2] = v
    return out


def rgb_from_hsv_array(hsv: np.ndarray) -> np.ndarray:
    """Inverse of :func:`hsv_from_rgb_array`; returns unquantized float RGB.

    Hue wraps modulo 255; S and V are clamped to [0, 255] first so that
    augmented planes outside the gamut stay meaningful.
    """
    h = np.mod(hsv[..., 0], 255.0)
    s = np.clip(hsv[..., 1], 0.0, 255.0) / 255.0
    v = np.clip(hsv[..., 2], 0.0, 255.0)
    hd = h * (6.0 / 255.0)  # sector position in [0, 6)
    c = v * s
    out = np.empty_like(hsv)
    # branch-free hexcone: channel(n) = v - c * clip(min(k, 4-k), 0, 1)
    # with k = (n + hd) mod 6 and n = 5, 3, 1 for R, G, B; the comparison
    # wrap equals np.mod on [1, 11)
    for idx, n in enumerate((5.0, 3.0, 1.0)):
        k = hd + n
        k -= 6.0 * (k >= 6.0)
        np.minimum(k, 4.0 - k, out=k)
        np.clip(k, 0.0, 1.0, out=k)
        k *= c
        np.subtract(v, k, out=k)
        out[..., idx] = k
    return out


def rotate_hue_array(rgb: np.ndarray, shift: float) -> np.ndarray:
    """Rotate the hexcone hue of float RGB in [0, 255] by ``shift`` H-units.

    Equivalent to converting through HSV, adding ``shift`` to H, and
    converting back, but without materializing the S and V planes. Chroma
    and value are carried through untouched, so saturation is preserved
    exactly instead of through a divide / multiply round trip.
    """
    planes = np.ascontiguousarray(np.moveaxis(rgb, -1, 0))
    r, g, b = planes
    v = np.maximum(r, g)
    np.maximum(v, b, out=v)
    c = np.minimum(r, g)
    np.minimum(c, b, out=c)
    np.subtract(v, c, out=c)
    gray = c == 0.0
    safe_c = np.where(gray, 1.0, c)
    # piecewise sector in [0, 6); the wraps below match np.mod bit for bit
    # on these ranges but avoid its division
    hr = (g - b) / safe_c
    hr += 6.0 * (hr < 0.0)
    hg = (b - r) / safe_c
    hg += 2.0
    hb = (r - g) / safe_c
    hb += 4.0
    sector = np.where(gray, 0.0, np.where(v == r, hr, np.where(v == g, hg, hb)))
    sector += shift * (6.0 / 255.0)
    sector += 6.0 * (sector < 0.0)
    sector -= 6.0 * (sector >= 6.0)
    out = np.empty_like(rgb)
    for idx, n in enumerate((5.0, 3.0, 1.0)):
        k = sector + n
        k -= 6.0 * (k >= 6.0)
        np.minimum(k, 4.0 - k, out=k)
        np.clip(k, 0.0, 1.0, out=k)
        k *= c
        np.subtract(v, k, out=k)
        out[..., idx] = k
    return out


def rgb_to_hsv(image: RasterImage) -> FloatPlanes:
    """Convert to hexcone HSV with all channels scaled to [0, 255]."""
    hsv = hsv_from_rgb_array(image.pixels.astype(np.float64))
    return _planes_from_hwc(hsv, ColorSpace.HSV)


def hsv_to_rgb(planes: FloatPlanes) -> RasterImage:
    """Invert :func:`rgb_to_hsv` up to quantization."""
    _require_space(planes, ColorSpace.HSV)
    rgb = rgb_from_hsv_array(planes.planes.transpose(1, 2, 0))
    return RasterImage(quantize(rgb))


# ---------------------------------------------------------------------------
# CIELAB (sRGB, D65, 2deg observer)

_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
# White point taken as the matrix row sums so the achromatic axis is exact.
_WHITE = _RGB_TO_XYZ.sum(axis=1)
_DELTA = 6.0 / 29.0

def _srgb_linear_lut() -> np.ndarray:
    t = np.arange(256) / 255.0
    return np.where(t <= 0.04045, t / 12.92, ((t + 0.055) / 1.055) ** 2.4)


# sRGB EOTF for the 256 possible uint8 inputs.
_SRGB_LINEAR_LUT = _srgb_linear_lut()


def _lab_f(t: np.ndarray) -> np.ndarray:
    # cbrt everywhere, then patch the small-t linear segment; tissue pixels
    # land in the cbrt branch almost always, so the patch touches few elements
    f = np.cbrt(t)
    low = t <= _DELTA**3
    if low.any():
        f[low] = t[low] / (3.0 * _DELTA**2) + 4.0 / 29.0
    return f


def rgb_to_lab(image: RasterImage) -> FloatPlanes:
    """sRGB -> linear RGB -> XYZ (D65) -> CIELAB, affinely scaled to [0, 255]."""
    lin = _SRGB_LINEAR_LUT[image.pixels]
    xyz = lin.reshape(-1, 3) @ _RGB_TO_XYZ.T
    f = _lab_f(xyz / _WHITE)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    lab = np.empty_like(f)
    lab[:, 0] = (116.0 * fy - 16.0) * 255.0 / 100.0
    lab[:, 1] = 500.0 * (fx - fy) + 128.0
    lab[:, 2] = 200.0 * (fy - fz) + 128.0
    return _planes_from_hwc(lab.reshape(image.pixels.shape), ColorSpace.LAB)


def lab_to_rgb(planes: FloatPlanes) -> RasterImage:
    """Invert :func:`rgb_to_lab`, clamping out-of-gamut values."""
    _require_space(planes, ColorSpace.LAB)
    lab = planes.planes.reshape(3, -1)
    ell = lab[0] * 100.0 / 255.0
    a = lab[1] - 128.0
    b = lab[2] - 128.0
    fy = (ell + 16.0) / 116.0
    f = np.empty((fy.size, 3))
    f[:, 0] = fy + a / 500.0
    f[:, 1] = fy
    f[:, 2] = fy - b / 200.0
    t = np.where(f > _DELTA, f * f * f, 3.0 * _DELTA**2 * (f - 4.0 / 29.0))
    lin = np.maximum((t * _WHITE) @ _XYZ_TO_RGB.T, 0.0)
    srgb = 1.055 * lin ** (1.0 / 2.4) - 0.055
    low = lin <= 0.0031308
    if low.any():
        srgb[low] = 12.92 * lin[low]
    rgb = (srgb * 255.0).reshape(planes.height, planes.width, 3)
    return RasterImage(quantize(rgb))


# ---------------------------------------------------------------------------
# HED stain deconvolution

_LN10 = np.log(10.0)
# OD per uint8 intensity; the +1/256 offset keeps OD finite for black pixels.
_OD_LUT = -np.log10((np.arange(256) + 1.0) / 256.0)


@dataclass(frozen=True, eq=False)
class StainMatrix:
    """Unit stain vectors (rows: hematoxylin, eosin, DAB) and their inverse."""

    rows: np.ndarray
    inverse: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        inv = np.asarray(self.inverse, dtype=np.float64)
        if rows.shape != (3, 3) or inv.shape != (3, 3):
            raise ValueError("stain matrix and inverse must be 3x3")
        norms = np.linalg.norm(rows, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError(f"stain matrix rows must have unit norm, got {norms}")
        if not np.allclose(inv @ rows, np.eye(3), atol=1e-9):
            raise ValueError("inverse does not invert the stain matrix")
        rows = rows.copy()
        inv = inv.copy()
        rows.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "inverse", inv)

    @classmethod
    def from_rows(cls, rows) -> "StainMatrix":
        """Build from three stain vectors, normalizing each to unit length."""
        rows = np.array(rows, dtype=np.float64).reshape(3, 3)
        norms = np.linalg.norm(rows, axis=1)
        if np.any(norms == 0):
            raise ValueError("stain vectors must be nonzero")
        # Leave rows that are already unit length untouched so that
        # serializing and reloading a matrix reproduces it bit for bit.
        off = np.abs(norms - 1.0) > 1e-12
        rows[off] = rows[off] / norms[off, None]
        return cls(rows, np.linalg.inv(rows))

    @classmethod
    def from_flat(cls, values) -> "StainMatrix":
        """Build from 9 row-major reals (the stats-file serialization)."""
        return cls.from_rows(np.asarray(values, dtype=np.float64).reshape(3, 3))

    def to_flat(self) -> list[float]:
        return [float(v) for v in self.rows.ravel()]


# Ruifrok-Johnston H&E-DAB basis; the standard default, injectable everywhere.
_RUIFROK_ROWS = (
    (0.65, 0.70, 0.29),
    (0.07, 0.99, 0.11),
    (0.27, 0.57, 0.78),
)


def default_stain_matrix() -> StainMatrix:
    """The Ruifrok-Johnston H&E-DAB stain basis with unit-normalized rows."""
    return StainMatrix.from_rows(_RUIFROK_ROWS)


def od_from_rgb_array(pixels: np.ndarray) -> np.ndarray:
    """Optical density -log10((I + 1) / 256) of a uint8 (h, w, 3) array."""
    return _OD_LUT[pixels]


def od_to_hed(od: np.ndarray, matrix: StainMatrix) -> np.ndarray:
    """Stain concentrations of OD vectors (..., 3); linear, float path."""
    return np.asarray(od, dtype=np.float64) @ matrix.inverse


def hed_to_od(hed: np.ndarray, matrix: StainMatrix) -> np.ndarray:
    """OD vectors of stain concentrations (..., 3); inverse of :func:`od_to_hed`."""
    return np.asarray(hed, dtype=np.float64) @ matrix.rows


def rgb_to_hed(image: RasterImage, matrix: StainMatrix) -> FloatPlanes:
    """Deconvolve RGB into stain concentrations (raw OD units)."""
    hed = od_to_hed(od_from_rgb_array(image.pixels), matrix)
    return _planes_from_hwc(hed, ColorSpace.HED)


def hed_to_rgb(planes: FloatPlanes, matrix: StainMatrix) -> RasterImage:
    """Recompose stain concentrations into RGB, clamped to [0, 255]."""
    _require_space(planes, ColorSpace.HED)
    od = hed_to_od(planes.planes.transpose(1, 2, 0), matrix)
    rgb = 256.0 * np.exp(-od * _LN10) - 1.0
    return RasterImage(quantize(rgb))


# ---------------------------------------------------------------------------
# Dispatch helpers shared by statistics and augmentation

def to_space(
    image: RasterImage, space: ColorSpace, matrix: StainMatrix | None = None
) -> FloatPlanes:
    """Convert an image into ``space`` (HED uses ``matrix`` or the default)."""
    if space is ColorSpace.HSV:
        return rgb_to_hsv(image)
    if space is ColorSpace.LAB:
        return rgb_to_lab(image)
    return rgb_to_hed(image, matrix or default_stain_matrix())


def from_space(planes: FloatPlanes, matrix: StainMatrix | None = None) -> RasterImage:
    """Convert planes back to RGB, dispatching on their space tag."""
    if planes.space is ColorSpace.HSV:
        return hsv_to_rgb(planes)
    if planes.space is ColorSpace.LAB:
        return lab_to_rgb(planes)
    return hed_to_rgb(planes, matrix or default_stain_matrix())
