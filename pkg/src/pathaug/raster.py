"""Minimal 8-bit RGB raster type and PNG I/O.

``RasterImage`` is the value passed between every operation in the package:
an immutable (height, width, 3) uint8 array. Augmentation math happens in
float64 and is re-quantized once per operation by round-half-away-from-zero
followed by a clamp to [0, 255] (see :func:`quantize`).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, IoError, OutOfBounds

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class RasterImage:
    """Immutable 8-bit, 3-channel raster.

    ``pixels`` is a read-only (height, width, 3) uint8 array in row-major
    order. Construction copies writeable input so instances are safe to share
    across threads.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"pixels must have shape (h, w, 3), got {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {arr.dtype}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if arr.flags.writeable:
            arr = arr.copy()
            arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half away from zero and clamp to [0, 255], returning uint8.

    Negative halves round away from zero but are clamped to 0 anyway, so a
    plain floor(x + 0.5) is exact on the clamped range.
    """
    staged = np.asarray(values, dtype=np.float64) + 0.5
    np.floor(staged, out=staged)
    np.clip(staged, 0.0, 255.0, out=staged)
    return staged.astype(np.uint8)


def _read_png_header(path) -> tuple[int, int]:
    """Return (bit_depth, color_type) from the IHDR chunk.

    Pillow silently narrows 16-bit channels to 8, so the depth check has to
    look at the raw header.
    """
    try:
        with open(path, "rb") as fh:
            header = fh.read(33)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(header) < 26 or header[:8] != _PNG_SIGNATURE:
        raise DecodeError(f"{path} is not a PNG file")
    return header[24], header[25]


def load_png(path) -> RasterImage:
    """Decode an 8-bit PNG into a RasterImage.

    Grayscale is promoted to 3 channels by replication; an alpha channel is
    dropped. Raises :class:`IoError` if the file is missing or unreadable and
    :class:`DecodeError` for malformed files or 16-bit depth.
    """
    bit_depth, _ = _read_png_header(path)
    if bit_depth == 16:
        raise DecodeError(f"{path}: 16-bit PNG is not supported")
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode != "RGB":
                img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, SyntaxError, ValueError, OSError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return RasterImage(arr)


def save_png(image: RasterImage, path) -> None:
    """Write a RasterImage as an 8-bit RGB PNG.

    The parent directory must exist. Encoding is deterministic: the same
    pixels always produce the same bytes.
    """
    parent = os.path.dirname(os.fspath(path))
    if parent and not os.path.isdir(parent):
        raise IoError(f"parent directory does not exist: {parent}")
    try:
        Image.fromarray(np.asarray(image.pixels), mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def crop(image: RasterImage, x: int, y: int, w: int, h: int) -> RasterImage:
    """Return the exact sub-rectangle [x, x+w) x [y, y+h)."""
    if w < 1 or h < 1:
        raise OutOfBounds(f"crop size must be at least 1x1, got {w}x{h}")
    if x < 0 or y < 0 or x + w > image.width or y + h > image.height:
        raise OutOfBounds(
            f"crop ({x},{y},{w},{h}) outside {image.width}x{image.height} image"
        )
    return RasterImage(image.pixels[y : y + h, x : x + w].copy())
