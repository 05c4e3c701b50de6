import io
import os
import struct
import zlib

import numpy as np
import pytest
from PIL import Image

from pathaug import (
    DecodeError,
    IoError,
    OutOfBounds,
    RasterImage,
    crop,
    load_png,
    quantize,
    save_png,
)


def _img(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return RasterImage(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


# ---------------------------------------------------------------------------
# RasterImage

def test_shape_and_dtype_enforced():
    with pytest.raises(ValueError):
        RasterImage(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        RasterImage(np.zeros((4, 4, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        RasterImage(np.zeros((4, 4, 3), dtype=np.float64))
    with pytest.raises(ValueError):
        RasterImage(np.zeros((0, 4, 3), dtype=np.uint8))


def test_pixels_are_frozen_and_caller_array_detached():
    src = np.zeros((2, 2, 3), dtype=np.uint8)
    image = RasterImage(src)
    src[0, 0, 0] = 9
    assert image.pixels[0, 0, 0] == 0
    with pytest.raises(ValueError):
        image.pixels[0, 0, 0] = 1


def test_equality_is_by_content():
    a = _img(3, 5, seed=1)
    b = RasterImage(a.pixels.copy())
    c = _img(3, 5, seed=2)
    assert a == b
    assert a != c
    assert a != "not an image"


def test_width_height_tobytes():
    image = _img(4, 7)
    assert (image.width, image.height) == (7, 4)
    assert image.tobytes() == image.pixels.tobytes()


# ---------------------------------------------------------------------------
# quantize

def test_quantize_rounds_half_up_and_clamps():
    vals = np.array([-3.0, -0.5, 0.0, 0.4, 0.5, 0.6, 76.245, 127.5, 254.5, 255.4, 300.0])
    out = quantize(vals)
    assert out.dtype == np.uint8
    assert out.tolist() == [0, 0, 0, 0, 1, 1, 76, 128, 255, 255, 255]


def test_quantize_is_identity_on_integers():
    vals = np.arange(256, dtype=np.float64)
    assert np.array_equal(quantize(vals), vals.astype(np.uint8))


# ---------------------------------------------------------------------------
# PNG I/O

def test_round_trip(tmp_path):
    image = _img(9, 13, seed=3)
    path = tmp_path / "x.png"
    save_png(image, path)
    assert load_png(path) == image


def test_save_is_deterministic(tmp_path):
    image = _img(16, 16, seed=4)
    save_png(image, tmp_path / "a.png")
    save_png(image, tmp_path / "b.png")
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_grayscale_png_promoted(tmp_path):
    path = tmp_path / "gray.png"
    arr = np.arange(64, dtype=np.uint8).reshape(8, 8)
    Image.fromarray(arr, mode="L").save(path)
    image = load_png(path)
    assert np.array_equal(image.pixels[..., 0], arr)
    assert np.array_equal(image.pixels[..., 0], image.pixels[..., 1])
    assert np.array_equal(image.pixels[..., 0], image.pixels[..., 2])


def test_alpha_dropped(tmp_path):
    path = tmp_path / "rgba.png"
    rgba = np.zeros((4, 4, 4), dtype=np.uint8)
    rgba[..., 0] = 200
    rgba[..., 3] = 7
    Image.fromarray(rgba, mode="RGBA").save(path)
    image = load_png(path)
    assert image.pixels.shape == (4, 4, 3)
    assert (image.pixels[..., 0] == 200).all()


def test_sixteen_bit_png_rejected(tmp_path):
    path = tmp_path / "deep.png"
    deep = Image.new("I;16", (4, 4))
    deep.putdata([i * 4097 for i in range(16)])
    deep.save(path)
    with pytest.raises(DecodeError):
        load_png(path)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        load_png(tmp_path / "absent.png")


def test_garbage_file_is_decode_error(tmp_path):
    path = tmp_path / "junk.png"
    path.write_bytes(b"\x89PNG\r\n\x1a\n" + b"nonsense" * 8)
    with pytest.raises(DecodeError):
        load_png(path)


def test_truncated_png_is_decode_error(tmp_path):
    good = tmp_path / "good.png"
    save_png(_img(8, 8), good)
    bad = tmp_path / "bad.png"
    bad.write_bytes(good.read_bytes()[:40])
    with pytest.raises(DecodeError):
        load_png(bad)


def test_save_into_missing_dir_is_io_error(tmp_path):
    with pytest.raises(IoError):
        save_png(_img(2, 2), tmp_path / "nope" / "x.png")


# ---------------------------------------------------------------------------
# crop

def test_crop_extracts_exact_window():
    image = _img(10, 12, seed=5)
    part = crop(image, 3, 2, 5, 4)
    assert part.width == 5 and part.height == 4
    assert np.array_equal(part.pixels, image.pixels[2:6, 3:8])


def test_crop_bounds_checked():
    image = _img(6, 6)
    for args in [(-1, 0, 2, 2), (0, -1, 2, 2), (5, 0, 2, 2), (0, 5, 2, 2), (0, 0, 7, 1)]:
        with pytest.raises(OutOfBounds):
            crop(image, *args)
    with pytest.raises(OutOfBounds):
        crop(image, 0, 0, 0, 3)


def test_crop_full_frame_is_identity():
    image = _img(5, 4)
    assert crop(image, 0, 0, 4, 5) == image
