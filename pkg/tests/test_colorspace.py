import colorsys

import numpy as np
import pytest
from skimage import color as skcolor

from pathaug import (
    ColorSpace,
    FloatPlanes,
    RasterImage,
    StainMatrix,
    WrongSpace,
    default_stain_matrix,
    from_space,
    hed_to_rgb,
    hsv_to_rgb,
    lab_to_rgb,
    rgb_to_hed,
    rgb_to_hsv,
    rgb_to_lab,
    to_space,
)
from pathaug.colorspace import hed_to_od, od_from_rgb_array, od_to_hed
from pathaug.synthetic import generate_he_tile


def _single(r, g, b):
    return RasterImage(np.array([[[r, g, b]]], dtype=np.uint8))


def _random_image(h, w, seed):
    rng = np.random.default_rng(seed)
    return RasterImage(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


# ---------------------------------------------------------------------------
# HSV

def test_hsv_known_values():
    # oracle: colorsys, rescaled so every channel sits on [0, 255]
    cases = {
        (255, 0, 0): (0.0, 255.0, 255.0),
        (0, 255, 0): (85.0, 255.0, 255.0),
        (0, 0, 255): (170.0, 255.0, 255.0),
        (255, 255, 255): (0.0, 0.0, 255.0),
        (37, 37, 37): (0.0, 0.0, 37.0),
    }
    for rgb, want in cases.items():
        got = rgb_to_hsv(_single(*rgb)).planes.ravel()
        assert np.allclose(got, want, atol=1e-9), (rgb, got)


def test_hsv_matches_colorsys_everywhere():
    image = _random_image(40, 40, seed=10)
    planes = rgb_to_hsv(image).planes
    for y in range(0, 40, 7):
        for x in range(0, 40, 7):
            r, g, b = (int(v) for v in image.pixels[y, x])
            h, s, v = colorsys.rgb_to_hsv(r / 255.0, g / 255.0, b / 255.0)
            want = (h * 255.0, s * 255.0, v * 255.0)
            assert np.allclose(planes[:, y, x], want, atol=1e-9)


def test_hsv_value_channel_is_max():
    image = _random_image(16, 16, seed=11)
    v = rgb_to_hsv(image).planes[2]
    assert np.array_equal(v, image.pixels.max(axis=2).astype(np.float64))


def test_hsv_round_trip_exact_on_samples():
    for seed in range(5):
        image = _random_image(24, 24, seed=seed)
        back = hsv_to_rgb(rgb_to_hsv(image))
        diff = np.abs(back.pixels.astype(int) - image.pixels.astype(int))
        assert diff.max() <= 1, diff.max()


def test_hue_wraps_at_255():
    planes = rgb_to_hsv(_single(255, 0, 0)).planes.copy()
    planes[0] += 255.0  # one full turn
    back = hsv_to_rgb(FloatPlanes(1, 1, planes, ColorSpace.HSV))
    assert back.pixels.ravel().tolist() == [255, 0, 0]


def test_hsv_inverse_clamps_out_of_range_sv():
    planes = np.array([[[300.0]], [[400.0]], [[-20.0]]])
    back = hsv_to_rgb(FloatPlanes(1, 1, planes, ColorSpace.HSV))
    assert back.pixels.min() >= 0 and back.pixels.max() <= 255


# ---------------------------------------------------------------------------
# LAB

def test_lab_achromatic_axis_exact():
    assert rgb_to_lab(_single(255, 255, 255)).planes.ravel().tolist() == [255.0, 128.0, 128.0]
    assert rgb_to_lab(_single(0, 0, 0)).planes.ravel().tolist() == [0.0, 128.0, 128.0]
    for v in (17, 100, 200):
        ell, a, b = rgb_to_lab(_single(v, v, v)).planes.ravel()
        assert a == 128.0 and b == 128.0
        assert 0.0 <= ell <= 255.0


def test_lab_close_to_skimage():
    image = _random_image(32, 32, seed=12)
    ours = rgb_to_lab(image).planes
    sk = skcolor.rgb2lab(image.pixels)
    want = np.stack([sk[..., 0] * 2.55, sk[..., 1] + 128.0, sk[..., 2] + 128.0])
    assert np.abs(ours - want).max() < 0.05


def test_lab_round_trip_within_tolerance():
    for seed in range(5):
        image = _random_image(24, 24, seed=100 + seed)
        back = lab_to_rgb(rgb_to_lab(image))
        diff = np.abs(back.pixels.astype(int) - image.pixels.astype(int))
        assert diff.max() <= 2, diff.max()


def test_lab_inverse_clamps_out_of_gamut():
    planes = np.array([[[400.0]], [[250.0]], [[-90.0]]])
    back = lab_to_rgb(FloatPlanes(1, 1, planes, ColorSpace.LAB))
    assert back.pixels.min() >= 0 and back.pixels.max() <= 255


# ---------------------------------------------------------------------------
# Stain matrix and HED

def test_default_matrix_rows_unit_norm():
    m = default_stain_matrix()
    assert np.allclose(np.linalg.norm(m.rows, axis=1), 1.0, atol=1e-12)
    assert np.allclose(m.inverse @ m.rows, np.eye(3), atol=1e-9)


def test_matrix_flat_round_trip():
    m = default_stain_matrix()
    again = StainMatrix.from_flat(m.to_flat())
    assert np.allclose(again.rows, m.rows, atol=1e-15)


def test_matrix_rejects_bad_input():
    with pytest.raises(ValueError):
        StainMatrix.from_rows([(0, 0, 0), (0, 1, 0), (0, 0, 1)])
    with pytest.raises(ValueError):
        StainMatrix(np.eye(3) * 2.0, np.eye(3) / 2.0)  # rows not unit norm


def test_od_endpoints():
    od = od_from_rgb_array(np.array([[[0, 255, 127]]], dtype=np.uint8))
    assert np.isclose(od[0, 0, 0], 2.4082399653118496, atol=1e-12)
    assert od[0, 0, 1] == 0.0
    assert np.isclose(od[0, 0, 2], -np.log10(128.0 / 256.0), atol=1e-12)


def test_pure_stain_deconvolves_to_one_channel():
    m = default_stain_matrix()
    for channel in range(3):
        od = 0.7 * m.rows[channel]
        rgb = np.clip(256.0 * 10.0 ** (-od) - 1.0, 0, 255).round().astype(np.uint8)
        hed = rgb_to_hed(RasterImage(rgb.reshape(1, 1, 3)), m).planes.ravel()
        others = np.delete(hed, channel)
        assert hed[channel] > 0.6
        assert np.abs(others).max() < 0.05


def test_od_hed_are_inverse_maps():
    rng = np.random.default_rng(13)
    m = default_stain_matrix()
    od = rng.uniform(0, 2, (30, 3))
    assert np.allclose(hed_to_od(od_to_hed(od, m), m), od, atol=1e-12)


def test_hed_round_trip_on_stain_mixtures():
    m = default_stain_matrix()
    for seed in range(5):
        tile = generate_he_tile(16, 16, np.random.default_rng(seed), m)
        back = hed_to_rgb(rgb_to_hed(tile, m), m)
        diff = np.abs(back.pixels.astype(int) - tile.pixels.astype(int))
        assert diff.max() <= 2, diff.max()


# ---------------------------------------------------------------------------
# Dispatch

def test_to_space_from_space_round_trip_tags():
    image = _random_image(8, 8, seed=14)
    for space in ColorSpace:
        planes = to_space(image, space)
        assert planes.space is space
        back = from_space(planes)
        assert np.abs(back.pixels.astype(int) - image.pixels.astype(int)).max() <= 2


def test_inverse_rejects_wrong_space():
    image = _random_image(4, 4, seed=15)
    hsv = to_space(image, ColorSpace.HSV)
    with pytest.raises(WrongSpace):
        lab_to_rgb(hsv)
    with pytest.raises(WrongSpace):
        hed_to_rgb(hsv, default_stain_matrix())


def test_planes_shape_validated():
    with pytest.raises(ValueError):
        FloatPlanes(4, 4, np.zeros((3, 4, 5)), ColorSpace.HSV)
