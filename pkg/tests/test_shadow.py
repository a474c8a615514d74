import numpy as np
import pytest

from umbra.color import lab_to_rgb, lightness, rgb_to_lab
from umbra.errors import EmptyRegionError
from umbra.geometry import Polygon, RegionMask
from umbra.shadow import (K_GRID, K_MEAN, ShadowSpec, apply_shadow, estimate_k, measure_k,
                          random_shadow, region_lightness)

FRAME = Polygon([(-1, -1), (40, -1), (-1, 40)])


def _random_case(rng, size=24):
    image = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    mask = RegionMask(rng.uniform(size=(size, size)) > 0.3)
    spec = ShadowSpec(Polygon(rng.uniform(-4, size + 4, size=(rng.integers(3, 7), 2))),
                      float(rng.uniform(0.2, 0.9)), mask)
    return image, spec


def test_spec_validation(full_mask):
    with pytest.raises(ValueError):
        ShadowSpec(FRAME, 0.0, full_mask)
    with pytest.raises(ValueError):
        ShadowSpec(FRAME, 1.5, full_mask)
    with pytest.raises(TypeError):
        ShadowSpec([(0, 0), (1, 0), (0, 1)], 0.5, full_mask)


def test_unit_coefficient_is_identity(gray_image, full_mask):
    out = apply_shadow(gray_image, ShadowSpec(FRAME, 1.0, full_mask))
    np.testing.assert_array_equal(out, gray_image)
    assert out is not gray_image


def test_polygon_outside_mask_changes_nothing(gray_image):
    mask = RegionMask(np.zeros((16, 16), dtype=bool))
    out = apply_shadow(gray_image, ShadowSpec(FRAME, K_MEAN, mask))
    np.testing.assert_array_equal(out, gray_image)


def test_uniform_gray_full_shadow(gray_image, full_mask):
    out = apply_shadow(gray_image, ShadowSpec(FRAME, K_MEAN, full_mask))
    lab = rgb_to_lab(gray_image[0, 0])
    expected = lab_to_rgb(np.array([lab[0] * K_MEAN, lab[1], lab[2]]))
    assert np.all(out == expected)
    assert lightness(out[0, 0]) == pytest.approx(lab[0] * K_MEAN, abs=1.0)


def test_locality_and_lightness_scaling():
    rng = np.random.default_rng(7)
    for _ in range(100):
        image, spec = _random_case(rng)
        out = apply_shadow(image, spec)
        region = spec.region().bitmap
        np.testing.assert_array_equal(out[~region], image[~region])
        if region.any():
            before = rgb_to_lab(image[region])
            expected = lab_to_rgb(np.column_stack([before[:, 0] * spec.k, before[:, 1:]]))
            np.testing.assert_array_equal(out[region], expected)


def test_neutral_pixels_scale_lightness_within_one_unit():
    rng = np.random.default_rng(11)
    for _ in range(20):
        levels = rng.integers(0, 256, size=(24, 24, 1), dtype=np.uint8)
        image = np.repeat(levels, 3, axis=2)
        _, spec = _random_case(rng)
        region = spec.region().bitmap
        out = apply_shadow(image, spec)
        np.testing.assert_allclose(lightness(out[region]), lightness(image[region]) * spec.k, atol=1.0)


def test_chromaticity_preserved_on_gray_and_pastel():
    image = np.zeros((8, 8, 3), dtype=np.uint8)
    image[:4] = (200, 180, 170)
    image[4:] = (150, 150, 150)
    out = apply_shadow(image, ShadowSpec(FRAME, 0.5, RegionMask.full(8, 8)))
    before, after = rgb_to_lab(image), rgb_to_lab(out)
    assert np.all(np.abs(after[..., 1:] - before[..., 1:]) <= 2.0)


def test_smaller_k_is_darker():
    rng = np.random.default_rng(3)
    image, spec = _random_case(rng)
    region = spec.region()
    darker = apply_shadow(image, ShadowSpec(spec.polygon, 0.3, spec.mask))
    lighter = apply_shadow(image, ShadowSpec(spec.polygon, 0.6, spec.mask))
    assert region_lightness(darker, region) <= region_lightness(lighter, region)


def test_estimate_k_identity_and_constructed_ratios():
    image = np.full((16, 16, 3), 128, dtype=np.uint8)
    region = RegionMask.full(16, 16)
    assert estimate_k(image, image, region) == pytest.approx(1.0)
    for k in (0.5, K_MEAN):
        shadowed = apply_shadow(image, ShadowSpec(FRAME, k, region))
        assert estimate_k(image, shadowed, region) == pytest.approx(k, abs=0.02)


def test_estimate_k_errors():
    image = np.full((4, 4, 3), 128, dtype=np.uint8)
    with pytest.raises(EmptyRegionError):
        estimate_k(image, image, RegionMask.empty(4, 4))
    black = np.zeros((4, 4, 3), dtype=np.uint8)
    with pytest.raises(ValueError):
        estimate_k(black, black, RegionMask.full(4, 4))
    with pytest.raises(ValueError):
        estimate_k(image, np.zeros((5, 4, 3), dtype=np.uint8), RegionMask.full(4, 4))


def test_measure_k_without_shadow_is_one(gray_image, full_mask):
    assert measure_k(gray_image, gray_image.copy(), full_mask) == 1.0
    half = Polygon([(-1, -1), (8, -1), (8, 17), (-1, 17)])
    shadowed = apply_shadow(gray_image, ShadowSpec(half, 0.5, full_mask))
    assert measure_k(gray_image, shadowed, full_mask) == pytest.approx(0.5, abs=0.02)


def test_random_shadow_ranges(full_mask):
    rng = np.random.default_rng(0)
    for _ in range(50):
        spec = random_shadow(rng, (16, 16), full_mask)
        assert 0.2 <= spec.k < 0.7
        assert len(spec.polygon) == 3
        assert np.all((spec.polygon.vertices >= 0) & (spec.polygon.vertices <= 16))


def test_random_shadows_scale_lightness_only():
    rng = np.random.default_rng(4)
    image = np.zeros((16, 16, 3), dtype=np.uint8)
    image[:] = (190, 175, 160)
    mask = RegionMask.full(16, 16)
    before = rgb_to_lab(image)
    for _ in range(20):
        spec = random_shadow(rng, (16, 16), mask, k_range=(0.5, 0.7))
        after = rgb_to_lab(apply_shadow(image, spec))
        region = spec.region().bitmap
        if not region.any():
            continue
        assert np.all(np.abs(after[region][:, 1:] - before[region][:, 1:]) <= 2.0)
        assert np.all(after[region][:, 0] < before[region][:, 0])


def test_k_grid_matches_sweep_columns():
    assert K_GRID[0] == 0.2 and K_GRID[-1] == 0.7
    assert K_MEAN in K_GRID
    assert len(K_GRID) == 12
