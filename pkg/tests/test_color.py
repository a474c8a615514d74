import numpy as np
import pytest

from umbra.color import LabPixel, RgbPixel, lab_to_rgb, lightness, rgb_to_lab


def test_round_trip_is_exact_on_sampled_triples():
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, size=(65536, 3), dtype=np.uint8)
    np.testing.assert_array_equal(lab_to_rgb(rgb_to_lab(rgb)), rgb)


def test_round_trip_covers_gray_axis_and_corners():
    levels = np.arange(256, dtype=np.uint8)
    gray = np.stack([levels] * 3, axis=1)
    corners = np.array([[r, g, b] for r in (0, 255) for g in (0, 255) for b in (0, 255)], dtype=np.uint8)
    for rgb in (gray, corners):
        np.testing.assert_array_equal(lab_to_rgb(rgb_to_lab(rgb)), rgb)


def test_white_and_black():
    white = RgbPixel(255, 255, 255).to_lab()
    assert white.l == pytest.approx(100.0, abs=1e-9)
    assert white.a == pytest.approx(0.0, abs=1e-9)
    assert white.b == pytest.approx(0.0, abs=1e-9)
    assert RgbPixel(0, 0, 0).to_lab().l == pytest.approx(0.0, abs=1e-9)


def test_gray_stays_neutral():
    lab = rgb_to_lab(np.array([[200, 200, 200], [60, 60, 60]], dtype=np.uint8))
    np.testing.assert_allclose(lab[:, 1:], 0.0, atol=1e-6)
    assert lab[0, 0] == pytest.approx(80.6, abs=0.1)


def test_out_of_gamut_is_clipped():
    assert LabPixel(150.0, 0.0, 0.0).to_rgb() == RgbPixel(255, 255, 255)
    assert LabPixel(-5.0, 0.0, 0.0).to_rgb() == RgbPixel(0, 0, 0)
    assert lab_to_rgb(np.array([50.0, 120.0, 0.0])).dtype == np.uint8


def test_lightness_is_monotone_in_gray_level():
    levels = np.arange(256, dtype=np.uint8)
    values = lightness(np.stack([levels] * 3, axis=1))
    assert np.all(np.diff(values) > 0)


def test_rejects_wrong_channel_count():
    with pytest.raises(ValueError):
        rgb_to_lab(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        lab_to_rgb(np.zeros((4, 2)))
