import numpy as np
import pytest

from umbra.geometry import Polygon, RegionMask, contains, rasterize

TRIANGLE = Polygon([(0, 0), (10, 0), (0, 10)])


def test_contains_interior_exterior_and_boundary():
    assert contains(TRIANGLE, (2, 2))
    assert not contains(TRIANGLE, (20, 20))
    assert contains(TRIANGLE, (5, 0))
    assert contains(TRIANGLE, (5, 5))
    assert contains(TRIANGLE, (0, 0))


def test_collinear_polygon_is_empty():
    line = Polygon([(0, 0), (5, 5), (10, 10)])
    assert line.is_degenerate
    assert not contains(line, (5, 5))
    assert rasterize(line, RegionMask.full(8, 8)).is_empty


def test_polygon_validation():
    with pytest.raises(ValueError):
        Polygon([(0, 0), (1, 1)])
    with pytest.raises(ValueError):
        Polygon([(0, 0), (1, np.nan), (2, 0)])
    with pytest.raises(ValueError):
        Polygon([(0, 0, 0), (1, 1, 1), (2, 0, 0)])


def test_frame_covering_triangle_marks_every_pixel():
    big = Polygon([(-10, -10), (30, -10), (-10, 30)])
    assert rasterize(big, RegionMask.full(4, 4)).count == 16


def test_empty_mask_absorbs():
    assert rasterize(TRIANGLE, RegionMask.empty(4, 4)).is_empty


def test_small_triangle_matches_hand_enumerated_centres():
    # centre (j + 0.5, i + 0.5) is inside when (j + 0.5) + (i + 0.5) <= 3.5
    region = rasterize(Polygon([(0, 0), (3.5, 0), (0, 3.5)]), RegionMask.full(4, 4))
    expected = np.array([
        [1, 1, 1, 0],
        [1, 1, 0, 0],
        [1, 0, 0, 0],
        [0, 0, 0, 0],
    ], dtype=bool)
    np.testing.assert_array_equal(region.bitmap, expected)


def test_raster_stays_inside_mask():
    rng = np.random.default_rng(1)
    mask = RegionMask(rng.uniform(size=(20, 20)) > 0.5)
    for _ in range(20):
        poly = Polygon(rng.uniform(-5, 25, size=(5, 2)))
        region = rasterize(poly, mask)
        assert not np.any(region.bitmap & ~mask.bitmap)


def test_integer_translation_shifts_raster():
    full = RegionMask.full(20, 20)
    poly = Polygon([(2.3, 1.7), (8.1, 3.2), (4.4, 8.9)])
    base = rasterize(poly, full).bitmap
    moved = rasterize(poly.translated(5, 4), full).bitmap
    np.testing.assert_array_equal(moved[4:, 5:], base[:-4, :-5])


def test_cyclic_vertex_order_does_not_matter():
    full = RegionMask.full(16, 16)
    vertices = np.array([(1.5, 2.0), (13.0, 3.5), (11.0, 12.5), (3.0, 10.0)])
    base = rasterize(Polygon(vertices), full)
    for shift in range(1, 4):
        assert rasterize(Polygon(np.roll(vertices, shift, axis=0)), full) == base
    assert rasterize(Polygon(vertices[::-1]), full) == base


def test_self_intersecting_order_uses_even_odd():
    bowtie = Polygon([(0, 0), (10, 10), (10, 0), (0, 10)])
    assert contains(bowtie, (2, 5))
    assert contains(bowtie, (8, 5))
    assert not contains(bowtie, (5, 1))
    assert not contains(bowtie, (5, 9))


def test_vertices_outside_the_frame():
    region = rasterize(Polygon([(-100, -100), (100, -100), (-100, 100)]), RegionMask.full(5, 5))
    assert region.count == 25


def test_polygon_helpers():
    poly = Polygon.from_flat([0, 0, 4, 0, 0, 4])
    assert len(poly) == 3
    assert poly.area() == pytest.approx(8.0)
    np.testing.assert_allclose(poly.centroid, [4 / 3, 4 / 3])
    assert Polygon(poly.flat().reshape(-1, 2)) == poly
    with pytest.raises(ValueError):
        poly.vertices[0, 0] = 1.0
