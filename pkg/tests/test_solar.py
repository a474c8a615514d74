import csv
import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from conftest import lightness_confidences
from umbra.attack import AttackConfig
from umbra.classifier import FunctionClassifier
from umbra.errors import ConfigError, DegenerateGeometryError, NoShadowError
from umbra.geometry import Polygon, RegionMask
from umbra.pso import SwarmConfig
from umbra.solar import (NO_SHADOW, SceneGeometry, SolarContext, SweepRow, adversarial_windows, cast_points,
                         lift_pixels, parse_timestamp, plan_scheduled_attack, project_shadow, scheduled_sweep,
                         solar_position, sun_direction, sweep_times, write_sweep_csv)

SQUARE = ((-0.1, 0.2, 0.4), (0.1, 0.2, 0.4), (0.1, 0.2, 0.2), (-0.1, 0.2, 0.2))
EQUINOX = datetime(2025, 3, 22)
SOLSTICE = datetime(2025, 6, 21)
WINTER = datetime(2025, 12, 21)


def at(day: datetime, hour: int, minute: int = 0) -> datetime:
    return day.replace(hour=hour, minute=minute)


@pytest.mark.parametrize("day, lat, hour, elevation, azimuth", [
    (EQUINOX, 0, 12, 89.9, None),
    (EQUINOX, 0, 9, 45.0, 90.1),
    (EQUINOX, 45, 12, 44.9, 180.0),
    (EQUINOX, 45, 9, 29.92, 125.33),
    (EQUINOX, 60, 12, 29.9, 180.0),
    (EQUINOX, 60, 9, 20.61, 130.94),
    (SOLSTICE, 45, 12, 68.44, 180.0),
    (SOLSTICE, 45, 15, 47.73, 254.70),
    (SOLSTICE, 60, 12, 53.44, 180.0),
    (SOLSTICE, 60, 15, 41.98, 240.77),
    (WINTER, 45, 12, 21.56, 180.0),
    (WINTER, 60, 12, 6.56, 180.0),
])
def test_solar_position_spot_checks(day, lat, hour, elevation, azimuth):
    sun = solar_position(SolarContext(lat, 0.0, at(day, hour)))
    assert sun.elevation == pytest.approx(elevation, abs=0.7)
    if azimuth is not None:
        assert sun.azimuth == pytest.approx(azimuth, abs=1.5)


def test_morning_and_afternoon_mirror_each_other():
    for hours in (1, 2, 3, 4):
        am = solar_position(SolarContext(50.0, 0.0, at(SOLSTICE, 12 - hours)))
        pm = solar_position(SolarContext(50.0, 0.0, at(SOLSTICE, 12 + hours)))
        assert am.elevation == pytest.approx(pm.elevation, abs=1e-9)
        assert am.azimuth + pm.azimuth == pytest.approx(360.0, abs=1e-9)


def test_night_has_negative_elevation():
    assert solar_position(SolarContext(45.0, 0.0, at(WINTER, 23))).elevation < 0


def test_aware_timestamps_use_longitude():
    aware = datetime(2025, 3, 22, 10, 0, tzinfo=timezone.utc)
    ctx = SolarContext(45.0, 30.0, aware)
    assert ctx.solar_time == datetime(2025, 3, 22, 12, 0)
    assert solar_position(ctx) == solar_position(SolarContext(45.0, 30.0, at(EQUINOX, 12)))
    shifted = datetime(2025, 3, 22, 11, 0, tzinfo=timezone(timedelta(hours=1)))
    assert SolarContext(45.0, 30.0, shifted).solar_time == ctx.solar_time


def test_context_and_timestamp_validation():
    with pytest.raises(ConfigError):
        SolarContext(95.0, 0.0, EQUINOX)
    with pytest.raises(ConfigError):
        SolarContext(0.0, 200.0, EQUINOX)
    with pytest.raises(ConfigError):
        parse_timestamp("2025-13-40T25:00")
    assert parse_timestamp("2025-03-22T08:30:00Z").tzinfo is not None


def test_noon_shadow_drops_straight_down():
    direction = sun_direction(45.0, 180.0)
    point = cast_points([[0.0, 1.0, 0.0]], direction)[0]
    np.testing.assert_allclose(point, [0.0, 0.0, -1.0], atol=1e-12)


def test_shadow_offset_scales_with_distance():
    direction = sun_direction(30.0, 150.0)
    near = cast_points([[0.0, 1.0, 0.0]], direction)[0]
    far = cast_points([[0.0, 2.0, 0.0]], direction)[0]
    np.testing.assert_allclose(far, 2.0 * near, atol=1e-12)


def test_cast_points_rejects_bad_light():
    with pytest.raises(DegenerateGeometryError):
        cast_points([[0.0, 1.0, 0.0]], [1.0, 0.0, -1.0])
    with pytest.raises(NoShadowError):
        cast_points([[0.0, 1.0, 0.0]], [0.0, 0.5, -0.5])


def test_projected_square_in_pixels():
    scene = SceneGeometry(occluder=SQUARE)
    polygon = project_shadow(scene, (45.0, 180.0))
    expected = [[32 / 3, 16 / 3], [64 / 3, 16 / 3], [64 / 3, 16.0], [32 / 3, 16.0]]
    np.testing.assert_allclose(polygon.vertices, expected, atol=1e-9)


def test_no_shadow_below_the_horizon():
    with pytest.raises(NoShadowError):
        project_shadow(SceneGeometry(occluder=SQUARE), (-3.0, 180.0))
    with pytest.raises(ConfigError):
        project_shadow(SceneGeometry(), (45.0, 180.0))


def test_shadow_shrinks_as_the_sun_rises():
    occluder = [[0.0, 1.0, 0.0], [0.5, 1.0, 0.0], [0.5, 1.05, 0.5], [0.0, 1.05, 0.5]]
    areas = []
    for elevation in range(10, 81, 10):
        points = cast_points(occluder, sun_direction(float(elevation), 180.0))
        areas.append(Polygon(points[:, [0, 2]]).area())
    assert all(a > b for a, b in zip(areas, areas[1:]))
    assert areas[0] == pytest.approx(0.5 * (0.5 - 0.05 * math.tan(math.radians(10))))


def test_morning_shadow_moves_east():
    scene = SceneGeometry(occluder=SQUARE)
    columns = []
    t = at(EQUINOX, 8)
    while t <= at(EQUINOX, 11, 30):
        sun = solar_position(SolarContext(45.0, 0.0, t))
        columns.append(project_shadow(scene, sun).centroid[0])
        t += timedelta(minutes=30)
    assert np.all(np.diff(columns) > 0)


def test_sweep_times_include_both_ends():
    start = at(EQUINOX, 8)
    times = sweep_times(start, start + timedelta(seconds=150), 60)
    assert [(t - start).total_seconds() for t in times] == [0, 60, 120, 150]
    with pytest.raises(ConfigError):
        sweep_times(start, start - timedelta(seconds=1), 60)


def test_daylong_sweep_with_a_constant_classifier():
    image = np.full((32, 32, 3), 200, dtype=np.uint8)
    mask = RegionMask.full(32, 32)
    model = FunctionClassifier(lambda x: [1.0, 0.0], 2)
    scene = SceneGeometry(occluder=SQUARE)
    ctx = SolarContext(45.0, 0.0, at(SOLSTICE, 7))
    rows = scheduled_sweep(scene, ctx, ctx.at(at(SOLSTICE, 17)), 60, image, mask, 0.43, model, true_label=0)
    assert len(rows) == 601
    shadowed = [r for r in rows if r.has_shadow]
    assert shadowed
    assert all(r.label == 0 for r in shadowed)
    assert model.queries == len(shadowed)
    assert adversarial_windows(rows, 0) == []


def test_night_sweep_costs_no_query(tmp_path):
    image = np.full((32, 32, 3), 200, dtype=np.uint8)
    model = FunctionClassifier(lambda x: [1.0, 0.0], 2)
    ctx = SolarContext(45.0, 0.0, at(SOLSTICE, 22))
    rows = scheduled_sweep(SceneGeometry(occluder=SQUARE), ctx, ctx.at(at(SOLSTICE, 23)), 600, image,
                           RegionMask.full(32, 32), 0.43, model, true_label=0)
    assert len(rows) == 7
    assert not any(r.has_shadow for r in rows)
    assert model.queries == 0

    path = write_sweep_csv(rows, tmp_path / "timeline.csv")
    with open(path, newline="") as f:
        lines = list(csv.reader(f))
    assert lines[0] == ["timestamp", "elevation_deg", "azimuth_deg", "label", "confidence_true"]
    assert all(line[3] == NO_SHADOW and line[4] == "" for line in lines[1:])


def test_concurrent_sweep_matches_sequential():
    image = np.full((32, 32, 3), 200, dtype=np.uint8)
    mask = RegionMask.full(32, 32)
    scene = SceneGeometry(occluder=SQUARE)
    ctx = SolarContext(45.0, 0.0, at(EQUINOX, 9))
    end = ctx.at(at(EQUINOX, 11))
    fn = lightness_confidences(mask)
    one = scheduled_sweep(scene, ctx, end, 600, image, mask, 0.43, FunctionClassifier(fn, 2), 0)
    many = scheduled_sweep(scene, ctx, end, 600, image, mask, 0.43, FunctionClassifier(fn, 2), 0, workers=4)
    assert [(r.timestamp, r.label, r.confidence_true) for r in one] == \
        [(r.timestamp, r.label, r.confidence_true) for r in many]


def test_adversarial_windows_are_maximal_runs():
    t0 = at(EQUINOX, 9)
    labels = [0, 1, 1, None, 1, 0, 2]
    rows = [SweepRow(t0 + timedelta(minutes=i), 30.0, 120.0, None, label, None) for i, label in enumerate(labels)]
    windows = adversarial_windows(rows, 0)
    assert [(w.frames, w.duration) for w in windows] == [(2, 60.0), (1, 0.0), (1, 0.0)]
    assert windows[0].start == t0 + timedelta(minutes=1)


def test_lifted_occluder_recasts_the_polygon():
    scene = SceneGeometry(distance=0.5)
    sun = (35.0, 140.0)
    target = Polygon([[4.0, 5.0], [20.0, 8.0], [12.0, 27.0]])
    occluder = lift_pixels(scene, target, sun)
    np.testing.assert_allclose(occluder[:, 1], 0.5)
    recast = project_shadow(scene.with_occluder(occluder), sun)
    np.testing.assert_allclose(recast.vertices, target.vertices, atol=1e-9)


def test_scene_dict_round_trip():
    scene = SceneGeometry(sign_width=0.75, occluder=SQUARE, distance=0.4)
    assert SceneGeometry.from_dict(scene.to_dict()) == scene
    with pytest.raises(ConfigError):
        SceneGeometry(occluder=((0.0, -0.1, 0.0),) * 3)


def test_scheduled_attack_places_a_working_occluder():
    image = np.full((32, 32, 3), 200, dtype=np.uint8)
    mask = RegionMask.full(32, 32)
    scene = SceneGeometry(distance=0.3)
    ctx = SolarContext(45.0, 0.0, at(EQUINOX, 10))
    cfg = AttackConfig(swarm=SwarmConfig(swarm_size=20, max_iters=20, restarts=3, seed=2))
    report, occluder = plan_scheduled_attack(scene, ctx, image, mask, 0, FunctionClassifier(
        lightness_confidences(mask), 2), cfg)
    assert report.success and report.mode == "scheduled"
    assert occluder.shape == (3, 3)
    np.testing.assert_allclose(occluder[:, 1], 0.3)

    sun = solar_position(ctx)
    recast = project_shadow(scene.with_occluder(occluder), sun)
    np.testing.assert_allclose(recast.vertices, report.spec.polygon.vertices, atol=1e-9)


def test_scheduled_attack_needs_daylight():
    image = np.full((32, 32, 3), 200, dtype=np.uint8)
    mask = RegionMask.full(32, 32)
    with pytest.raises(NoShadowError):
        plan_scheduled_attack(SceneGeometry(), SolarContext(45.0, 0.0, at(WINTER, 22)), image, mask, 0,
                              FunctionClassifier(lambda x: [1.0, 0.0], 2), AttackConfig())
