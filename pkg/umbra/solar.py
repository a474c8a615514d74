# ============================================================
# solar.py
#
# Sun position and occluder shadows for scheduled attacks.
#
# Scene axes (meters): X east, Y south, Z up. The sign lies on the XOZ
# plane (y = 0) facing south; an occluder such as a piece of cardboard
# hangs in front of it at y = distance > 0. Sunlight travels along
#   d = (-sin(az) cos(el), cos(az) cos(el), -sin(el))
# with azimuth measured clockwise from north.
#
# The solar model is the low-precision analytic one: cosine declination,
# mean solar time, no equation of time, no refraction. Elevation is good
# to about half a degree.
# ============================================================

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .attack import AttackConfig, attack_mapped, vertex_bounds
from .errors import ConfigError, DegenerateGeometryError, NoShadowError
from .geometry import Polygon, RegionMask
from .shadow import ShadowSpec, apply_shadow

logger = logging.getLogger(__name__)

OBLIQUITY = 23.44
PARALLEL_EPS = 1e-9
NO_SHADOW = "no shadow"
SWEEP_HEADER = ("timestamp", "elevation_deg", "azimuth_deg", "label", "confidence_true")


def parse_timestamp(text: str) -> datetime:
    """ISO 8601 date-time; a trailing ``Z`` means UTC."""
    try:
        return datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    except (AttributeError, ValueError) as exc:
        raise ConfigError(f"malformed timestamp {text!r}; use e.g. 2025-03-21T08:30:00") from exc


@dataclass(frozen=True)
class SolarContext:
    """
    Where and when the sun is observed.

    Attributes:
        latitude (float): Degrees north, [-90, 90].
        longitude (float): Degrees east, [-180, 180].
        timestamp (datetime): Naive values are local mean solar time;
            aware values are converted from UTC using longitude / 15 hours.
    """
    latitude: float
    longitude: float
    timestamp: datetime

    def __post_init__(self):
        if not -90.0 <= float(self.latitude) <= 90.0:
            raise ConfigError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= float(self.longitude) <= 180.0:
            raise ConfigError(f"longitude {self.longitude} outside [-180, 180]")
        if not isinstance(self.timestamp, datetime):
            raise ConfigError("timestamp must be a datetime")

    @property
    def solar_time(self) -> datetime:
        if self.timestamp.tzinfo is None:
            return self.timestamp
        utc = self.timestamp.astimezone(timezone.utc).replace(tzinfo=None)
        return utc + timedelta(hours=self.longitude / 15.0)

    def at(self, timestamp: datetime) -> "SolarContext":
        return replace(self, timestamp=timestamp)


class SunPosition(NamedTuple):
    elevation: float
    azimuth: float


def solar_position(ctx: SolarContext) -> SunPosition:
    """
    Solar elevation and azimuth in degrees.

    Returns:
        SunPosition: elevation (negative at night) and azimuth clockwise
        from north in [0, 360).
    """
    t = ctx.solar_time
    day = t.timetuple().tm_yday
    hour = t.hour + t.minute / 60.0 + (t.second + t.microsecond / 1e6) / 3600.0

    decl = math.radians(-OBLIQUITY * math.cos(math.radians(360.0 * (day + 10) / 365.0)))
    h = math.radians(15.0 * (hour - 12.0))
    phi = math.radians(ctx.latitude)

    sin_el = math.sin(phi) * math.sin(decl) + math.cos(phi) * math.cos(decl) * math.cos(h)
    elevation = math.degrees(math.asin(max(-1.0, min(1.0, sin_el))))
    # angle from south, positive toward west
    from_south = math.atan2(math.sin(h), math.cos(h) * math.sin(phi) - math.tan(decl) * math.cos(phi))
    azimuth = (math.degrees(from_south) + 180.0) % 360.0
    return SunPosition(elevation, azimuth)


def sun_direction(elevation: float, azimuth: float) -> np.ndarray:
    """Unit vector along which sunlight travels, in scene axes."""
    el, az = math.radians(elevation), math.radians(azimuth)
    return np.array([-math.sin(az) * math.cos(el), math.cos(az) * math.cos(el), -math.sin(el)])


def cast_points(points, direction) -> np.ndarray:
    """
    Follow light rays from ``points`` along ``direction`` to the plane y = 0.

    Args:
        points: (N, 3) occluder points with y >= 0.
        direction: Light-travel vector.

    Returns:
        np.ndarray: (N, 3) intersections, y = 0.

    Raises:
        DegenerateGeometryError: If the rays run parallel to the plane.
        NoShadowError: If the light comes from behind the plane.
    """
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = np.asarray(direction, dtype=np.float64)
    if abs(d[1]) < PARALLEL_EPS:
        raise DegenerateGeometryError("sun rays run parallel to the sign plane")
    t = -p[:, 1] / d[1]
    if np.any(t < 0):
        raise NoShadowError("the sun is behind the sign plane")
    out = p + t[:, None] * d
    out[:, 1] = 0.0
    return out


@dataclass(frozen=True)
class SceneGeometry:
    """
    The sign, its image raster and the occluder.

    Attributes:
        sign_left (float): x of the sign's left edge.
        sign_top (float): z of the sign's top edge.
        sign_width (float): Sign width in meters.
        sign_height (float): Sign height in meters.
        image_size (tuple): (height, width) of the sign image in pixels.
        occluder (tuple): Occluder vertices (x, y, z), each with y > 0.
        distance (float): Distance of the occluder plane from the sign.
    """
    sign_left: float = -0.3
    sign_top: float = 0.3
    sign_width: float = 0.6
    sign_height: float = 0.6
    image_size: tuple = (32, 32)
    occluder: tuple = field(default_factory=tuple)
    distance: float = 1.0

    def __post_init__(self):
        if self.sign_width <= 0 or self.sign_height <= 0:
            raise ConfigError("the sign must have positive width and height")
        if self.distance <= 0:
            raise ConfigError("the occluder distance must be positive")
        occluder = tuple(tuple(float(c) for c in v) for v in self.occluder)
        if any(len(v) != 3 for v in occluder):
            raise ConfigError("occluder vertices are (x, y, z) triples")
        if any(v[1] <= 0 for v in occluder):
            raise ConfigError("occluder vertices must lie in front of the sign (y > 0)")
        object.__setattr__(self, "occluder", occluder)
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))

    def with_occluder(self, vertices) -> "SceneGeometry":
        return replace(self, occluder=tuple(map(tuple, np.asarray(vertices, dtype=np.float64))))

    def to_pixels(self, xz) -> np.ndarray:
        """(N, 2) plane coordinates (x, z) -> (N, 2) pixel coordinates (column, row)."""
        xz = np.atleast_2d(np.asarray(xz, dtype=np.float64))
        height, width = self.image_size
        cols = (xz[:, 0] - self.sign_left) / self.sign_width * width
        rows = (self.sign_top - xz[:, 1]) / self.sign_height * height
        return np.stack([cols, rows], axis=1)

    def from_pixels(self, mn) -> np.ndarray:
        mn = np.atleast_2d(np.asarray(mn, dtype=np.float64))
        height, width = self.image_size
        x = self.sign_left + mn[:, 0] / width * self.sign_width
        z = self.sign_top - mn[:, 1] / height * self.sign_height
        return np.stack([x, z], axis=1)

    def to_dict(self) -> dict:
        return {
            "sign_left": self.sign_left, "sign_top": self.sign_top,
            "sign_width": self.sign_width, "sign_height": self.sign_height,
            "image_size": list(self.image_size), "distance": self.distance,
            "occluder": [list(v) for v in self.occluder],
        }

    @staticmethod
    def from_dict(data: dict) -> "SceneGeometry":
        known = {"sign_left", "sign_top", "sign_width", "sign_height", "image_size", "occluder", "distance"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scene settings: {sorted(unknown)}")
        values = {k: float(v) for k, v in data.items() if k not in ("image_size", "occluder")}
        if "image_size" in data:
            values["image_size"] = tuple(data["image_size"])
        if "occluder" in data:
            values["occluder"] = tuple(tuple(v) for v in data["occluder"])
        return SceneGeometry(**values)


def _check_sun(sun) -> np.ndarray:
    elevation, azimuth = sun
    if elevation <= 0.0:
        raise NoShadowError(f"the sun is at or below the horizon (elevation {elevation:.2f})")
    return sun_direction(elevation, azimuth)


def project_shadow(scene: SceneGeometry, sun) -> Polygon:
    """
    Shadow of the scene's occluder on the sign, in sign-image pixels.

    Args:
        scene (SceneGeometry): Must hold at least three occluder vertices.
        sun: (elevation, azimuth) in degrees.

    Raises:
        NoShadowError: Sun at or below the horizon, or behind the sign.
        DegenerateGeometryError: Sun rays parallel to the sign plane.
    """
    if len(scene.occluder) < 3:
        raise ConfigError("the scene has no occluder polygon")
    points = cast_points(scene.occluder, _check_sun(sun))
    return Polygon(scene.to_pixels(points[:, [0, 2]]))


def lift_polygon(plane_points, sun, distance: float) -> np.ndarray:
    """
    Occluder vertices at y = ``distance`` whose shadow at ``sun`` lands on ``plane_points``.

    Args:
        plane_points: (N, 2) points (x, z) on the sign plane.
        sun: (elevation, azimuth) in degrees.
        distance (float): Occluder distance from the sign.

    Returns:
        np.ndarray: (N, 3) occluder vertices.
    """
    d = _check_sun(sun)
    if abs(d[1]) < PARALLEL_EPS:
        raise DegenerateGeometryError("sun rays run parallel to the sign plane")
    if d[1] > 0:
        raise NoShadowError("the sun is behind the sign plane")
    q = np.atleast_2d(np.asarray(plane_points, dtype=np.float64))
    t = -distance / d[1]
    plane = np.stack([q[:, 0], np.zeros(len(q)), q[:, 1]], axis=1)
    return plane - t * d


def lift_pixels(scene: SceneGeometry, polygon: Polygon, sun) -> np.ndarray:
    """:func:`lift_polygon` for a polygon given in sign-image pixels."""
    return lift_polygon(scene.from_pixels(polygon.vertices), sun, scene.distance)


class SweepRow(NamedTuple):
    timestamp: datetime
    elevation: float
    azimuth: float
    polygon: Polygon | None
    label: int | None
    confidence_true: float | None

    @property
    def has_shadow(self) -> bool:
        return self.polygon is not None


def sweep_times(start: datetime, end: datetime, step: float) -> list:
    """Timestamps from ``start`` every ``step`` seconds, both endpoints included."""
    if step < 1:
        raise ConfigError("the sweep step must be at least one second")
    if end < start:
        raise ConfigError("the sweep ends before it starts")
    times = []
    t = start
    while t <= end:
        times.append(t)
        t = t + timedelta(seconds=step)
    if times[-1] != end:
        times.append(end)
    return times


def scheduled_sweep(scene: SceneGeometry, ctx_start: SolarContext, ctx_end: SolarContext, step: float,
                    image: np.ndarray, mask: RegionMask, k: float, classifier,
                    true_label: int | None = None, workers: int = 1) -> list:
    """
    Cast the occluder's shadow at every sweep time and classify the result.

    Frames without a shadow (night, sun behind the sign, grazing light) are
    recorded with no polygon and no label and cost no query. When
    ``true_label`` is None the clean image is classified once to obtain it.

    Returns:
        list: One :class:`SweepRow` per timestamp.
    """
    if (ctx_start.latitude, ctx_start.longitude) != (ctx_end.latitude, ctx_end.longitude):
        raise ConfigError("a sweep stays at one location")
    if true_label is None:
        true_label = classifier.predict(image).label

    def frame(t: datetime) -> SweepRow:
        sun = solar_position(ctx_start.at(t))
        try:
            polygon = project_shadow(scene, sun)
        except (NoShadowError, DegenerateGeometryError):
            return SweepRow(t, sun.elevation, sun.azimuth, None, None, None)
        conf = classifier.predict(apply_shadow(image, ShadowSpec(polygon, k, mask)))
        return SweepRow(t, sun.elevation, sun.azimuth, polygon, conf.label, conf[true_label])

    times = sweep_times(ctx_start.timestamp, ctx_end.timestamp, step)
    if workers > 1 and getattr(classifier, "concurrent_safe", False):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(frame, times))
    else:
        rows = [frame(t) for t in times]
    shadowed = sum(r.has_shadow for r in rows)
    fooled = sum(r.label is not None and r.label != true_label for r in rows)
    logger.info("sweep: %d frames, %d with shadow, %d misclassified", len(rows), shadowed, fooled)
    return rows


def write_sweep_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow([
                row.timestamp.isoformat(),
                f"{row.elevation:.4f}",
                f"{row.azimuth:.4f}",
                NO_SHADOW if row.label is None else row.label,
                "" if row.confidence_true is None else f"{row.confidence_true:.6f}",
            ])
    return path


class Window(NamedTuple):
    start: datetime
    end: datetime
    frames: int

    @property
    def duration(self) -> float:
        return (self.end - self.start).total_seconds()


def adversarial_windows(rows, true_label: int) -> list:
    """Maximal runs of consecutive frames whose label differs from ``true_label``."""
    windows = []
    run = []
    for row in list(rows) + [None]:
        if row is not None and row.label is not None and row.label != true_label:
            run.append(row)
            continue
        if run:
            windows.append(Window(run[0].timestamp, run[-1].timestamp, len(run)))
            run = []
    return windows


def plan_scheduled_attack(scene: SceneGeometry, ctx: SolarContext, image: np.ndarray, mask: RegionMask,
                          y_true: int, classifier, cfg: AttackConfig, plan_seed: int = 0) -> tuple:
    """
    Place an occluder so that its shadow at ``ctx`` fools the classifier.

    The optimizer moves the occluder's (x, z) vertex coordinates at
    y = ``scene.distance``; each candidate is scored through its projected
    shadow at the scheduled time.

    Returns:
        tuple: (AttackReport, occluder vertices as an (s, 3) array or None).
    """
    sun = solar_position(ctx)
    d = _check_sun(sun)
    if d[1] > -PARALLEL_EPS:
        raise NoShadowError(f"no shadow falls on the sign at {ctx.timestamp.isoformat()}")
    offset = scene.distance / d[1] * d[[0, 2]]

    pixel_box = vertex_bounds(scene.image_size, 1)
    corners = scene.from_pixels([[pixel_box[0, 0], pixel_box[1, 1]], [pixel_box[0, 1], pixel_box[1, 0]]])
    per_vertex = [[corners[0, 0] + offset[0], corners[1, 0] + offset[0]],
                  [corners[0, 1] + offset[1], corners[1, 1] + offset[1]]]
    bounds = np.array(per_vertex * cfg.edges)

    def to_polygon(position) -> Polygon:
        xz = np.asarray(position, dtype=np.float64).reshape(-1, 2)
        occluder = np.stack([xz[:, 0], np.full(len(xz), scene.distance), xz[:, 1]], axis=1)
        points = cast_points(occluder, d)
        return Polygon(scene.to_pixels(points[:, [0, 2]]))

    logger.info("scheduled attack at %s: elevation %.2f, azimuth %.2f",
                ctx.timestamp.isoformat(), sun.elevation, sun.azimuth)
    report = attack_mapped(image, y_true, mask, classifier, cfg, to_polygon, bounds,
                           plan_seed=plan_seed, mode="scheduled")
    occluder = None if report.spec is None else lift_pixels(scene, report.spec.polygon, sun)
    return report, occluder
