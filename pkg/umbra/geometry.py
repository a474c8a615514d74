# ============================================================
# geometry.py
#
# Shadow polygons and their rasterization onto the target mask.
#
# Coordinates are (column, row) = (m, n) in image pixels and may be real
# valued or lie outside the frame. A pixel (row i, column j) belongs to the
# polygon when its centre (j + 0.5, i + 0.5) does:
#   - boundary points count as inside
#   - self-intersecting vertex orders are resolved by the even-odd rule
#   - all-collinear vertex sets describe an empty region
# ============================================================

from dataclasses import dataclass

import numpy as np

# Relative tolerance for on-edge and collinearity tests.
_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class Polygon:
    """
    An ordered vertex list ``V = ((m1, n1), ..., (ms, ns))`` with s >= 3.

    Attributes:
        vertices (np.ndarray): float64 array of shape (s, 2), read-only.
    """
    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError(f"polygon vertices must have shape (s, 2), got {v.shape}")
        if v.shape[0] < 3:
            raise ValueError(f"a polygon needs at least 3 vertices, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("polygon vertices must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def __eq__(self, other) -> bool:
        return isinstance(other, Polygon) and np.array_equal(self.vertices, other.vertices)

    def __len__(self) -> int:
        return self.vertices.shape[0]

    @staticmethod
    def from_flat(position) -> "Polygon":
        """Build from a flat ``[m1, n1, m2, n2, ...]`` vector (the PSO position layout)."""
        return Polygon(np.asarray(position, dtype=np.float64).reshape(-1, 2))

    def flat(self) -> np.ndarray:
        return self.vertices.reshape(-1).copy()

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(self.vertices + np.array([dx, dy]))

    @property
    def is_degenerate(self) -> bool:
        """True when every vertex lies on one line (or coincides)."""
        centred = self.vertices - self.vertices.mean(axis=0)
        scale = max(1.0, float(np.abs(self.vertices).max()))
        return np.linalg.matrix_rank(centred, tol=_EPS * scale) < 2

    @property
    def centroid(self) -> np.ndarray:
        """Vertex mean, (m, n)."""
        return self.vertices.mean(axis=0)

    def area(self) -> float:
        """Absolute shoelace area (signed areas of self-intersecting loops may cancel)."""
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))

    def to_list(self) -> list:
        return [[float(m), float(n)] for m, n in self.vertices]


@dataclass(frozen=True, eq=False)
class RegionMask:
    """
    A boolean H x W grid marking the target object (``M``) or a shadow region.

    Attributes:
        bitmap (np.ndarray): bool array of shape (H, W), read-only.
    """
    bitmap: np.ndarray

    def __post_init__(self):
        b = np.array(self.bitmap, dtype=bool)
        if b.ndim != 2:
            raise ValueError(f"mask bitmap must be 2-D, got shape {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "bitmap", b)

    def __eq__(self, other) -> bool:
        return isinstance(other, RegionMask) and np.array_equal(self.bitmap, other.bitmap)

    @staticmethod
    def full(height: int, width: int) -> "RegionMask":
        """The "full-frame" sentinel mask."""
        return RegionMask(np.ones((height, width), dtype=bool))

    @staticmethod
    def empty(height: int, width: int) -> "RegionMask":
        return RegionMask(np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> tuple:
        return self.bitmap.shape

    @property
    def count(self) -> int:
        return int(self.bitmap.sum())

    @property
    def is_empty(self) -> bool:
        return not self.bitmap.any()

    def __and__(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(self.bitmap & other.bitmap)


def _membership(vertices: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Even-odd membership with inclusive boundary for point arrays ``xs``, ``ys``."""
    x0 = vertices[:, 0]
    y0 = vertices[:, 1]
    x1 = np.roll(x0, -1)
    y1 = np.roll(y0, -1)
    px = xs[..., None]
    py = ys[..., None]

    # crossing number, half-open rule on y
    straddles = (y0 <= py) != (y1 <= py)
    dy = np.where(y1 == y0, 1.0, y1 - y0)
    x_at = x0 + (py - y0) / dy * (x1 - x0)
    crossings = np.count_nonzero(straddles & (px < x_at), axis=-1)
    inside = (crossings % 2) == 1

    # points lying on an edge
    scale = max(1.0, float(np.abs(vertices).max()))
    tol = _EPS * scale
    edge_len = np.hypot(x1 - x0, y1 - y0)
    cross = (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)
    within = (
        (px >= np.minimum(x0, x1) - tol) & (px <= np.maximum(x0, x1) + tol)
        & (py >= np.minimum(y0, y1) - tol) & (py <= np.maximum(y0, y1) + tol)
    )
    on_edge = (np.abs(cross) <= tol * np.maximum(edge_len, 1.0)) & within
    return inside | on_edge.any(axis=-1)


def contains(poly: Polygon, point) -> bool:
    """
    Point-in-polygon test, boundary inclusive, even-odd for self-intersections.

    Args:
        poly (Polygon): The polygon.
        point: An (m, n) pair.

    Returns:
        bool: Membership; always False for a degenerate polygon.
    """
    if poly.is_degenerate:
        return False
    m, n = point
    return bool(_membership(poly.vertices, np.array([float(m)]), np.array([float(n)]))[0])


def rasterize(poly: Polygon, mask: RegionMask) -> RegionMask:
    """
    Pixels of ``mask`` whose centres lie in ``poly`` (the region P_V ∩ M).

    Only the polygon's in-frame bounding box is tested.
    """
    height, width = mask.shape
    out = np.zeros((height, width), dtype=bool)
    if poly.is_degenerate or mask.is_empty:
        return RegionMask(out)

    lo = poly.vertices.min(axis=0)
    hi = poly.vertices.max(axis=0)
    c0 = max(0, int(np.floor(lo[0] - 0.5)))
    c1 = min(width, int(np.ceil(hi[0] - 0.5)) + 1)
    r0 = max(0, int(np.floor(lo[1] - 0.5)))
    r1 = min(height, int(np.ceil(hi[1] - 0.5)) + 1)
    if c0 >= c1 or r0 >= r1:
        return RegionMask(out)

    cols, rows = np.meshgrid(np.arange(c0, c1) + 0.5, np.arange(r0, r1) + 0.5)
    out[r0:r1, c0:c1] = _membership(poly.vertices, cols, rows)
    return RegionMask(out & mask.bitmap)
