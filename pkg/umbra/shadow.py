# ============================================================
# shadow.py
#
# Shadow synthesis x_adv = S(x, P_V, M, k): inside the region P_V ∩ M the
# L* channel is multiplied by k, a* and b* are left untouched, and the
# result is converted back to 8-bit RGB with clipping. Pixels outside the
# region are copied byte for byte.
#
# The coefficient k is either assumed (K_MEAN, measured on a shadow
# dataset as the mean shadow/lit lightness ratio) or measured on site with
# estimate_k from a clean/shadowed image pair.
# ============================================================

import logging
from dataclasses import dataclass

import numpy as np

from .color import lab_to_rgb, lightness, rgb_to_lab
from .errors import EmptyRegionError
from .geometry import Polygon, RegionMask, rasterize

logger = logging.getLogger(__name__)

# Mean shadow/lit ratio of L* over natural shadows. The a* and b* ratios stay
# close to 1, so shadows scale L* only.
K_MEAN = 0.43

# Coefficients swept by the benchmark (0.20 .. 0.70 in steps of 0.05, plus K_MEAN).
K_GRID = tuple(sorted({round(0.20 + 0.05 * i, 2) for i in range(11)} | {K_MEAN}))

# Random shadows for defense training draw k from this range.
K_RANDOM_RANGE = (0.20, 0.70)

# Smallest k reported by estimate_k; keeps the coefficient inside (0, 1].
K_FLOOR = 1e-6


@dataclass(frozen=True)
class ShadowSpec:
    """
    Everything that determines one synthetic shadow.

    Attributes:
        polygon (Polygon): The candidate shadow region P_V.
        k (float): Lightness coefficient in (0, 1]; 1 means no shadow.
        mask (RegionMask): Target object mask M.
    """
    polygon: Polygon
    k: float
    mask: RegionMask

    def __post_init__(self):
        if not isinstance(self.polygon, Polygon):
            raise TypeError("ShadowSpec.polygon must be a Polygon")
        if not isinstance(self.mask, RegionMask):
            raise TypeError("ShadowSpec.mask must be a RegionMask")
        if not (0.0 < float(self.k) <= 1.0):
            raise ValueError(f"shadow coefficient k must lie in (0, 1], got {self.k}")
        object.__setattr__(self, "k", float(self.k))

    def region(self) -> RegionMask:
        return rasterize(self.polygon, self.mask)

    def to_dict(self) -> dict:
        return {"polygon": self.polygon.to_list(), "k": self.k, "mask_pixels": self.mask.count}


def _check_image(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype != np.uint8 or x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 uint8 image, got {x.dtype} {x.shape}")
    return x


def apply_shadow(x: np.ndarray, spec: ShadowSpec) -> np.ndarray:
    """
    Cast ``spec`` onto image ``x``.

    Args:
        x (np.ndarray): H x W x 3 uint8 RGB image.
        spec (ShadowSpec): Polygon, coefficient and mask; the mask must match x.

    Returns:
        np.ndarray: A new image; only pixels of rasterize(polygon, mask) differ.
    """
    x = _check_image(x)
    if spec.mask.shape != x.shape[:2]:
        raise ValueError(f"mask shape {spec.mask.shape} does not match image {x.shape[:2]}")
    out = x.copy()
    if spec.k == 1.0:
        return out
    region = spec.region().bitmap
    if not region.any():
        return out
    lab = rgb_to_lab(x[region])
    lab[:, 0] *= spec.k
    out[region] = lab_to_rgb(lab)
    return out


def region_lightness(image: np.ndarray, region: RegionMask) -> float:
    """Mean L* (0..100) of ``image`` over ``region``."""
    image = _check_image(image)
    if region.is_empty:
        raise EmptyRegionError("region selects no pixels")
    return float(lightness(image[region.bitmap]).mean())


def estimate_k(clean: np.ndarray, shadowed: np.ndarray, region: RegionMask) -> float:
    """
    Measure the shadow coefficient from a clean/shadowed pair of the same scene.

    Args:
        clean (np.ndarray): Image without the shadow.
        shadowed (np.ndarray): Same view with a shadow over ``region``.
        region (RegionMask): Pixels known to be in shadow.

    Returns:
        float: mean L*(shadowed) / mean L*(clean) over the region, clamped to (0, 1].

    Raises:
        EmptyRegionError: If the region is empty.
        ValueError: If the sizes differ or the clean region is pitch black.
    """
    clean = _check_image(clean)
    shadowed = _check_image(shadowed)
    if clean.shape != shadowed.shape:
        raise ValueError(f"image sizes differ: {clean.shape} vs {shadowed.shape}")
    lit = region_lightness(clean, region)
    if lit <= 0.0:
        raise ValueError("clean region has zero lightness; the ratio is undefined")
    dark = region_lightness(shadowed, region)
    k = min(1.0, max(K_FLOOR, dark / lit))
    logger.info("estimated shadow coefficient k=%.4f over %d pixels", k, region.count)
    return k


def measure_k(clean: np.ndarray, shadowed: np.ndarray, mask: RegionMask, min_drop: float = 1.0) -> float:
    """
    :func:`estimate_k` over the in-mask pixels that lost more than ``min_drop`` L* units.

    Returns 1.0 when no pixel darkened, i.e. the reference shows no shadow.
    """
    clean = _check_image(clean)
    shadowed = _check_image(shadowed)
    if clean.shape != shadowed.shape:
        raise ValueError(f"image sizes differ: {clean.shape} vs {shadowed.shape}")
    drop = lightness(clean) - lightness(shadowed)
    region = RegionMask(mask.bitmap & (drop > min_drop))
    if region.is_empty:
        logger.info("reference shows no shadow inside the mask; k=1")
        return 1.0
    return estimate_k(clean, shadowed, region)


def random_shadow(rng: np.random.Generator, shape: tuple, mask: RegionMask,
                  k_range: tuple = K_RANDOM_RANGE, edges: int = 3) -> ShadowSpec:
    """
    A shadow with vertices uniform over the frame and k uniform in ``k_range``.

    Args:
        rng (np.random.Generator): Source of randomness.
        shape (tuple): Image (height, width).
        mask (RegionMask): Target mask.
        k_range (tuple): Inclusive-exclusive bounds for k.
        edges (int): Vertex count.
    """
    height, width = shape[:2]
    vertices = rng.uniform(0.0, 1.0, size=(edges, 2)) * np.array([width, height])
    k = float(rng.uniform(*k_range))
    return ShadowSpec(Polygon(vertices), k, mask)
