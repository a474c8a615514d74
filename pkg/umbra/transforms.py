# ============================================================
# transforms.py
#
# Camera-like transformation distribution for expectation over
# transformation (EOT).
#
# A TransformPlan is a frozen sample of transform chains: the identity
# followed by N random chains (N = 10 by default). Each chain applies,
# in order:
#   1. perspective warp   (bilinear, edge-replicate padding)
#   2. downsample by a box filter, then nearest upsample to the original size
#   3. brightness shift   (fraction of full scale, clipped)
#   4. motion blur        (normalized line kernel, length 1 = no-op)
# and carries a k multiplier used when the shadow is re-synthesized for
# that chain, modelling a mismatch between the assumed and the real
# shadow coefficient.
# ============================================================

import logging
import math
from dataclasses import dataclass, field, fields

import cv2
import numpy as np

from .errors import ConfigError

logger = logging.getLogger(__name__)

PLAN_SAMPLES = 10


def _numeric(key: str, value):
    if isinstance(value, (int, float)):
        return value
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"transform setting {key}: {value!r} is not numeric") from exc


@dataclass(frozen=True)
class TransformRanges:
    """
    Parameter ranges the plan sampler draws from.

    Attributes:
        downsample_factors (tuple): Choices for the integer downsample factor.
        brightness (tuple): Uniform range of the brightness delta, fraction of 255.
        corner_jitter (float): Max perspective corner offset, fraction of the image side.
        blur_lengths (tuple): Choices for the motion-blur kernel length in pixels.
        blur_angle (tuple): Uniform range of the blur angle in degrees.
        k_multiplier (tuple): Uniform range of the multiplicative k jitter.
    """
    downsample_factors: tuple = (1, 2, 4)
    brightness: tuple = (-0.2, 0.2)
    corner_jitter: float = 0.08
    blur_lengths: tuple = (1, 3, 5, 7)
    blur_angle: tuple = (0.0, 180.0)
    k_multiplier: tuple = (0.85, 1.15)

    def __post_init__(self):
        if any(int(f) < 1 for f in self.downsample_factors) or not self.downsample_factors:
            raise ConfigError("downsample factors must be positive integers")
        if any(int(n) < 1 for n in self.blur_lengths) or not self.blur_lengths:
            raise ConfigError("blur lengths must be positive integers")
        if not 0.0 <= self.corner_jitter < 0.5:
            raise ConfigError("corner_jitter must lie in [0, 0.5)")
        for name in ("brightness", "blur_angle", "k_multiplier"):
            bounds = getattr(self, name)
            if not isinstance(bounds, tuple) or len(bounds) != 2:
                raise ConfigError(f"{name} needs a (low, high) pair, got {bounds!r}")
            lo, hi = bounds
            if lo > hi:
                raise ConfigError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        if self.k_multiplier[0] <= 0:
            raise ConfigError("k_multiplier must stay positive")

    @staticmethod
    def from_dict(data: dict) -> "TransformRanges":
        """Build from a dict of field name -> value (tuples may be given as lists)."""
        known = {f.name for f in fields(TransformRanges)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown transform settings: {sorted(unknown)}")
        defaults = TransformRanges()
        values = {}
        for key, value in data.items():
            if isinstance(getattr(defaults, key), tuple):
                items = value if isinstance(value, (list, tuple)) else (value,)
                values[key] = tuple(_numeric(key, v) for v in items)
            else:
                values[key] = float(_numeric(key, value))
        return TransformRanges(**values)


@dataclass(frozen=True)
class TransformItem:
    """
    One transform chain of a plan.

    Attributes:
        downsample (int): Downsample factor, 1 = none.
        brightness (float): Additive brightness delta as a fraction of 255.
        corners (tuple): Four (dx, dy) corner offsets as fractions of width/height,
            ordered top-left, top-right, bottom-right, bottom-left.
        blur_length (int): Motion-blur kernel length, 1 = none.
        blur_angle (float): Blur direction in degrees, counter-clockwise from +x.
        k_multiplier (float): Factor applied to the shadow coefficient.
    """
    downsample: int = 1
    brightness: float = 0.0
    corners: tuple = ((0.0, 0.0),) * 4
    blur_length: int = 1
    blur_angle: float = 0.0
    k_multiplier: float = 1.0

    @staticmethod
    def identity() -> "TransformItem":
        return TransformItem()

    @property
    def is_identity(self) -> bool:
        return self == TransformItem()

    def to_dict(self) -> dict:
        return {
            "downsample": self.downsample,
            "brightness": self.brightness,
            "corners": [list(c) for c in self.corners],
            "blur_length": self.blur_length,
            "blur_angle": self.blur_angle,
            "k_multiplier": self.k_multiplier,
        }


@dataclass(frozen=True)
class TransformPlan:
    """A frozen sequence of transform chains; sampled plans start with the identity."""
    items: tuple = field(default_factory=tuple)
    seed: int | None = None

    def __post_init__(self):
        if not self.items:
            raise ValueError("a transform plan needs at least one item")
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


def sample_plan(seed: int, ranges: TransformRanges | None = None,
                samples: int = PLAN_SAMPLES) -> TransformPlan:
    """
    Draw ``samples`` transform chains deterministically from ``seed``.

    Args:
        seed (int): 64-bit seed.
        ranges (TransformRanges): Parameter ranges; defaults apply when None.
        samples (int): Number of random chains besides the identity.

    Returns:
        TransformPlan: ``samples + 1`` items, the identity first.
    """
    ranges = ranges or TransformRanges()
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    items = [TransformItem.identity()]
    for _ in range(samples):
        jitter = rng.uniform(-ranges.corner_jitter, ranges.corner_jitter, size=(4, 2))
        items.append(TransformItem(
            downsample=int(rng.choice(ranges.downsample_factors)),
            brightness=float(rng.uniform(*ranges.brightness)),
            corners=tuple((float(dx), float(dy)) for dx, dy in jitter),
            blur_length=int(rng.choice(ranges.blur_lengths)),
            blur_angle=float(rng.uniform(*ranges.blur_angle)),
            k_multiplier=float(rng.uniform(*ranges.k_multiplier)),
        ))
    return TransformPlan(tuple(items), seed=int(seed))


def identity_plan(n: int = PLAN_SAMPLES + 1) -> TransformPlan:
    return TransformPlan(tuple(TransformItem.identity() for _ in range(n)))


def motion_blur_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized ``length`` x ``length`` line kernel through the centre."""
    if length <= 1:
        return np.ones((1, 1), dtype=np.float32)
    kernel = np.zeros((length, length), dtype=np.float32)
    centre = (length - 1) / 2.0
    theta = np.deg2rad(angle)
    for t in np.linspace(-centre, centre, 4 * length):
        col = int(round(centre + t * np.cos(theta)))
        row = int(round(centre - t * np.sin(theta)))
        kernel[row, col] = 1.0
    return kernel / kernel.sum()


def _perspective(x: np.ndarray, corners) -> np.ndarray:
    height, width = x.shape[:2]
    src = np.array([[0, 0], [width, 0], [width, height], [0, height]], dtype=np.float32)
    dst = src + np.asarray(corners, dtype=np.float32) * np.array([width, height], dtype=np.float32)
    matrix = cv2.getPerspectiveTransform(src, dst)
    return cv2.warpPerspective(x, matrix, (width, height), flags=cv2.INTER_LINEAR,
                               borderMode=cv2.BORDER_REPLICATE)


def _resample(x: np.ndarray, factor: int) -> np.ndarray:
    height, width = x.shape[:2]
    small = cv2.resize(x, (max(1, width // factor), max(1, height // factor)),
                       interpolation=cv2.INTER_AREA)
    return cv2.resize(small, (width, height), interpolation=cv2.INTER_NEAREST)


def apply_transform(item: TransformItem, x: np.ndarray) -> np.ndarray:
    """
    Apply one transform chain to an H x W x 3 uint8 image.

    Returns:
        np.ndarray: Same shape and dtype as ``x``.
    """
    out = np.ascontiguousarray(x)
    if any(dx or dy for dx, dy in item.corners):
        out = _perspective(out, item.corners)
    if item.downsample > 1:
        out = _resample(out, item.downsample)
    if item.brightness:
        shift = np.rint(item.brightness * 255.0)
        out = np.clip(out.astype(np.int16) + int(shift), 0, 255).astype(np.uint8)
    if item.blur_length > 1:
        kernel = motion_blur_kernel(item.blur_length, item.blur_angle)
        out = cv2.filter2D(out, -1, kernel, borderType=cv2.BORDER_REPLICATE)
    if out is x:
        out = x.copy()
    return out


def expected_confidences(x_adv_builder, plan: TransformPlan, classifier) -> np.ndarray:
    """
    Mean confidence vector over the plan; exactly ``len(plan)`` classifier queries.

    Args:
        x_adv_builder: Callable mapping a k multiplier to the shadowed image.
        plan (TransformPlan): The frozen transform sample.
        classifier: Anything with ``predict(image)`` returning a confidence vector.

    Returns:
        np.ndarray: float64 vector, one entry per class.
    """
    confs = []
    cache = {}
    for item in plan:
        base = cache.get(item.k_multiplier)
        if base is None:
            base = cache[item.k_multiplier] = x_adv_builder(item.k_multiplier)
        confs.append(np.asarray(classifier.predict(apply_transform(item, base)), dtype=np.float64))
    # fsum keeps the mean independent of item order
    stacked = np.stack(confs)
    return np.array([math.fsum(column) for column in stacked.T]) / len(confs)


def expected_confidence(x_adv_builder, plan: TransformPlan, classifier, class_index: int) -> float:
    """Plan-mean confidence of ``class_index`` (the EOT expectation estimate)."""
    return float(expected_confidences(x_adv_builder, plan, classifier)[class_index])
