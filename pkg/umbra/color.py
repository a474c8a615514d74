# ============================================================
# color.py
#
# sRGB <-> CIE L*a*b* conversion (D65 white, sRGB transfer curve).
#
# Shadows are synthesized by scaling the lightness channel only, so the
# conversion must be exactly invertible on 8-bit input: every RGB triple
# survives lab_to_rgb(rgb_to_lab(p)) unchanged after rounding.
#
# All work is done in float64 on arrays shaped (..., 3); quantization to
# 8 bits happens only in lab_to_rgb, which rounds and then clips each
# channel to [0, 255].
# ============================================================

from typing import NamedTuple

import numpy as np

# sRGB primaries -> XYZ, D65.
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)

# Reference white is the image of RGB white under the matrix, so white maps
# to (100, 0, 0) and grey stays on the neutral axis to rounding error.
WHITE_XYZ = SRGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0


class RgbPixel(NamedTuple):
    """An 8-bit sRGB pixel."""
    r: int
    g: int
    b: int

    def to_lab(self) -> "LabPixel":
        return LabPixel(*(float(v) for v in rgb_to_lab(np.array(self, dtype=np.uint8))))


class LabPixel(NamedTuple):
    """A CIE L*a*b* pixel; ``l`` in [0, 100]."""
    l: float
    a: float
    b: float

    def to_rgb(self) -> RgbPixel:
        return RgbPixel(*(int(v) for v in lab_to_rgb(np.array(self, dtype=np.float64))))


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    """Gamma-encoded sRGB in [0, 1] -> linear light."""
    return np.where(
        encoded <= 0.04045,
        encoded / 12.92,
        np.power((np.maximum(encoded, 0.04045) + 0.055) / 1.055, 2.4),
    )


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    """Linear light -> gamma-encoded sRGB. Negative input stays negative (clipped later)."""
    return np.where(
        linear <= 0.0031308,
        12.92 * linear,
        1.055 * np.power(np.maximum(linear, 0.0031308), 1.0 / 2.4) - 0.055,
    )


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA ** 3, np.cbrt(t), t / (3.0 * _DELTA ** 2) + 4.0 / 29.0)


def _lab_f_inv(ft: np.ndarray) -> np.ndarray:
    return np.where(ft > _DELTA, ft ** 3, 3.0 * _DELTA ** 2 * (ft - 4.0 / 29.0))


def rgb_to_lab(rgb) -> np.ndarray:
    """
    Convert 8-bit sRGB to CIE L*a*b*.

    Args:
        rgb: Array-like of shape (..., 3) with channel values in [0, 255].

    Returns:
        np.ndarray: float64 array of the same shape holding (L*, a*, b*).
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-1] != 3:
        raise ValueError(f"expected a trailing channel axis of 3, got shape {rgb.shape}")
    linear = srgb_decode(rgb / 255.0)
    xyz = linear @ SRGB_TO_XYZ.T
    f = _lab_f(xyz / WHITE_XYZ)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_rgb(lab) -> np.ndarray:
    """
    Convert CIE L*a*b* back to 8-bit sRGB.

    Out-of-gamut colours are rounded and then clipped per channel, which is
    the defined behaviour after lightness scaling.

    Args:
        lab: Array-like of shape (..., 3).

    Returns:
        np.ndarray: uint8 array of the same shape.
    """
    lab = np.asarray(lab, dtype=np.float64)
    if lab.shape[-1] != 3:
        raise ValueError(f"expected a trailing channel axis of 3, got shape {lab.shape}")
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = _lab_f_inv(np.stack([fx, fy, fz], axis=-1)) * WHITE_XYZ
    encoded = srgb_encode(xyz @ XYZ_TO_SRGB.T)
    return np.clip(np.rint(encoded * 255.0), 0, 255).astype(np.uint8)


def lightness(rgb) -> np.ndarray:
    """L* channel of an 8-bit sRGB array, shape (...)."""
    return rgb_to_lab(rgb)[..., 0]
