"""Core color math: Beer-Lambert optical density and sRGB transfer functions.

Absorbance (optical density, OD) is -log10(I / I0); stain mixing is
approximately linear in this space, which is what makes deconvolution and
reconstruction linear operations. All arithmetic is float64.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

DEFAULT_I0 = 255.0
DEFAULT_I_MIN = 1.0


class ColorSpace(enum.Enum):
    DEVICE_RGB = "device-rgb"
    SRGB = "srgb"
    UNSPECIFIED = "unspecified"


@dataclass(frozen=True)
class RgbPatch:
    """An H x W x 3 8-bit image patch tagged with its color space.

    Patches are treated as immutable; operations return new patches and
    never write through ``data``.
    """

    data: np.ndarray
    space: ColorSpace = ColorSpace.UNSPECIFIED
    profile_id: str | None = None

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"patch must be H x W x 3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("patch must be at least 1 x 1")
        if arr.dtype != np.uint8:
            raise ValueError(f"patch must be uint8, got {arr.dtype}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class OdPatch:
    """Per-pixel 3-channel absorbance values (dimensionless, >= 0)."""

    data: np.ndarray
    i0: float = DEFAULT_I0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"OD patch must be H x W x 3, got shape {arr.shape}")
        # min/max reductions catch negatives, NaN and infinities in two
        # passes without boolean temporaries (this runs per megapixel).
        low, high = float(arr.min(initial=0.0)), float(arr.max(initial=0.0))
        if not (low >= 0.0 and np.isfinite(high)):
            raise ValueError("OD values must be finite and non-negative")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def round_half_up(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer with .5 going up (np.round rounds to even)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def rgb_to_od(patch: RgbPatch, i0: float = DEFAULT_I0,
              i_min: float = DEFAULT_I_MIN) -> OdPatch:
    """Convert an 8-bit patch to optical density.

    Intensities are clamped to ``i_min`` before the log so the map is total;
    the white reference ``i0`` has OD exactly 0. Eight-bit input admits only
    256 distinct values per channel, so the log runs on a lookup table.
    """
    if i0 <= 0:
        raise ValueError("i0 must be positive")
    lut = -np.log10(np.maximum(np.arange(256, dtype=np.float64), i_min) / i0)
    # Intensities above i0 would go (slightly) negative; absorbance is
    # non-negative by definition.
    np.maximum(lut, 0.0, out=lut)
    return OdPatch(data=lut[patch.data], i0=i0)


def od_to_rgb(od: OdPatch, i0: float = DEFAULT_I0) -> RgbPatch:
    """Reconstruct an 8-bit patch from optical density (space: Unspecified).

    Exact powers of ten matter here: od 1.0 at i0 255 must hit 25.5 and
    round half-up, so this stays np.power rather than an exp() rewrite.
    The chain i0 * 10^(-od) -> clip -> floor(x + 0.5) runs in place; this
    path dominates stain-transfer throughput.
    """
    out = np.multiply(od.data, -1.0)
    np.power(10.0, out, out=out)
    out *= i0
    np.clip(out, 0.0, 255.0, out=out)
    out += 0.5
    np.floor(out, out=out)
    return RgbPatch(data=out.astype(np.uint8), space=ColorSpace.UNSPECIFIED)


_SRGB_DECODE_KNEE = 0.04045
_SRGB_ENCODE_KNEE = 0.0031308


def srgb_decode(v):
    """sRGB encoded -> linear, piecewise IEC 61966-2-1 transfer function."""
    v = np.asarray(v, dtype=np.float64)
    linear = np.where(v <= _SRGB_DECODE_KNEE,
                      v / 12.92,
                      np.power((v + 0.055) / 1.055, 2.4))
    return linear if linear.ndim else float(linear)


def srgb_encode(v):
    """Linear -> sRGB encoded, inverse of srgb_decode."""
    v = np.asarray(v, dtype=np.float64)
    encoded = np.where(v <= _SRGB_ENCODE_KNEE,
                       v * 12.92,
                       1.055 * np.power(np.maximum(v, 0.0), 1.0 / 2.4) - 0.055)
    return encoded if encoded.ndim else float(encoded)
