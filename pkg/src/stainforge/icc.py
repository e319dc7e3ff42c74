"""ICC profile parsing (matrix/TRC subset) and device-RGB to sRGB conversion.

Supports the display-class matrix/TRC profiles whole-slide scanners embed:
red/green/blue tone curves plus a 3x3 colorant matrix into the D50-relative
profile connection space. Conversion is relative colorimetric with Bradford
chromatic adaptation from D50 to the sRGB D65 white.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .color import ColorSpace, RgbPatch, round_half_up, srgb_encode
from .errors import BadSignature, SingularMatrix, Truncated, UnsupportedProfile

HEADER_SIZE = 128
REQUIRED_TAGS = ("wtpt", "rXYZ", "gXYZ", "bXYZ", "rTRC", "gTRC", "bTRC")
COLORANT_CONDITION_BOUND = 1e6

# Bradford cone response matrix (ICC-recommended chromatic adaptation).
BRADFORD = np.array([
    [0.8951, 0.2664, -0.1614],
    [-0.7502, 1.7135, 0.0367],
    [0.0389, -0.0685, 1.0296],
])

# PCS illuminant (D50) exactly as encoded in profile headers (s15Fixed16).
D50_WHITE = np.array([0.9642028808593750, 1.0, 0.8249053955078125])
D65_WHITE = np.array([0.95047, 1.0, 1.08883])

# sRGB primaries and white (IEC 61966-2-1 chromaticities).
SRGB_PRIMARIES = ((0.64, 0.33), (0.30, 0.60), (0.15, 0.06))


def _xyz_from_xy(x: float, y: float) -> np.ndarray:
    return np.array([x / y, 1.0, (1.0 - x - y) / y])


def rgb_to_xyz_matrix(primaries, white: np.ndarray) -> np.ndarray:
    """3x3 linear RGB -> XYZ matrix normalized so (1,1,1) maps to white."""
    basis = np.column_stack([_xyz_from_xy(x, y) for x, y in primaries])
    scale = np.linalg.solve(basis, white)
    return basis * scale


LINEAR_SRGB_TO_XYZ_D65 = rgb_to_xyz_matrix(SRGB_PRIMARIES, D65_WHITE)
XYZ_D65_TO_LINEAR_SRGB = np.linalg.inv(LINEAR_SRGB_TO_XYZ_D65)


def bradford_adaptation(source_white: np.ndarray, dest_white: np.ndarray) -> np.ndarray:
    """Von Kries scaling in the Bradford cone space between two whites."""
    gains = (BRADFORD @ dest_white) / (BRADFORD @ source_white)
    return np.linalg.solve(BRADFORD, gains[:, None] * BRADFORD)


@dataclass(frozen=True)
class ToneCurve:
    """One channel's transfer function: gamma, sampled table, or parametric."""

    kind: str  # "gamma" | "table" | "parametric"
    gamma: float | None = None
    table: np.ndarray | None = None
    function_type: int | None = None
    params: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind == "gamma":
            if self.gamma is None or self.gamma <= 0:
                raise ValueError("gamma curve needs a positive exponent")
        elif self.kind == "table":
            table = np.asarray(self.table, dtype=np.float64)
            if table.size < 2:
                raise ValueError("table curve needs at least two entries")
            if np.any(table < 0) or np.any(table > 1):
                raise ValueError("table entries must lie in [0, 1]")
            object.__setattr__(self, "table", table)
        elif self.kind == "parametric":
            if self.function_type not in range(5):
                raise ValueError(f"parametric type must be 0..4, got {self.function_type}")
        else:
            raise ValueError(f"unknown tone curve kind {self.kind!r}")


def eval_tone_curve(curve: ToneCurve, x) -> np.ndarray | float:
    """Evaluate encoded -> linear in [0,1]; output is clamped to [0,1]."""
    x = np.asarray(x, dtype=np.float64)
    if curve.kind == "gamma":
        y = np.power(x, curve.gamma)
    elif curve.kind == "table":
        positions = np.linspace(0.0, 1.0, curve.table.size)
        y = np.interp(x, positions, curve.table)
    else:
        y = _eval_parametric(curve.function_type, curve.params, x)
    y = np.clip(y, 0.0, 1.0)
    return y if y.ndim else float(y)


def _eval_parametric(function_type: int, params: tuple[float, ...], x: np.ndarray):
    p = params
    if function_type == 0:
        return np.power(x, p[0])
    if function_type == 1:
        g, a, b = p[:3]
        return np.where(x >= -b / a, np.power(np.maximum(a * x + b, 0.0), g), 0.0)
    if function_type == 2:
        g, a, b, c = p[:4]
        return np.where(x >= -b / a, np.power(np.maximum(a * x + b, 0.0), g) + c, c)
    if function_type == 3:
        g, a, b, c, d = p[:5]
        return np.where(x >= d, np.power(np.maximum(a * x + b, 0.0), g), c * x)
    g, a, b, c, d, e, f = p[:7]
    return np.where(x >= d, np.power(np.maximum(a * x + b, 0.0), g) + e, c * x + f)


@dataclass(frozen=True)
class IccProfile:
    """Parsed matrix/TRC profile: colorant matrix, white point, tone curves."""

    size: int
    color_space: str
    pcs: str
    white_point: np.ndarray
    colorants: np.ndarray  # 3x3, columns are the r/g/b XYZ triples
    trc: tuple[ToneCurve, ToneCurve, ToneCurve]


def _s15fixed16(data: bytes, offset: int) -> float:
    return struct.unpack_from(">i", data, offset)[0] / 65536.0


def _read_xyz_triple(data: bytes, tag_offset: int, tag_size: int) -> np.ndarray:
    if tag_size < 20:
        raise UnsupportedProfile("XYZ tag payload too small")
    sig = data[tag_offset:tag_offset + 4]
    if sig != b"XYZ ":
        raise UnsupportedProfile(f"expected XYZ tag payload, got {sig!r}")
    return np.array([_s15fixed16(data, tag_offset + 8 + 4 * i) for i in range(3)])


def _read_tone_curve(data: bytes, tag_offset: int, tag_size: int) -> ToneCurve:
    sig = data[tag_offset:tag_offset + 4]
    if sig == b"curv":
        count = struct.unpack_from(">I", data, tag_offset + 8)[0]
        if tag_size < 12 + 2 * count:
            raise Truncated("curve table runs past its declared tag size")
        if count == 0:
            return ToneCurve(kind="gamma", gamma=1.0)
        if count == 1:
            raw = struct.unpack_from(">H", data, tag_offset + 12)[0]
            return ToneCurve(kind="gamma", gamma=raw / 256.0)  # u8Fixed8
        entries = np.frombuffer(data, dtype=">u2", count=count,
                                offset=tag_offset + 12).astype(np.float64) / 65535.0
        return ToneCurve(kind="table", table=entries)
    if sig == b"para":
        function_type = struct.unpack_from(">H", data, tag_offset + 8)[0]
        n_params = {0: 1, 1: 3, 2: 4, 3: 5, 4: 7}.get(function_type)
        if n_params is None:
            raise UnsupportedProfile(f"parametric curve type {function_type} not supported")
        if tag_size < 12 + 4 * n_params:
            raise Truncated("parametric curve runs past its declared tag size")
        params = tuple(_s15fixed16(data, tag_offset + 12 + 4 * i) for i in range(n_params))
        return ToneCurve(kind="parametric", function_type=function_type, params=params)
    raise UnsupportedProfile(f"tone curve payload type {sig!r} not supported "
                             "(LUT-based profiles are out of scope)")


def parse_profile(data: bytes) -> IccProfile:
    """Parse an ICC byte buffer into the supported matrix/TRC subset.

    Raises Truncated when sizes or offsets run past the buffer, BadSignature
    when the 'acsp' magic is missing, and UnsupportedProfile for anything
    outside RGB matrix/TRC display profiles.
    """
    if len(data) == 0:
        raise ValueError("empty buffer")
    if len(data) < HEADER_SIZE + 4:
        raise Truncated(f"{len(data)} bytes is too short for an ICC header")
    if data[36:40] != b"acsp":
        raise BadSignature("missing 'acsp' profile signature")
    declared_size = struct.unpack_from(">I", data, 0)[0]
    if declared_size > len(data):
        raise Truncated(f"declared size {declared_size} exceeds buffer {len(data)}")

    color_space = data[16:20].decode("latin-1")
    pcs = data[20:24].decode("latin-1")
    if color_space != "RGB ":
        raise UnsupportedProfile(f"device color space {color_space!r} is not RGB")
    if pcs != "XYZ ":
        raise UnsupportedProfile(f"profile connection space {pcs!r} is not XYZ")

    tag_count = struct.unpack_from(">I", data, HEADER_SIZE)[0]
    table_end = HEADER_SIZE + 4 + 12 * tag_count
    if table_end > len(data):
        raise Truncated("tag table runs past the buffer")

    tags: dict[str, tuple[int, int]] = {}
    for i in range(tag_count):
        entry = HEADER_SIZE + 4 + 12 * i
        sig = data[entry:entry + 4].decode("latin-1")
        offset, size = struct.unpack_from(">II", data, entry + 4)
        if offset + size > len(data):
            raise Truncated(f"tag {sig!r} points past the buffer")
        tags[sig] = (offset, size)

    missing = [sig for sig in REQUIRED_TAGS if sig not in tags]
    if missing:
        raise UnsupportedProfile(f"required tags missing: {missing} "
                                 "(matrix/TRC profiles only)")

    white_point = _read_xyz_triple(data, *tags["wtpt"])
    if white_point[1] <= 0:
        raise UnsupportedProfile("white point Y must be positive")
    colorants = np.column_stack([
        _read_xyz_triple(data, *tags[sig]) for sig in ("rXYZ", "gXYZ", "bXYZ")])
    if not np.all(np.isfinite(colorants)):
        raise UnsupportedProfile("colorant matrix has non-finite entries")
    trc = tuple(_read_tone_curve(data, *tags[sig])
                for sig in ("rTRC", "gTRC", "bTRC"))

    return IccProfile(size=declared_size, color_space=color_space, pcs=pcs,
                      white_point=white_point, colorants=colorants, trc=trc)


def conversion_matrix(profile: IccProfile) -> np.ndarray:
    """XYZ(D50) colorants -> linear sRGB, with D50->D65 Bradford adaptation."""
    if np.linalg.cond(profile.colorants) > COLORANT_CONDITION_BOUND:
        raise SingularMatrix("colorant matrix fails the invertibility bound")
    return XYZ_D65_TO_LINEAR_SRGB @ bradford_adaptation(D50_WHITE, D65_WHITE)


def to_srgb(patch: RgbPatch, profile: IccProfile,
            return_clip_count: bool = False):
    """Convert a device-RGB patch to sRGB under the given profile.

    Per pixel: TRC decode -> colorant matrix to PCS XYZ (D50) -> Bradford
    adaptation to D65 -> sRGB matrix -> transfer encode -> 8-bit quantize.
    Optionally also returns the number of gamut-clipped pixels.
    """
    matrix = conversion_matrix(profile) @ profile.colorants

    # uint8 input means 256 possible encoded values per channel; evaluate
    # each TRC once on that grid instead of per pixel.
    grid = np.arange(256, dtype=np.float64) / 255.0
    luts = [np.asarray(eval_tone_curve(curve, grid)) for curve in profile.trc]
    linear_device = np.stack(
        [luts[c][patch.data[:, :, c]] for c in range(3)], axis=-1)

    linear_srgb = linear_device @ matrix.T
    clipped = int(np.count_nonzero(
        np.any((linear_srgb < 0.0) | (linear_srgb > 1.0), axis=-1)))
    linear_srgb = np.clip(linear_srgb, 0.0, 1.0)

    encoded = srgb_encode(linear_srgb)
    quantized = round_half_up(np.clip(encoded * 255.0, 0.0, 255.0)).astype(np.uint8)
    result = RgbPatch(data=quantized, space=ColorSpace.SRGB)
    if return_clip_count:
        return result, clipped
    return result
