"""Train-time augmentation orchestration.

Domain-targeted method transforms run first (stain transfer, ICC
calibration, or the external scanner-transform adapter), then the baseline
augmentations in a fixed order: geometric (flip, rotate, crop) before
photometric (grayscale, hue, saturation, contrast, brightness, noise).
Per-patch randomness comes from a counter-based generator keyed by
(seed, patch_index) so results do not depend on worker scheduling.
"""

from __future__ import annotations

import enum
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .color import RgbPatch, round_half_up
from .errors import CropLargerThanPatch, EmptyLibrary, StAdapterFailure
from .icc import IccProfile, to_srgb
from .stain import StainMatrix
from .stainlib import StainVectorLibrary
from .sva import SvaParams, sva_transform

IDENTITY_DOMAIN = "identity"

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class Method(enum.Enum):
    BASELINE = "baseline"
    ICC_CAL = "icc"
    SVA = "sva"
    ST_HOOK = "st"


@dataclass(frozen=True)
class BaselineParams:
    """Enable flags and ranges for the baseline augmentations.

    Disabled entries draw nothing from the generator, so adding an
    augmentation never perturbs the draws of the others that follow it.
    """

    flip: bool = False
    rotate: tuple[int, ...] = ()            # choices, multiples of 90 degrees
    rotate_arbitrary: tuple[float, float] | None = None  # degrees, bilinear
    crop: float | None = None               # fraction of each side retained
    grayscale: float = 0.0                  # probability
    hue: tuple[float, float] | None = None  # shift range in hue turns
    saturation: tuple[float, float] | None = None
    contrast: tuple[float, float] | None = None
    brightness: tuple[float, float] | None = None
    noise: float = 0.0                      # gaussian sigma, intensity units

    def __post_init__(self):
        if not 0.0 <= self.grayscale <= 1.0:
            raise ValueError("grayscale probability must be in [0, 1]")
        if self.noise < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.crop is not None and self.crop <= 0:
            raise ValueError("crop fraction must be positive")
        if any(r % 90 != 0 for r in self.rotate):
            raise ValueError("rotate entries must be multiples of 90 degrees")
        for name in ("hue", "saturation", "contrast", "brightness",
                     "rotate_arbitrary"):
            bounds = getattr(self, name)
            if bounds is not None and bounds[0] > bounds[1]:
                raise ValueError(f"{name} range is inverted: {bounds}")


@dataclass(frozen=True)
class AugmentConfig:
    method: Method
    seed: int
    targets: tuple[str, ...] = ()
    baseline: BaselineParams = field(default_factory=BaselineParams)
    library_path: str | None = None
    profile_path: str | None = None
    st_command: str | None = None
    include_identity: bool = True
    sva_params: SvaParams = field(default_factory=SvaParams)

    def __post_init__(self):
        if self.method in (Method.SVA, Method.ST_HOOK) and not self.targets:
            raise ValueError(f"method {self.method.value} requires target domains")


@dataclass(frozen=True)
class SlideContext:
    """Per-patch context: the slide's stains/profile and the scheduled domain."""

    source_stains: StainMatrix | None = None
    profile: IccProfile | None = None
    domain: str | None = None


def patch_rng(seed: int, patch_index: int) -> np.random.Generator:
    """Counter-based per-patch generator: splittable and order-independent."""
    return np.random.Generator(np.random.Philox(key=seed,
                                                counter=patch_index << 128))


def schedule_domains(n_patches: int, domains: list[str],
                     rng: np.random.Generator) -> list[str]:
    """Assign one domain per patch with counts differing by at most one."""
    if not domains:
        raise ValueError("at least one domain is required")
    k = len(domains)
    balanced = np.arange(n_patches) % k
    shuffled = balanced[rng.permutation(n_patches)]
    relabel = rng.permutation(k)  # which domains receive the extra patches
    return [domains[relabel[j]] for j in shuffled]


def _apply_flip(data: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if rng.random() < 0.5:
        data = data[:, ::-1]
    if rng.random() < 0.5:
        data = data[::-1, :]
    return data


def _apply_rotate(data: np.ndarray, choices: tuple[int, ...],
                  rng: np.random.Generator) -> np.ndarray:
    degrees = choices[rng.integers(0, len(choices))]
    return np.rot90(data, k=(degrees // 90) % 4)


def _apply_rotate_arbitrary(data: np.ndarray, bounds: tuple[float, float],
                            rng: np.random.Generator) -> np.ndarray:
    from PIL import Image

    angle = rng.uniform(bounds[0], bounds[1])
    img = Image.fromarray(np.ascontiguousarray(data), mode="RGB")
    rotated = img.rotate(angle, resample=Image.Resampling.BILINEAR,
                         fillcolor=(255, 255, 255))
    return np.asarray(rotated, dtype=np.uint8)


def _apply_crop(data: np.ndarray, fraction: float,
                rng: np.random.Generator) -> np.ndarray:
    height, width = data.shape[:2]
    crop_h = max(int(round(height * fraction)), 1)
    crop_w = max(int(round(width * fraction)), 1)
    if crop_h > height or crop_w > width:
        raise CropLargerThanPatch(
            f"crop {crop_h}x{crop_w} exceeds patch {height}x{width}")
    top = int(rng.integers(0, height - crop_h + 1))
    left = int(rng.integers(0, width - crop_w + 1))
    return data[top:top + crop_h, left:left + crop_w]


def _luma(data: np.ndarray) -> np.ndarray:
    return data.astype(np.float64) @ LUMA_WEIGHTS


def _apply_hue(data: np.ndarray, bounds: tuple[float, float],
               rng: np.random.Generator) -> np.ndarray:
    from matplotlib import colors as mpl_colors

    shift = rng.uniform(bounds[0], bounds[1])
    hsv = mpl_colors.rgb_to_hsv(data.astype(np.float64) / 255.0)
    hsv[:, :, 0] = (hsv[:, :, 0] + shift) % 1.0
    rgb = mpl_colors.hsv_to_rgb(hsv)
    return round_half_up(np.clip(rgb * 255.0, 0.0, 255.0)).astype(np.uint8)


def _quantize(values: np.ndarray) -> np.ndarray:
    return round_half_up(np.clip(values, 0.0, 255.0)).astype(np.uint8)


def apply_baseline(patch: RgbPatch, params: BaselineParams,
                   rng: np.random.Generator) -> RgbPatch:
    """Apply the enabled baseline augmentations in the documented order."""
    data = patch.data

    # Geometric.
    if params.flip:
        data = _apply_flip(data, rng)
    if params.rotate:
        data = _apply_rotate(data, params.rotate, rng)
    if params.rotate_arbitrary is not None:
        data = _apply_rotate_arbitrary(data, params.rotate_arbitrary, rng)
    if params.crop is not None:
        data = _apply_crop(data, params.crop, rng)

    # Photometric.
    if params.grayscale > 0 and rng.random() < params.grayscale:
        data = _quantize(np.repeat(_luma(data)[:, :, None], 3, axis=2))
    if params.hue is not None:
        data = _apply_hue(data, params.hue, rng)
    if params.saturation is not None:
        factor = rng.uniform(*params.saturation)
        gray = _luma(data)[:, :, None]
        data = _quantize(gray + (data.astype(np.float64) - gray) * factor)
    if params.contrast is not None:
        factor = rng.uniform(*params.contrast)
        mean = _luma(data).mean()
        data = _quantize(mean + (data.astype(np.float64) - mean) * factor)
    if params.brightness is not None:
        factor = rng.uniform(*params.brightness)
        data = _quantize(data.astype(np.float64) * factor)
    if params.noise > 0:
        data = _quantize(data.astype(np.float64)
                         + rng.normal(0.0, params.noise, size=data.shape))

    data = np.ascontiguousarray(data)
    if data is patch.data:
        return patch
    return RgbPatch(data=data, space=patch.space, profile_id=patch.profile_id)


def apply_st_adapter(patch: RgbPatch, command_template: str,
                     target_domain: str) -> RgbPatch:
    """Run an external scanner-transform executable on one patch.

    The template's {in}, {out} and {domain} placeholders are substituted
    per token; the adapter must write a same-size RGB image to {out}.
    """
    from .patchio import read_png, write_png

    with tempfile.TemporaryDirectory(prefix="stainforge-st-") as tmp:
        in_path = Path(tmp) / "in.png"
        out_path = Path(tmp) / "out.png"
        write_png(patch, in_path)
        substitutions = {"in": str(in_path), "out": str(out_path),
                         "domain": target_domain}
        command = [token.format_map(substitutions)
                   for token in shlex.split(command_template)]
        try:
            result = subprocess.run(command, capture_output=True, text=True)
        except OSError as exc:
            raise StAdapterFailure(f"adapter could not start: {exc}") from exc
        if result.returncode != 0:
            raise StAdapterFailure(
                f"adapter exited {result.returncode}: {result.stderr.strip()}")
        if not out_path.exists():
            raise StAdapterFailure("adapter produced no output file")
        transformed = read_png(out_path)
        if transformed.data.shape != patch.data.shape:
            raise StAdapterFailure(
                f"adapter changed dimensions {patch.data.shape} -> "
                f"{transformed.data.shape}")
        return transformed


def augment(patch: RgbPatch, context: SlideContext, cfg: AugmentConfig,
            patch_index: int, library: StainVectorLibrary | None = None,
            training: bool = True) -> RgbPatch:
    """Method transform (per the scheduled domain) followed by baseline augs.

    At inference time nothing is applied except ICC calibration, which is a
    train-and-test mapping rather than an augmentation.
    """
    rng = patch_rng(cfg.seed, patch_index)

    if cfg.method is Method.ICC_CAL:
        if context.profile is None:
            raise ValueError("ICC calibration needs a profile in the context")
        patch = to_srgb(patch, context.profile)
    elif not training:
        return patch
    elif cfg.method is Method.SVA:
        if context.domain is not None and context.domain != IDENTITY_DOMAIN:
            if context.source_stains is None:
                raise ValueError("SVA needs the slide's source stains")
            if library is None:
                raise ValueError("SVA needs the stain vector library")
            candidates = library.records_for_scanner(context.domain)
            if not candidates:
                raise EmptyLibrary(
                    f"no library records for scanner {context.domain!r}")
            record = candidates[rng.integers(0, len(candidates))]
            patch = sva_transform(patch, context.source_stains, record.stains,
                                  cfg.sva_params)
    elif cfg.method is Method.ST_HOOK:
        if context.domain is not None and context.domain != IDENTITY_DOMAIN:
            if cfg.st_command is None:
                raise ValueError("ST hook needs st_command")
            patch = apply_st_adapter(patch, cfg.st_command, context.domain)

    if not training:
        return patch
    return apply_baseline(patch, cfg.baseline, rng)


def domain_buckets(cfg: AugmentConfig) -> list[str]:
    """Scheduling buckets: configured targets plus the identity domain."""
    buckets = list(cfg.targets)
    if cfg.include_identity and cfg.method in (Method.SVA, Method.ST_HOOK):
        buckets = [IDENTITY_DOMAIN] + buckets
    return buckets or [IDENTITY_DOMAIN]
