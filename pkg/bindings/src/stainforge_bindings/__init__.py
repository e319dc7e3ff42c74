"""Array-level bindings to stainforge for ML training loops.

Every function takes and returns plain numpy arrays: H x W x 3 uint8 patches
in, freshly allocated arrays out. Caller buffers are never mutated.
Non-contiguous inputs are copied (and flagged with BufferCopiedWarning);
everything else delegates directly to the native operations, so outputs are
bit-identical to the stainforge CLI under the same seeds.
"""

from __future__ import annotations

import warnings

import numpy as np

import stainforge
from stainforge.color import ColorSpace, RgbPatch
from stainforge.icc import parse_profile, to_srgb as _to_srgb
from stainforge.pipeline import (
    AugmentConfig,
    BaselineParams,
    Method,
    SlideContext,
    augment as _augment,
)
from stainforge.stain import EstimationParams, StainMatrix
from stainforge.stainlib import build_record, load as _load_library
from stainforge.sva import SvaParams, sva_transform as _sva_transform

__version__ = stainforge.__version__  # released in lockstep with the core

__all__ = [
    "BufferCopiedWarning",
    "LayoutError",
    "augment",
    "estimate_stain_vectors",
    "icc_to_srgb",
    "load_library",
    "sva_transform",
    "__version__",
]


class LayoutError(ValueError):
    """Input array is not an H x W x 3 unsigned-8-bit image."""


class BufferCopiedWarning(UserWarning):
    """A non-contiguous input had to be copied to row-major layout."""


def _as_patch(array: np.ndarray, space: ColorSpace = ColorSpace.UNSPECIFIED
              ) -> RgbPatch:
    if not isinstance(array, np.ndarray) or array.ndim != 3 or array.shape[2] != 3:
        raise LayoutError(
            f"expected an H x W x 3 array, got "
            f"{getattr(array, 'shape', type(array).__name__)}")
    if array.dtype != np.uint8:
        raise LayoutError(f"expected uint8 data, got {array.dtype}")
    if not array.flags.c_contiguous:
        warnings.warn("input buffer is not row-major contiguous; copying",
                      BufferCopiedWarning, stacklevel=3)
        array = np.ascontiguousarray(array)
    return RgbPatch(data=array, space=space)


def _as_stains(stains) -> StainMatrix:
    if isinstance(stains, StainMatrix):
        return stains
    columns = np.asarray(stains, dtype=np.float64)
    if columns.shape == (2, 3):  # row-major (h, e) pairs are accepted too
        columns = columns.T
    return StainMatrix(columns=columns)


def _fresh(data: np.ndarray, caller: np.ndarray) -> np.ndarray:
    if data is caller or np.shares_memory(data, caller):
        return data.copy()
    return data


def sva_transform(array: np.ndarray, source_stains, target_stains,
                  i0: float = 255.0, preserve_residual: bool = False
                  ) -> np.ndarray:
    """Re-render a patch array under target stain vectors."""
    patch = _as_patch(array)
    params = SvaParams(i0=i0, preserve_residual=preserve_residual)
    result = _sva_transform(patch, _as_stains(source_stains),
                            _as_stains(target_stains), params)
    return _fresh(result.data, array)


def estimate_stain_vectors(arrays, seed: int = 0, beta: float = 0.15,
                           alpha: float = 1.0, max_pixels: int = 200_000
                           ) -> np.ndarray:
    """Estimate a 3x2 stain matrix from one patch array or a sequence.

    Same pooling, subsampling and estimation path as the CLI's
    estimate-stains subcommand under the same seed.
    """
    if isinstance(arrays, np.ndarray) and arrays.ndim == 3:
        arrays = [arrays]
    patches = [_as_patch(a) for a in arrays]
    params = EstimationParams(beta=beta, alpha=alpha, max_pixels=max_pixels)
    record = build_record(patches, slide_id="", lab="", scanner="",
                          indication="", params=params,
                          rng=np.random.default_rng(seed), created_at="")
    return record.stains.columns.copy()


def icc_to_srgb(array: np.ndarray, profile: bytes | str) -> np.ndarray:
    """Convert a device-RGB patch array to sRGB under an ICC profile.

    ``profile`` is either raw profile bytes or a path to a .icc file.
    """
    if isinstance(profile, (str,)):
        with open(profile, "rb") as handle:
            profile = handle.read()
    parsed = parse_profile(profile)
    patch = _as_patch(array, space=ColorSpace.DEVICE_RGB)
    return _fresh(_to_srgb(patch, parsed).data, array)


def augment(array: np.ndarray, method: str, seed: int, patch_index: int,
            domain: str | None = None, source_stains=None,
            library_path: str | None = None, profile: bytes | str | None = None,
            st_command: str | None = None, baseline: dict | None = None,
            training: bool = True) -> np.ndarray:
    """Full augmentation step for one patch, identical to the native path.

    The per-patch generator derives from (seed, patch_index) exactly as in
    the pipeline, so a data loader can map worker shards to indices freely.
    """
    method_enum = Method(method)
    baseline_params = BaselineParams(**(baseline or {}))
    targets = (domain,) if domain is not None else ()
    if method_enum in (Method.SVA, Method.ST_HOOK) and not targets:
        targets = ("identity",)
    cfg = AugmentConfig(method=method_enum, seed=seed, targets=targets,
                        baseline=baseline_params, st_command=st_command,
                        library_path=library_path)

    library = _load_library(library_path) if library_path is not None else None
    parsed_profile = None
    if profile is not None:
        if isinstance(profile, str):
            with open(profile, "rb") as handle:
                profile = handle.read()
        parsed_profile = parse_profile(profile)

    space = (ColorSpace.DEVICE_RGB if method_enum is Method.ICC_CAL
             else ColorSpace.UNSPECIFIED)
    patch = _as_patch(array, space=space)
    context = SlideContext(
        source_stains=_as_stains(source_stains) if source_stains is not None else None,
        profile=parsed_profile, domain=domain)
    result = _augment(patch, context, cfg, patch_index=patch_index,
                      library=library, training=training)
    return _fresh(result.data, array)


def load_library(path: str) -> dict:
    """Load a stain vector library as flat arrays (no object graph).

    Returns h and e as (N, 3) float64 arrays plus parallel metadata lists.
    """
    library = _load_library(path)
    records = library.records
    return {
        "h": np.array([r.stains.hematoxylin for r in records],
                      dtype=np.float64).reshape(-1, 3),
        "e": np.array([r.stains.eosin for r in records],
                      dtype=np.float64).reshape(-1, 3),
        "slide_id": [r.slide_id for r in records],
        "lab": [r.lab for r in records],
        "scanner": [r.scanner for r in records],
        "indication": [r.indication for r in records],
        "pixel_count": np.array([r.pixel_count for r in records], dtype=np.int64),
    }
