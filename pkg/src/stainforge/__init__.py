"""Stain vector augmentation, ICC color calibration and evaluation for H&E patches."""

from .color import ColorSpace, OdPatch, RgbPatch, od_to_rgb, rgb_to_od, srgb_decode, srgb_encode
from .stain import (
    ConcentrationMap,
    EstimationParams,
    StainMatrix,
    deconvolve,
    estimate_stain_vectors,
    nnls,
    reconstruct,
)

__version__ = "0.1.0"

__all__ = [
    "ColorSpace",
    "ConcentrationMap",
    "EstimationParams",
    "OdPatch",
    "RgbPatch",
    "StainMatrix",
    "deconvolve",
    "estimate_stain_vectors",
    "nnls",
    "od_to_rgb",
    "reconstruct",
    "rgb_to_od",
    "srgb_decode",
    "srgb_encode",
    "__version__",
]
