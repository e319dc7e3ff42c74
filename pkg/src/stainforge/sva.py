"""Stain vector augmentation: re-render a patch under sampled target stains.

The patch is decomposed against its slide's source stain vectors and
reconstructed with a target pair drawn from the curated library, moving the
patch into that target's color domain while preserving tissue structure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .color import DEFAULT_I0, RgbPatch, rgb_to_od
from .errors import EmptyLibrary
from .stain import EstimationParams, StainMatrix, deconvolve, reconstruct
from .stainlib import StainVectorLibrary, StainVectorRecord


class SamplingPolicy(enum.Enum):
    UNIFORM_SCANNER_THEN_RECORD = "uniform-scanner-then-record"
    UNIFORM_RECORD = "uniform-record"


@dataclass(frozen=True)
class SvaParams:
    i0: float = DEFAULT_I0
    preserve_residual: bool = False
    estimation: EstimationParams = field(default_factory=EstimationParams)

    def __post_init__(self):
        if self.i0 <= 0:
            raise ValueError("i0 must be positive")


def sva_transform(patch: RgbPatch, source: StainMatrix, target: StainMatrix,
                  params: SvaParams = SvaParams()) -> RgbPatch:
    """Decompose against source stains, reconstruct under target stains.

    ``source`` must be the slide-level stain matrix of the patch's WSI;
    patch-level estimation is deliberately not offered here because sparse
    tissue makes it unstable.
    """
    od = rgb_to_od(patch, i0=params.i0)
    conc = deconvolve(od, source)
    residual = None
    if params.preserve_residual:
        residual = od.data - conc.data @ source.columns.T
    return reconstruct(conc, target, i0=params.i0, residual=residual)


def sample_target(library: StainVectorLibrary, rng: np.random.Generator,
                  policy: SamplingPolicy = SamplingPolicy.UNIFORM_SCANNER_THEN_RECORD
                  ) -> StainVectorRecord:
    """Draw a target record; scanner-stratified by default."""
    if len(library) == 0:
        raise EmptyLibrary("cannot sample from an empty stain vector library")
    if policy is SamplingPolicy.UNIFORM_RECORD:
        return library.records[rng.integers(0, len(library))]
    scanners = library.scanners
    scanner = scanners[rng.integers(0, len(scanners))]
    candidates = library.records_for_scanner(scanner)
    return candidates[rng.integers(0, len(candidates))]
