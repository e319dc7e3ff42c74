"""Shared fixtures: synthetic stain pairs, two-stain patches, pixel clouds."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stainforge.color import OdPatch, RgbPatch, od_to_rgb
from stainforge.stain import StainMatrix

# Classical H&E absorbance vectors (Ruifrok-style), unit-normalized.
H_VECTOR = np.array([0.65, 0.70, 0.29])
E_VECTOR = np.array([0.07, 0.99, 0.11])

# Concentration cap keeping every synthesized channel bright enough that the
# 8-bit quantization round trip stays within one intensity level.
SYNTH_C_MAX = 0.9


@pytest.fixture
def fixture_stains() -> StainMatrix:
    return StainMatrix.from_vectors(H_VECTOR, E_VECTOR)


@pytest.fixture
def alt_stains() -> StainMatrix:
    # A plausibly shifted pair standing in for a different scanner's look.
    return StainMatrix.from_vectors([0.55, 0.76, 0.35], [0.18, 0.92, 0.20])


def synth_concentrations(height: int, width: int, rng: np.random.Generator,
                         c_max: float = SYNTH_C_MAX) -> np.ndarray:
    """Positive per-pixel (h, e) concentrations with background speckle."""
    conc = rng.uniform(0.05, c_max, size=(height, width, 2))
    background = rng.random((height, width)) < 0.1
    conc[background] = 0.0
    return conc


def synth_two_stain_patch(stains: StainMatrix, height: int = 32, width: int = 32,
                          seed: int = 7, i0: float = 255.0) -> RgbPatch:
    """A patch whose every pixel lies exactly in the two-stain cone."""
    rng = np.random.default_rng(seed)
    conc = synth_concentrations(height, width, rng)
    od = conc @ stains.columns.T
    return od_to_rgb(OdPatch(data=od, i0=i0), i0=i0)


def synth_od_cloud(stains: StainMatrix, n_pixels: int = 50_000, seed: int = 11,
                   noise: float = 1e-3) -> np.ndarray:
    """OD pixel cloud from a known stain pair plus bounded noise.

    Mimics tissue structure: clusters dominated by one stain (nuclei,
    stroma) plus mixed pixels, so the angular extremes of the cloud reach
    the true stain directions.
    """
    rng = np.random.default_rng(seed)
    mode = rng.random(n_pixels)
    conc = np.empty((n_pixels, 2))
    h_dom = mode < 0.25
    e_dom = (mode >= 0.25) & (mode < 0.5)
    mixed = mode >= 0.5
    conc[h_dom, 0] = rng.uniform(0.8, 2.0, h_dom.sum())
    conc[h_dom, 1] = rng.uniform(0.0, 0.05, h_dom.sum())
    conc[e_dom, 1] = rng.uniform(0.8, 2.0, e_dom.sum())
    conc[e_dom, 0] = rng.uniform(0.0, 0.05, e_dom.sum())
    conc[mixed] = rng.uniform(0.2, 1.5, (mixed.sum(), 2))
    od = conc @ stains.columns.T
    od += rng.uniform(-noise, noise, size=od.shape)
    return np.maximum(od, 0.0)


def clustered_concentrations(height: int, width: int, rng: np.random.Generator
                             ) -> np.ndarray:
    """Tissue-like concentrations: nuclei (H-heavy), stroma (E-heavy), mixed.

    The dominant-stain clusters put pixels near the pure stain directions so
    percentile-based estimation can reach them; ~10 percent stays background.
    """
    mode = rng.random((height, width))
    conc = np.zeros((height, width, 2))
    h_dom = mode < 0.25
    e_dom = (mode >= 0.25) & (mode < 0.5)
    mixed = (mode >= 0.5) & (mode < 0.9)
    conc[h_dom, 0] = rng.uniform(0.8, 1.4, h_dom.sum())
    conc[h_dom, 1] = rng.uniform(0.0, 0.08, h_dom.sum())
    conc[e_dom, 1] = rng.uniform(0.8, 1.4, e_dom.sum())
    conc[e_dom, 0] = rng.uniform(0.0, 0.08, e_dom.sum())
    conc[mixed] = rng.uniform(0.2, 1.0, (mixed.sum(), 2))
    return conc


def synth_slide_patches(stains: StainMatrix, n_patches: int = 10,
                        side: int = 64, seed: int = 0) -> list[RgbPatch]:
    """Patches standing in for one slide, for estimation-oriented tests.

    Estimation through 8-bit quantization needs the eosin column's red OD
    component to be realistically large (>= ~0.17), as slide-estimated
    vectors have; idealized dye bases with near-zero eosin red lose their
    pure-eosin pixels to the tissue threshold.
    """
    rng = np.random.default_rng(seed)
    patches = []
    for _ in range(n_patches):
        od = clustered_concentrations(side, side, rng) @ stains.columns.T
        patches.append(od_to_rgb(OdPatch(data=od)))
    return patches


def random_plausible_stain_pair(rng: np.random.Generator) -> StainMatrix:
    """A randomly drawn H&E-like stain pair as scanners would measure it."""
    h = np.array([rng.uniform(0.50, 0.72), rng.uniform(0.60, 0.78),
                  rng.uniform(0.22, 0.42)])
    e = np.array([rng.uniform(0.17, 0.30), rng.uniform(0.80, 0.95),
                  rng.uniform(0.12, 0.45)])
    return StainMatrix.from_vectors(h, e)


def angular_error_deg(u: np.ndarray, v: np.ndarray) -> float:
    cos = np.clip(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


@pytest.fixture
def two_stain_patch(fixture_stains) -> RgbPatch:
    return synth_two_stain_patch(fixture_stains)
