"""Fixtures for the bindings tests: synthetic patches and a fixture library.

Reuses the core repo's test-side ICC profile encoder (repo-relative import);
everything else goes through the installed stainforge package.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

# Repo-relative: the core package's test helpers (ICC fixture encoder).
sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "tests"))

from stainforge.color import OdPatch, od_to_rgb
from stainforge.stain import StainMatrix
from stainforge.stainlib import StainVectorLibrary, StainVectorRecord, save

SOURCE_STAINS = StainMatrix.from_vectors([0.65, 0.70, 0.29], [0.07, 0.99, 0.11])
TARGET_STAINS = StainMatrix.from_vectors([0.55, 0.76, 0.35], [0.18, 0.92, 0.20])


def two_stain_array(stains: StainMatrix, side: int = 32, seed: int = 7
                    ) -> np.ndarray:
    rng = np.random.default_rng(seed)
    conc = rng.uniform(0.05, 0.9, size=(side, side, 2))
    conc[rng.random((side, side)) < 0.1] = 0.0
    od = conc @ stains.columns.T
    return od_to_rgb(OdPatch(data=od)).data


@pytest.fixture
def source_stains() -> StainMatrix:
    return SOURCE_STAINS


@pytest.fixture
def target_stains() -> StainMatrix:
    return TARGET_STAINS


@pytest.fixture
def patch_array() -> np.ndarray:
    return two_stain_array(SOURCE_STAINS)


@pytest.fixture
def library_path(tmp_path) -> Path:
    library = StainVectorLibrary()
    library.add(StainVectorRecord(stains=SOURCE_STAINS, slide_id="s1",
                                  lab="lab1", scanner="AT2", indication="HCC",
                                  pixel_count=500,
                                  created_at="2024-01-01T00:00:00Z"))
    library.add(StainVectorRecord(stains=TARGET_STAINS, slide_id="s2",
                                  lab="lab2", scanner="GT450",
                                  indication="NASH", pixel_count=640,
                                  created_at="2024-01-02T00:00:00Z"))
    path = tmp_path / "lib.jsonl"
    save(library, path)
    return path
