"""Stain vector estimation and NNLS-based deconvolution/reconstruction.

Estimation finds the two extreme absorbance directions of the tissue pixel
cloud (robust angular percentiles on the dominant scatter plane); per-pixel
concentrations are the non-negative least squares fit of each OD pixel onto
those two unit vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color import DEFAULT_I0, OdPatch, RgbPatch, od_to_rgb
from .errors import (
    AmbiguousOrdering,
    DegenerateDistribution,
    InsufficientTissue,
    MaxIterationsExceeded,
)

MIN_COLUMN_ANGLE_DEG = 1.0
MIN_TISSUE_PIXELS = 100
# Below this ratio of plane-to-principal scatter eigenvalues the pixel cloud
# is treated as a single stain direction.
PLANE_EIGENVALUE_RATIO_FLOOR = 1e-4
ORDERING_TIE_EPS = 1e-6


@dataclass(frozen=True)
class StainMatrix:
    """3x2 matrix of unit-norm absorbance columns: hematoxylin, then eosin."""

    columns: np.ndarray

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=np.float64)
        if cols.shape != (3, 2):
            raise ValueError(f"stain matrix must be 3x2, got {cols.shape}")
        norms = np.linalg.norm(cols, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError(f"stain columns must be unit norm, got norms {norms}")
        if np.any(cols < 0):
            raise ValueError("stain columns must be component-wise non-negative")
        cos_angle = float(np.clip(cols[:, 0] @ cols[:, 1], -1.0, 1.0))
        angle = np.degrees(np.arccos(cos_angle))
        if angle < MIN_COLUMN_ANGLE_DEG:
            raise ValueError(
                f"stain columns are {angle:.4f} degrees apart; "
                f"minimum is {MIN_COLUMN_ANGLE_DEG}")
        object.__setattr__(self, "columns", cols)

    @classmethod
    def from_vectors(cls, hematoxylin, eosin) -> "StainMatrix":
        """Build from two absorbance vectors, normalizing to unit length."""
        h = np.asarray(hematoxylin, dtype=np.float64)
        e = np.asarray(eosin, dtype=np.float64)
        cols = np.column_stack([h / np.linalg.norm(h), e / np.linalg.norm(e)])
        return cls(columns=cols)

    @property
    def hematoxylin(self) -> np.ndarray:
        return self.columns[:, 0]

    @property
    def eosin(self) -> np.ndarray:
        return self.columns[:, 1]


@dataclass(frozen=True)
class EstimationParams:
    """Free parameters of stain vector estimation.

    beta is the OD threshold separating tissue from background, alpha the
    robust percentile for the extreme angles, max_pixels the subsample cap
    applied by callers that pool whole-slide pixels.
    """

    beta: float = 0.15
    alpha: float = 1.0
    max_pixels: int = 200_000

    def __post_init__(self):
        if not 0 < self.beta < 3:
            raise ValueError(f"beta must be in (0, 3), got {self.beta}")
        if not 0 < self.alpha < 50:
            raise ValueError(f"alpha must be in (0, 50), got {self.alpha}")
        if self.max_pixels < MIN_TISSUE_PIXELS:
            raise ValueError("max_pixels must allow at least the tissue minimum")


@dataclass(frozen=True)
class ConcentrationMap:
    """Per-pixel (hematoxylin, eosin) concentrations, H x W x 2, >= 0."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ValueError(f"concentration map must be H x W x 2, got {arr.shape}")
        if not float(arr.min(initial=0.0)) >= 0.0:  # also False for NaN
            raise ValueError("concentrations must be non-negative")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def nnls(a: np.ndarray, b: np.ndarray, max_iter: int | None = None) -> np.ndarray:
    """Solve min ||a @ x - b||_2 subject to x >= 0 (Lawson-Hanson active set).

    Raises MaxIterationsExceeded if the outer loop runs past the cap
    (default 3n) without satisfying the KKT conditions.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 1 or a.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("nnls requires finite inputs")

    n = a.shape[1]
    if max_iter is None:
        max_iter = max(3 * n, 1)

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)  # complement is the active (zero) set
    # Stop once the largest positive gradient over the active set drops to
    # 1e-10 of the initial gradient scale (relative KKT residual).
    tol = 1e-10 * max(1.0, float(np.max(np.abs(a.T @ b))))

    for _ in range(max_iter):
        gradient = a.T @ (b - a @ x)
        candidates = ~passive
        if not candidates.any() or np.max(gradient[candidates]) <= tol:
            return x
        entering = np.argmax(np.where(candidates, gradient, -np.inf))
        passive[entering] = True

        while True:
            z = np.zeros(n)
            z[passive], *_ = np.linalg.lstsq(a[:, passive], b, rcond=None)
            if np.min(z[passive]) > 0:
                x = z
                break
            # Step toward z until the first passive coordinate hits zero,
            # then move those coordinates back to the active set.
            blocking = passive & (z <= 0)
            xb, zb = x[blocking], z[blocking]
            denom = xb - zb
            ratios = np.divide(xb, denom, out=np.zeros_like(xb), where=denom > 0)
            alpha = np.min(ratios)
            x = x + alpha * (z - x)
            passive &= x > 0
            x[~passive] = 0.0

    raise MaxIterationsExceeded(
        f"nnls failed to converge within {max_iter} iterations")


def _principal_plane(tissue: np.ndarray) -> np.ndarray:
    """Top-2 scatter eigenvectors (columns) of the tissue OD cloud.

    The first axis is oriented toward the cloud mean so pixel angles stay in
    (-pi/2, pi/2) with no wraparound; the second axis sign is fixed by its
    largest-magnitude component for determinism.
    """
    eigenvalues, eigenvectors = np.linalg.eigh(np.cov(tissue, rowvar=False))
    if eigenvalues[2] <= 0 or eigenvalues[1] / eigenvalues[2] < PLANE_EIGENVALUE_RATIO_FLOOR:
        raise DegenerateDistribution(
            "OD scatter is effectively rank one (single stain direction)")
    plane = eigenvectors[:, [2, 1]]
    if tissue.mean(axis=0) @ plane[:, 0] < 0:
        plane[:, 0] = -plane[:, 0]
    k = np.argmax(np.abs(plane[:, 1]))
    if plane[k, 1] < 0:
        plane[:, 1] = -plane[:, 1]
    return plane


def estimate_stain_vectors(od_pixels: np.ndarray,
                           params: EstimationParams = EstimationParams()
                           ) -> StainMatrix:
    """Estimate the H&E stain matrix from a cloud of OD pixel vectors.

    Pixels with any channel at or below beta are discarded as background,
    the remainder are projected onto the dominant scatter plane, and the
    alpha / (100 - alpha) percentile angular directions become the stain
    columns. Hematoxylin is the column with the larger red-channel OD.
    """
    od = np.asarray(od_pixels, dtype=np.float64).reshape(-1, 3)
    tissue = od[np.all(od > params.beta, axis=1)]
    if tissue.shape[0] < MIN_TISSUE_PIXELS:
        raise InsufficientTissue(
            f"{tissue.shape[0]} tissue pixels above beta={params.beta}; "
            f"need at least {MIN_TISSUE_PIXELS}")

    plane = _principal_plane(tissue)
    coords = tissue @ plane
    angles = np.arctan2(coords[:, 1], coords[:, 0])
    lo, hi = np.percentile(angles, [params.alpha, 100.0 - params.alpha])

    extremes = []
    for phi in (lo, hi):
        v = plane @ np.array([np.cos(phi), np.sin(phi)])
        if v.sum() < 0:
            v = -v
        # Components should be non-negative for real stains; clamp the tiny
        # negative leakage the percentile directions can carry.
        v = np.maximum(v, 0.0)
        extremes.append(v / np.linalg.norm(v))

    first, second = extremes
    if abs(first[0] - second[0]) < ORDERING_TIE_EPS:
        raise AmbiguousOrdering(
            "red-channel OD components tie; cannot label hematoxylin")
    if first[0] < second[0]:
        first, second = second, first
    return StainMatrix(columns=np.column_stack([first, second]))


def _nnls_two_column_batch(columns: np.ndarray, od_flat: np.ndarray) -> np.ndarray:
    """Exact NNLS for a fixed 3x2 design over many right-hand sides.

    With two columns the optimum's support is one of four sets; evaluating
    the unconstrained solution on each and keeping the feasible minimizer
    reproduces the active-set answer pixel-for-pixel, fully vectorized.
    """
    h, e = columns[:, 0], columns[:, 1]
    g11, g22, g12 = h @ h, e @ e, h @ e
    det = g11 * g22 - g12 * g12

    bh = od_flat @ h
    be = od_flat @ e

    # Unconstrained two-column solution via the shared 2x2 Gram inverse.
    c1 = (g22 * bh - g12 * be) / det
    c2 = (g11 * be - g12 * bh) / det
    interior_ok = (c1 >= 0) & (c2 >= 0)

    # Single-column candidates, clamped at zero.
    s1 = np.maximum(bh / g11, 0.0)
    s2 = np.maximum(be / g22, 0.0)
    # Residual^2 = ||b||^2 - 2 c.g + c.G.c; ||b||^2 is common, compare the rest.
    r1 = s1 * s1 * g11 - 2.0 * s1 * bh
    r2 = s2 * s2 * g22 - 2.0 * s2 * be
    use_first = r1 <= r2

    out = np.empty((od_flat.shape[0], 2))
    out[:, 0] = np.where(interior_ok, c1, np.where(use_first, s1, 0.0))
    out[:, 1] = np.where(interior_ok, c2, np.where(use_first, 0.0, s2))
    return out


def deconvolve(od: OdPatch, stains: StainMatrix) -> ConcentrationMap:
    """Per-pixel NNLS of OD values onto the stain columns.

    The residual OD outside the two-stain span is discarded; callers that
    need it can recompute od - stains @ c.
    """
    flat = od.data.reshape(-1, 3)
    conc = _nnls_two_column_batch(stains.columns, flat)
    return ConcentrationMap(data=conc.reshape(od.height, od.width, 2))


def reconstruct(conc: ConcentrationMap, target: StainMatrix,
                i0: float = DEFAULT_I0,
                residual: np.ndarray | None = None) -> RgbPatch:
    """Render concentrations under target stain vectors back to 8-bit RGB.

    ``residual`` (H x W x 3 OD) is added before reconstruction when the
    caller wants to preserve the off-span component of the source patch.
    """
    od = conc.data @ target.columns.T
    if residual is not None:
        od = np.maximum(od + residual, 0.0)
    return od_to_rgb(OdPatch(data=od, i0=i0), i0=i0)
