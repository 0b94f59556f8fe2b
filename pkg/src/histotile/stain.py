"""H&E stain estimation and normalization in optical-density space.

A per-image two-stain basis is fitted by projecting tissue pixels onto the
plane of the two dominant principal directions of the OD cloud and taking
extreme-percentile angular directions (the classic percentile-plane
procedure). Concentrations are remapped to a reference profile.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

DEFAULT_BETA = 0.15
DEFAULT_ALPHA = 1.0
CONCENTRATION_PERCENTILE = 99.0
MIN_RETAINED_PIXELS = 2
MIN_ANGLE_SPREAD = 1e-3
# Below this s2/s1 ratio the OD cloud is one-dimensional up to quantization
# noise and no second stain direction can be trusted.
MIN_RANK_RATIO = 1e-2

# Widely used reference stain directions (hematoxylin, eosin) plus their
# 99th-percentile concentrations. The raw constants are not exactly unit
# norm, so columns are renormalized at construction.
_REFERENCE_MATRIX = ((0.5626, 0.2159), (0.7201, 0.8012), (0.4772, 0.5581))
_REFERENCE_MAX_CONCENTRATIONS = (1.9705, 1.0308)


class InsufficientTissue(DataError):
    pass


class DegenerateStains(DataError):
    pass


class InvalidProfile(DataError):
    pass


@dataclass(frozen=True)
class StainProfile:
    """3x2 unit-column stain matrix (hematoxylin first) + 99th-pct concentrations."""

    stain_matrix: np.ndarray
    max_concentrations: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.stain_matrix, dtype=np.float64)
        c = np.asarray(self.max_concentrations, dtype=np.float64)
        if m.shape != (3, 2) or c.shape != (2,):
            raise InvalidProfile(f"bad profile shapes {m.shape}, {c.shape}")
        norms = np.linalg.norm(m, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise InvalidProfile(f"stain columns are not unit norm: {norms}")
        if np.any(m < 0):
            raise InvalidProfile("stain columns must be nonnegative")
        if np.any(c <= 0):
            raise InvalidProfile(f"max concentrations must be positive: {c}")
        object.__setattr__(self, "stain_matrix", m)
        object.__setattr__(self, "max_concentrations", c)


def default_reference_profile() -> StainProfile:
    m = np.array(_REFERENCE_MATRIX, dtype=np.float64)
    m = m / np.linalg.norm(m, axis=0, keepdims=True)
    return StainProfile(m, np.array(_REFERENCE_MAX_CONCENTRATIONS))


def rgb_to_od(values) -> np.ndarray:
    """Optical density -log10(v/255), with v clamped below by 1."""
    v = np.maximum(np.asarray(values, dtype=np.float64), 1.0)
    return -np.log10(v / 255.0)


def od_to_rgb(od) -> np.ndarray:
    """Inverse transform, rounded half away from zero and clipped to bytes."""
    v = 255.0 * np.power(10.0, -np.asarray(od, dtype=np.float64))
    return np.clip(np.floor(v + 0.5), 0.0, 255.0).astype(np.uint8)


def _od_pixels(pixels: np.ndarray) -> np.ndarray:
    return rgb_to_od(pixels.reshape(-1, 3))


def stain_concentrations(od: np.ndarray, profile: StainProfile) -> np.ndarray:
    """Per-pixel least-squares coefficients against the profile's columns."""
    pinv = np.linalg.pinv(profile.stain_matrix)
    return od @ pinv.T


def estimate_stain_matrix(
    pixels: np.ndarray,
    beta: float = DEFAULT_BETA,
    alpha: float = DEFAULT_ALPHA,
) -> StainProfile:
    """Fit a two-stain profile to an RGB image or pixel array.

    Pixels with any channel OD <= beta are treated as transparent and
    discarded; the stain directions are the alpha-th and (100-alpha)-th
    percentile angles within the dominant OD plane.
    """
    od = _od_pixels(np.asarray(pixels))
    retained = od[np.all(od > beta, axis=1)]
    if len(retained) < MIN_RETAINED_PIXELS:
        raise InsufficientTissue(
            f"{len(retained)} pixels exceed the OD threshold {beta}, "
            f"need at least {MIN_RETAINED_PIXELS}"
        )

    # Dominant plane of the OD cloud. The cloud lives in the nonnegative
    # cone, so the plane is fitted through the origin (uncentered SVD);
    # this also makes single-stain input detectably one-dimensional.
    _, sv, vt = np.linalg.svd(retained, full_matrices=False)
    if sv[0] <= 0 or sv[1] / sv[0] < MIN_RANK_RATIO:
        raise DegenerateStains(
            f"OD cloud is effectively one-dimensional (s2/s1 = {sv[1] / max(sv[0], 1e-300):.2e})"
        )
    plane = vt[:2].T  # 3x2, orthonormal columns
    if plane[:, 0].sum() < 0:
        plane[:, 0] = -plane[:, 0]
    if plane[:, 1].sum() < 0:
        plane[:, 1] = -plane[:, 1]

    coords = retained @ plane
    phi = np.arctan2(coords[:, 1], coords[:, 0])
    if phi.max() - phi.min() < MIN_ANGLE_SPREAD:
        raise DegenerateStains(
            f"angular spread {phi.max() - phi.min():.2e} rad, OD cloud is collinear"
        )
    lo, hi = np.percentile(phi, [alpha, 100.0 - alpha])
    v_lo = plane @ np.array([np.cos(lo), np.sin(lo)])
    v_hi = plane @ np.array([np.cos(hi), np.sin(hi)])

    columns = []
    for v in (v_lo, v_hi):
        if v.sum() < 0:
            v = -v
        v = np.clip(v, 0.0, None)  # tiny negatives from percentile noise
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            raise DegenerateStains("percentile direction collapsed to zero")
        columns.append(v / norm)
    # Hematoxylin absorbs red light most strongly: larger red-channel OD.
    h, e = (columns[0], columns[1]) if columns[0][0] >= columns[1][0] else (columns[1], columns[0])
    if float(np.dot(h, e)) > 1.0 - 1e-9:
        raise DegenerateStains("recovered stain directions are collinear")
    matrix = np.column_stack([h, e])

    conc = stain_concentrations(retained, StainProfile(matrix, np.ones(2)))
    max_c = np.percentile(conc, CONCENTRATION_PERCENTILE, axis=0)
    if np.any(max_c <= 0):
        raise DegenerateStains(f"non-positive concentration percentiles {max_c}")
    return StainProfile(matrix, max_c)


def normalize_od(od: np.ndarray, source: StainProfile, reference: StainProfile) -> np.ndarray:
    """Map OD row vectors from the source stain basis to the reference one."""
    conc = stain_concentrations(od, source)
    conc = conc * (reference.max_concentrations / source.max_concentrations)
    return conc @ reference.stain_matrix.T


def normalize_tile(pixels: np.ndarray, source: StainProfile, reference: StainProfile) -> np.ndarray:
    """Remap a tile's colors onto the reference stain appearance."""
    shape = pixels.shape
    od = _od_pixels(pixels)
    out = od_to_rgb(normalize_od(od, source, reference))
    return out.reshape(shape)


def sample_tissue_pixels(
    tiles, max_pixels: int = 100_000, white_threshold: int = 220, seed: int = 0
) -> np.ndarray:
    """Uniform sample of non-background pixels pooled across tiles.

    One reduction per slide; profiles estimated per tile are unstable on
    low-variance tiles.
    """
    from .tissue import background_mask

    pools = []
    for pixels in tiles:
        flat = pixels.reshape(-1, 3)
        mask = ~background_mask(pixels, white_threshold).reshape(-1)
        if mask.any():
            pools.append(flat[mask])
    if not pools:
        raise InsufficientTissue("no tissue pixels found across the given tiles")
    pool = np.concatenate(pools, axis=0)
    if len(pool) > max_pixels:
        idx = np.random.default_rng(seed).choice(len(pool), size=max_pixels, replace=False)
        pool = pool[np.sort(idx)]
    return pool


def save_profile(path, profile: StainProfile) -> None:
    """Serialize: 6 matrix entries row-major then 2 concentrations, one per line."""
    values = list(profile.stain_matrix.reshape(-1)) + list(profile.max_concentrations)
    Path(path).write_text("".join(f"{v:.17g}\n" for v in values))


def load_profile(path) -> StainProfile:
    try:
        values = [float(line) for line in Path(path).read_text().split()]
    except ValueError as exc:
        raise InvalidProfile(f"bad profile file {path}: {exc}") from exc
    if len(values) != 8:
        raise InvalidProfile(f"profile file {path} has {len(values)} values, expected 8")
    matrix = np.array(values[:6]).reshape(3, 2)
    return StainProfile(matrix, np.array(values[6:]))
