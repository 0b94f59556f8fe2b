"""Rescaling to a target magnification and centered non-overlapping tiling.

Resampling is a separable Catmull-Rom-family cubic (a = -0.5) on a
center-aligned sample grid with clamp-to-edge boundaries; output channel
values are clamped to [0, 255] and rounded half away from zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

import numpy as np

from .errors import DataError
from .reader import SlidePyramid, read_region

CUBIC_A = -0.5


class EmptyImage(DataError):
    pass


class MagnificationUnavailable(DataError):
    pass


class UpsamplingRefused(DataError):
    pass


@dataclass(frozen=True)
class TileGrid:
    tile_size_px: int
    columns: int
    rows: int
    origin_x: int
    origin_y: int
    scaled_width: int
    scaled_height: int

    def origins(self) -> Iterator[tuple[int, int]]:
        """Tile origins in row-major order (x varies fastest)."""
        t = self.tile_size_px
        for r in range(self.rows):
            for c in range(self.columns):
                yield self.origin_x + c * t, self.origin_y + r * t


def round_half_away(x: float) -> int:
    return int(np.floor(x + 0.5)) if x >= 0 else -int(np.floor(-x + 0.5))


def scaled_dimension(size: int, scale) -> int:
    return round_half_away(size * float(scale))


def cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom family weight for signed sample distance t."""
    t = np.abs(t)
    a = CUBIC_A
    near = (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
    far = a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _axis_taps(n_out: int, n_src: int, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Clamped source indices (n_out, 4) and kernel weights for one axis."""
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) / scale - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    offsets = np.arange(-1, 3)
    idx = base[:, None] + offsets[None, :]
    weights = cubic_kernel(frac[:, None] - offsets[None, :].astype(np.float64))
    return np.clip(idx, 0, n_src - 1), weights


def _resample_axis(img: np.ndarray, idx: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Filter axis 0 of a float array with precomputed taps."""
    out = weights[:, 0].reshape(-1, *([1] * (img.ndim - 1))) * img[idx[:, 0]]
    for k in range(1, 4):
        out += weights[:, k].reshape(-1, *([1] * (img.ndim - 1))) * img[idx[:, k]]
    return out


def rescale_bicubic(image: np.ndarray, scale) -> np.ndarray:
    """Resample an (H, W, 3) uint8 image by a positive scale factor."""
    if image.size == 0:
        raise EmptyImage("cannot rescale an empty image")
    scale = float(scale)
    if scale <= 0:
        raise DataError(f"scale must be positive, got {scale}")
    h, w = image.shape[:2]
    out_h, out_w = scaled_dimension(h, scale), scaled_dimension(w, scale)
    if out_h == 0 or out_w == 0:
        return np.zeros((out_h, out_w, 3), dtype=np.uint8)
    if scale == 1.0:
        return image.copy()
    iy, wy = _axis_taps(out_h, h, scale)
    ix, wx = _axis_taps(out_w, w, scale)
    tmp = _resample_axis(image.astype(np.float64), iy, wy)
    out = _resample_axis(tmp.transpose(1, 0, 2), ix, wx).transpose(1, 0, 2)
    return np.clip(np.floor(out + 0.5), 0.0, 255.0).astype(np.uint8)


def plan_grid(scaled_width: int, scaled_height: int, tile_size_px: int) -> TileGrid:
    """Centered grid of full tiles; remainder edges are discarded."""
    if tile_size_px < 1:
        raise DataError(f"tile size must be >= 1, got {tile_size_px}")
    columns = scaled_width // tile_size_px
    rows = scaled_height // tile_size_px
    return TileGrid(
        tile_size_px=tile_size_px,
        columns=columns,
        rows=rows,
        origin_x=(scaled_width - columns * tile_size_px) // 2,
        origin_y=(scaled_height - rows * tile_size_px) // 2,
        scaled_width=scaled_width,
        scaled_height=scaled_height,
    )


def select_level(slide: SlidePyramid, target_magnification, allow_upsampling: bool = False) -> int:
    """Index of the stored level with the smallest magnification >= target."""
    target = Fraction(target_magnification)
    if target <= 0:
        raise MagnificationUnavailable(f"target magnification {target} is not positive")
    candidates = [
        (slide.level_magnification(i), i)
        for i in range(len(slide.levels))
        if slide.level_magnification(i) >= target
    ]
    if candidates:
        return min(candidates)[1]
    if allow_upsampling:
        return 0  # finest stored level; the tiler will upscale
    raise UpsamplingRefused(
        f"target {target}x exceeds the native {slide.native_magnification}x scan"
    )


def _tile_pixels(slide: SlidePyramid, level: int, scale: float, grid: TileGrid,
                 ox: int, oy: int) -> np.ndarray:
    """One rescaled tile, bit-equal to cropping a full-level rescale."""
    info = slide.levels[level]
    t = grid.tile_size_px
    iy, wy = _axis_taps(grid.scaled_height, info.height_px, scale)
    ix, wx = _axis_taps(grid.scaled_width, info.width_px, scale)
    iy, wy = iy[oy : oy + t], wy[oy : oy + t]
    ix, wx = ix[ox : ox + t], wx[ox : ox + t]
    y0, y1 = int(iy.min()), int(iy.max())
    x0, x1 = int(ix.min()), int(ix.max())
    window = read_region(slide, level, x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    src = window.pixels.astype(np.float64)
    tmp = _resample_axis(src, iy - y0, wy)
    out = _resample_axis(tmp.transpose(1, 0, 2), ix - x0, wx).transpose(1, 0, 2)
    return np.clip(np.floor(out + 0.5), 0.0, 255.0).astype(np.uint8)


def extract_tiles(
    slide: SlidePyramid,
    target_magnification,
    tile_size_px: int = 1024,
    allow_upsampling: bool = False,
) -> Iterator[tuple[dict, np.ndarray]]:
    """Stream (tile info, pixels) row-major over the centered grid.

    Tile info carries slide_id, origin in rescaled coordinates, tile size
    and the target magnification; one grid is planned per slide and tiles
    are rescaled window-by-window so a slide never sits in memory whole.
    """
    level = select_level(slide, target_magnification, allow_upsampling)
    level_mag = slide.level_magnification(level)
    scale = float(Fraction(target_magnification) / level_mag)
    info = slide.levels[level]
    grid = plan_grid(
        scaled_dimension(info.width_px, scale),
        scaled_dimension(info.height_px, scale),
        tile_size_px,
    )
    for ox, oy in grid.origins():
        if scale == 1.0:
            pixels = read_region(slide, level, ox, oy, tile_size_px, tile_size_px).pixels
        else:
            pixels = _tile_pixels(slide, level, scale, grid, ox, oy)
        record = {
            "slide_id": slide.slide_id,
            "origin_x": ox,
            "origin_y": oy,
            "tile_size_px": tile_size_px,
            "magnification": Fraction(target_magnification),
            "level": level,
        }
        yield record, pixels


def tile_filename(slide_id: str, origin_x: int, origin_y: int, ext: str = "ppm") -> str:
    return f"{slide_id}__x{origin_x}_y{origin_y}.{ext}"
