"""Synthetic H&E-like slide generator for the desk-scale demo corpus.

Two texture classes share one color model (two-stain optical-density
mixtures with per-slide stain jitter) and differ only in the spatial
arrangement of the nuclear dye: scattered round clumps versus elongated
wavy bands. Slides are written as plain P6 rasters at a nominal 40x;
full-white cells aligned to the 20x tile grid exercise the background
filter with exact counts.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .ppm import write_ppm
from .stain import od_to_rgb

CLASS_TEXTURES = {"SCC": "clumps", "AC": "bands"}

# Base stain directions before per-slide jitter (unit-normalized below).
H_DIRECTION = (0.65, 0.70, 0.29)
E_DIRECTION = (0.21, 0.80, 0.56)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _smooth_noise(rng, side: int, cells: int, lo: float, hi: float) -> np.ndarray:
    """Bilinear interpolation of a coarse uniform grid."""
    coarse = rng.uniform(lo, hi, size=(cells + 1, cells + 1))
    t = np.linspace(0.0, cells, side, endpoint=False)
    i = np.minimum(t.astype(int), cells - 1)
    f = t - i
    top = coarse[i][:, i] * (1 - f)[None, :] + coarse[i][:, i + 1] * f[None, :]
    bot = coarse[i + 1][:, i] * (1 - f)[None, :] + coarse[i + 1][:, i + 1] * f[None, :]
    return top * (1 - f)[:, None] + bot * f[:, None]


def _clump_field(rng, side: int) -> np.ndarray:
    """Nuclear-dye concentration as scattered round clumps."""
    field = np.zeros((side, side))
    n_clumps = int((side / 40) ** 2 * 1.6)
    yy, xx = np.mgrid[-24:25, -24:25]
    for _ in range(n_clumps):
        cy, cx = rng.integers(0, side, size=2)
        sigma = rng.uniform(6.0, 11.0)
        amp = rng.uniform(0.8, 1.3)
        bump = amp * np.exp(-(xx**2 + yy**2) / (2 * sigma**2))
        y0, y1 = max(0, cy - 24), min(side, cy + 25)
        x0, x1 = max(0, cx - 24), min(side, cx + 25)
        field[y0:y1, x0:x1] += bump[
            y0 - (cy - 24) : y1 - (cy - 24), x0 - (cx - 24) : x1 - (cx - 24)
        ]
    return field


def _band_field(rng, side: int) -> np.ndarray:
    """Nuclear-dye concentration as elongated wavy bands."""
    theta = rng.uniform(0, np.pi)
    wavelength = rng.uniform(45.0, 70.0)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    u = xx * np.cos(theta) + yy * np.sin(theta)
    warp = _smooth_noise(rng, side, cells=6, lo=-18.0, hi=18.0)
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * (u + warp) / wavelength)
    return 1.35 * wave**3


def concentration_fields(rng, side: int, texture: str) -> tuple[np.ndarray, np.ndarray]:
    """(hematoxylin, eosin) concentration maps for one slide."""
    if texture == "clumps":
        c_h = 0.12 + _clump_field(rng, side)
    elif texture == "bands":
        c_h = 0.12 + _band_field(rng, side)
    else:
        raise ValueError(f"unknown texture {texture!r}")
    c_e = 0.40 + _smooth_noise(rng, side, cells=8, lo=0.0, hi=0.45)
    return np.clip(c_h, 0.0, 3.0), c_e


def render_slide(rng, side: int, texture: str) -> np.ndarray:
    """RGB slide pixels with per-slide stain direction and intensity jitter."""
    c_h, c_e = concentration_fields(rng, side, texture)
    h = _unit(np.asarray(H_DIRECTION) + rng.uniform(-0.06, 0.06, 3))
    e = _unit(np.asarray(E_DIRECTION) + rng.uniform(-0.06, 0.06, 3))
    gain = rng.uniform(0.8, 1.25)
    od = gain * (c_h[..., None] * h + c_e[..., None] * e)
    return od_to_rgb(od)


def paint_white_cells(pixels: np.ndarray, rng, grid: int, cell_px: int, n_white: int) -> None:
    """Blank whole tile-grid cells so the filter rejects an exact count."""
    chosen = rng.choice(grid * grid, size=n_white, replace=False)
    for c in np.sort(chosen):
        r, col = divmod(int(c), grid)
        pixels[r * cell_px : (r + 1) * cell_px, col * cell_px : (col + 1) * cell_px] = 255


def generate_toy_slides(
    slides_dir,
    seed: int = 0,
    slides_per_class: int = 5,
    slide_px: int = 1024,
    grid: int = 8,
    white_cells_per_slide: int = 4,
) -> list[Path]:
    """Write the two-class P6 slide corpus under slides_dir/<LABEL>/.

    Each slide is nominally 40x; at 20x it cuts into a grid x grid board
    of (slide_px / grid / 2)-pixel tiles of which white_cells_per_slide
    are full white.
    """
    slides_dir = Path(slides_dir)
    cell_px = slide_px // grid
    written = []
    for label, texture in CLASS_TEXTURES.items():
        class_dir = slides_dir / label
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(slides_per_class):
            rng = np.random.default_rng((seed, label == "AC", i))
            pixels = render_slide(rng, slide_px, texture)
            paint_white_cells(pixels, rng, grid, cell_px, white_cells_per_slide)
            path = class_dir / f"{label.lower()}_{i:02d}.ppm"
            write_ppm(path, pixels)
            written.append(path)
    return written
