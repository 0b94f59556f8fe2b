"""Background rejection by RGB statistics and the tissue-fraction rule."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import DataError

DEFAULT_WHITE_THRESHOLD = 220
DEFAULT_MIN_TISSUE = 0.90

REASON_FULL_WHITE = "full_white"
REASON_LOW_TISSUE = "low_tissue"


class EmptyTile(DataError):
    pass


@dataclass(frozen=True)
class TissueStats:
    tissue_fraction: float
    mean_rgb: tuple[float, float, float]
    is_full_white: bool


def classify_pixel(rgb, white_threshold: int = DEFAULT_WHITE_THRESHOLD) -> str:
    """'background' iff every channel clears the white threshold."""
    return "background" if min(rgb) >= white_threshold else "tissue"


def background_mask(pixels: np.ndarray, white_threshold: int = DEFAULT_WHITE_THRESHOLD) -> np.ndarray:
    return pixels.min(axis=-1) >= white_threshold


def tile_stats(pixels: np.ndarray, white_threshold: int = DEFAULT_WHITE_THRESHOLD) -> TissueStats:
    """Count tissue vs background pixels of an (H, W, 3) tile."""
    if pixels.size == 0:
        raise EmptyTile("cannot compute statistics of an empty tile")
    bg = background_mask(pixels, white_threshold)
    tissue_fraction = 1.0 - float(bg.mean())
    mean = pixels.reshape(-1, 3).mean(axis=0)
    return TissueStats(
        tissue_fraction=tissue_fraction,
        mean_rgb=(float(mean[0]), float(mean[1]), float(mean[2])),
        is_full_white=bool(bg.all()),
    )


@dataclass(frozen=True)
class FilterOutcome:
    record: object
    pixels: np.ndarray
    stats: TissueStats
    kept: bool

    @property
    def rejected_reason(self) -> str:
        if self.kept:
            return ""
        return REASON_FULL_WHITE if self.stats.is_full_white else REASON_LOW_TISSUE


def filter_tiles(
    tiles: Iterable[tuple[object, np.ndarray]],
    min_tissue: float = DEFAULT_MIN_TISSUE,
    white_threshold: int = DEFAULT_WHITE_THRESHOLD,
) -> Iterator[FilterOutcome]:
    """Annotate a tile stream; kept iff tissue_fraction >= min_tissue."""
    if not 0.0 <= min_tissue <= 1.0:
        raise DataError(f"min_tissue must lie in [0, 1], got {min_tissue}")
    for record, pixels in tiles:
        stats = tile_stats(pixels, white_threshold)
        yield FilterOutcome(record, pixels, stats, stats.tissue_fraction >= min_tissue)


def partition_tiles(tiles, min_tissue=DEFAULT_MIN_TISSUE, white_threshold=DEFAULT_WHITE_THRESHOLD):
    """Materialize filter_tiles into (kept, rejected) lists, order preserved."""
    kept, rejected = [], []
    for outcome in filter_tiles(tiles, min_tissue, white_threshold):
        (kept if outcome.kept else rejected).append(outcome)
    return kept, rejected
