"""Tile manifest, TCGA barcode parsing, input resizing, stratified split."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import DataError
from .tiler import rescale_bicubic

CLASS_LABELS = ("SCC", "AC")
SPLITS = ("train", "validation", "test", "unassigned")

MANIFEST_COLUMNS = (
    "slide_id",
    "tile_path",
    "class_label",
    "origin_x",
    "origin_y",
    "tile_size_px",
    "magnification",
    "tissue_fraction",
    "split",
    "rejected_reason",
)


class MalformedBarcode(DataError):
    pass


class NonSquareInput(DataError):
    pass


class InsufficientRecords(DataError):
    pass


class ManifestError(DataError):
    pass


@dataclass(frozen=True)
class TileRecord:
    slide_id: str
    tile_path: str
    class_label: str
    origin_x: int
    origin_y: int
    tile_size_px: int
    magnification: Fraction
    tissue_fraction: float
    split: str = "unassigned"
    rejected_reason: str = ""

    def __post_init__(self):
        if self.class_label not in CLASS_LABELS:
            raise ManifestError(f"unknown class label {self.class_label!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")
        if not 0.0 <= self.tissue_fraction <= 1.0:
            raise ManifestError(f"tissue fraction {self.tissue_fraction} outside [0, 1]")

    @property
    def kept(self) -> bool:
        return self.rejected_reason == ""


@dataclass(frozen=True)
class BarcodeFields:
    project: str
    tissue_source_site: str
    participant: str
    sample: str
    vial: str
    portion: str
    analyte: str
    slide_code: str

    @property
    def is_ffpe(self) -> bool:
        """DX slides are diagnostic FFPE; TS/BS are frozen sections."""
        return re.fullmatch(r"DX\d+", self.slide_code) is not None

    @property
    def is_frozen(self) -> bool:
        return re.fullmatch(r"(TS|BS)\d+", self.slide_code) is not None


def parse_tcga_slide_barcode(barcode: str) -> BarcodeFields:
    """Split PROJ-TSS-PARTICIPANT-SAMPLEVIAL-PORTION-SLIDE on dashes."""
    parts = barcode.split("-")
    if len(parts) != 6 or any(not p for p in parts):
        raise MalformedBarcode(
            f"{barcode!r}: expected 6 non-empty dash-separated segments, got {len(parts)}"
        )
    project, tss, participant, sample_vial, portion_analyte, slide_code = parts
    m = re.fullmatch(r"(\d+)([A-Z]*)", sample_vial)
    if not m:
        raise MalformedBarcode(f"{barcode!r}: bad sample/vial segment {sample_vial!r}")
    sample, vial = m.group(1), m.group(2)
    m = re.fullmatch(r"(\d+)([A-Z]*)", portion_analyte)
    if not m:
        raise MalformedBarcode(f"{barcode!r}: bad portion segment {portion_analyte!r}")
    portion, analyte = m.group(1), m.group(2)
    return BarcodeFields(
        project=project,
        tissue_source_site=tss,
        participant=participant,
        sample=sample,
        vial=vial,
        portion=portion,
        analyte=analyte,
        slide_code=slide_code,
    )


def resize_to_input(pixels: np.ndarray, input_size: int = 224) -> np.ndarray:
    """Bicubic-resize a square tile to the network input size."""
    h, w = pixels.shape[:2]
    if h != w:
        raise NonSquareInput(f"tile is {w}x{h}, expected a square")
    if h == input_size:
        return pixels.copy()
    out = rescale_bicubic(pixels, input_size / h)
    assert out.shape[:2] == (input_size, input_size)
    return out


def stratified_split(
    records: list[TileRecord],
    counts_per_class: dict[str, int],
    seed: int,
    by_slide: bool = False,
) -> list[TileRecord]:
    """Assign exact per-class counts to train/validation/test.

    Within each class the records are shuffled by a seeded generator and
    assigned in order train -> validation -> test; leftovers stay
    unassigned. Rejected records are never assigned. With by_slide, whole
    slides are dealt to the split with the largest remaining deficit, so
    counts become targets rather than exact.
    """
    for name in ("train", "validation", "test"):
        if name not in counts_per_class or counts_per_class[name] < 0:
            raise DataError(f"counts_per_class needs a nonnegative {name!r} entry")
    total_requested = sum(counts_per_class.values())
    rng = np.random.default_rng(seed)

    new_split = {}
    for label in CLASS_LABELS:
        idx = [i for i, r in enumerate(records) if r.class_label == label and r.kept]
        if not idx:
            continue
        if len(idx) < total_requested:
            raise InsufficientRecords(
                f"class {label} has {len(idx)} usable records, "
                f"{total_requested} requested"
            )
        if by_slide:
            assignments = _assign_by_slide(records, idx, counts_per_class, rng)
        else:
            order = [idx[j] for j in rng.permutation(len(idx))]
            assignments = {}
            at = 0
            for name in ("train", "validation", "test"):
                for i in order[at : at + counts_per_class[name]]:
                    assignments[i] = name
                at += counts_per_class[name]
        new_split.update(assignments)

    return [
        replace(r, split=new_split.get(i, "unassigned")) if r.kept else replace(r, split="unassigned")
        for i, r in enumerate(records)
    ]


def _assign_by_slide(records, idx, counts_per_class, rng):
    """Deal whole slides toward per-split targets (greatest deficit first)."""
    slides: dict[str, list[int]] = {}
    for i in idx:
        slides.setdefault(records[i].slide_id, []).append(i)
    slide_ids = sorted(slides)
    order = [slide_ids[j] for j in rng.permutation(len(slide_ids))]
    deficit = {name: counts_per_class[name] for name in ("train", "validation", "test")}
    assignments = {}
    for sid in order:
        name = max(deficit, key=lambda n: deficit[n])
        if deficit[name] <= 0:
            continue
        for i in slides[sid]:
            assignments[i] = name
        deficit[name] -= len(slides[sid])
    return assignments


def _format_value(column: str, value) -> str:
    if column == "magnification":
        return f"{float(value):g}"
    if column == "tissue_fraction":
        return f"{value:.6f}"
    return str(value)


def write_manifest(path, records: list[TileRecord]) -> None:
    """Tab-separated, one header line, columns in TileRecord field order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            writer.writerow([_format_value(c, getattr(r, c)) for c in MANIFEST_COLUMNS])


def read_manifest(path) -> list[TileRecord]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_COLUMNS:
            raise ManifestError(f"{path}: unexpected manifest header {header}")
        records = []
        for row in reader:
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(f"{path}: row has {len(row)} columns")
            d = dict(zip(MANIFEST_COLUMNS, row))
            records.append(
                TileRecord(
                    slide_id=d["slide_id"],
                    tile_path=d["tile_path"],
                    class_label=d["class_label"],
                    origin_x=int(d["origin_x"]),
                    origin_y=int(d["origin_y"]),
                    tile_size_px=int(d["tile_size_px"]),
                    magnification=Fraction(d["magnification"]),
                    tissue_fraction=float(d["tissue_fraction"]),
                    split=d["split"],
                    rejected_reason=d["rejected_reason"],
                )
            )
    return records
