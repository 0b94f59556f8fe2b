"""Pyramidal slide reader for a restricted TIFF/BigTIFF subset.

Supported directories are tile-organized, 8-bit RGB, compression none (1)
or deflate (8). Binary P6 rasters are accepted as a single-level fallback.
Every file access is bounds-checked so arbitrary byte mutations of a slide
produce an error, never a crash.
"""
from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import DataError
from .ppm import PpmError, read_ppm_bytes


class ParseError(DataError):
    pass


class Truncated(ParseError):
    pass


class UnknownMagic(ParseError):
    pass


class UnsupportedVersion(ParseError):
    pass


class NoSupportedLevels(DataError):
    pass


class MissingMagnification(DataError):
    pass


class OutOfBounds(DataError):
    pass


class UnsupportedCompression(DataError):
    pass


class DecodeError(DataError):
    pass


# TIFF tag ids used by this reader.
TAG_IMAGE_WIDTH = 256
TAG_IMAGE_LENGTH = 257
TAG_BITS_PER_SAMPLE = 258
TAG_COMPRESSION = 259
TAG_IMAGE_DESCRIPTION = 270
TAG_STRIP_OFFSETS = 273
TAG_SAMPLES_PER_PIXEL = 277
TAG_PLANAR_CONFIG = 284
TAG_PREDICTOR = 317
TAG_TILE_WIDTH = 322
TAG_TILE_LENGTH = 323
TAG_TILE_OFFSETS = 324
TAG_TILE_BYTE_COUNTS = 325

COMPRESSION_NONE = 1
COMPRESSION_DEFLATE = 8

# Byte width of each TIFF field type we can decode.
_TYPE_SIZES = {1: 1, 2: 1, 3: 2, 4: 4, 6: 1, 7: 1, 16: 8}

# Sanity limits keeping mutated inputs from requesting absurd allocations.
MAX_DIRECTORIES = 64
MAX_DIMENSION = 1 << 24
MAX_TILE_DIMENSION = 4096

_APPMAG_RE = re.compile(r"AppMag\s*=\s*([0-9]+(?:\.[0-9]+)?)")


@dataclass(frozen=True)
class LevelInfo:
    index: int
    width_px: int
    height_px: int
    tile_width_px: int  # 0 means strip-organized (unsupported)
    tile_height_px: int
    compression: int
    bits_per_sample: int
    samples_per_pixel: int
    tile_offsets: tuple[int, ...] = field(repr=False, default=())
    tile_byte_counts: tuple[int, ...] = field(repr=False, default=())

    @property
    def tiles_across(self) -> int:
        return -(-self.width_px // self.tile_width_px)

    @property
    def tiles_down(self) -> int:
        return -(-self.height_px // self.tile_height_px)


@dataclass(frozen=True)
class SlidePyramid:
    """Immutable parsed slide; safe to share across threads."""

    slide_id: str
    levels: tuple[LevelInfo, ...]
    native_magnification: Fraction
    source_path: str
    _buf: bytes = field(repr=False, default=b"")
    _fallback: np.ndarray | None = field(repr=False, default=None)
    _byte_order: str = "<"

    def level_magnification(self, level: int) -> Fraction:
        """Magnification of a stored level, scaled by its width ratio."""
        base = self.levels[0].width_px
        return self.native_magnification * Fraction(self.levels[level].width_px, base)


@dataclass(frozen=True)
class Region:
    level: int
    x: int
    y: int
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8


class _Cursor:
    """Bounds-checked little/big-endian reads over an immutable buffer."""

    def __init__(self, buf: bytes, byte_order: str):
        self.buf = buf
        self.bo = byte_order

    def _uint(self, offset: int, size: int) -> int:
        if offset < 0 or offset + size > len(self.buf):
            raise Truncated(f"read of {size} bytes at offset {offset} exceeds file size")
        return int.from_bytes(self.buf[offset : offset + size], "little" if self.bo == "<" else "big")

    def u16(self, offset: int) -> int:
        return self._uint(offset, 2)

    def u32(self, offset: int) -> int:
        return self._uint(offset, 4)

    def u64(self, offset: int) -> int:
        return self._uint(offset, 8)

    def raw(self, offset: int, size: int) -> bytes:
        if offset < 0 or size < 0 or offset + size > len(self.buf):
            raise Truncated(f"read of {size} bytes at offset {offset} exceeds file size")
        return self.buf[offset : offset + size]


def parse_header(buf: bytes) -> tuple[str, bool, int]:
    """Parse the TIFF header.

    Returns (byte_order, is_bigtiff, first_directory_offset) where
    byte_order is a struct-style '<' or '>'.
    """
    if len(buf) < 8:
        raise Truncated("file shorter than the 8-byte TIFF header")
    order_mark = buf[:2]
    if order_mark == b"II":
        bo = "<"
    elif order_mark == b"MM":
        bo = ">"
    else:
        raise UnknownMagic(f"unrecognized byte-order mark {order_mark!r}")
    cur = _Cursor(buf, bo)
    version = cur.u16(2)
    if version == 42:
        return bo, False, cur.u32(4)
    if version == 43:
        # BigTIFF fixes the offset size at 8 and reserves a zero word.
        if len(buf) < 16:
            raise Truncated("file shorter than the 16-byte BigTIFF header")
        if cur.u16(4) != 8 or cur.u16(6) != 0:
            raise ParseError("malformed BigTIFF header constants")
        return bo, True, cur.u64(8)
    raise UnsupportedVersion(f"version word {version} is neither 42 nor 43")


def _read_tag_values(cur: _Cursor, ftype: int, count: int, value_field: bytes, inline: int):
    """Decode one directory entry's values; None when the type is unknown."""
    size = _TYPE_SIZES.get(ftype)
    if size is None:
        return None
    total = size * count
    if total > len(cur.buf):
        raise Truncated("tag payload larger than the file")
    if total <= inline:
        data = value_field[:total]
    else:
        offset = int.from_bytes(value_field, "little" if cur.bo == "<" else "big")
        data = cur.raw(offset, total)
    if ftype in (2, 1, 6, 7):  # ASCII and byte-ish payloads stay raw
        return data
    step = size
    endian = "little" if cur.bo == "<" else "big"
    return tuple(int.from_bytes(data[i : i + step], endian) for i in range(0, total, step))


def _parse_directory(cur: _Cursor, offset: int, bigtiff: bool) -> tuple[dict, int]:
    """Parse one IFD into {tag: values}; returns (tags, next_ifd_offset)."""
    if bigtiff:
        n = cur.u64(offset)
        entry_size, count_size, inline = 20, 8, 8
        base = offset + 8
    else:
        n = cur.u16(offset)
        entry_size, count_size, inline = 12, 4, 4
        base = offset + 2
    end = base + n * entry_size
    if end > len(cur.buf):
        raise Truncated("directory entries exceed the file")
    tags: dict[int, object] = {}
    for i in range(n):
        at = base + i * entry_size
        tag = cur.u16(at)
        ftype = cur.u16(at + 2)
        count = cur._uint(at + 4, count_size)
        value_field = cur.raw(at + 4 + count_size, inline)
        values = _read_tag_values(cur, ftype, count, value_field, inline)
        if values is not None:
            tags[tag] = values
    next_off = cur._uint(end, 8 if bigtiff else 4)
    return tags, next_off


def _scalar(tags: dict, tag: int, default=None):
    v = tags.get(tag)
    if v is None:
        return default
    if isinstance(v, tuple):
        return v[0] if v else default
    return v


def _level_from_tags(index: int, tags: dict) -> LevelInfo | None:
    """Build a LevelInfo when the directory is a supported tiled RGB image."""
    width = _scalar(tags, TAG_IMAGE_WIDTH)
    height = _scalar(tags, TAG_IMAGE_LENGTH)
    if not width or not height:
        return None
    if width > MAX_DIMENSION or height > MAX_DIMENSION:
        return None
    if TAG_TILE_WIDTH not in tags or TAG_TILE_LENGTH not in tags:
        return None  # strip-organized directories are rejected, not converted
    tile_w = _scalar(tags, TAG_TILE_WIDTH, 0)
    tile_h = _scalar(tags, TAG_TILE_LENGTH, 0)
    if tile_w == 0 or tile_h == 0:
        return None
    if tile_w % 16 or tile_h % 16:
        return None  # TIFF 6.0 requires tile dims to be multiples of 16
    if tile_w > MAX_TILE_DIMENSION or tile_h > MAX_TILE_DIMENSION:
        return None
    spp = _scalar(tags, TAG_SAMPLES_PER_PIXEL, 1)
    bits = tags.get(TAG_BITS_PER_SAMPLE, (1,))
    if spp != 3 or not isinstance(bits, tuple) or any(b != 8 for b in bits):
        return None
    compression = _scalar(tags, TAG_COMPRESSION, COMPRESSION_NONE)
    if compression not in (COMPRESSION_NONE, COMPRESSION_DEFLATE):
        return None
    if _scalar(tags, TAG_PLANAR_CONFIG, 1) != 1:
        return None
    if _scalar(tags, TAG_PREDICTOR, 1) != 1:
        return None
    offsets = tags.get(TAG_TILE_OFFSETS)
    counts = tags.get(TAG_TILE_BYTE_COUNTS)
    if not isinstance(offsets, tuple) or not isinstance(counts, tuple):
        return None
    level = LevelInfo(
        index=index,
        width_px=width,
        height_px=height,
        tile_width_px=tile_w,
        tile_height_px=tile_h,
        compression=compression,
        bits_per_sample=8,
        samples_per_pixel=3,
        tile_offsets=offsets,
        tile_byte_counts=counts,
    )
    if len(offsets) != level.tiles_across * level.tiles_down or len(counts) != len(offsets):
        return None
    return level


def extract_magnification(image_description: str) -> Fraction:
    """Pull the scanner magnification from an Aperio-style description tag."""
    m = _APPMAG_RE.search(image_description)
    if not m:
        raise MissingMagnification("no 'AppMag =' token in the image description")
    mag = Fraction(m.group(1))
    if mag <= 0:
        raise MissingMagnification(f"non-positive magnification {mag}")
    return mag


def open_slide_bytes(
    buf: bytes,
    slide_id: str = "<bytes>",
    source_path: str = "<bytes>",
    magnification_override: Fraction | float | None = None,
) -> SlidePyramid:
    """Parse a slide from an in-memory buffer (TIFF family or P6 fallback)."""
    if buf[:2] == b"P6":
        try:
            pixels = read_ppm_bytes(buf)
        except PpmError as exc:
            raise ParseError(str(exc)) from exc
        if magnification_override is None:
            raise MissingMagnification(
                "plain raster slides carry no magnification metadata; pass an override"
            )
        level = LevelInfo(
            index=0,
            width_px=pixels.shape[1],
            height_px=pixels.shape[0],
            tile_width_px=0,
            tile_height_px=0,
            compression=COMPRESSION_NONE,
            bits_per_sample=8,
            samples_per_pixel=3,
        )
        return SlidePyramid(
            slide_id=slide_id,
            levels=(level,),
            native_magnification=Fraction(magnification_override),
            source_path=source_path,
            _fallback=pixels,
        )

    bo, bigtiff, dir_offset = parse_header(buf)
    cur = _Cursor(buf, bo)
    levels: list[LevelInfo] = []
    descriptions: list[bytes] = []
    seen: set[int] = set()
    while dir_offset and dir_offset not in seen and len(seen) < MAX_DIRECTORIES:
        seen.add(dir_offset)
        tags, dir_offset = _parse_directory(cur, dir_offset, bigtiff)
        level = _level_from_tags(len(levels), tags)
        if level is not None:
            levels.append(level)
            desc = tags.get(TAG_IMAGE_DESCRIPTION, b"")
            descriptions.append(desc if isinstance(desc, bytes) else b"")
    if not levels:
        raise NoSupportedLevels("no directory is a supported tiled 8-bit RGB image")

    order = sorted(range(len(levels)), key=lambda i: -levels[i].width_px)
    deduped: list[int] = []
    for i in order:
        if deduped and levels[deduped[-1]].width_px == levels[i].width_px:
            continue  # keep the first of equal-width duplicates
        deduped.append(i)
    if magnification_override is not None:
        magnification = Fraction(magnification_override)
    else:
        # Prefer the largest level's description, but accept the token from
        # any level; only the baseline normally carries scanner metadata.
        magnification = None
        for i in deduped:
            text = descriptions[i].split(b"\x00", 1)[0].decode("ascii", errors="replace")
            try:
                magnification = extract_magnification(text)
                break
            except MissingMagnification:
                continue
        if magnification is None:
            raise MissingMagnification(
                "no 'AppMag =' token in any level description and no override given"
            )
    sorted_levels = tuple(
        LevelInfo(
            index=rank,
            width_px=levels[i].width_px,
            height_px=levels[i].height_px,
            tile_width_px=levels[i].tile_width_px,
            tile_height_px=levels[i].tile_height_px,
            compression=levels[i].compression,
            bits_per_sample=8,
            samples_per_pixel=3,
            tile_offsets=levels[i].tile_offsets,
            tile_byte_counts=levels[i].tile_byte_counts,
        )
        for rank, i in enumerate(deduped)
    )
    return SlidePyramid(
        slide_id=slide_id,
        levels=sorted_levels,
        native_magnification=magnification,
        source_path=source_path,
        _buf=buf,
        _byte_order=bo,
    )


def open_slide(path, magnification_override: Fraction | float | None = None) -> SlidePyramid:
    """Open a slide file and parse its pyramid."""
    p = Path(path)
    try:
        buf = p.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {p}: {exc}") from exc
    return open_slide_bytes(
        buf,
        slide_id=p.stem,
        source_path=str(p),
        magnification_override=magnification_override,
    )


def _decode_tile(slide: SlidePyramid, level: LevelInfo, tile_index: int) -> np.ndarray:
    offset = level.tile_offsets[tile_index]
    count = level.tile_byte_counts[tile_index]
    if offset < 0 or count < 0 or offset + count > len(slide._buf):
        raise Truncated(f"tile {tile_index} data lies outside the file")
    data = slide._buf[offset : offset + count]
    expected = level.tile_width_px * level.tile_height_px * 3
    if level.compression == COMPRESSION_DEFLATE:
        try:
            # max_length caps decompression so crafted streams cannot balloon.
            decomp = zlib.decompressobj()
            data = decomp.decompress(data, expected)
        except zlib.error as exc:
            raise DecodeError(f"tile {tile_index}: bad deflate stream: {exc}") from exc
    elif level.compression != COMPRESSION_NONE:
        raise UnsupportedCompression(f"compression {level.compression}")
    if len(data) != expected:
        raise DecodeError(
            f"tile {tile_index} decoded to {len(data)} bytes, expected {expected}"
        )
    arr = np.frombuffer(data, dtype=np.uint8)
    return arr.reshape(level.tile_height_px, level.tile_width_px, 3)


def read_region(slide: SlidePyramid, level: int, x: int, y: int, width: int, height: int) -> Region:
    """Decode exactly the file tiles covering the request and crop to it."""
    if level < 0 or level >= len(slide.levels):
        raise OutOfBounds(f"level {level} does not exist")
    info = slide.levels[level]
    if width < 1 or height < 1:
        raise OutOfBounds("zero-area region request")
    if x < 0 or y < 0 or x + width > info.width_px or y + height > info.height_px:
        raise OutOfBounds(
            f"region {x},{y} {width}x{height} outside level {level} "
            f"({info.width_px}x{info.height_px})"
        )

    if slide._fallback is not None:
        pixels = slide._fallback[y : y + height, x : x + width].copy()
        return Region(level, x, y, width, height, pixels)

    tw, th = info.tile_width_px, info.tile_height_px
    out = np.empty((height, width, 3), dtype=np.uint8)
    for ty in range(y // th, (y + height - 1) // th + 1):
        for tx in range(x // tw, (x + width - 1) // tw + 1):
            tile = _decode_tile(slide, info, ty * info.tiles_across + tx)
            # Intersection of the request with this file tile.
            x0 = max(x, tx * tw)
            y0 = max(y, ty * th)
            x1 = min(x + width, (tx + 1) * tw)
            y1 = min(y + height, (ty + 1) * th)
            out[y0 - y : y1 - y, x0 - x : x1 - x] = tile[
                y0 - ty * th : y1 - ty * th, x0 - tx * tw : x1 - tx * tw
            ]
    return Region(level, x, y, width, height, out)
