"""Binary PPM (P6, maxval 255) reading and writing.

P6 is the lossless raster format used for tile files and accepted as the
plain-slide fallback by the reader.
"""
from __future__ import annotations

import numpy as np

from .errors import DataError


class PpmError(DataError):
    pass


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Return the next header token, skipping whitespace and # comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise PpmError("truncated PPM header")
    return buf[start:pos], pos


def read_ppm_bytes(buf: bytes) -> np.ndarray:
    """Decode a binary P6 buffer into an (H, W, 3) uint8 array."""
    if buf[:2] != b"P6":
        raise PpmError("not a P6 file")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _next_token(buf, pos)
        if not tok.isdigit():
            raise PpmError(f"bad PPM header token {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise PpmError(f"unsupported maxval {maxval}, only 255 is accepted")
    if width < 1 or height < 1:
        raise PpmError("degenerate PPM dimensions")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    if len(buf) - pos < need:
        raise PpmError("truncated PPM pixel data")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return pixels.reshape(height, width, 3).copy()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_ppm_bytes(fh.read())


def write_ppm_bytes(pixels: np.ndarray) -> bytes:
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise PpmError("expected an (H, W, 3) array")
    arr = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = arr.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes()


def write_ppm(path, pixels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(write_ppm_bytes(pixels))
