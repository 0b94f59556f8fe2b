"""Reader tests: header parsing, pyramid construction, region decode, fuzz."""
import numpy as np
import pytest

from histotile import reader
from histotile.ppm import write_ppm
from histotile.reader import (
    DecodeError,
    MissingMagnification,
    NoSupportedLevels,
    OutOfBounds,
    ParseError,
    Truncated,
    UnknownMagic,
    UnsupportedVersion,
    extract_magnification,
    open_slide,
    open_slide_bytes,
    parse_header,
    read_region,
)

from conftest import random_rgb
from tiff_writer import write_tiled_tiff


class TestParseHeader:
    def test_classic_little_endian(self):
        buf = b"II" + (42).to_bytes(2, "little") + (8).to_bytes(4, "little")
        assert parse_header(buf) == ("<", False, 8)

    def test_bigtiff_big_endian(self):
        buf = b"MM" + (43).to_bytes(2, "big") + (8).to_bytes(2, "big")
        buf += (0).to_bytes(2, "big") + (16).to_bytes(8, "big")
        assert parse_header(buf) == (">", True, 16)

    def test_unknown_magic(self):
        with pytest.raises(UnknownMagic):
            parse_header(b"XXer" + bytes(8))

    def test_unsupported_version(self):
        buf = b"II" + (44).to_bytes(2, "little") + bytes(4)
        with pytest.raises(UnsupportedVersion):
            parse_header(buf)

    def test_truncated(self):
        with pytest.raises(Truncated):
            parse_header(b"II*")

    def test_zero_bytes(self):
        with pytest.raises(ParseError):
            open_slide_bytes(b"")


class TestMagnification:
    def test_aperio_style(self):
        desc = "Aperio Image Library v12|Filename=x|AppMag = 40|MPP = 0.25"
        assert extract_magnification(desc) == 40

    def test_fractional(self):
        assert extract_magnification("AppMag = 20.0") == 20

    def test_missing(self):
        with pytest.raises(MissingMagnification):
            extract_magnification("no such token")


def two_level_slide(rng, **kwargs):
    big = random_rgb(rng, 320, 320)
    small = random_rgb(rng, 80, 80)
    buf = write_tiled_tiff(
        [big, small], tile_size=(64, 64), description="scan|AppMag = 40|", **kwargs
    )
    return buf, big, small


@pytest.mark.parametrize("byte_order", ["<", ">"])
@pytest.mark.parametrize("bigtiff", [False, True])
@pytest.mark.parametrize("compression", ["none", "deflate"])
def test_round_trip_all_variants(rng, byte_order, bigtiff, compression):
    buf, big, small = two_level_slide(
        rng, byte_order=byte_order, bigtiff=bigtiff, compression=compression
    )
    slide = open_slide_bytes(buf)
    assert [lv.width_px for lv in slide.levels] == [320, 80]
    assert slide.native_magnification == 40
    full0 = read_region(slide, 0, 0, 0, 320, 320)
    full1 = read_region(slide, 1, 0, 0, 80, 80)
    assert np.array_equal(full0.pixels, big)
    assert np.array_equal(full1.pixels, small)


def test_open_slide_from_path(rng, tmp_path):
    buf, big, _ = two_level_slide(rng)
    path = tmp_path / "fixture.tiff"
    path.write_bytes(buf)
    slide = open_slide(path)
    assert slide.slide_id == "fixture"
    assert np.array_equal(read_region(slide, 0, 0, 0, 320, 320).pixels, big)


def test_levels_sorted_decreasing_even_if_written_small_first(rng):
    small = random_rgb(rng, 80, 80)
    big = random_rgb(rng, 160, 160)
    buf = write_tiled_tiff(
        [small, big], tile_size=(16, 16), description="AppMag = 20"
    )
    slide = open_slide_bytes(buf)
    assert [lv.width_px for lv in slide.levels] == [160, 80]
    assert slide.level_magnification(1) == 10


def test_crop_consistency_across_tile_boundary(rng):
    buf, big, _ = two_level_slide(rng)
    slide = open_slide_bytes(buf)
    full = read_region(slide, 0, 0, 0, 320, 320).pixels
    # 100x100 read spanning the 64px file-tile boundary
    window = read_region(slide, 0, 30, 50, 100, 100).pixels
    assert np.array_equal(window, full[50:150, 30:130])


def test_crop_consistency_many_windows(rng):
    buf, big, _ = two_level_slide(rng)
    slide = open_slide_bytes(buf)
    full = read_region(slide, 0, 0, 0, 320, 320).pixels
    for _ in range(25):
        w = int(rng.integers(1, 321))
        h = int(rng.integers(1, 321))
        x = int(rng.integers(0, 321 - w))
        y = int(rng.integers(0, 321 - h))
        got = read_region(slide, 0, x, y, w, h).pixels
        assert np.array_equal(got, full[y : y + h, x : x + w])


def test_region_errors(rng):
    buf, _, _ = two_level_slide(rng)
    slide = open_slide_bytes(buf)
    with pytest.raises(OutOfBounds):
        read_region(slide, 0, 0, 0, 0, 10)  # zero-area
    with pytest.raises(OutOfBounds):
        read_region(slide, 0, 300, 300, 100, 100)
    with pytest.raises(OutOfBounds):
        read_region(slide, 5, 0, 0, 1, 1)


def test_magnification_override_beats_missing_metadata(rng):
    img = random_rgb(rng, 64, 64)
    buf = write_tiled_tiff([img], tile_size=(32, 32), description="nothing here")
    with pytest.raises(MissingMagnification):
        open_slide_bytes(buf)
    slide = open_slide_bytes(buf, magnification_override=20)
    assert slide.native_magnification == 20


def test_ppm_fallback(rng, tmp_path):
    img = random_rgb(rng, 48, 56)
    path = tmp_path / "plain.ppm"
    write_ppm(path, img)
    with pytest.raises(MissingMagnification):
        open_slide(path)
    slide = open_slide(path, magnification_override=20)
    assert len(slide.levels) == 1
    assert (slide.levels[0].width_px, slide.levels[0].height_px) == (56, 48)
    assert slide.native_magnification == 20
    assert np.array_equal(read_region(slide, 0, 4, 8, 20, 30).pixels, img[8:38, 4:24])


def test_strip_organized_rejected():
    # No TileWidth/TileLength tags: directory must not become a level.
    bo = "little"
    buf = bytearray(b"II" + (42).to_bytes(2, bo) + (8).to_bytes(4, bo))
    entries = [
        (256, 4, 1, (16).to_bytes(4, bo)),
        (257, 4, 1, (16).to_bytes(4, bo)),
        (273, 4, 1, (0).to_bytes(4, bo)),
    ]
    buf += len(entries).to_bytes(2, bo)
    for tag, t, c, v in entries:
        buf += tag.to_bytes(2, bo) + t.to_bytes(2, bo) + c.to_bytes(4, bo) + v
    buf += (0).to_bytes(4, bo)
    with pytest.raises(NoSupportedLevels):
        open_slide_bytes(bytes(buf))


def test_corrupt_tile_data_is_decode_error(rng):
    buf, _, _ = two_level_slide(rng, compression="deflate")
    slide = open_slide_bytes(buf)
    off = slide.levels[0].tile_offsets[0]
    broken = bytearray(buf)
    broken[off : off + 8] = b"\xff" * 8
    slide2 = open_slide_bytes(bytes(broken))
    with pytest.raises((DecodeError, Truncated)):
        read_region(slide2, 0, 0, 0, 64, 64)


def test_fuzz_mutations_never_crash(rng):
    """Smoke-scale fuzz; the acceptance suite runs the 10k-input version."""
    buf, _, _ = two_level_slide(rng)
    run_fuzz(buf, rng, iterations=500)


def run_fuzz(base: bytes, rng, iterations: int) -> int:
    """Mutate a valid slide buffer; parsing must error cleanly or succeed."""
    survived = 0
    for _ in range(iterations):
        mutated = bytearray(base)
        kind = rng.integers(0, 4)
        if kind == 0:  # random byte flips
            for _ in range(int(rng.integers(1, 16))):
                mutated[int(rng.integers(0, len(mutated)))] = int(rng.integers(0, 256))
        elif kind == 1:  # truncation
            mutated = mutated[: int(rng.integers(0, len(mutated)))]
        elif kind == 2:  # header-area corruption
            for _ in range(int(rng.integers(1, 8))):
                mutated[int(rng.integers(0, min(64, len(mutated))))] = int(rng.integers(0, 256))
        else:  # splice a random window elsewhere
            n = int(rng.integers(1, 64))
            src = int(rng.integers(0, len(mutated) - n))
            dst = int(rng.integers(0, len(mutated) - n))
            mutated[dst : dst + n] = mutated[src : src + n]
        try:
            slide = open_slide_bytes(bytes(mutated))
            lv = slide.levels[0]
            read_region(slide, 0, 0, 0, min(64, lv.width_px), min(64, lv.height_px))
            survived += 1
        except reader.DataError:
            pass  # clean, typed failure is the contract
    return survived
