import numpy as np
import pytest

from histotile.stain import (
    DegenerateStains,
    InsufficientTissue,
    InvalidProfile,
    StainProfile,
    default_reference_profile,
    estimate_stain_matrix,
    load_profile,
    normalize_od,
    normalize_tile,
    od_to_rgb,
    rgb_to_od,
    sample_tissue_pixels,
    save_profile,
    stain_concentrations,
)

from stain_oracle import angle_between, random_stain_pair, two_stain_image, unit


class TestOdTransforms:
    def test_white_has_zero_absorbance(self):
        assert rgb_to_od(255) == 0.0

    def test_known_value(self):
        assert rgb_to_od(26) == pytest.approx(0.9915668324631373, rel=1e-12)

    def test_zero_clamped(self):
        assert rgb_to_od(0) == pytest.approx(2.406540180433955, rel=1e-12)

    def test_monotone_decreasing(self):
        od = rgb_to_od(np.arange(1, 256))
        assert np.all(np.diff(od) < 0)

    def test_od_to_rgb_cases(self):
        assert od_to_rgb(0.0) == 255
        assert od_to_rgb(1.0) == 26  # 25.5 rounds half away from zero
        assert od_to_rgb(10.0) == 0

    def test_round_trip_within_one_level(self):
        v = np.arange(1, 256)
        back = od_to_rgb(rgb_to_od(v)).astype(int)
        assert np.max(np.abs(back - v)) <= 1


class TestProfile:
    def test_default_reference_columns_are_unit(self):
        p = default_reference_profile()
        assert np.allclose(np.linalg.norm(p.stain_matrix, axis=0), 1.0, atol=1e-12)
        assert np.all(p.stain_matrix >= 0)
        assert p.max_concentrations == pytest.approx((1.9705, 1.0308))

    def test_non_unit_columns_rejected(self):
        with pytest.raises(InvalidProfile):
            StainProfile(np.full((3, 2), 0.5), np.ones(2))

    def test_save_load_round_trip(self, tmp_path):
        p = default_reference_profile()
        path = tmp_path / "ref.profile"
        save_profile(path, p)
        q = load_profile(path)
        assert np.array_equal(p.stain_matrix, q.stain_matrix)
        assert np.array_equal(p.max_concentrations, q.max_concentrations)
        assert len(path.read_text().splitlines()) == 8

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.profile"
        path.write_text("1\n2\n3\n")
        with pytest.raises(InvalidProfile):
            load_profile(path)


class TestEstimate:
    def test_recovers_generator_vectors(self, rng):
        h, e = random_stain_pair(rng)
        img, _ = two_stain_image(rng, h, e)
        profile = estimate_stain_matrix(img)
        assert angle_between(profile.stain_matrix[:, 0], h) <= 0.02
        assert angle_between(profile.stain_matrix[:, 1], e) <= 0.02

    def test_all_white_insufficient(self):
        img = np.full((16, 16, 3), 255, dtype=np.uint8)
        with pytest.raises(InsufficientTissue):
            estimate_stain_matrix(img)

    def test_single_stain_degenerate(self, rng):
        h = unit((0.65, 0.70, 0.29))
        conc = rng.uniform(0.3, 1.2, size=(1024, 1))
        od = conc * h
        img = np.clip(np.floor(255 * 10.0**-od + 0.5), 0, 255).astype(np.uint8)
        with pytest.raises(DegenerateStains):
            estimate_stain_matrix(img.reshape(32, 32, 3))

    def test_hematoxylin_column_has_larger_red_od(self, rng):
        h, e = random_stain_pair(rng)
        img, _ = two_stain_image(rng, h, e)
        m = estimate_stain_matrix(img).stain_matrix
        assert m[0, 0] >= m[0, 1]

    def test_max_concentrations_track_generator(self, rng):
        h, e = random_stain_pair(rng)
        img, conc = two_stain_image(rng, h, e)
        profile = estimate_stain_matrix(img)
        want = np.percentile(conc, 99, axis=0)
        assert profile.max_concentrations == pytest.approx(want, rel=0.05)


class TestNormalize:
    def test_white_stays_white(self):
        ref = default_reference_profile()
        img = np.full((4, 4, 3), 255, dtype=np.uint8)
        out = normalize_tile(img, ref, ref)
        assert np.all(out == 255)

    def test_self_target_near_identity(self, rng):
        h, e = random_stain_pair(rng)
        img, _ = two_stain_image(rng, h, e)
        p = estimate_stain_matrix(img)
        out = normalize_tile(img, p, p)
        mae = np.mean(np.abs(out.astype(float) - img.astype(float)))
        assert mae <= 2.0

    def test_doubled_reference_concentrations_double_od(self, rng):
        h, e = random_stain_pair(rng)
        img, _ = two_stain_image(rng, h, e)
        src = estimate_stain_matrix(img)
        ref = default_reference_profile()
        ref2 = StainProfile(ref.stain_matrix, ref.max_concentrations * 2.0)
        od = rgb_to_od(img.reshape(-1, 3))
        base = normalize_od(od, src, ref)
        doubled = normalize_od(od, src, ref2)
        assert np.max(np.abs(doubled - 2.0 * base)) < 1e-6

    def test_output_shape_and_determinism(self, rng):
        h, e = random_stain_pair(rng)
        img, _ = two_stain_image(rng, h, e, side=32)
        src = estimate_stain_matrix(img)
        ref = default_reference_profile()
        a = normalize_tile(img, src, ref)
        b = normalize_tile(img, src, ref)
        assert a.shape == img.shape
        assert np.array_equal(a, b)

    def test_normalized_image_reestimates_reference_concentrations(self, rng):
        h, e = random_stain_pair(rng)
        img, _ = two_stain_image(rng, h, e)
        src = estimate_stain_matrix(img)
        ref = default_reference_profile()
        out = normalize_tile(img, src, ref)
        p2 = estimate_stain_matrix(out)
        assert p2.max_concentrations == pytest.approx(ref.max_concentrations, rel=0.05)


class TestSampling:
    def test_pools_only_tissue_and_is_deterministic(self, rng):
        h, e = random_stain_pair(rng)
        img, _ = two_stain_image(rng, h, e, side=32)
        white = np.full((32, 32, 3), 255, dtype=np.uint8)
        a = sample_tissue_pixels([img, white], max_pixels=500, seed=7)
        b = sample_tissue_pixels([img, white], max_pixels=500, seed=7)
        assert np.array_equal(a, b)
        assert len(a) == 500
        assert np.all(a.min(axis=1) < 220)

    def test_all_white_raises(self):
        white = np.full((8, 8, 3), 255, dtype=np.uint8)
        with pytest.raises(InsufficientTissue):
            sample_tissue_pixels([white])
