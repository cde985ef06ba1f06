"""Color pipeline: packing, conversions, file formats."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demoire import color as C

import oracles


def rng(seed=0):
    return np.random.default_rng(seed)


def random_bayer(seed=0, shape=(8, 8), black=64, white=1023):
    d = rng(seed).integers(black, white + 1, size=shape).astype(np.uint16)
    return C.BayerImage(data=d, black_level=black, white_level=white)


class TestPackRggb:
    def test_2x2_definition(self):
        b = C.BayerImage(data=np.array([[100, 200], [300, 400]],
                                       dtype=np.uint16),
                         black_level=0, white_level=1023)
        p = C.pack_rggb(b).tensor
        assert p.shape == (4, 1, 1)
        np.testing.assert_allclose(
            p[:, 0, 0], np.array([100, 200, 300, 400]) / 1023.0, rtol=1e-6)

    def test_all_black_level(self):
        b = C.BayerImage(data=np.full((4, 4), 64, dtype=np.uint16))
        p = C.pack_rggb(b).tensor
        np.testing.assert_array_equal(p, np.zeros((4, 2, 2), np.float32))

    def test_clamps_above_white(self):
        b = C.BayerImage(data=np.full((2, 2), 2000, dtype=np.uint16),
                         black_level=64, white_level=1023)
        p = C.pack_rggb(b).tensor
        np.testing.assert_array_equal(p, np.ones((4, 1, 1), np.float32))

    def test_unpack_round_trip(self):
        b = random_bayer(seed=1, shape=(4, 4))
        packed = C.pack_rggb(b)
        back = C.unpack_rggb(packed)
        np.testing.assert_array_equal(back.data, b.data)

    def test_odd_dimensions_rejected(self):
        b = C.BayerImage(data=np.zeros((3, 4), dtype=np.uint16))
        with pytest.raises(ValueError):
            C.pack_rggb(b)

    def test_unknown_cfa_rejected(self):
        b = C.BayerImage(data=np.zeros((4, 4), dtype=np.uint16), cfa="GRBG")
        with pytest.raises(ValueError):
            C.pack_rggb(b)

    def test_output_in_unit_range(self):
        p = C.pack_rggb(random_bayer(seed=2)).tensor
        assert p.min() >= 0.0 and p.max() <= 1.0


class TestBayerToYcc:
    def test_gray_axis(self):
        v = 500
        b = C.BayerImage(data=np.full((4, 4), v, dtype=np.uint16))
        y = C.bayer_to_ycc(b)
        expect_y = (v - 64) / 959.0
        np.testing.assert_allclose(y[0], expect_y, atol=1e-6)
        np.testing.assert_allclose(y[1:], 0.0, atol=1e-7)

    def test_all_zeros(self):
        b = C.BayerImage(data=np.full((4, 4), 64, dtype=np.uint16))
        np.testing.assert_array_equal(C.bayer_to_ycc(b),
                                      np.zeros((3, 2, 2), np.float32))

    def test_matches_matrix_oracle(self):
        b = random_bayer(seed=3, shape=(6, 6))
        got = C.bayer_to_ycc(b)
        rgb = C.bayer_to_rgb_half(b)
        ref = oracles.srgb_to_ycc_ref(rgb)
        np.testing.assert_allclose(got, ref, atol=1e-6)

    def test_green_averaging(self):
        d = np.zeros((2, 2), dtype=np.uint16)
        d[0, 1] = 1023  # G1 full scale
        d[1, 0] = 64    # G2 at black
        b = C.BayerImage(data=d)
        rgb = C.bayer_to_rgb_half(b)
        np.testing.assert_allclose(rgb[1, 0, 0], 0.5, atol=1e-6)


class TestSrgbYccRoundTrip:
    def test_white_maps_to_y1(self):
        img = np.ones((3, 2, 2), dtype=np.float32)
        y = C.srgb_to_ycc(img)
        np.testing.assert_allclose(y[0], 1.0, atol=1e-6)
        np.testing.assert_allclose(y[1:], 0.0, atol=1e-6)

    def test_pure_red(self):
        img = np.zeros((3, 1, 1), dtype=np.float32)
        img[0] = 1.0
        y = C.srgb_to_ycc(img)
        np.testing.assert_allclose(y[0, 0, 0], 0.299, atol=1e-6)
        np.testing.assert_allclose(y[2, 0, 0], 0.713 * 0.701, atol=1e-6)

    def test_round_trip_identity(self):
        img = rng(4).uniform(size=(3, 5, 7)).astype(np.float32)
        back = C.ycc_to_srgb(C.srgb_to_ycc(img))
        np.testing.assert_allclose(back, img, atol=1e-6)

    def test_matches_matrix_oracle(self):
        img = rng(5).uniform(size=(3, 4, 4)).astype(np.float32)
        np.testing.assert_allclose(C.srgb_to_ycc(img),
                                   oracles.srgb_to_ycc_ref(img), atol=1e-6)

    def test_channel_ranges(self):
        img = rng(6).uniform(size=(3, 16, 16)).astype(np.float32)
        y = C.srgb_to_ycc(img)
        assert 0.0 <= y[0].min() and y[0].max() <= 1.0
        assert -0.5 <= y[1].min() and y[1].max() <= 0.5
        assert -0.5 <= y[2].min() and y[2].max() <= 0.5

    def test_linearity_commutes_with_pooling(self):
        # Pinned matrix is linear, so converting then 2x2-average-pooling
        # equals pooling then converting.
        img = rng(7).uniform(size=(3, 8, 8)).astype(np.float32)
        pooled = img.reshape(3, 4, 2, 4, 2).mean(axis=(2, 4))
        a = C.srgb_to_ycc(pooled)
        b = C.srgb_to_ycc(img).reshape(3, 4, 2, 4, 2).mean(axis=(2, 4))
        np.testing.assert_allclose(a, b, atol=1e-6)


class TestHsv:
    def test_gray_pixel(self):
        img = np.full((3, 1, 1), 0.5, dtype=np.float32)
        hsv = C.rgb_to_hsv(img)
        np.testing.assert_allclose(hsv[:, 0, 0], [0.0, 0.0, 0.5], atol=1e-7)

    def test_pure_red(self):
        img = np.zeros((3, 1, 1), dtype=np.float32)
        img[0] = 1.0
        hsv = C.rgb_to_hsv(img)
        np.testing.assert_allclose(hsv[:, 0, 0], [0.0, 1.0, 1.0], atol=1e-7)

    def test_matches_scalar_oracle(self):
        img = rng(8).uniform(size=(3, 5, 5)).astype(np.float32)
        hsv = C.rgb_to_hsv(img)
        for y in range(5):
            for x in range(5):
                h, s, v = oracles.rgb_to_hsv_ref(*[float(img[c, y, x])
                                                   for c in range(3)])
                np.testing.assert_allclose(hsv[:, y, x], [h, s, v],
                                           atol=1e-5)

    def test_round_trip(self):
        img = rng(9).uniform(0.05, 1.0, size=(3, 6, 6)).astype(np.float32)
        back = C.hsv_to_rgb(C.rgb_to_hsv(img))
        np.testing.assert_allclose(back, img, atol=1e-6)

    def test_hue_range(self):
        img = rng(10).uniform(size=(3, 32, 32)).astype(np.float32)
        h = C.rgb_to_hsv(img)[0]
        assert h.min() >= 0.0 and h.max() < 1.0


class TestYuv:
    def test_definition(self):
        img = rng(11).uniform(size=(3, 3, 3)).astype(np.float32)
        yuv = C.rgb_to_yuv(img)
        y = 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
        np.testing.assert_allclose(yuv[0], y, atol=1e-6)
        np.testing.assert_allclose(yuv[1], 0.492 * (img[2] - y), atol=1e-6)
        np.testing.assert_allclose(yuv[2], 0.877 * (img[0] - y), atol=1e-6)

    def test_round_trip(self):
        img = rng(12).uniform(size=(3, 4, 4)).astype(np.float32)
        np.testing.assert_allclose(C.yuv_to_rgb(C.rgb_to_yuv(img)), img,
                                   atol=1e-6)


class TestPixelPurity:
    def test_permuting_pixels_permutes_outputs(self):
        img = rng(13).uniform(size=(3, 4, 4)).astype(np.float32)
        perm = rng(14).permutation(16)
        flat = img.reshape(3, 16)[:, perm].reshape(3, 4, 4)
        for fn in (C.srgb_to_ycc, C.rgb_to_hsv, C.rgb_to_yuv):
            direct = fn(flat)
            permuted = fn(img).reshape(3, 16)[:, perm].reshape(3, 4, 4)
            np.testing.assert_allclose(direct, permuted, atol=1e-7,
                                       err_msg=fn.__name__)


class TestDemosaic:
    def test_constant_mosaic_gives_constant_rgb(self):
        z = np.full((8, 8), 0.25, dtype=np.float32)
        rgb = C.demosaic_bilinear(z)
        np.testing.assert_allclose(rgb, 0.25, atol=1e-6)

    def test_preserves_sampled_sites(self):
        z = rng(15).uniform(size=(8, 8)).astype(np.float32)
        rgb = C.demosaic_bilinear(z)
        np.testing.assert_allclose(rgb[0, 0::2, 0::2], z[0::2, 0::2],
                                   atol=1e-6)
        np.testing.assert_allclose(rgb[2, 1::2, 1::2], z[1::2, 1::2],
                                   atol=1e-6)
        np.testing.assert_allclose(rgb[1, 0::2, 1::2], z[0::2, 1::2],
                                   atol=1e-6)


class TestFileFormats:
    def test_pgm_round_trip(self, tmp_path):
        b = random_bayer(seed=16, shape=(6, 10))
        path = tmp_path / "x.pgm"
        C.write_pgm16(path, b.data, b.white_level)
        data, maxval = C.read_pgm16(path)
        assert maxval == 1023
        np.testing.assert_array_equal(data, b.data)

    def test_pgm_is_big_endian_p5(self, tmp_path):
        d = np.array([[0x0102]], dtype=np.uint16)
        path = tmp_path / "be.pgm"
        C.write_pgm16(path, d, 1023)
        blob = path.read_bytes()
        assert blob.startswith(b"P5\n1 1\n1023\n")
        assert blob[-2:] == bytes([0x01, 0x02])

    def test_sidecar_round_trip(self, tmp_path):
        b = random_bayer(seed=17, shape=(4, 4), black=60, white=1000)
        path = str(tmp_path / "pair_0_input.pgm")
        C.save_bayer(path, b)
        header = (tmp_path / "pair_0_input.pgm.hdr").read_text()
        assert "cfa=RGGB" in header
        assert "black=60" in header
        assert "white=1000" in header
        back = C.load_bayer(path)
        np.testing.assert_array_equal(back.data, b.data)
        assert back.black_level == 60
        assert back.white_level == 1000
        assert back.cfa == "RGGB"

    def test_truncated_pgm_raises(self, tmp_path):
        b = random_bayer(seed=18, shape=(4, 4))
        path = tmp_path / "t.pgm"
        C.write_pgm16(path, b.data, 1023)
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(ValueError):
            C.read_pgm16(path)

    def test_png_round_trip_quantized(self, tmp_path):
        img = rng(19).uniform(size=(3, 5, 7)).astype(np.float32)
        path = str(tmp_path / "x.png")
        C.save_srgb_png(path, img)
        back = C.load_srgb_png(path)
        expect = np.round(img * 255.0) / 255.0
        np.testing.assert_allclose(back, expect, atol=1e-7)

    def test_png_exact_on_quantized_values(self, tmp_path):
        q = rng(20).integers(0, 256, size=(3, 4, 4)).astype(np.float32)
        img = q / 255.0
        path = str(tmp_path / "q.png")
        C.save_srgb_png(path, img)
        back = C.load_srgb_png(path)
        np.testing.assert_array_equal(back, img.astype(np.float32))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ycc_ranges_property(seed):
    img = np.random.default_rng(seed).uniform(size=(3, 4, 4)) \
        .astype(np.float32)
    y = C.srgb_to_ycc(img)
    assert y[0].min() >= -1e-6 and y[0].max() <= 1.0 + 1e-6
    assert np.abs(y[1:]).max() <= 0.5 + 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_hsv_round_trip_property(seed):
    img = np.random.default_rng(seed).uniform(0.02, 1.0, size=(3, 3, 3)) \
        .astype(np.float32)
    back = C.hsv_to_rgb(C.rgb_to_hsv(img))
    np.testing.assert_allclose(back, img, atol=2e-6)
