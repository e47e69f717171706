"""Lightness matching, distance blur, offset shift, and alpha compositing."""

import numpy as np
import pytest

from railar.core import ImageBuffer
from railar.composite import (
    BlurParams,
    LightnessStats,
    blur_object_layer,
    blur_sigma,
    compensate_offset,
    compose_augmented_frame,
    composite_frame,
    gaussian_kernel,
    lab_to_srgb,
    load_composite_report,
    match_lightness,
    save_composite_report,
    sequence_lightness_stats,
    srgb_to_lab,
)
from railar.errors import (
    EmptyInput,
    EmptyMask,
    NonPositiveDistance,
    SizeMismatch,
    ValidationError,
)
from railar.render import FrameRender


def _rgb(value, w=8, h=6):
    data = np.full((h, w, 3), value, dtype=np.uint8)
    return ImageBuffer(data, "RGB8")


def _alpha(value, w=8, h=6):
    return ImageBuffer(np.full((h, w), value, dtype=np.uint8), "GRAY8")


class TestLabConversion:
    # published sRGB/D65 reference values, 4 decimals
    REFERENCE = {
        (255, 0, 0): (53.2408, 80.0925, 67.2032),
        (0, 255, 0): (87.7347, -86.1827, 83.1793),
        (0, 0, 255): (32.2970, 79.1875, -107.8602),
        (255, 255, 255): (100.0, 0.0, 0.0),
        (0, 0, 0): (0.0, 0.0, 0.0),
    }

    def test_primary_colors_match_reference(self):
        for rgb, expected in self.REFERENCE.items():
            lab = srgb_to_lab(np.array(rgb, dtype=np.uint8))
            np.testing.assert_allclose(lab, expected, atol=5e-3)

    def test_mid_gray_is_mid_lightness(self):
        lab = srgb_to_lab(np.array([119, 119, 119], dtype=np.uint8))
        assert abs(lab[0] - 50.0) < 0.5
        assert abs(lab[1]) < 1e-9 and abs(lab[2]) < 1e-9

    def test_gray_ramp_round_trip_exact(self):
        grays = np.arange(256, dtype=np.uint8)
        rgb = np.stack([grays] * 3, axis=-1)
        back = lab_to_srgb(srgb_to_lab(rgb))
        assert np.abs(back.astype(int) - rgb.astype(int)).max() <= 1

    def test_random_colors_round_trip(self):
        rng = np.random.default_rng(3)
        rgb = rng.integers(0, 256, size=(500, 3)).astype(np.uint8)
        back = lab_to_srgb(srgb_to_lab(rgb))
        assert np.abs(back.astype(int) - rgb.astype(int)).max() <= 1


class TestSequenceStats:
    def test_black_and_white(self):
        stats = sequence_lightness_stats([_rgb(0)])
        assert stats.mean_L == pytest.approx(0.0, abs=1e-9)
        assert stats.std_L == pytest.approx(0.0, abs=1e-9)
        stats = sequence_lightness_stats([_rgb(255)])
        assert stats.mean_L == pytest.approx(100.0, abs=1e-9)
        assert stats.std_L == pytest.approx(0.0, abs=1e-9)

    def test_mixed_frames_population_std(self):
        stats = sequence_lightness_stats([_rgb(0), _rgb(255)])
        assert stats.mean_L == pytest.approx(50.0, abs=1e-9)
        assert stats.std_L == pytest.approx(50.0, abs=1e-9)

    def test_mid_gray(self):
        stats = sequence_lightness_stats([_rgb(119)])
        assert abs(stats.mean_L - 50.0) < 0.5

    def test_empty_sequence(self):
        with pytest.raises(EmptyInput):
            sequence_lightness_stats([])

    def test_non_rgb_rejected(self):
        gray = ImageBuffer(np.zeros((4, 4), dtype=np.uint8), "GRAY8")
        with pytest.raises(ValidationError):
            sequence_lightness_stats([gray])

    def test_negative_std_rejected(self):
        with pytest.raises(ValidationError):
            LightnessStats(50.0, -1.0)


class TestMatchLightness:
    def _object_image(self, seed=4, w=60, h=40):
        rng = np.random.default_rng(seed)
        data = rng.integers(60, 200, size=(h, w, 3)).astype(np.uint8)
        mask = np.zeros((h, w), dtype=np.uint16)
        mask[5:35, 10:50] = 6
        return ImageBuffer(data, "RGB8"), mask

    def test_identity_target_changes_nothing_beyond_rounding(self):
        image, mask = self._object_image()
        lab = srgb_to_lab(image.data[mask != 0])
        own = LightnessStats(lab[:, 0].mean(), lab[:, 0].std())
        out = match_lightness(image, mask, own)
        diff = np.abs(out.data.astype(int) - image.data.astype(int))
        assert diff.max() <= 1

    def test_constant_region_shift_branch(self):
        image, mask = self._object_image()
        data = image.data.copy()
        data[mask != 0] = 119
        image = ImageBuffer(data, "RGB8")
        before = srgb_to_lab(np.array([119, 119, 119], dtype=np.uint8))[0]
        out = match_lightness(image, mask, LightnessStats(before + 20.0, 5.0))
        masked = out.data[mask != 0]
        assert len(np.unique(masked.reshape(-1, 3), axis=0)) == 1
        np.testing.assert_array_equal(out.data[mask == 0], image.data[mask == 0])
        after = srgb_to_lab(masked[0])[0]
        assert after == pytest.approx(before + 20.0, abs=0.5)

    def test_output_statistics_hit_target(self):
        image, mask = self._object_image()
        target = LightnessStats(60.0, 10.0)
        out = match_lightness(image, mask, target)
        lab = srgb_to_lab(out.data[mask != 0])
        assert lab[:, 0].mean() == pytest.approx(60.0, abs=0.5)
        assert lab[:, 0].std() == pytest.approx(10.0, abs=0.5)

    def test_unmasked_pixels_bit_identical(self):
        image, mask = self._object_image()
        out = match_lightness(image, mask, LightnessStats(30.0, 5.0))
        np.testing.assert_array_equal(out.data[mask == 0], image.data[mask == 0])

    def test_empty_mask(self):
        image, _ = self._object_image()
        with pytest.raises(EmptyMask):
            match_lightness(image, np.zeros(image.data.shape[:2], bool),
                            LightnessStats(50.0, 10.0))

    def test_clamped_to_valid_lightness(self):
        image, mask = self._object_image()
        out = match_lightness(image, mask, LightnessStats(99.0, 30.0))
        lab = srgb_to_lab(out.data[mask != 0])
        assert lab[:, 0].max() <= 100.0 + 1e-6


class TestBlurSigma:
    def test_far_object_not_blurred(self):
        assert blur_sigma(1000.0) == 0.0

    def test_formula_and_kernel_size(self):
        sigma = blur_sigma(1.0, BlurParams(strength=2.0, sigma_max=4.0))
        assert sigma == pytest.approx(2.0)
        assert len(gaussian_kernel(sigma)) == 13

    def test_clamped_close_up(self):
        assert blur_sigma(0.1) == pytest.approx(4.0)

    def test_threshold_is_strict(self):
        p = BlurParams(strength=2.0, sigma_min_active=0.3)
        assert blur_sigma(2.0 / 0.3, p) == pytest.approx(0.3)

    def test_non_positive_distance(self):
        with pytest.raises(NonPositiveDistance):
            blur_sigma(0.0)
        with pytest.raises(NonPositiveDistance):
            blur_sigma(-3.0)

    def test_kernel_normalization(self):
        for sigma in np.linspace(0.3, 4.0, 20):
            assert abs(gaussian_kernel(float(sigma)).sum() - 1.0) < 1e-9


class TestBlurLayer:
    def test_sigma_zero_identity(self):
        rng = np.random.default_rng(8)
        color = ImageBuffer(rng.integers(0, 256, (10, 12, 3)).astype(np.uint8),
                            "RGB8")
        mask = np.zeros((10, 12), dtype=np.uint16)
        mask[3:6, 4:9] = 2
        out_color, alpha = blur_object_layer(color, mask, 0.0)
        np.testing.assert_array_equal(out_color.data, color.data)
        np.testing.assert_array_equal(alpha.data, (mask != 0) * np.uint8(255))

    def test_constant_signal_invariance(self):
        color = _rgb(177, w=16, h=16)
        mask = np.ones((16, 16), dtype=np.uint16)
        out_color, alpha = blur_object_layer(color, mask, 2.5)
        np.testing.assert_array_equal(out_color.data, color.data)
        np.testing.assert_array_equal(alpha.data, np.full((16, 16), 255, np.uint8))

    def test_single_pixel_spreads_symmetrically(self):
        color = _rgb(0, w=11, h=11)
        mask = np.zeros((11, 11), dtype=np.uint16)
        mask[5, 5] = 1
        _, alpha = blur_object_layer(color, mask, 1.0)
        a = alpha.data.astype(int)
        np.testing.assert_array_equal(a, a[::-1])
        np.testing.assert_array_equal(a, a[:, ::-1])
        np.testing.assert_array_equal(a, a.T)
        assert a[5, 5] == a.max()
        assert abs(a.sum() - 255) <= 25  # mass preserved up to quantization


class TestOffset:
    def test_zero_identity(self):
        color, alpha = _rgb(10), _alpha(200)
        out_c, out_a = compensate_offset(color, alpha, (0.0, 0.0))
        np.testing.assert_array_equal(out_c.data, color.data)
        np.testing.assert_array_equal(out_a.data, alpha.data)

    def test_fractional_offset_rounds_to_zero(self):
        color, alpha = _rgb(10), _alpha(200)
        out_c, _ = compensate_offset(color, alpha, (0.4, 0.4))
        np.testing.assert_array_equal(out_c.data, color.data)

    def test_translation_and_vacated_alpha(self):
        color_data = np.zeros((6, 8, 3), dtype=np.uint8)
        alpha_data = np.zeros((6, 8), dtype=np.uint8)
        color_data[4, 2] = (9, 8, 7)
        alpha_data[4, 2] = 255
        color = ImageBuffer(color_data, "RGB8")
        alpha = ImageBuffer(alpha_data, "GRAY8")
        out_c, out_a = compensate_offset(color, alpha, (3.0, -2.0))
        np.testing.assert_array_equal(out_c.data[2, 5], [9, 8, 7])
        assert out_a.data[2, 5] == 255
        assert out_a.data.sum() == 255  # everything else transparent
        # bottom rows and left columns were vacated
        assert not out_a.data[:, :3].any()
        assert not out_a.data[4:].any()

    def test_content_shifted_off_frame_discarded(self):
        color, alpha = _rgb(10, w=4, h=4), _alpha(255, w=4, h=4)
        _, out_a = compensate_offset(color, alpha, (10.0, 0.0))
        assert not out_a.data.any()


class TestCompositeFrame:
    def test_alpha_zero_bit_identical(self):
        rng = np.random.default_rng(9)
        real = ImageBuffer(rng.integers(0, 256, (6, 8, 3)).astype(np.uint8),
                           "RGB8")
        out = composite_frame(real, _rgb(200), _alpha(0))
        np.testing.assert_array_equal(out.data, real.data)

    def test_alpha_full_takes_object(self):
        obj = _rgb(123)
        out = composite_frame(_rgb(45), obj, _alpha(255))
        np.testing.assert_array_equal(out.data, obj.data)

    def test_half_alpha_blend(self):
        out = composite_frame(_rgb(100), _rgb(200), _alpha(128))
        assert abs(int(out.data[0, 0, 0]) - 150) <= 1
        assert out.data[0, 0, 0] == 150  # floor(150.196 + 0.5)

    def test_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            composite_frame(_rgb(1, w=9), _rgb(1, w=8), _alpha(0, w=8))


def _two_square_render(w=8, h=6):
    """Stencil 2 fills the left half at depth 4, stencil 3 the rest at 6."""
    mask = np.full((h, w), 3, dtype=np.uint16)
    mask[:, : w // 2] = 2
    depth = np.where(mask == 2, 4.0, 6.0).astype(np.float32)
    color = np.zeros((h, w, 3), dtype=np.uint8)
    color[mask == 2] = (200, 0, 0)
    color[mask == 3] = (0, 200, 0)
    return FrameRender(ImageBuffer(color, "RGB8"),
                       ImageBuffer(mask, "LABEL16"),
                       ImageBuffer(depth, "DEPTH32"))


class TestComposeAugmentedFrame:
    def test_hard_masks_without_blur(self):
        real = _rgb(50)
        render = _two_square_render()
        out, report = compose_augmented_frame(real, render, blur=None)
        assert np.all(out.data[render.mask.data == 2] == (200, 0, 0))
        assert np.all(out.data[render.mask.data == 3] == (0, 200, 0))
        assert [o["stencil"] for o in report["objects"]] == [3, 2]  # far first
        assert [o["distance"] for o in report["objects"]] == [6.0, 4.0]

    def test_untouched_pixels_bit_identical(self):
        rng = np.random.default_rng(10)
        real = ImageBuffer(rng.integers(0, 256, (20, 24, 3)).astype(np.uint8),
                           "RGB8")
        mask = np.zeros((20, 24), dtype=np.uint16)
        mask[4:9, 6:12] = 5
        depth = np.full((20, 24), np.inf, dtype=np.float32)
        depth[mask == 5] = 100.0  # far: sigma below activation threshold
        color = np.zeros((20, 24, 3), dtype=np.uint8)
        color[mask == 5] = 240
        render = FrameRender(ImageBuffer(color, "RGB8"),
                             ImageBuffer(mask, "LABEL16"),
                             ImageBuffer(depth, "DEPTH32"))
        out, report = compose_augmented_frame(real, render)
        np.testing.assert_array_equal(out.data[mask == 0], real.data[mask == 0])
        assert report["objects"][0]["sigma"] == 0.0

    def test_offset_moves_object(self):
        real = _rgb(50, w=16, h=12)
        mask = np.zeros((12, 16), dtype=np.uint16)
        mask[5, 5] = 9
        depth = np.full((12, 16), np.inf, dtype=np.float32)
        depth[5, 5] = 50.0
        color = np.zeros((12, 16, 3), dtype=np.uint8)
        color[5, 5] = 250
        render = FrameRender(ImageBuffer(color, "RGB8"),
                             ImageBuffer(mask, "LABEL16"),
                             ImageBuffer(depth, "DEPTH32"))
        out, report = compose_augmented_frame(real, render, offset=(2.0, 1.0))
        assert report["offset"] == [2, 1]
        np.testing.assert_array_equal(out.data[6, 7], [250, 250, 250])
        np.testing.assert_array_equal(out.data[5, 5], [50, 50, 50])

    def test_empty_mask_returns_real(self):
        real = _rgb(77)
        render = FrameRender(
            ImageBuffer(np.zeros((6, 8, 3), dtype=np.uint8), "RGB8"),
            ImageBuffer(np.zeros((6, 8), dtype=np.uint16), "LABEL16"),
            ImageBuffer(np.full((6, 8), np.inf, dtype=np.float32), "DEPTH32"))
        out, report = compose_augmented_frame(real, render)
        np.testing.assert_array_equal(out.data, real.data)
        assert report["objects"] == []

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        real = ImageBuffer(rng.integers(0, 256, (6, 8, 3)).astype(np.uint8),
                           "RGB8")
        render = _two_square_render()
        target = LightnessStats(55.0, 12.0)
        a, ra = compose_augmented_frame(real, render, target=target,
                                        blur=BlurParams(), offset=(1.2, -0.6))
        b, rb = compose_augmented_frame(real, render, target=target,
                                        blur=BlurParams(), offset=(1.2, -0.6))
        np.testing.assert_array_equal(a.data, b.data)
        assert ra == rb

    def test_report_round_trip(self, tmp_path):
        real = _rgb(50)
        _, report = compose_augmented_frame(real, _two_square_render(), blur=None)
        doc = {"cam0": {"000000": report}}
        path = save_composite_report(doc, tmp_path / "composite_report.json")
        assert load_composite_report(path) == doc
