# /cooking_vit/tests/test_augmentation.py

import sys
import pytest
import numpy as np
from pathlib import Path

# Add the project root to the sys.path to allow imports from src
sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.augmentation import (EXPANSION_FACTOR, AugmentSpec, augment_dataset, augment_variant,
                              brightness_contrast, hflip, hsv_jitter, hsv_to_rgb, rgb_to_hsv, rotate,
                              shift_scale)
from src.data_pipeline import Sample


@pytest.fixture
def pixels():
    return np.random.default_rng(0).random((9, 9, 3)).astype(np.float32)


def test_neutral_parameters_are_bit_exact(pixels):
    assert np.array_equal(rotate(pixels, 0.0), pixels)
    assert np.array_equal(rotate(pixels, 360.0), pixels)
    assert np.array_equal(shift_scale(pixels, 0.0, 0.0, 1.0), pixels)
    assert np.array_equal(hsv_jitter(pixels, 0.0, 0.0), pixels)
    assert np.array_equal(brightness_contrast(pixels, 0.0, 1.0), pixels)
    assert np.array_equal(hflip(hflip(pixels)), pixels)
    print("\n✅ test_neutral_parameters_are_bit_exact passed.")


def test_hflip_mirrors_columns():
    image = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
    out = hflip(image)
    assert np.array_equal(out[:, 0], image[:, 2])
    assert np.array_equal(out[:, 1], image[:, 1])
    print("✅ test_hflip_mirrors_columns passed.")


def test_rotate_quarter_turn_is_counter_clockwise():
    """A bright pixel right of center moves above center after +90 degrees."""
    image = np.zeros((5, 5, 3), dtype=np.float64)
    image[2, 4] = 1.0
    out = rotate(image, 90.0)
    assert np.allclose(out[0, 2], 1.0, atol=1e-9)
    assert np.allclose(out[2, 4], 0.0, atol=1e-9)
    assert np.allclose(rotate(image, 90.0), np.rot90(image, 1, axes=(0, 1)), atol=1e-9)
    print("✅ test_rotate_quarter_turn_is_counter_clockwise passed.")


def test_rotation_output_stays_in_unit_range(pixels):
    out = rotate(pixels, 17.0)
    assert out.shape == pixels.shape
    assert 0.0 <= out.min() and out.max() <= 1.0
    print("✅ test_rotation_output_stays_in_unit_range passed.")


def test_hsv_round_trip(pixels):
    restored = hsv_to_rgb(rgb_to_hsv(pixels.astype(np.float64)))
    assert np.max(np.abs(restored - pixels)) < 1e-5
    print("✅ test_hsv_round_trip passed.")


def test_gray_pixels_have_zero_hue_and_saturation():
    gray = np.full((2, 2, 3), 0.4)
    hsv = rgb_to_hsv(gray)
    assert np.all(hsv[..., 0] == 0.0)
    assert np.all(hsv[..., 1] == 0.0)
    print("✅ test_gray_pixels_have_zero_hue_and_saturation passed.")


def test_brightness_contrast_formula_and_clamp():
    image = np.array([[[0.0, 0.5, 1.0]]])
    out = brightness_contrast(image, 0.1, 2.0)
    assert np.allclose(out, [[[0.0, 0.6, 1.0]]])
    print("✅ test_brightness_contrast_formula_and_clamp passed.")


def test_shift_moves_content():
    image = np.zeros((8, 8, 3))
    image[4, 2] = 1.0
    out = shift_scale(image, 0.25, 0.0, 1.0)
    assert np.allclose(out[4, 4], 1.0)
    print("✅ test_shift_moves_content passed.")


def test_augment_dataset_five_fold_and_reproducible(pixels):
    samples = [Sample(pixels, 2, "a.png"), Sample(pixels[::-1].copy(), 0, "b.png")]
    spec = AugmentSpec(seed=4)
    out = augment_dataset(samples, spec)
    assert len(out) == EXPANSION_FACTOR * len(samples)
    assert out[0] is samples[0]
    assert [s.source_path for s in out[:5]] == ["a.png", "a.png#aug1", "a.png#aug2", "a.png#aug3", "a.png#aug4"]
    assert [s.label for s in out] == [2] * 5 + [0] * 5
    again = augment_dataset(samples, spec, workers=3)
    assert all(np.array_equal(x.pixels, y.pixels) for x, y in zip(out, again))
    assert not np.array_equal(out[1].pixels, out[2].pixels)
    assert all(0.0 <= s.pixels.min() and s.pixels.max() <= 1.0 for s in out)
    print("✅ test_augment_dataset_five_fold_and_reproducible passed.")


def test_variant_with_disabled_ranges_is_identity(pixels):
    spec = AugmentSpec(rotation_max_degrees=0.0, hflip_probability=0.0, hsv_enabled=False,
                       brightness_delta_max=0.0, contrast_factor_range=(1.0, 1.0),
                       shift_max_fraction=0.0, scale_range=(1.0, 1.0))
    out = augment_variant(pixels, spec, np.random.default_rng(0))
    assert np.array_equal(out, pixels)
    print("✅ test_variant_with_disabled_ranges_is_identity passed.")


def test_spec_validation_and_dict_round_trip():
    with pytest.raises(ValueError):
        AugmentSpec(hflip_probability=1.5)
    with pytest.raises(ValueError):
        AugmentSpec(scale_range=(1.2, 0.8))
    spec = AugmentSpec(rotation_max_degrees=20.0)
    assert AugmentSpec.from_dict(spec.to_dict()) == spec
    print("✅ test_spec_validation_and_dict_round_trip passed.")


def test_four_quarter_turns_restore_the_image():
    image = np.random.default_rng(1).random((16, 16, 3)).astype(np.float32)
    out = image
    for _ in range(4):
        out = rotate(out, 90.0)
    assert np.mean(np.abs(out - image)) < 1e-3
    print("✅ test_four_quarter_turns_restore_the_image passed.")


def test_doubling_scale_quadruples_a_centered_dot():
    """A 2x2 dot at the center of a 16x16 image covers four times the mass at scale 2."""
    image = np.zeros((16, 16, 3), dtype=np.float32)
    image[7:9, 7:9] = 1.0
    out = shift_scale(image, 0.0, 0.0, 2.0)
    assert out[..., 0].sum() / image[..., 0].sum() == pytest.approx(4.0, rel=0.05)
    assert np.allclose(out[7:9, 7:9], 1.0)
    assert np.all(out[:4] == 0.0)
    print("✅ test_doubling_scale_quadruples_a_centered_dot passed.")


def test_pure_red_in_hsv():
    hsv = rgb_to_hsv(np.array([[[1.0, 0.0, 0.0]]]))
    assert np.allclose(hsv[0, 0], [0.0, 1.0, 1.0])
    print("✅ test_pure_red_in_hsv passed.")


def test_left_half_white_flips_to_right_half_white():
    image = np.zeros((4, 6, 3), dtype=np.float32)
    image[:, :3] = 1.0
    out = hflip(image)
    assert np.all(out[:, 3:] == 1.0)
    assert np.all(out[:, :3] == 0.0)
    print("✅ test_left_half_white_flips_to_right_half_white passed.")
