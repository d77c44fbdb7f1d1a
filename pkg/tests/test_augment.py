import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from effisegnet import AugmentationConfig, ConfigurationError, ContractError, augment
from effisegnet.augment import (
    affine_source_coords,
    color_jitter,
    elastic_source_coords,
    warp_bilinear,
    warp_lanczos,
    warp_nearest,
)

from oracles import affine_forward_membership


def checker_image(size: int = 12) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    base = ((yy + xx) % 2).astype(np.float32) * 0.5 + 0.2
    return np.stack([base, base * 0.8, base * 0.6], axis=-1)


def blob_mask(size: int = 12) -> np.ndarray:
    mask = np.zeros((size, size), dtype=np.float32)
    mask[3:7, 4:9] = 1.0
    return mask


def test_identity_config_is_bit_exact():
    image = checker_image()
    mask = blob_mask()
    out_image, out_mask = augment(image, mask, AugmentationConfig.identity(), np.random.default_rng(0))
    assert np.array_equal(out_image, image)
    assert np.array_equal(out_mask, mask)


def test_forced_flips_match_numpy():
    image = checker_image()
    mask = blob_mask()
    cfg_h = AugmentationConfig.identity()
    cfg_h = AugmentationConfig(**{**cfg_h.__dict__, "hflip_prob": 1.0})
    out_image, out_mask = augment(image, mask, cfg_h, np.random.default_rng(0))
    assert np.array_equal(out_image, image[:, ::-1])
    assert np.array_equal(out_mask, mask[:, ::-1])
    cfg_v = AugmentationConfig(**{**AugmentationConfig.identity().__dict__, "vflip_prob": 1.0})
    out_image, out_mask = augment(image, mask, cfg_v, np.random.default_rng(0))
    assert np.array_equal(out_image, image[::-1])
    assert np.array_equal(out_mask, mask[::-1])


def test_double_flip_is_identity():
    image = checker_image()
    mask = blob_mask()
    cfg = AugmentationConfig(**{**AugmentationConfig.identity().__dict__, "hflip_prob": 1.0})
    once = augment(image, mask, cfg, np.random.default_rng(0))
    twice = augment(once[0], once[1], cfg, np.random.default_rng(0))
    assert np.array_equal(twice[0], image)
    assert np.array_equal(twice[1], mask)


def test_brightness_only_scales_image():
    image = np.full((6, 6, 3), 0.3, dtype=np.float32)
    mask = blob_mask(6)
    cfg = AugmentationConfig(
        **{**AugmentationConfig.identity().__dict__, "brightness_range": (2.0, 2.0)}
    )
    out_image, out_mask = augment(image, mask, cfg, np.random.default_rng(0))
    assert np.allclose(out_image, 0.6, atol=1e-6)
    assert np.array_equal(out_mask, mask)


def test_jitter_output_stays_in_unit_range():
    rng = np.random.default_rng(4)
    image = rng.uniform(0, 1, (8, 8, 3)).astype(np.float32)
    out = color_jitter(image, brightness=1.6, contrast=1.2, saturation=1.1, hue=0.01)
    assert out.shape == image.shape
    assert out.dtype == np.float32
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_quarter_rotation_matches_membership_oracle():
    mask = np.zeros((5, 5), dtype=np.float32)
    mask[1, 2] = 1.0
    src_y, src_x = affine_source_coords(5, 5, angle_deg=90.0)
    warped = warp_nearest(mask, src_y, src_x)
    expected = affine_forward_membership(5, 5, {(1, 2)}, 1.0, 90.0, (0.0, 0.0))
    assert np.array_equal(warped, expected)
    assert warped.sum() == 1.0  # a 90 degree turn keeps the pixel on-grid


def test_full_turn_recovers_mask():
    mask = blob_mask(9)
    out = mask
    for _ in range(4):
        src_y, src_x = affine_source_coords(9, 9, angle_deg=90.0)
        out = warp_nearest(out, src_y, src_x)
    assert np.array_equal(out, mask)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    scale=st.floats(0.5, 1.5),
    angle=st.floats(-90.0, 90.0),
    tx=st.floats(-2.0, 2.0),
    ty=st.floats(-2.0, 2.0),
)
def test_property_mask_warp_equals_coordinate_membership(seed, scale, angle, tx, ty):
    rng = np.random.default_rng(seed)
    mask = np.zeros((9, 9), dtype=np.float32)
    n_fg = int(rng.integers(0, 10))
    coords = set()
    for _ in range(n_fg):
        r, c = int(rng.integers(0, 9)), int(rng.integers(0, 9))
        coords.add((r, c))
        mask[r, c] = 1.0
    src_y, src_x = affine_source_coords(9, 9, scale=scale, angle_deg=angle, translate=(tx, ty))
    warped = warp_nearest(mask, src_y, src_x)
    expected = affine_forward_membership(9, 9, coords, scale, angle, (tx, ty))
    assert np.array_equal(warped, expected)


def test_bilinear_preserves_constants_in_interior():
    arr = np.full((11, 11), 0.7, dtype=np.float64)
    src_y, src_x = affine_source_coords(11, 11, angle_deg=10.0)
    out = warp_bilinear(arr, src_y, src_x)
    assert np.allclose(out[4:7, 4:7], 0.7, atol=1e-12)


def test_lanczos_preserves_constants_exactly():
    arr = np.full((10, 10), 0.42, dtype=np.float64)
    rng = np.random.default_rng(1)
    src_y, src_x = elastic_source_coords(10, 10, sigma=2.0, alpha=4.0, rng=rng)
    out = warp_lanczos(arr, src_y, src_x)
    assert np.allclose(out, 0.42, atol=1e-12)


def test_elastic_is_deterministic_per_seed():
    image = checker_image(16)
    mask = blob_mask(16)
    cfg = AugmentationConfig(
        **{
            **AugmentationConfig.identity().__dict__,
            "elastic_sigma": 2.0,
            "elastic_alpha": 4.0,
        }
    )
    a = augment(image, mask, cfg, np.random.default_rng(9))
    b = augment(image, mask, cfg, np.random.default_rng(9))
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])
    c = augment(image, mask, cfg, np.random.default_rng(10))
    assert not np.array_equal(a[0], c[0])
    # a strong elastic warp must actually move something
    assert not np.array_equal(a[0], image)


def test_full_recipe_keeps_contracts():
    rng = np.random.default_rng(3)
    cfg = AugmentationConfig()
    image = checker_image(20)
    mask = blob_mask(20)
    for _ in range(5):
        out_image, out_mask = augment(image, mask, cfg, rng)
        assert out_image.shape == image.shape
        assert out_mask.shape == mask.shape
        assert out_image.dtype == np.float32
        assert set(np.unique(out_mask)).issubset({0.0, 1.0})
        assert out_image.min() >= 0.0 and out_image.max() <= 1.0


def test_shape_contract_errors():
    with pytest.raises(ContractError, match="HxWx3"):
        augment(np.zeros((4, 4)), np.zeros((4, 4)), AugmentationConfig(), np.random.default_rng(0))
    with pytest.raises(ContractError, match="mask"):
        augment(
            np.zeros((4, 4, 3), dtype=np.float32),
            np.zeros((5, 5), dtype=np.float32),
            AugmentationConfig(),
            np.random.default_rng(0),
        )


def test_config_validation():
    with pytest.raises(ConfigurationError, match="hflip_prob"):
        AugmentationConfig(hflip_prob=1.5)
    with pytest.raises(ConfigurationError, match="ill-ordered"):
        AugmentationConfig(scale_range=(2.0, 0.5))
    with pytest.raises(ConfigurationError, match="hue"):
        AugmentationConfig(hue_limit=0.7)
    with pytest.raises(ConfigurationError, match="contrast"):
        AugmentationConfig(contrast_limit=-0.1)
    with pytest.raises(ConfigurationError, match="sigma"):
        AugmentationConfig(elastic_sigma=0.0, elastic_alpha=1.0)
    with pytest.raises(ConfigurationError, match="positive"):
        AugmentationConfig(scale_range=(0.0, 1.0))
