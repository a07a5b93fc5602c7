"""Patch extraction, channel packing, normalization, and augmentation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unet_denoiser import (
    AUGMENT_FOLD,
    PatchSpec,
    augment_pair,
    build_training_pairs,
    extract_patches,
    from_channels,
    normalize_scale,
    patch_grid,
    to_channels,
)
from unet_denoiser.errors import ConfigError


def _rand(shape, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=shape).astype(np.float32)


# ---------------------------------------------------------------- grids


def test_patch_count_enumeration_96():
    # 96x96 frame, 64x64 patches on a 16 stride: 3 offsets per axis, 9 windows
    assert patch_grid(96, 64, 16) == [0, 16, 32]
    x = _rand((1, 96, 96))
    px, py = extract_patches(x, x, 64, 16)
    assert px.shape == (9, 1, 64, 64)


def test_stride_equal_to_patch_tiles():
    for n in (64, 100, 128, 130, 200):
        px, _ = extract_patches(_rand((1, n, n)), _rand((1, n, n), 1), 64, 64)
        assert px.shape[0] == (n // 64) ** 2


@given(
    n=st.integers(4, 200),
    patch=st.integers(4, 64),
    stride=st.integers(1, 40),
)
@settings(max_examples=60, deadline=None)
def test_grid_matches_brute_enumeration(n, patch, stride):
    grid = patch_grid(n, patch, stride)
    brute = [i for i in range(0, n, stride) if i + patch <= n]
    assert grid == brute
    if n >= patch:
        assert len(grid) == (n - patch) // stride + 1


def test_patch_contents_and_residual_targets():
    x = _rand((2, 40, 40), 0)
    r = _rand((2, 40, 40), 1)
    px, py = extract_patches(x, r, 16, 8)
    rows = patch_grid(40, 16, 8)
    k = 0
    for i in rows:
        for j in rows:
            assert np.array_equal(px[k], x[:, i : i + 16, j : j + 16])
            assert np.array_equal(py[k], (r - x)[:, i : i + 16, j : j + 16])
            k += 1


def test_extract_rejects_mismatched_stacks():
    with pytest.raises(ValueError, match="share"):
        extract_patches(_rand((1, 8, 8)), _rand((2, 8, 8)), 4, 2)


# ---------------------------------------------------------------- channels


def test_complex_channel_packing_roundtrip():
    rng = np.random.default_rng(2)
    x = (rng.normal(size=(3, 7, 5)) + 1j * rng.normal(size=(3, 7, 5))).astype(np.complex64)
    c = to_channels(x, "complex")
    assert c.shape == (6, 7, 5) and c.dtype == np.float32
    assert np.array_equal(c[0], x[0].real) and np.array_equal(c[1], x[0].imag)
    assert np.array_equal(c[4], x[2].real) and np.array_equal(c[5], x[2].imag)
    assert np.array_equal(from_channels(c, "complex"), x)


def test_magnitude_channel_packing():
    x = _rand((2, 4, 4))
    assert np.array_equal(to_channels(x, "magnitude"), x)
    with pytest.raises(ValueError, match="real"):
        to_channels(x.astype(np.complex64), "magnitude")
    with pytest.raises(ValueError, match="even"):
        from_channels(_rand((3, 4, 4)), "complex")
    with pytest.raises(ConfigError, match="unknown mode"):
        to_channels(x, "intensity")


def test_normalize_is_scale_only():
    x = (np.array([[3.0, -4.0]]) + 1j * np.array([[0.0, 3.0]]))[None]
    xn, scale = normalize_scale(x)
    assert scale == pytest.approx(5.0)
    assert np.max(np.abs(xn)) == pytest.approx(1.0)
    assert np.allclose(xn * scale, x)
    z, s = normalize_scale(np.zeros((1, 2, 2)))
    assert s == 1.0 and np.all(z == 0)


# ---------------------------------------------------------------- augmentation


def test_augment_fold_is_sixteen():
    x, y = _rand((2, 12, 12), 0), _rand((2, 12, 12), 1)
    ax, ay = augment_pair(x, y)
    assert AUGMENT_FOLD == 16
    assert ax.shape == (16, 2, 12, 12) and ay.shape == (16, 2, 12, 12)


def test_augment_quarter_turns_are_exact():
    x = _rand((1, 10, 10), 3)
    ax, _ = augment_pair(x, x)
    # unmirrored variants at even eighth turns are exact rot90 multiples
    assert np.array_equal(ax[0], x)
    assert np.array_equal(ax[2], np.rot90(x, 1, axes=(-2, -1)))
    assert np.array_equal(ax[4], np.rot90(x, 2, axes=(-2, -1)))
    assert np.array_equal(ax[6], np.rot90(x, 3, axes=(-2, -1)))
    # variant 8 is the pure mirror
    assert np.array_equal(ax[8], x[:, :, ::-1])


def test_augment_applies_same_transform_to_both_sides():
    x = _rand((2, 8, 8), 4)
    ax, ay = augment_pair(x, x.copy())
    for k in range(16):
        assert np.array_equal(ax[k], ay[k])


def test_augment_variants_are_distinct_for_generic_patch():
    x = _rand((1, 16, 16), 5)
    ax, _ = augment_pair(x, x)
    flat = ax.reshape(16, -1)
    for a in range(16):
        for b in range(a + 1, 16):
            assert not np.allclose(flat[a], flat[b], atol=1e-5)


# ---------------------------------------------------------------- builder


def test_build_training_pairs_counts():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 1, 48, 48))
    r = x + 0.1 * rng.normal(size=x.shape)
    spec = PatchSpec(patch=32, stride=16, scales=(1.0,), augment=False)
    px, py = build_training_pairs(x, r, "magnitude", spec)
    # ((48-32)/16+1)^2 = 4 patches per frame, 2 frames
    assert px.shape == (8, 1, 32, 32)
    spec_aug = PatchSpec(patch=32, stride=16, scales=(1.0,), augment=True)
    ax, ay = build_training_pairs(x, r, "magnitude", spec_aug)
    assert ax.shape[0] == 8 * AUGMENT_FOLD


def test_build_training_pairs_scale_pyramid_skips_small():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 1, 48, 48))
    r = x.copy()
    spec = PatchSpec(patch=32, stride=16, scales=(0.5, 1.0, 2.0), augment=False)
    px, _ = build_training_pairs(x, r, "magnitude", spec)
    # scale 0.5 gives 24 < 32 (skipped); scale 1 gives 4; scale 2 gives
    # ((96-32)/16+1)^2 = 25
    assert px.shape[0] == 4 + 25


def test_build_training_pairs_normalizes_by_input_scale():
    x = np.full((1, 1, 32, 32), 4.0)
    r = np.full((1, 1, 32, 32), 6.0)
    spec = PatchSpec(patch=32, stride=32, scales=(1.0,), augment=False)
    px, py = build_training_pairs(x, r, "magnitude", spec)
    assert np.allclose(px, 1.0)
    assert np.allclose(py, 0.5)  # (6 - 4) / 4


def test_build_training_pairs_rejects_empty():
    x = np.zeros((1, 1, 8, 8))
    spec = PatchSpec(patch=32, stride=16, scales=(1.0,), augment=False)
    with pytest.raises(ValueError, match="no patches"):
        build_training_pairs(x, x, "magnitude", spec)


def test_patch_spec_validation():
    with pytest.raises(ConfigError):
        PatchSpec(patch=2)
    with pytest.raises(ConfigError):
        PatchSpec(stride=0)
    with pytest.raises(ConfigError):
        PatchSpec(scales=())
    with pytest.raises(ConfigError):
        PatchSpec(scales=(1.0, -2.0))
