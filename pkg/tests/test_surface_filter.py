import math

import numpy as np
import pytest

from bladetrack.core_types import BinaryMask, BoundingBox, ClassLabel, Detection, DimensionError, EmptyInputError, ValidationError
from bladetrack.surface_filter import (
    FilterParams,
    GrayImage,
    apply_eroded_mask,
    crop_to_bbox,
    gaussian_blur,
    gaussian_kernel,
    high_pass,
    surface_pipeline,
    threshold_enhance,
)
from bladetrack.geometry import erode_grid

from oracles import brute_convolve2d_reflect


class TestCrop:
    def test_full_image_identity(self):
        img = GrayImage(np.linspace(0, 1, 30).reshape(5, 6))
        out = crop_to_bbox(img, BoundingBox(0, 0, 6, 5))
        assert np.array_equal(out.pixels, img.pixels)

    def test_gradient_crop_values(self):
        arr = np.arange(100, dtype=float).reshape(10, 10) / 100.0
        out = crop_to_bbox(GrayImage(arr), BoundingBox(3, 2, 4, 4))
        expected = np.array(
            [[(r * 10 + c) / 100.0 for c in range(3, 7)] for r in range(2, 6)]
        )
        assert np.array_equal(out.pixels, expected)
        assert out.shape == (4, 4)

    def test_gray_color_input(self):
        v = 0.37
        color = np.full((8, 8, 3), v)
        out = crop_to_bbox(color, BoundingBox(1, 1, 4, 4))
        assert np.allclose(out.pixels, v, atol=1e-15)

    def test_luma_weights(self):
        color = np.zeros((4, 4, 3))
        color[..., 0] = 1.0
        out = crop_to_bbox(color, BoundingBox(0, 0, 4, 4))
        assert np.allclose(out.pixels, 0.299)

    def test_clipped_when_partially_outside(self):
        arr = np.ones((6, 6))
        out = crop_to_bbox(GrayImage(arr), BoundingBox(4, 4, 5, 5))
        assert out.shape == (2, 2)

    def test_fully_outside_rejected(self):
        with pytest.raises(EmptyInputError):
            crop_to_bbox(GrayImage(np.ones((6, 6))), BoundingBox(10, 10, 3, 3))


class TestGaussianKernel:
    def test_sums_to_one(self):
        for sigma in (0.5, 1.0, 2.0, 3.7):
            assert abs(gaussian_kernel(sigma).sum() - 1.0) < 1e-12

    def test_side_length(self):
        for sigma in (0.5, 1.0, 2.0):
            k = gaussian_kernel(sigma)
            assert k.shape[0] == 2 * math.ceil(3 * sigma) + 1

    def test_symmetries(self):
        k = gaussian_kernel(1.7)
        assert np.allclose(k, k[::-1, :])
        assert np.allclose(k, k[:, ::-1])
        assert np.allclose(k, k.T)

    def test_small_sigma_approaches_delta(self):
        k = gaussian_kernel(0.1)
        center = k.shape[0] // 2
        assert k[center, center] > 1.0 - 1e-10
        assert k.sum() - k[center, center] < 1e-10


class TestHighPass:
    def test_constant_image_zero(self):
        img = GrayImage(np.full((12, 15), 0.42))
        out = high_pass(img, FilterParams(sigma=1.5))
        assert out.pixels.max() <= 1e-12

    def test_impulse_response(self):
        v = 0.8
        arr = np.zeros((21, 21))
        arr[10, 10] = v
        out = high_pass(GrayImage(arr), FilterParams(sigma=1.0))
        k = gaussian_kernel(1.0)
        center = k.shape[0] // 2
        assert out.pixels[10, 10] == pytest.approx(v * (1 - k[center, center]), abs=1e-12)

    def test_bounded_by_input(self):
        rng = np.random.RandomState(3)
        img = GrayImage(rng.rand(16, 16))
        out = high_pass(img, FilterParams(sigma=2.0))
        assert (out.pixels >= 0).all()
        assert (out.pixels <= img.pixels + 1e-12).all()

    def test_invariant_to_constant_shift(self):
        rng = np.random.RandomState(4)
        arr = rng.rand(10, 14)
        p = FilterParams(sigma=1.2)
        base = high_pass(GrayImage(arr), p)
        shifted = high_pass(GrayImage(arr + 0.3), p)
        assert np.allclose(base.pixels, shifted.pixels, atol=1e-12)

    def test_separable_matches_direct_convolution(self):
        rng = np.random.RandomState(5)
        for sigma in (0.8, 2.0):
            arr = rng.rand(14, 17)
            sep = gaussian_blur(arr, sigma)
            direct = brute_convolve2d_reflect(arr, gaussian_kernel(sigma))
            assert np.abs(sep - direct).max() < 1e-10


class TestApplyErodedMask:
    def test_erosion_empties_mask(self):
        img = GrayImage(np.ones((8, 8)))
        mask = BinaryMask.from_dense(np.pad(np.ones((2, 2), dtype=bool), 3))
        out = apply_eroded_mask(img, mask, erosion_radius=2)
        assert out.pixels.max() == 0.0

    def test_interior_kept_exactly(self):
        rng = np.random.RandomState(6)
        arr = rng.rand(12, 12)
        grid = np.zeros((12, 12), dtype=bool)
        grid[2:10, 2:10] = True
        out = apply_eroded_mask(GrayImage(arr), BinaryMask.from_dense(grid), 1)
        kept = erode_grid(grid, 1)
        assert np.array_equal(out.pixels[kept], arr[kept])
        assert (out.pixels[~kept] == 0).all()

    def test_boundary_band_zeroed(self):
        # Bright ring exactly at the mask edge must vanish after erosion.
        arr = np.zeros((20, 20))
        grid = np.zeros((20, 20), dtype=bool)
        grid[4:16, 4:16] = True
        ring = grid & ~np.pad(grid[1:-1, 1:-1], 1)
        arr[ring] = 1.0
        out = apply_eroded_mask(GrayImage(arr), BinaryMask.from_dense(grid), 1)
        assert out.pixels.max() == 0.0

    def test_extent_mismatch(self):
        with pytest.raises(DimensionError):
            apply_eroded_mask(GrayImage(np.ones((4, 4))), BinaryMask.zeros(5, 5), 1)


class TestThresholdEnhance:
    def test_all_below_tau(self):
        img = GrayImage(np.full((5, 5), 0.05))
        out = threshold_enhance(img, tau=0.1, enhance=True)
        assert (out.pixels == 0).all()

    def test_rescale_survivors(self):
        img = GrayImage(np.array([[0.0, 0.2, 0.5]]))
        out = threshold_enhance(img, tau=0.1, enhance=True)
        assert np.array_equal(out.pixels, np.array([[0.0, 0.4, 1.0]]))

    def test_tau_zero_no_enhance_is_identity(self):
        rng = np.random.RandomState(7)
        arr = rng.rand(6, 6) + 0.01
        out = threshold_enhance(GrayImage(arr), tau=0.0, enhance=False)
        assert np.array_equal(out.pixels, arr)

    def test_exact_tau_removed(self):
        img = GrayImage(np.array([[0.1, 0.100000001]]))
        out = threshold_enhance(img, tau=0.1, enhance=False)
        assert out.pixels[0, 0] == 0.0
        assert out.pixels[0, 1] > 0.0


def scratch_scene(amplitude, image_size=(60, 80)):
    """Blade rectangle on dark background with a 2-px vertical scratch."""
    h, w = image_size
    arr = np.full((h, w), 0.1)
    grid = np.zeros((h, w), dtype=bool)
    grid[10:50, 20:60] = True
    arr[grid] = 0.5
    arr[18:42, 38:40] += amplitude  # scratch well inside the blade
    mask = BinaryMask.from_dense(grid)
    blade = Detection(
        label=ClassLabel.COMPRESSOR_ROTOR, confidence=1.0, bbox=mask.tight_bbox(), mask=mask
    )
    return GrayImage(arr), blade


class TestPipeline:
    # erosion radius >= kernel radius so every blur artifact of the blade
    # border falls outside the eroded mask
    PARAMS = FilterParams(sigma=1.0, erosion_radius=4, tau=0.1, enhance=True)

    def test_flawless_blade_zero_count(self):
        image, blade = scratch_scene(amplitude=0.0)
        out, count = surface_pipeline(image, blade, self.PARAMS)
        assert count == 0
        assert (out.pixels == 0).all()

    def test_scratch_above_tau_detected(self):
        image, blade = scratch_scene(amplitude=0.4)
        out, count = surface_pipeline(image, blade, self.PARAMS)
        assert count > 0
        # nonzero only inside the eroded mask and near the scratch
        x0, y0 = 20, 10
        crop_mask = blade.mask.dense[10:50, 20:60]
        keep = erode_grid(crop_mask, self.PARAMS.erosion_radius)
        nz = out.pixels > 0
        assert not (nz & ~keep).any()
        rows, cols = np.nonzero(nz)
        radius = self.PARAMS.kernel_radius
        assert ((cols + x0 >= 38 - radius) & (cols + x0 <= 39 + radius)).all()
        assert ((rows + y0 >= 18 - radius) & (rows + y0 <= 41 + radius)).all()

    def test_scratch_below_tau_rejected(self):
        image, blade = scratch_scene(amplitude=0.05)
        _, count = surface_pipeline(image, blade, self.PARAMS)
        assert count == 0

    def test_output_zero_outside_eroded_mask_always(self):
        rng = np.random.RandomState(8)
        image, blade = scratch_scene(amplitude=0.4)
        noisy = GrayImage(np.clip(image.pixels + rng.rand(60, 80) * 0.2, 0, 1))
        for radius in (1, 3, 6):
            params = FilterParams(sigma=1.5, erosion_radius=radius, tau=0.02, enhance=False)
            out, _ = surface_pipeline(noisy, blade, params)
            keep = erode_grid(blade.mask.dense[10:50, 20:60], radius)
            assert (out.pixels[~keep] == 0).all()

    def test_count_monotone_in_tau(self):
        image, blade = scratch_scene(amplitude=0.4)
        counts = []
        for tau in (0.0, 0.05, 0.1, 0.2, 0.5):
            params = FilterParams(sigma=1.0, erosion_radius=4, tau=tau, enhance=True)
            counts.append(surface_pipeline(image, blade, params)[1])
        assert counts == sorted(counts, reverse=True)

    def test_params_validated(self):
        with pytest.raises(ValidationError):
            FilterParams(sigma=0.0)
        with pytest.raises(ValidationError):
            FilterParams(tau=-0.1)
        with pytest.raises(ValidationError):
            FilterParams(erosion_radius=0)
