"""High-pass post-processing that highlights small surface features.

The pipeline isolates a blade with its bounding box, subtracts a Gaussian
blur from the grayscale crop (clamping negatives), zeroes everything
outside a morphologically eroded blade mask to drop the blade-edge
highlights, and finally thresholds low intensities away with optional
contrast enhancement. The number of surviving pixels is a cheap proxy for
surface irregularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_types import (
    BinaryMask,
    BoundingBox,
    Detection,
    DimensionError,
    EmptyInputError,
    ValidationError,
)
from .geometry import erode_grid

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class GrayImage:
    """Grayscale intensity matrix; 8-bit inputs map to [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels, dtype=float)
        if arr.ndim != 2:
            raise ValidationError(f"gray image must be 2D, got shape {arr.shape}")
        if np.isnan(arr).any() or (arr < 0).any():
            raise ValidationError("gray image intensities must be >= 0 and not NaN")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class FilterParams:
    """Knobs of the high-pass pipeline.

    The Gaussian kernel is truncated at ceil(3*sigma) and renormalized;
    filter sizes need manual tuning per video, so every run should echo
    these values in its output metadata.
    """

    sigma: float = 2.0
    erosion_radius: int = 3
    tau: float = 0.1
    enhance: bool = True

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ValidationError("sigma must be > 0")
        if self.erosion_radius < 1:
            raise ValidationError("erosion_radius must be >= 1")
        if self.tau < 0:
            raise ValidationError("tau must be >= 0")

    @property
    def kernel_radius(self) -> int:
        return math.ceil(3.0 * self.sigma)


def crop_to_bbox(image, bbox: BoundingBox) -> GrayImage:
    """Cut the box out of a grayscale or color image.

    Color inputs (H, W, 3) are converted to grayscale with the usual luma
    weights first. The box is clipped to the image extent; a box entirely
    outside it is an error.
    """
    arr = np.asarray(image.pixels if isinstance(image, GrayImage) else image, dtype=float)
    if arr.ndim == 3:
        if arr.shape[2] != 3:
            raise DimensionError(f"color image must have 3 channels, got {arr.shape[2]}")
        arr = arr @ np.asarray(LUMA_WEIGHTS)
    elif arr.ndim != 2:
        raise DimensionError(f"image must be 2D or 3-channel, got shape {arr.shape}")
    h, w = arr.shape
    x0, y0, x1, y1 = clip_bbox_to_extent(bbox, h, w)
    return GrayImage(arr[y0:y1, x0:x1])


def clip_bbox_to_extent(bbox: BoundingBox, height: int, width: int) -> tuple[int, int, int, int]:
    """Integer pixel window (x0, y0, x1, y1) of the box clipped to the image."""
    x0 = max(0, int(math.floor(bbox.x)))
    y0 = max(0, int(math.floor(bbox.y)))
    x1 = min(width, int(math.ceil(bbox.x + bbox.width)))
    y1 = min(height, int(math.ceil(bbox.y + bbox.height)))
    if x1 <= x0 or y1 <= y0:
        raise EmptyInputError(f"bounding box {bbox} lies outside the {height}x{width} image")
    return x0, y0, x1, y1


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Square isotropic Gaussian kernel, side 2*ceil(3*sigma)+1, sum 1."""
    g = gaussian_kernel_1d(sigma)
    return np.outer(g, g)


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValidationError("sigma must be > 0")
    radius = math.ceil(3.0 * sigma)
    offsets = np.arange(-radius, radius + 1, dtype=float)
    g = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return g / g.sum()


def _convolve_axis_reflect(arr: np.ndarray, kernel_1d: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel_1d) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="reflect")
    out = np.zeros_like(arr, dtype=float)
    n = arr.shape[axis]
    for offset, weight in enumerate(kernel_1d):
        out += weight * np.take(padded, range(offset, offset + n), axis=axis)
    return out


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with reflect (mirror) boundary padding."""
    blurred = _convolve_axis_reflect(np.asarray(image, dtype=float), gaussian_kernel_1d(sigma), axis=1)
    return _convolve_axis_reflect(blurred, gaussian_kernel_1d(sigma), axis=0)


def high_pass(image: GrayImage, params: FilterParams) -> GrayImage:
    """Image minus its Gaussian blur, negatives clamped to zero."""
    diff = image.pixels - gaussian_blur(image.pixels, params.sigma)
    return GrayImage(np.maximum(diff, 0.0))


def apply_eroded_mask(image: GrayImage, blade_mask: BinaryMask, erosion_radius: int) -> GrayImage:
    """Zero all pixels outside the eroded blade mask.

    The mask must already be cropped to the image's extent. Eroding before
    masking removes the blade-edge highlight band the high-pass filter
    produces at the mask boundary.
    """
    if blade_mask.shape != image.shape:
        raise DimensionError(
            f"mask extent {blade_mask.shape} does not match image extent {image.shape}"
        )
    keep = erode_grid(blade_mask.dense, erosion_radius)
    return GrayImage(np.where(keep, image.pixels, 0.0))


def threshold_enhance(image: GrayImage, tau: float, enhance: bool) -> GrayImage:
    """Zero intensities <= tau; optionally rescale survivors to peak at 1."""
    out = np.where(image.pixels > tau, image.pixels, 0.0)
    if enhance:
        peak = out.max() if out.size else 0.0
        if peak > 0:
            out = out / peak
    return GrayImage(out)


def surface_pipeline(
    frame_image, blade: Detection, params: FilterParams
) -> tuple[GrayImage, int]:
    """Run crop -> high-pass -> eroded-mask -> threshold on one blade.

    Returns the filtered crop and its count of nonzero pixels, a proxy for
    the amount of small-scale surface irregularity.
    """
    crop = crop_to_bbox(frame_image, blade.bbox)
    arr = np.asarray(frame_image.pixels if isinstance(frame_image, GrayImage) else frame_image)
    h = arr.shape[0]
    w = arr.shape[1]
    x0, y0, x1, y1 = clip_bbox_to_extent(blade.bbox, h, w)
    if blade.mask.shape != (h, w):
        raise DimensionError("blade mask extent does not match the frame image")
    mask_crop = BinaryMask.from_dense(blade.mask.dense[y0:y1, x0:x1])
    filtered = high_pass(crop, params)
    masked = apply_eroded_mask(filtered, mask_crop, params.erosion_radius)
    final = threshold_enhance(masked, params.tau, params.enhance)
    return final, int(np.count_nonzero(final.pixels))
