"""Pure mask/box geometry: overlap ratios, centers, rasterization, erosion.

Everything here is a pure function over immutable inputs; all operations
give identical results for dense- and RLE-backed masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_types import BinaryMask, BoundingBox, DimensionError, EmptyInputError, ValidationError


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValidationError("point coordinates must be finite")


@dataclass(frozen=True)
class Polygon:
    """Implicitly closed vertex ring, >= 3 vertices, pixel coordinates."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValidationError(f"polygon needs >= 3 vertices, got {len(verts)}")
        for x, y in verts:
            if math.isnan(x) or math.isnan(y):
                raise ValidationError("polygon vertices must not be NaN")
        object.__setattr__(self, "vertices", verts)


def _require_same_extent(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"mask extents differ: {a.shape} vs {b.shape}")


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection area over union area of two equal-extent masks.

    Both empty (union of area zero) is defined as 0, the conservative
    choice for evaluation.
    """
    _require_same_extent(a, b)
    da, db = a.dense, b.dense
    inter = int(np.count_nonzero(da & db))
    union = int(np.count_nonzero(da | db))
    if union == 0:
        return 0.0
    return inter / union


def overlap_area(a: BinaryMask, b: BinaryMask) -> int:
    """Pixel count of the intersection of two equal-extent masks."""
    _require_same_extent(a, b)
    return int(np.count_nonzero(a.dense & b.dense))


def bbox_center(box: BoundingBox) -> Point2:
    cx, cy = box.center
    return Point2(cx, cy)


def center_distance(a: BoundingBox, b: BoundingBox) -> float:
    """Euclidean distance between the centers of two boxes."""
    ca, cb = a.center, b.center
    return math.hypot(ca[0] - cb[0], ca[1] - cb[1])


def rasterize_polygon(polygon: Polygon, height: int, width: int) -> BinaryMask:
    """Rasterize a polygon onto a pixel grid.

    A pixel is set iff its center (col + 0.5, row + 0.5) lies inside the
    polygon under the even-odd rule; pixels outside the extent are clipped.
    A degenerate (zero-area) polygon yields an empty mask.

    Implemented as a scanline sweep: for each pixel row, the crossings of
    the horizontal line through the pixel centers are collected and sorted,
    and pixels between alternating crossing pairs are filled. A center with
    k crossings strictly to its right is inside iff k is odd, which makes
    the fill boundaries half-open: [left crossing, right crossing).
    """
    grid = np.zeros((height, width), dtype=bool)
    verts = polygon.vertices
    n = len(verts)
    xs = np.array([v[0] for v in verts])
    ys = np.array([v[1] for v in verts])
    xs2 = np.roll(xs, -1)
    ys2 = np.roll(ys, -1)
    centers_x = np.arange(width) + 0.5

    y_min = max(0, int(math.floor(min(ys) - 0.5)))
    y_max = min(height - 1, int(math.ceil(max(ys) - 0.5)))
    for row in range(y_min, y_max + 1):
        yc = row + 0.5
        crossing = (ys > yc) != (ys2 > yc)
        if not crossing.any():
            continue
        x1, y1 = xs[crossing], ys[crossing]
        x2, y2 = xs2[crossing], ys2[crossing]
        xi = np.sort((yc - y1) * (x2 - x1) / (y2 - y1) + x1)
        for k in range(0, len(xi) - 1, 2):
            lo = int(np.searchsorted(centers_x, xi[k], side="left"))
            hi = int(np.searchsorted(centers_x, xi[k + 1], side="left"))
            if hi > lo:
                grid[row, lo:hi] = True
    return BinaryMask.from_dense(grid)


def erode(mask: BinaryMask, radius: int) -> BinaryMask:
    """Morphological erosion by a (2*radius+1)^2 square structuring element.

    An output pixel is 1 iff every pixel under the element footprint is 1;
    pixels outside the image count as 0, so masks touching the frame edge
    erode there too. The square element is separable, so the erosion runs
    as a horizontal pass followed by a vertical pass.
    """
    if radius < 1:
        raise ValidationError(f"erosion radius must be >= 1, got {radius}")
    out = _erode_1d(mask.dense, radius, axis=1)
    out = _erode_1d(out, radius, axis=0)
    return BinaryMask.from_dense(out)


def _erode_1d(grid: np.ndarray, radius: int, axis: int) -> np.ndarray:
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(grid, pad, mode="constant", constant_values=False)
    n = grid.shape[axis]
    out = np.ones_like(grid)
    for offset in range(2 * radius + 1):
        window = np.take(padded, range(offset, offset + n), axis=axis)
        out &= window
    return out


def erode_grid(grid: np.ndarray, radius: int) -> np.ndarray:
    """Erosion on a raw boolean grid; same semantics as `erode`."""
    if radius < 1:
        raise ValidationError(f"erosion radius must be >= 1, got {radius}")
    out = _erode_1d(np.ascontiguousarray(grid, dtype=bool), radius, axis=1)
    return _erode_1d(out, radius, axis=0)


def principal_axis(mask: BinaryMask) -> tuple[np.ndarray, np.ndarray]:
    """Principal axis of the mask's 1-pixel coordinates.

    Returns (unit axis vector (vx, vy), mean (mx, my)). The axis is the
    eigenvector of the larger eigenvalue of the 2x2 covariance of the pixel
    (x, y) coordinates, with a canonical sign: vx > 0, or vy > 0 when
    vx == 0, so the result does not depend on eigen-solver conventions.
    """
    if mask.area() == 0:
        raise EmptyInputError("cannot compute the principal axis of an empty mask")
    rows, cols = np.nonzero(mask.dense)
    pts = np.stack([cols.astype(float), rows.astype(float)], axis=1)
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / len(pts)
    eigvals, eigvecs = np.linalg.eigh(cov)
    axis = eigvecs[:, int(np.argmax(eigvals))]
    if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
        axis = -axis
    return axis, mean
