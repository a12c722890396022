"""Shared domain vocabulary: class labels, boxes, binary masks, detections, frames.

All types are immutable value objects once constructed and can be shared
freely between workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class BladetrackError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(BladetrackError):
    """Malformed encoded data (e.g. RLE run lengths that do not cover the grid)."""


class DimensionError(BladetrackError):
    """Operands have incompatible extents."""


class ValidationError(BladetrackError):
    """Input violates a documented invariant; message locates the offender."""


class EmptyInputError(BladetrackError):
    """An operation that needs at least one element received none."""


class ConfigError(BladetrackError):
    """A configuration value is out of range or inconsistent."""


class ClassLabel(enum.Enum):
    """The five object classes emitted by the segmentation model."""

    CASING = "Casing"
    COMPRESSOR_ROTOR = "CompressorRotor"
    SURFACE_DAMAGE = "SurfaceDamage"
    MATERIAL_SEPARATION = "MaterialSeparation"
    MATERIAL_DEFORMATION = "MaterialDeformation"

    @classmethod
    def parse(cls, name: str) -> "ClassLabel":
        for label in cls:
            if label.value == name:
                return label
        raise ValidationError(f"unknown class label: {name!r}")

    @property
    def is_damage(self) -> bool:
        return self in _DAMAGE_CLASSES

    @property
    def is_blade(self) -> bool:
        return self is ClassLabel.COMPRESSOR_ROTOR


_DAMAGE_CLASSES = frozenset(
    {
        ClassLabel.SURFACE_DAMAGE,
        ClassLabel.MATERIAL_SEPARATION,
        ClassLabel.MATERIAL_DEFORMATION,
    }
)

DAMAGE_CLASSES: tuple[ClassLabel, ...] = (
    ClassLabel.SURFACE_DAMAGE,
    ClassLabel.MATERIAL_SEPARATION,
    ClassLabel.MATERIAL_DEFORMATION,
)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner plus size, in pixels.

    Image convention: x rightward, y downward, origin at the top-left corner
    of the top-left pixel.
    """

    x: float
    y: float
    width: float
    height: float

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ValidationError(
                f"bounding box must have positive size, got {self.width}x{self.height}"
            )
        for v in (self.x, self.y, self.width, self.height):
            if not np.isfinite(v):
                raise ValidationError("bounding box coordinates must be finite")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.width / 2.0, self.y + self.height / 2.0)

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains_box(self, other: "BoundingBox") -> bool:
        """True when `other` lies fully inside this box (edges may touch)."""
        return (
            self.x <= other.x
            and self.y <= other.y
            and self.x + self.width >= other.x + other.width
            and self.y + self.height >= other.y + other.height
        )


class BinaryMask:
    """2D pixel-membership grid for one object instance.

    Stores either a dense boolean grid or a run-length encoding; whichever
    form is absent is derived on demand and cached. The RLE convention is
    row-major alternating run lengths starting with a 0-run (possibly of
    length zero), so decoding is unambiguous.
    """

    __slots__ = ("height", "width", "_dense", "_rle")

    def __init__(self, height: int, width: int, *, dense=None, rle=None):
        if height < 0 or width < 0:
            raise ValidationError("mask extent must be non-negative")
        self.height = int(height)
        self.width = int(width)
        self._dense = dense
        self._rle = rle

    @classmethod
    def from_dense(cls, grid) -> "BinaryMask":
        arr = np.ascontiguousarray(grid, dtype=bool)
        if arr.ndim != 2:
            raise ValidationError(f"dense mask must be 2D, got shape {arr.shape}")
        arr = arr.copy()
        arr.flags.writeable = False
        return cls(arr.shape[0], arr.shape[1], dense=arr)

    @classmethod
    def from_rle(cls, height: int, width: int, counts) -> "BinaryMask":
        counts = tuple(int(c) for c in counts)
        if any(c < 0 for c in counts):
            raise FormatError("RLE run lengths must be non-negative")
        total = sum(counts)
        if total != height * width:
            raise FormatError(
                f"RLE run lengths sum to {total}, expected {height}x{width}={height * width}"
            )
        return cls(height, width, rle=counts)

    @classmethod
    def zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls.from_dense(np.zeros((height, width), dtype=bool))

    @property
    def dense(self) -> np.ndarray:
        """Dense boolean grid, shape (height, width). Read-only view."""
        if self._dense is None:
            flat = np.repeat(
                np.arange(len(self._rle)) % 2 == 1, np.asarray(self._rle, dtype=np.int64)
            )
            arr = flat.reshape(self.height, self.width)
            arr.flags.writeable = False
            self._dense = arr
        return self._dense

    @property
    def rle(self) -> tuple[int, ...]:
        """Row-major run lengths, alternating 0s/1s, starting with a 0-run."""
        if self._rle is None:
            self._rle = _encode_rle(self._dense)
        return self._rle

    def area(self) -> int:
        """Number of 1-pixels; identical for dense and RLE forms."""
        if self._dense is not None:
            return int(np.count_nonzero(self._dense))
        return int(sum(self._rle[1::2]))

    def tight_bbox(self) -> BoundingBox | None:
        """Smallest box containing all 1-pixels, or None for an empty mask."""
        if self.area() == 0:
            return None
        rows, cols = np.nonzero(self.dense)
        x0, x1 = int(cols.min()), int(cols.max())
        y0, y1 = int(rows.min()), int(rows.max())
        return BoundingBox(x=float(x0), y=float(y0), width=float(x1 - x0 + 1), height=float(y1 - y0 + 1))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        if self.shape != other.shape:
            return False
        return bool(np.array_equal(self.dense, other.dense))

    def __hash__(self):
        raise TypeError("BinaryMask is not hashable")

    def __repr__(self) -> str:
        return f"BinaryMask({self.height}x{self.width}, area={self.area()})"


def _encode_rle(dense: np.ndarray) -> tuple[int, ...]:
    flat = dense.ravel()
    n = flat.size
    if n == 0:
        return ()
    boundaries = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], boundaries))
    lengths = np.diff(np.concatenate((starts, [n])))
    counts = [int(c) for c in lengths]
    if flat[0]:
        counts.insert(0, 0)
    return tuple(counts)


def mask_area(mask: BinaryMask) -> int:
    """Count of 1-pixels in the mask."""
    return mask.area()


def rle_round_trip(mask: BinaryMask) -> BinaryMask:
    """Encode the mask to RLE and decode it back; the result is bit-identical."""
    return BinaryMask.from_rle(mask.height, mask.width, mask.rle)


@dataclass(frozen=True)
class Detection:
    """One detected instance: class, confidence, box and mask.

    Confidence is clamped to [0, 1] on construction because upstream
    exporters occasionally emit values a rounding error above 1. The box
    must contain the tight bounding rectangle of the mask's 1-pixels (it may
    be looser, never tighter).
    """

    label: ClassLabel
    confidence: float
    bbox: BoundingBox
    mask: BinaryMask

    def __post_init__(self) -> None:
        conf = min(1.0, max(0.0, float(self.confidence)))
        object.__setattr__(self, "confidence", conf)
        tight = self.mask.tight_bbox()
        if tight is not None and not self.bbox.contains_box(tight):
            raise ValidationError(
                f"bbox {self.bbox} does not contain the mask's tight bounds {tight}"
            )
        if self.mask.area() > self.bbox.area:
            raise ValidationError("mask area exceeds bbox area")


@dataclass(frozen=True)
class FrameDetections:
    """All detections of one video frame."""

    frame_index: int
    image_width: int
    image_height: int
    detections: tuple[Detection, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValidationError("frame_index must be non-negative")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValidationError("image extent must be positive")
        object.__setattr__(self, "detections", tuple(self.detections))
        for i, det in enumerate(self.detections):
            if det.mask.shape != (self.image_height, self.image_width):
                raise DimensionError(
                    f"detection {i} mask extent {det.mask.shape} does not match "
                    f"frame extent ({self.image_height}, {self.image_width})"
                )
