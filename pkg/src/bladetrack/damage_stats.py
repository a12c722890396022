"""Per-blade damage statistics: time series, spanwise row summaries, impact.

Damage detections are attributed to the tracked blade whose mask they
overlap most; per frame each blade gets its projected-area fraction of the
image and, per damage class, the damaged fraction of its own area. Row
summaries localize damage into four spanwise regions along the blade's
principal axis and reduce over frames (mean for surface damage, the
maximum-projected-area frame for separation and deformation). A weighted
linear functional of the summarized extents gives the per-blade
performance-impact value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_types import (
    DAMAGE_CLASSES,
    BinaryMask,
    ClassLabel,
    EmptyInputError,
    FrameDetections,
    ValidationError,
)
from .geometry import overlap_area, principal_axis
from .tracking import TrackedSequence

N_REGIONS = 4


@dataclass(frozen=True)
class TimeSeriesSample:
    frame_index: int
    blade_area_fraction: float
    damage_fractions: dict[ClassLabel, float]


@dataclass(frozen=True)
class DamageTimeSeries:
    """Damage evolution of one blade over the frames where it is assigned."""

    blade_id: int
    samples: tuple[TimeSeriesSample, ...]


@dataclass(frozen=True)
class RowSummary:
    """Per-blade, per-class damage extents split into 4 spanwise regions.

    Extents are fractions of the blade's projected area. Surface damage is
    the arithmetic mean over all frames where the blade is assigned;
    separation and deformation come from the single frame of maximum
    projected area (earliest on ties), recorded in `max_area_frame`.
    Regions are quantile chunks of the pixel projections onto the blade
    mask's principal axis; the region index orientation follows the axis'
    canonical sign and carries no physical root-to-tip meaning.
    """

    extents: dict[int, dict[ClassLabel, tuple[float, float, float, float]]]
    max_area_frame: dict[int, int]


@dataclass(frozen=True)
class ImpactWeights:
    """Per-damage-class weights and optional per-region multipliers."""

    weights: dict[ClassLabel, float]
    region_multipliers: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        for label, w in self.weights.items():
            if not label.is_damage:
                raise ValidationError(f"impact weight for non-damage class {label.value}")
            if w < 0:
                raise ValidationError("impact weights must be >= 0")
        if len(self.region_multipliers) != N_REGIONS:
            raise ValidationError(f"need {N_REGIONS} region multipliers")
        if any(m < 0 for m in self.region_multipliers):
            raise ValidationError("region multipliers must be >= 0")
        if not any(w > 0 for w in self.weights.values()):
            raise ValidationError("at least one impact weight must be > 0")


def assign_damage(
    frame: FrameDetections, blade_ids: tuple[int | None, ...] | list[int | None]
) -> dict[int, int | None]:
    """Attribute each damage detection to the blade it overlaps most.

    `blade_ids` aligns with the frame's detections and holds the tracked ID
    for rotor detections (None elsewhere). Returns damage detection index
    -> blade ID, with None when the damage overlaps no tracked blade.
    Overlap ties go to the lower blade ID.
    """
    blades = [
        (blade_ids[i], det)
        for i, det in enumerate(frame.detections)
        if blade_ids[i] is not None
    ]
    result: dict[int, int | None] = {}
    for i, det in enumerate(frame.detections):
        if not det.label.is_damage:
            continue
        best_id: int | None = None
        best_overlap = 0
        for blade_id, blade in sorted(blades, key=lambda b: b[0]):
            ov = overlap_area(det.mask, blade.mask)
            if ov > best_overlap:
                best_overlap = ov
                best_id = blade_id
        result[i] = best_id
    return result


def time_series(tracked: TrackedSequence) -> list[DamageTimeSeries]:
    """Per-blade damage time series over the tracked frames.

    For each frame where a blade is assigned: its mask area as a fraction
    of the image, and per damage class the summed overlap of its assigned
    damage with the blade mask, as a fraction of the blade area. Counting
    the overlap (not the full damage mask) keeps fractions within [0, 1].
    Frames where a blade is not assigned contribute no sample.
    """
    per_blade: dict[int, list[TimeSeriesSample]] = {}
    for frame, ids in zip(tracked.frames, tracked.assignments):
        image_pixels = frame.image_width * frame.image_height
        damage_owner = assign_damage(frame, ids)
        det_of_id = {blade_id: i for i, blade_id in enumerate(ids) if blade_id is not None}
        for blade_id, det_idx in det_of_id.items():
            blade = frame.detections[det_idx]
            blade_area = blade.mask.area()
            damage_px = {label: 0 for label in DAMAGE_CLASSES}
            for dmg_idx, owner in damage_owner.items():
                if owner != blade_id:
                    continue
                dmg = frame.detections[dmg_idx]
                damage_px[dmg.label] += overlap_area(dmg.mask, blade.mask)
            sample = TimeSeriesSample(
                frame_index=frame.frame_index,
                blade_area_fraction=blade_area / image_pixels,
                damage_fractions={
                    label: damage_px[label] / blade_area for label in DAMAGE_CLASSES
                },
            )
            per_blade.setdefault(blade_id, []).append(sample)
    return [
        DamageTimeSeries(blade_id=blade_id, samples=tuple(samples))
        for blade_id, samples in sorted(per_blade.items())
    ]


def spanwise_partition(blade_mask: BinaryMask) -> tuple[BinaryMask, BinaryMask, BinaryMask, BinaryMask]:
    """Split a blade mask into 4 disjoint spanwise regions covering it.

    Pixels are projected onto the mask's principal axis and the sorted
    projections are cut at their 25/50/75 quantiles; ties keep row-major
    pixel order, so the partition is deterministic.
    """
    if blade_mask.area() == 0:
        raise EmptyInputError("cannot partition an empty mask")
    axis, mean = principal_axis(blade_mask)
    rows, cols = np.nonzero(blade_mask.dense)
    proj = (cols - mean[0]) * axis[0] + (rows - mean[1]) * axis[1]
    order = np.argsort(proj, kind="stable")  # nonzero() enumerates row-major
    n = len(order)
    bounds = [round(k * n / N_REGIONS) for k in range(N_REGIONS + 1)]
    regions = []
    for k in range(N_REGIONS):
        grid = np.zeros(blade_mask.shape, dtype=bool)
        sel = order[bounds[k] : bounds[k + 1]]
        grid[rows[sel], cols[sel]] = True
        regions.append(BinaryMask.from_dense(grid))
    return tuple(regions)


def row_summary(tracked: TrackedSequence) -> RowSummary:
    """Reduce per-frame, per-region damage fractions to one row summary.

    Region attribution happens per frame: each damage-overlap pixel counts
    in the spanwise region of that frame's blade mask containing it.
    """
    # blade_id -> list of (frame_index, blade_area, {class: 4 region fractions})
    per_blade: dict[int, list[tuple[int, int, dict[ClassLabel, np.ndarray]]]] = {}
    for frame, ids in zip(tracked.frames, tracked.assignments):
        damage_owner = assign_damage(frame, ids)
        det_of_id = {blade_id: i for i, blade_id in enumerate(ids) if blade_id is not None}
        for blade_id, det_idx in det_of_id.items():
            blade = frame.detections[det_idx]
            blade_area = blade.mask.area()
            regions = spanwise_partition(blade.mask)
            fractions = {
                label: np.zeros(N_REGIONS) for label in DAMAGE_CLASSES
            }
            for dmg_idx, owner in damage_owner.items():
                if owner != blade_id:
                    continue
                dmg = frame.detections[dmg_idx]
                for r, region in enumerate(regions):
                    fractions[dmg.label][r] += overlap_area(dmg.mask, region) / blade_area
            per_blade.setdefault(blade_id, []).append((frame.frame_index, blade_area, fractions))

    extents: dict[int, dict[ClassLabel, tuple[float, float, float, float]]] = {}
    max_area_frame: dict[int, int] = {}
    for blade_id, entries in sorted(per_blade.items()):
        best = max(entries, key=lambda e: e[1])  # max() keeps the earliest on ties
        max_area_frame[blade_id] = best[0]
        surface = np.mean([e[2][ClassLabel.SURFACE_DAMAGE] for e in entries], axis=0)
        extents[blade_id] = {
            ClassLabel.SURFACE_DAMAGE: tuple(float(v) for v in surface),
            ClassLabel.MATERIAL_SEPARATION: tuple(
                float(v) for v in best[2][ClassLabel.MATERIAL_SEPARATION]
            ),
            ClassLabel.MATERIAL_DEFORMATION: tuple(
                float(v) for v in best[2][ClassLabel.MATERIAL_DEFORMATION]
            ),
        }
    return RowSummary(extents=extents, max_area_frame=max_area_frame)


def performance_impact(summary: RowSummary, w: ImpactWeights) -> dict[int, float]:
    """Per-blade impact value: weighted sum of class/region damage extents."""
    result = {}
    for blade_id, by_class in summary.extents.items():
        total = 0.0
        for label, regions in by_class.items():
            weight = w.weights.get(label, 0.0)
            for extent, mult in zip(regions, w.region_multipliers):
                total += weight * mult * extent
        result[blade_id] = total
    return result
