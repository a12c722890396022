"""Synthetic borescope-like sequences with exact ground truth.

Blades are slanted parallelograms translating horizontally across the
frame, entering and leaving at the edges, optionally reversing direction on
schedule. Damage patches are carved out of the blade masks themselves with
exact pixel counts, so every reported fraction has a known true value. A
perturbation pass degrades the detections (dropout, jitter, confidence
noise) deterministically per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core_types import (
    BinaryMask,
    BoundingBox,
    ClassLabel,
    ConfigError,
    Detection,
    FrameDetections,
)
from .geometry import Polygon, rasterize_polygon
from .surface_filter import GrayImage
from .tracking import TrackedSequence, association_accuracy, optimal_relabeling


@dataclass(frozen=True)
class DamageSpec:
    """One injected damage patch on one blade.

    `rect` positions the patch relative to the blade's visible bounding box
    (fractions of its width/height); `fraction` is the target share of the
    blade's visible area, realized exactly as round(fraction * area) pixels
    taken row-major from the blade pixels inside the rectangle.
    """

    blade: int
    label: ClassLabel
    fraction: float
    rect: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    amplitude: float = 0.3

    def __post_init__(self) -> None:
        if not self.label.is_damage:
            raise ConfigError(f"injected damage must use a damage class, got {self.label.value}")
        if not (0.0 <= self.fraction <= 1.0):
            raise ConfigError("damage fraction must lie in [0, 1]")


@dataclass(frozen=True)
class SynthConfig:
    """Scene layout, motion schedule and noise knobs for the generator."""

    image_width: int = 384
    image_height: int = 288
    blade_count: int = 97
    fps: int = 25
    frame_count: int = 50
    displacement: float = 5.0
    spacing: float = 60.0
    blade_width: float = 40.0
    blade_height: float = 200.0
    slant: float = 20.0
    start_x: float = 150.0
    initial_direction: int = 1
    reversal_frames: tuple[int, ...] = ()
    damage: tuple[DamageSpec, ...] = ()
    dropout: float = 0.0
    jitter_std: float = 0.0
    confidence_std: float = 0.0
    seed: int = 0
    background: float = 0.05
    blade_intensity: float = 0.5

    def __post_init__(self) -> None:
        if self.displacement < 0:
            raise ConfigError("displacement must be >= 0")
        if not (0.0 <= self.dropout <= 1.0):
            raise ConfigError("dropout must lie in [0, 1]")
        if self.jitter_std < 0 or self.confidence_std < 0:
            raise ConfigError("noise standard deviations must be >= 0")
        if self.blade_count < 1 or self.frame_count < 1:
            raise ConfigError("blade_count and frame_count must be >= 1")
        if self.blade_width > self.image_width or (
            self.blade_height + abs(self.slant) > self.image_height
        ):
            raise ConfigError("blade shape does not fit inside the image")
        if self.initial_direction not in (-1, 1):
            raise ConfigError("initial_direction must be -1 or +1")


@dataclass(frozen=True)
class DamageTruth:
    """One true damage patch; det_index is None when its detection was dropped."""

    label: ClassLabel
    det_index: int | None
    pixel_count: int
    fraction: float


@dataclass(frozen=True)
class BladeTruth:
    """One true blade; det_index is None when its detection was dropped."""

    blade_id: int
    det_index: int | None
    damages: tuple[DamageTruth, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class FrameTruth:
    frame_index: int
    blades: tuple[BladeTruth, ...]


@dataclass(frozen=True)
class GroundTruth:
    frames: tuple[FrameTruth, ...]

    def id_lists(self, frames: list[FrameDetections]) -> list[list[int | None]]:
        """Per-frame true blade IDs aligned with the detection lists."""
        out = []
        for frame, truth in zip(frames, self.frames):
            ids: list[int | None] = [None] * len(frame.detections)
            for blade in truth.blades:
                if blade.det_index is not None:
                    ids[blade.det_index] = blade.blade_id
            out.append(ids)
        return out


def _direction(cfg: SynthConfig, t: int) -> int:
    flips = sum(1 for r in cfg.reversal_frames if r <= t)
    return cfg.initial_direction * (-1 if flips % 2 else 1)


def _offsets(cfg: SynthConfig) -> list[float]:
    off = [0.0]
    for t in range(1, cfg.frame_count):
        off.append(off[-1] + cfg.displacement * _direction(cfg, t))
    return off


def generate(cfg: SynthConfig) -> tuple[list[FrameDetections], list[GrayImage], GroundTruth]:
    """Render the configured scene into detections, images and ground truth.

    All detections carry confidence 1.0; noise belongs to `perturb`. Blades
    are listed left to right within each frame, each rotor followed by its
    damage detections.
    """
    damage_by_blade: dict[int, list[DamageSpec]] = {}
    for spec in cfg.damage:
        damage_by_blade.setdefault(spec.blade, []).append(spec)

    y0 = (cfg.image_height - cfg.blade_height - abs(cfg.slant)) / 2.0
    if cfg.slant < 0:
        y0 += abs(cfg.slant)
    offsets = _offsets(cfg)
    frames: list[FrameDetections] = []
    images: list[GrayImage] = []
    truth_frames: list[FrameTruth] = []
    for t in range(cfg.frame_count):
        detections: list[Detection] = []
        blade_truths: list[BladeTruth] = []
        canvas = np.full((cfg.image_height, cfg.image_width), cfg.background)
        order = sorted(range(cfg.blade_count), key=lambda i: _blade_x(cfg, i, offsets[t]))
        for i in order:
            x = _blade_x(cfg, i, offsets[t])
            if x + cfg.blade_width <= 0 or x >= cfg.image_width:
                continue
            poly = Polygon(
                (
                    (x, y0),
                    (x + cfg.blade_width, y0 + cfg.slant),
                    (x + cfg.blade_width, y0 + cfg.slant + cfg.blade_height),
                    (x, y0 + cfg.blade_height),
                )
            )
            mask = rasterize_polygon(poly, cfg.image_height, cfg.image_width)
            if mask.area() == 0:
                continue
            canvas[mask.dense] = cfg.blade_intensity
            rotor_index = len(detections)
            detections.append(
                Detection(
                    label=ClassLabel.COMPRESSOR_ROTOR,
                    confidence=1.0,
                    bbox=mask.tight_bbox(),
                    mask=mask,
                )
            )
            damage_truths = []
            for spec in damage_by_blade.get(i, ()):
                dmg_mask, count = _carve_damage(mask, spec)
                if count == 0:
                    continue
                canvas[dmg_mask.dense] = np.clip(cfg.blade_intensity + spec.amplitude, 0.0, 1.0)
                damage_truths.append(
                    DamageTruth(
                        label=spec.label,
                        det_index=len(detections),
                        pixel_count=count,
                        fraction=count / mask.area(),
                    )
                )
                detections.append(
                    Detection(
                        label=spec.label,
                        confidence=1.0,
                        bbox=dmg_mask.tight_bbox(),
                        mask=dmg_mask,
                    )
                )
            blade_truths.append(
                BladeTruth(blade_id=i, det_index=rotor_index, damages=tuple(damage_truths))
            )
        frames.append(
            FrameDetections(
                frame_index=t,
                image_width=cfg.image_width,
                image_height=cfg.image_height,
                detections=tuple(detections),
            )
        )
        images.append(GrayImage(canvas))
        truth_frames.append(FrameTruth(frame_index=t, blades=tuple(blade_truths)))
    return frames, images, GroundTruth(frames=tuple(truth_frames))


def _blade_x(cfg: SynthConfig, blade: int, offset: float) -> float:
    return cfg.start_x - blade * cfg.spacing * cfg.initial_direction + offset


def _carve_damage(blade_mask: BinaryMask, spec: DamageSpec) -> tuple[BinaryMask, int]:
    """Exact-count damage sub-mask inside the spec rectangle of the blade."""
    area = blade_mask.area()
    count = round(spec.fraction * area)
    if count == 0:
        return BinaryMask.zeros(*blade_mask.shape), 0
    box = blade_mask.tight_bbox()
    rx, ry, rw, rh = spec.rect
    x_lo = box.x + rx * box.width
    x_hi = box.x + (rx + rw) * box.width
    y_lo = box.y + ry * box.height
    y_hi = box.y + (ry + rh) * box.height
    rows, cols = np.nonzero(blade_mask.dense)  # row-major order
    inside = (cols >= x_lo) & (cols < x_hi) & (rows >= y_lo) & (rows < y_hi)
    available = int(np.count_nonzero(inside))
    if available < count:
        raise ConfigError(
            f"damage rectangle holds {available} blade pixels, need {count} "
            f"for fraction {spec.fraction}"
        )
    sel = np.flatnonzero(inside)[:count]
    grid = np.zeros(blade_mask.shape, dtype=bool)
    grid[rows[sel], cols[sel]] = True
    return BinaryMask.from_dense(grid), count


def perturb(
    frames: list[FrameDetections], truth: GroundTruth, cfg: SynthConfig
) -> tuple[list[FrameDetections], GroundTruth]:
    """Degrade detections: dropout, integer jitter, confidence noise.

    Noise draws come from per-(frame, detection) derived substreams, so the
    result does not depend on processing order. A detection whose jittered
    mask leaves the image entirely is dropped. Returns the degraded frames
    with a ground truth whose det_index values are re-aligned to the
    surviving detections; dropped ones keep their truth entry with
    det_index None, so the true scene stays fully described.
    """
    out_frames: list[FrameDetections] = []
    out_truth: list[FrameTruth] = []
    for frame, frame_truth in zip(frames, truth.frames):
        survivors: list[Detection] = []
        index_map: dict[int, int] = {}
        for d, det in enumerate(frame.detections):
            rng = np.random.default_rng(
                np.random.SeedSequence((cfg.seed, frame.frame_index, d))
            )
            if rng.uniform() < cfg.dropout:
                continue
            dx = int(round(rng.normal(0.0, cfg.jitter_std))) if cfg.jitter_std else 0
            dy = int(round(rng.normal(0.0, cfg.jitter_std))) if cfg.jitter_std else 0
            noise = rng.normal(0.0, cfg.confidence_std) if cfg.confidence_std else 0.0
            moved = _translate_mask(det.mask, dx, dy)
            if moved.area() == 0 and det.mask.area() > 0:
                continue
            bbox = BoundingBox(det.bbox.x + dx, det.bbox.y + dy, det.bbox.width, det.bbox.height)
            index_map[d] = len(survivors)
            survivors.append(
                Detection(
                    label=det.label,
                    confidence=min(1.0, max(0.0, det.confidence + noise)),
                    bbox=bbox,
                    mask=moved,
                )
            )
        out_frames.append(replace(frame, detections=tuple(survivors)))
        blades = []
        for blade in frame_truth.blades:
            damages = tuple(
                replace(dmg, det_index=index_map.get(dmg.det_index))
                for dmg in blade.damages
            )
            blades.append(
                replace(blade, det_index=index_map.get(blade.det_index), damages=damages)
            )
        out_truth.append(FrameTruth(frame_index=frame_truth.frame_index, blades=tuple(blades)))
    return out_frames, GroundTruth(frames=tuple(out_truth))


def _translate_mask(mask: BinaryMask, dx: int, dy: int) -> BinaryMask:
    if dx == 0 and dy == 0:
        return mask
    grid = np.zeros(mask.shape, dtype=bool)
    h, w = mask.shape
    src = mask.dense
    src_r = slice(max(0, -dy), min(h, h - dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_r = slice(max(0, dy), min(h, h + dy))
    dst_c = slice(max(0, dx), min(w, w + dx))
    grid[dst_r, dst_c] = src[src_r, src_c]
    return BinaryMask.from_dense(grid)


def oracle_check(
    pred: TrackedSequence, truth: GroundTruth
) -> tuple[float, list[str]]:
    """Association accuracy against ground truth plus a mismatch listing.

    The listing names every rotor detection whose relabeled predicted ID
    disagrees with the truth, one line per mismatch; it is empty exactly
    when the accuracy is 1.0.
    """
    truth_ids = truth.id_lists(list(pred.frames))
    accuracy = association_accuracy(pred, truth_ids)
    mapping = optimal_relabeling(pred, truth_ids)
    diff: list[str] = []
    for frame, frame_truth, assigned in zip(pred.frames, truth_ids, pred.assignments):
        for d, true_id in enumerate(frame_truth):
            if true_id is None:
                continue
            got = assigned[d]
            relabeled = mapping.get(got) if got is not None else None
            if relabeled != true_id:
                diff.append(
                    f"frame {frame.frame_index} detection {d}: "
                    f"expected blade {true_id}, got "
                    f"{'unassigned' if got is None else f'{got} (~{relabeled})'}"
                )
    return accuracy, diff
