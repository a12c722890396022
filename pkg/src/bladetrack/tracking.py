"""Persistent blade identity assignment across a frame sequence.

Rotor detections passing the validity thresholds are matched frame to frame
by bounding-box center distance with a configurable lookback, and blades
that slide out of view are remembered on per-side leaving stacks so they
can reacquire their IDs when the row reverses and they re-enter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core_types import (
    ClassLabel,
    Detection,
    DimensionError,
    EmptyInputError,
    FrameDetections,
    ValidationError,
)
from .geometry import center_distance


@dataclass(frozen=True)
class TrackingConfig:
    """Thresholds and lookback horizon for the tracker.

    distance_threshold: maximum center displacement (pixels) for a match.
    area_threshold: minimum mask area (exclusive) for a rotor to be tracked.
    confidence_threshold: minimum detection confidence (exclusive).
    lookback: how many previous frames to consult for a match.
    image_width: frame width; centers left of width/2 count as the left
        half, the exact midpoint counts as the right half.
    """

    distance_threshold: float
    area_threshold: float = 0.0
    confidence_threshold: float = 0.0
    lookback: int = 1
    image_width: int = 0

    def __post_init__(self) -> None:
        if self.distance_threshold <= 0:
            raise ValidationError("distance_threshold must be > 0")
        if self.area_threshold < 0:
            raise ValidationError("area_threshold must be >= 0")
        if not (0.0 <= self.confidence_threshold <= 1.0):
            raise ValidationError("confidence_threshold must lie in [0, 1]")
        if self.lookback < 1:
            raise ValidationError("lookback must be >= 1")
        if self.image_width <= 0:
            raise ValidationError("image_width must be > 0")


@dataclass(frozen=True)
class TrackedSequence:
    """Per-frame ID assignments plus the final leaving-stack state.

    `assignments[f][d]` is the blade ID of detection d in frame f, or None
    for detections that were not tracked (wrong class or below a threshold).
    """

    frames: tuple[FrameDetections, ...]
    assignments: tuple[tuple[int | None, ...], ...]
    left_leaving: tuple[int, ...]
    right_leaving: tuple[int, ...]
    next_fresh_id: int

    def ids_in_frame(self, frame_pos: int) -> set[int]:
        return {i for i in self.assignments[frame_pos] if i is not None}

    def check_invariants(self) -> None:
        for pos, ids in enumerate(self.assignments):
            assigned = [i for i in ids if i is not None]
            if len(assigned) != len(set(assigned)):
                raise ValidationError(f"duplicate blade ID within frame position {pos}")
            if any(i >= self.next_fresh_id for i in assigned):
                raise ValidationError("assigned ID not below next_fresh_id")
        stacks = list(self.left_leaving) + list(self.right_leaving)
        if len(stacks) != len(set(stacks)):
            raise ValidationError("leaving stacks contain a duplicate ID")
        if self.assignments and set(stacks) & self.ids_in_frame(len(self.assignments) - 1):
            raise ValidationError("leaving stack holds an ID visible in the latest frame")


def validate(frame: FrameDetections, cfg: TrackingConfig) -> list[int]:
    """Indices of rotor detections passing the area and confidence thresholds.

    Only CompressorRotor detections are ever tracked; both thresholds are
    exclusive, so lowering either never invalidates a valid detection.
    """
    return [
        i
        for i, det in enumerate(frame.detections)
        if det.label is ClassLabel.COMPRESSOR_ROTOR
        and det.mask.area() > cfg.area_threshold
        and det.confidence > cfg.confidence_threshold
    ]


def _is_left_half(det: Detection, image_width: int) -> bool:
    return det.bbox.center[0] < image_width / 2.0


def track(frames: list[FrameDetections], cfg: TrackingConfig) -> TrackedSequence:
    """Assign persistent blade IDs across a frame sequence.

    Frame by frame: valid rotors are matched to the nearest valid rotor k
    frames back (k = 1..lookback, by frame index) whose ID has not been
    claimed yet this frame, requiring the center distance to beat the
    threshold. Unmatched blades then reacquire the most recent ID from the
    leaving stack matching their half of the frame, or get a fresh ID.
    Finally, IDs seen in the previous frame but missing now are pushed onto
    the leaving stack of the side where they were last seen.

    Within a frame, blades are processed in descending confidence, ties
    broken by ascending bbox x, so the most trustworthy detection claims
    first; each previous ID can be claimed at most once per frame.
    """
    if not frames:
        raise EmptyInputError("track requires at least one frame")
    extent = (frames[0].image_height, frames[0].image_width)
    for f in frames:
        if (f.image_height, f.image_width) != extent:
            raise DimensionError(f"frame {f.frame_index} extent differs from the first frame")
    if cfg.image_width != frames[0].image_width:
        raise DimensionError(
            f"config image_width {cfg.image_width} does not match frames ({frames[0].image_width})"
        )
    indices = [f.frame_index for f in frames]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise ValidationError("frame_index values must be strictly increasing")

    left_leaving: list[int] = []
    right_leaving: list[int] = []
    next_fresh_id = 0
    # frame_index -> {blade_id: detection} for valid assigned blades
    history: dict[int, dict[int, Detection]] = {}
    assignments: list[tuple[int | None, ...]] = []
    prev_frame_ids: dict[int, Detection] = {}

    for frame in frames:
        valid = validate(frame, cfg)
        order = sorted(
            valid, key=lambda i: (-frame.detections[i].confidence, frame.detections[i].bbox.x)
        )
        frame_ids: dict[int, int] = {}  # detection index -> blade id
        claimed: set[int] = set()

        def assign(det_index: int, blade_id: int) -> None:
            frame_ids[det_index] = blade_id
            claimed.add(blade_id)
            if blade_id in left_leaving:
                left_leaving.remove(blade_id)
            if blade_id in right_leaving:
                right_leaving.remove(blade_id)

        if not history:  # first frame: all valid blades are new
            for i in order:
                assign(i, next_fresh_id)
                next_fresh_id += 1
        else:
            unmatched = list(order)
            for k in range(1, cfg.lookback + 1):
                past = history.get(frame.frame_index - k)
                if not past:
                    continue
                still = []
                for i in unmatched:
                    candidates = [
                        (blade_id, det) for blade_id, det in past.items() if blade_id not in claimed
                    ]
                    if not candidates:
                        still.append(i)
                        continue
                    dists = [
                        center_distance(frame.detections[i].bbox, det.bbox)
                        for _, det in candidates
                    ]
                    best = int(np.argmin(dists))
                    if dists[best] < cfg.distance_threshold:
                        assign(i, candidates[best][0])
                    else:
                        still.append(i)
                unmatched = still
            for i in unmatched:
                if _is_left_half(frame.detections[i], cfg.image_width) and left_leaving:
                    assign(i, left_leaving[-1])
                elif not _is_left_half(frame.detections[i], cfg.image_width) and right_leaving:
                    assign(i, right_leaving[-1])
                else:
                    assign(i, next_fresh_id)
                    next_fresh_id += 1

        # Blades assigned in the immediately previous frame but absent now
        # leave on the side where they were last seen.
        for blade_id, det in prev_frame_ids.items():
            if blade_id in claimed:
                continue
            if blade_id in left_leaving:
                left_leaving.remove(blade_id)
            if blade_id in right_leaving:
                right_leaving.remove(blade_id)
            if _is_left_half(det, cfg.image_width):
                left_leaving.append(blade_id)
            else:
                right_leaving.append(blade_id)

        assignments.append(
            tuple(frame_ids.get(i) for i in range(len(frame.detections)))
        )
        by_id = {blade_id: frame.detections[i] for i, blade_id in frame_ids.items()}
        history[frame.frame_index] = by_id
        prev_frame_ids = by_id

    result = TrackedSequence(
        frames=tuple(frames),
        assignments=tuple(assignments),
        left_leaving=tuple(left_leaving),
        right_leaving=tuple(right_leaving),
        next_fresh_id=next_fresh_id,
    )
    result.check_invariants()
    return result


def _confusion_pairs(
    pred: TrackedSequence, truth_ids: list[list[int | None]]
) -> tuple[list[tuple[int, int]], int]:
    """(truth, predicted) ID pairs over detections with a ground-truth ID,
    plus the size of that universe (predicted-None detections count toward
    the total but produce no pair)."""
    if len(truth_ids) != len(pred.assignments):
        raise DimensionError("truth and prediction frame counts differ")
    pairs: list[tuple[int, int]] = []
    total = 0
    for frame_truth, frame_pred in zip(truth_ids, pred.assignments):
        if len(frame_truth) != len(frame_pred):
            raise DimensionError("truth and prediction detection counts differ")
        for t, p in zip(frame_truth, frame_pred):
            if t is None:
                continue
            total += 1
            if p is not None:
                pairs.append((t, p))
    return pairs, total


def _best_assignment(pairs: list[tuple[int, int]]) -> tuple[dict[int, int], int]:
    """Bijective predicted->truth relabeling maximizing agreement, with the
    matched count, via optimal assignment on the confusion count matrix."""
    truth_labels = sorted({t for t, _ in pairs})
    pred_labels = sorted({p for _, p in pairs})
    counts = np.zeros((len(truth_labels), len(pred_labels)), dtype=np.int64)
    t_pos = {t: i for i, t in enumerate(truth_labels)}
    p_pos = {p: i for i, p in enumerate(pred_labels)}
    for t, p in pairs:
        counts[t_pos[t], p_pos[p]] += 1
    rows, cols = linear_sum_assignment(counts, maximize=True)
    mapping = {pred_labels[c]: truth_labels[r] for r, c in zip(rows, cols)}
    matched = int(counts[rows, cols].sum())
    return mapping, matched


def association_accuracy(
    pred: TrackedSequence, truth_ids: list[list[int | None]]
) -> float:
    """Fraction of detections whose predicted ID matches the ground truth
    under the best bijective relabeling of predicted IDs.

    `truth_ids` is aligned with the tracked frames and detections; None
    marks detections without a ground-truth identity (non-rotors). An empty
    universe counts as vacuously 1.0.
    """
    pairs, total = _confusion_pairs(pred, truth_ids)
    if total == 0:
        return 1.0
    if not pairs:
        return 0.0
    _, matched = _best_assignment(pairs)
    return matched / total


def optimal_relabeling(
    pred: TrackedSequence, truth_ids: list[list[int | None]]
) -> dict[int, int]:
    """The predicted->truth ID mapping behind `association_accuracy`."""
    pairs, _ = _confusion_pairs(pred, truth_ids)
    if not pairs:
        return {}
    mapping, _ = _best_assignment(pairs)
    return mapping
