"""Segmentation-quality metrics: per-class AP, mAP and matched IoU.

Predictions are matched to ground truth greedily in descending confidence
per class; a prediction is True when its best unassigned same-class ground
truth overlaps strictly above the IoU threshold. AP integrates the
interpolated precision-recall step curve exactly; the matched-IoU metric
averages the IoU of True predictions with their assigned ground truths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_types import (
    ClassLabel,
    Detection,
    DimensionError,
    EmptyInputError,
)
from .geometry import iou


@dataclass(frozen=True)
class MatchEntry:
    """Verdict for one prediction of one class, in confidence order."""

    prediction_index: int
    verdict: bool
    truth_index: int | None
    iou_with_assigned: float


@dataclass(frozen=True)
class MatchRecord:
    """Per-class greedy matching outcome for one image."""

    iou_threshold: float
    per_class: dict[ClassLabel, tuple[MatchEntry, ...]]
    fn_counts: dict[ClassLabel, int]


@dataclass(frozen=True)
class EvalReport:
    """AP / matched-IoU summary; None marks a value that is undefined.

    Classes absent from both predictions and ground truth are excluded from
    the means and listed in `excluded_classes`.
    """

    iou_threshold: float
    per_class_ap: dict[ClassLabel, float | None]
    per_class_matched_iou: dict[ClassLabel, float | None]
    mean_ap: float | None
    mean_matched_iou: float | None
    excluded_classes: tuple[ClassLabel, ...] = field(default_factory=tuple)


def match_predictions(
    preds: list[Detection], truths: list[Detection], iou_threshold: float
) -> MatchRecord:
    """Greedy confidence-ordered matching of predictions to ground truth.

    Per class, predictions are visited in descending confidence (ties keep
    input order); each takes the unassigned same-class ground truth with the
    highest IoU, and is True iff that IoU exceeds the threshold strictly.
    """
    if not (0.0 < iou_threshold < 1.0):
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    _check_one_extent(preds + truths)
    per_class: dict[ClassLabel, tuple[MatchEntry, ...]] = {}
    fn_counts: dict[ClassLabel, int] = {}
    for label in ClassLabel:
        pred_idx = [i for i, d in enumerate(preds) if d.label is label]
        pred_idx.sort(key=lambda i: -preds[i].confidence)  # stable sort keeps ties in input order
        truth_idx = [j for j, d in enumerate(truths) if d.label is label]
        if not pred_idx and not truth_idx:
            continue
        assigned: set[int] = set()
        entries = []
        for i in pred_idx:
            open_truths = [j for j in truth_idx if j not in assigned]
            if not open_truths:
                entries.append(MatchEntry(i, False, None, 0.0))
                continue
            ious = [iou(preds[i].mask, truths[j].mask) for j in open_truths]
            best = int(np.argmax(ious))  # first maximum wins ties (input order)
            if ious[best] > iou_threshold:
                assigned.add(open_truths[best])
                entries.append(MatchEntry(i, True, open_truths[best], ious[best]))
            else:
                entries.append(MatchEntry(i, False, None, 0.0))
        per_class[label] = tuple(entries)
        fn_counts[label] = len(truth_idx) - len(assigned)
    return MatchRecord(iou_threshold=iou_threshold, per_class=per_class, fn_counts=fn_counts)


def average_precision(entries: tuple[MatchEntry, ...], fn_count: int) -> float | None:
    """Area under the interpolated precision-recall step curve for one class.

    Walking the confidence-ordered entries gives precision and recall
    points; the interpolated precision at recall R is the maximum raw
    precision at any recall >= R, and the integral is the exact rectangle
    sum of that step function (zero beyond the last achieved recall).

    Returns None when the class has neither predictions nor ground truth.
    """
    n_true = sum(e.verdict for e in entries)
    n_gt = n_true + fn_count
    if not entries and n_gt == 0:
        return None
    if n_gt == 0 or n_true == 0:
        return 0.0
    true_so_far = np.cumsum([e.verdict for e in entries])
    ranks = np.arange(1, len(entries) + 1)
    precision = true_so_far / ranks
    recall = true_so_far / n_gt
    # Right-to-left running maximum gives the interpolated precision at
    # each achieved recall point.
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_recall = 0.0
    for i in range(len(entries)):
        if recall[i] > prev_recall:
            ap += (recall[i] - prev_recall) * interp[i]
            prev_recall = recall[i]
    return float(ap)


def mean_ap(aps: dict[ClassLabel, float | None]) -> float | None:
    """Arithmetic mean over classes with a defined AP; None if all are undefined."""
    defined = [v for v in aps.values() if v is not None]
    if not defined:
        return None
    return sum(defined) / len(defined)


def matched_iou(record: MatchRecord) -> tuple[dict[ClassLabel, float | None], float | None]:
    """Mean IoU of True predictions per class, and the mean over defined classes."""
    per_class: dict[ClassLabel, float | None] = {}
    for label, entries in record.per_class.items():
        true_ious = [e.iou_with_assigned for e in entries if e.verdict]
        per_class[label] = sum(true_ious) / len(true_ious) if true_ious else None
    defined = [v for v in per_class.values() if v is not None]
    overall = sum(defined) / len(defined) if defined else None
    return per_class, overall


def evaluate_image(
    preds: list[Detection], truths: list[Detection], iou_threshold: float
) -> EvalReport:
    """Full per-image report: per-class AP and matched IoU plus their means."""
    record = match_predictions(preds, truths, iou_threshold)
    per_class_ap: dict[ClassLabel, float | None] = {}
    excluded = []
    for label in ClassLabel:
        if label not in record.per_class:
            per_class_ap[label] = None
            excluded.append(label)
            continue
        per_class_ap[label] = average_precision(record.per_class[label], record.fn_counts[label])
    per_class_miou, overall_miou = matched_iou(record)
    for label in ClassLabel:
        per_class_miou.setdefault(label, None)
    return EvalReport(
        iou_threshold=iou_threshold,
        per_class_ap=per_class_ap,
        per_class_matched_iou=per_class_miou,
        mean_ap=mean_ap(per_class_ap),
        mean_matched_iou=overall_miou,
        excluded_classes=tuple(excluded),
    )


def evaluate_set(
    image_pairs: list[tuple[list[Detection], list[Detection]]], iou_threshold: float
) -> tuple[EvalReport, list[EvalReport]]:
    """Evaluate a test set: per-image reports plus their average.

    The aggregate mAP (and mean matched IoU) is the mean of the per-image
    values over the images where the value is defined; per-class aggregate
    columns follow the same rule.
    """
    if not image_pairs:
        raise EmptyInputError("evaluate_set needs at least one image")
    reports = [evaluate_image(p, t, iou_threshold) for p, t in image_pairs]
    agg_ap: dict[ClassLabel, float | None] = {}
    agg_miou: dict[ClassLabel, float | None] = {}
    for label in ClassLabel:
        ap_values = [r.per_class_ap[label] for r in reports if r.per_class_ap[label] is not None]
        agg_ap[label] = sum(ap_values) / len(ap_values) if ap_values else None
        mi_values = [
            r.per_class_matched_iou[label]
            for r in reports
            if r.per_class_matched_iou[label] is not None
        ]
        agg_miou[label] = sum(mi_values) / len(mi_values) if mi_values else None
    map_values = [r.mean_ap for r in reports if r.mean_ap is not None]
    miou_values = [r.mean_matched_iou for r in reports if r.mean_matched_iou is not None]
    aggregate = EvalReport(
        iou_threshold=iou_threshold,
        per_class_ap=agg_ap,
        per_class_matched_iou=agg_miou,
        mean_ap=sum(map_values) / len(map_values) if map_values else None,
        mean_matched_iou=sum(miou_values) / len(miou_values) if miou_values else None,
        excluded_classes=tuple(label for label in ClassLabel if agg_ap[label] is None),
    )
    return aggregate, reports


def _check_one_extent(detections: list[Detection]) -> None:
    extents = {d.mask.shape for d in detections}
    if len(extents) > 1:
        raise DimensionError(f"detections span multiple extents: {sorted(extents)}")
