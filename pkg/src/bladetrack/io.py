"""Interchange-format parsing/writing, images, and report serialization.

One JSON document format carries predictions, ground truth and synthetic
output alike, so every downstream stage is format-agnostic. Masks are
accepted as row-major RLE or as polygons (rasterized at load); output
documents always store RLE because rasterization is one-way. All writers
are deterministic: identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import io as _io
import json
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .core_types import (
    BinaryMask,
    BoundingBox,
    ClassLabel,
    Detection,
    FormatError,
    FrameDetections,
    ValidationError,
)
from .damage_stats import DamageTimeSeries, ImpactWeights, RowSummary, N_REGIONS
from .evaluation import EvalReport
from .geometry import Polygon, rasterize_polygon
from .synth import BladeTruth, DamageTruth, FrameTruth, GroundTruth
from .tracking import TrackedSequence

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class InterchangeDocument:
    """Parsed detection document: one extent, frames ascending."""

    schema_version: str
    image_width: int
    image_height: int
    frames: tuple[FrameDetections, ...]

    def __iter__(self):
        return iter(self.frames)

    def __len__(self):
        return len(self.frames)


def parse_detections(data: bytes | str) -> InterchangeDocument:
    """Parse and validate an interchange document.

    Every error names the frame/detection it was found at. Polygon masks
    are rasterized here, so the rest of the toolkit only ever sees masks.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError("document root must be an object")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unrecognized schema_version: {version!r}")
    try:
        width = int(raw["image_width"])
        height = int(raw["image_height"])
        frames_raw = raw["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"document header malformed: {exc}") from exc
    if width <= 0 or height <= 0:
        raise ValidationError("image extent must be positive")
    if not isinstance(frames_raw, list):
        raise ValidationError("frames must be a list")

    frames = []
    problems: list[str] = []
    last_index = -1
    for f_pos, frame_raw in enumerate(frames_raw):
        try:
            frame_index = int(frame_raw["frame_index"])
        except (KeyError, TypeError, ValueError):
            problems.append(f"frame at position {f_pos}: missing or bad frame_index")
            continue
        if frame_index <= last_index:
            problems.append(
                f"frame at position {f_pos}: frame_index {frame_index} not strictly increasing"
            )
        last_index = frame_index
        detections = []
        for d_pos, det_raw in enumerate(frame_raw.get("detections", [])):
            where = f"frame {frame_index} detection {d_pos}"
            try:
                detections.append(_parse_detection(det_raw, height, width))
            except (ValidationError, FormatError, KeyError, TypeError, ValueError) as exc:
                problems.append(f"{where}: {exc}")
        if not problems:
            try:
                frames.append(
                    FrameDetections(
                        frame_index=frame_index,
                        image_width=width,
                        image_height=height,
                        detections=tuple(detections),
                    )
                )
            except (ValidationError, FormatError) as exc:
                problems.append(f"frame {frame_index}: {exc}")
    if problems:
        raise ValidationError("; ".join(problems))
    return InterchangeDocument(
        schema_version=version, image_width=width, image_height=height, frames=tuple(frames)
    )


def _parse_detection(raw: dict, height: int, width: int) -> Detection:
    label = ClassLabel.parse(raw["class"])
    confidence = float(raw["confidence"])
    bx, by, bw, bh = (float(v) for v in raw["bbox"])
    bbox = BoundingBox(x=bx, y=by, width=bw, height=bh)
    mask_raw = raw["mask"]
    kind = mask_raw.get("type")
    if kind == "rle":
        mask = BinaryMask.from_rle(height, width, mask_raw["counts"])
    elif kind == "polygon":
        points = [float(v) for v in mask_raw["points"]]
        if len(points) < 6 or len(points) % 2 != 0:
            raise ValidationError(
                f"polygon needs an even point count >= 6, got {len(points)} values"
            )
        vertices = tuple(zip(points[0::2], points[1::2]))
        mask = rasterize_polygon(Polygon(vertices), height, width)
    else:
        raise ValidationError(f"unknown mask type: {kind!r}")
    return Detection(label=label, confidence=confidence, bbox=bbox, mask=mask)


def write_detections(doc: InterchangeDocument) -> bytes:
    """Canonical serialization: frames ascending, RLE masks, stable bytes."""
    frames = sorted(doc.frames, key=lambda f: f.frame_index)
    out = {
        "schema_version": SCHEMA_VERSION,
        "image_width": doc.image_width,
        "image_height": doc.image_height,
        "frames": [
            {
                "frame_index": f.frame_index,
                "detections": [
                    {
                        "class": d.label.value,
                        "confidence": d.confidence,
                        "bbox": [d.bbox.x, d.bbox.y, d.bbox.width, d.bbox.height],
                        "mask": {"type": "rle", "counts": list(d.mask.rle)},
                    }
                    for d in f.detections
                ],
            }
            for f in frames
        ],
    }
    return _dump_json(out)


def document_from_frames(frames: list[FrameDetections]) -> InterchangeDocument:
    if not frames:
        raise ValidationError("cannot derive a document extent from zero frames")
    return InterchangeDocument(
        schema_version=SCHEMA_VERSION,
        image_width=frames[0].image_width,
        image_height=frames[0].image_height,
        frames=tuple(frames),
    )


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=False) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# report writers


def write_time_series(series: list[DamageTimeSeries]) -> bytes:
    """Plot-ready CSV, one row per blade per visible frame, 6-decimal dots."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "blade_id",
            "frame_index",
            "blade_area_fraction",
            "surface_fraction",
            "separation_fraction",
            "deformation_fraction",
        ]
    )
    rows = []
    for ts in series:
        for s in ts.samples:
            rows.append(
                (
                    ts.blade_id,
                    s.frame_index,
                    s.blade_area_fraction,
                    s.damage_fractions[ClassLabel.SURFACE_DAMAGE],
                    s.damage_fractions[ClassLabel.MATERIAL_SEPARATION],
                    s.damage_fractions[ClassLabel.MATERIAL_DEFORMATION],
                )
            )
    rows.sort(key=lambda r: (r[0], r[1]))
    for blade_id, frame_index, *fractions in rows:
        writer.writerow([blade_id, frame_index] + [f"{v:.6f}" for v in fractions])
    return buf.getvalue().encode("utf-8")


def write_row_summary(summary: RowSummary) -> bytes:
    out = {
        "spanwise_regions": N_REGIONS,
        "region_rule": "principal-axis projection quantiles",
        "blades": [
            {
                "blade_id": blade_id,
                "max_area_frame": summary.max_area_frame[blade_id],
                "extents": {
                    label.value: list(extents)
                    for label, extents in summary.extents[blade_id].items()
                },
            }
            for blade_id in sorted(summary.extents)
        ],
    }
    return _dump_json(out)


def write_impact_table(impacts: dict[int, float]) -> bytes:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["blade_id", "delta_f"])
    for blade_id in sorted(impacts):
        writer.writerow([blade_id, f"{impacts[blade_id]:.6f}"])
    return buf.getvalue().encode("utf-8")


def _report_payload(report: EvalReport) -> dict:
    return {
        "mean_ap": report.mean_ap,
        "mean_matched_iou": report.mean_matched_iou,
        "per_class": {
            label.value: {
                "ap": report.per_class_ap[label],
                "matched_iou": report.per_class_matched_iou[label],
            }
            for label in ClassLabel
        },
        "excluded_classes": [label.value for label in report.excluded_classes],
    }


def write_eval_report(
    aggregate: EvalReport, per_image: list[tuple[int, EvalReport]]
) -> bytes:
    out = {
        "iou_threshold": aggregate.iou_threshold,
        "aggregate": _report_payload(aggregate),
        "per_image": [
            {"frame_index": frame_index, **_report_payload(rep)}
            for frame_index, rep in per_image
        ],
    }
    return _dump_json(out)


def write_eval_csv(aggregate: EvalReport) -> bytes:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "ap", "matched_iou"])
    for label in ClassLabel:
        ap = aggregate.per_class_ap[label]
        miou = aggregate.per_class_matched_iou[label]
        writer.writerow(
            [
                label.value,
                "" if ap is None else f"{ap:.6f}",
                "" if miou is None else f"{miou:.6f}",
            ]
        )
    return buf.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# tracked-IDs and ground-truth documents


def write_tracked_ids(tracked: TrackedSequence) -> bytes:
    out = {
        "schema_version": SCHEMA_VERSION,
        "frames": [
            {
                "frame_index": frame.frame_index,
                "ids": [i if i is not None else None for i in ids],
            }
            for frame, ids in zip(tracked.frames, tracked.assignments)
        ],
        "left_leaving": list(tracked.left_leaving),
        "right_leaving": list(tracked.right_leaving),
        "next_fresh_id": tracked.next_fresh_id,
    }
    return _dump_json(out)


def parse_tracked_ids(data: bytes | str, frames: list[FrameDetections]) -> TrackedSequence:
    """Rebuild a TrackedSequence from its document, aligned with `frames`."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc}") from exc
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unrecognized schema_version: {raw.get('schema_version')!r}")
    rows = raw.get("frames", [])
    if len(rows) != len(frames):
        raise ValidationError(
            f"tracked-IDs file covers {len(rows)} frames, detections have {len(frames)}"
        )
    assignments = []
    for row, frame in zip(rows, frames):
        if int(row["frame_index"]) != frame.frame_index:
            raise ValidationError(
                f"tracked-IDs frame_index {row['frame_index']} does not match "
                f"detections frame_index {frame.frame_index}"
            )
        ids = row["ids"]
        if len(ids) != len(frame.detections):
            raise ValidationError(
                f"frame {frame.frame_index}: {len(ids)} IDs for "
                f"{len(frame.detections)} detections"
            )
        assignments.append(tuple(None if v is None else int(v) for v in ids))
    return TrackedSequence(
        frames=tuple(frames),
        assignments=tuple(assignments),
        left_leaving=tuple(int(v) for v in raw.get("left_leaving", [])),
        right_leaving=tuple(int(v) for v in raw.get("right_leaving", [])),
        next_fresh_id=int(raw.get("next_fresh_id", 0)),
    )


def write_ground_truth(truth: GroundTruth) -> bytes:
    out = {
        "schema_version": SCHEMA_VERSION,
        "frames": [
            {
                "frame_index": ft.frame_index,
                "blades": [
                    {
                        "blade_id": b.blade_id,
                        "det_index": b.det_index,
                        "damages": [
                            {
                                "class": d.label.value,
                                "det_index": d.det_index,
                                "pixel_count": d.pixel_count,
                                "fraction": d.fraction,
                            }
                            for d in b.damages
                        ],
                    }
                    for b in ft.blades
                ],
            }
            for ft in truth.frames
        ],
    }
    return _dump_json(out)


def parse_ground_truth(data: bytes | str) -> GroundTruth:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    raw = json.loads(data)
    frames = []
    for ft in raw["frames"]:
        blades = tuple(
            BladeTruth(
                blade_id=int(b["blade_id"]),
                det_index=None if b["det_index"] is None else int(b["det_index"]),
                damages=tuple(
                    DamageTruth(
                        label=ClassLabel.parse(d["class"]),
                        det_index=None if d["det_index"] is None else int(d["det_index"]),
                        pixel_count=int(d["pixel_count"]),
                        fraction=float(d["fraction"]),
                    )
                    for d in b.get("damages", [])
                ),
            )
            for b in ft["blades"]
        )
        frames.append(FrameTruth(frame_index=int(ft["frame_index"]), blades=blades))
    return GroundTruth(frames=tuple(frames))


def parse_impact_weights(data: bytes | str) -> ImpactWeights:
    """Key-value weights config: damage class -> weight, plus multipliers."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in weights file: {exc}") from exc
    weights_raw = raw.get("weights")
    if not isinstance(weights_raw, dict) or not weights_raw:
        raise ValidationError("weights file needs a non-empty 'weights' object")
    weights = {ClassLabel.parse(k): float(v) for k, v in weights_raw.items()}
    multipliers = raw.get("region_multipliers", [1.0] * N_REGIONS)
    return ImpactWeights(
        weights=weights, region_multipliers=tuple(float(m) for m in multipliers)
    )


# ---------------------------------------------------------------------------
# images


def read_image(path) -> np.ndarray:
    """Load a PNG or binary PPM as float intensities in [0, 1].

    Returns a 2D array for grayscale files and (H, W, 3) for color.
    """
    path = str(path)
    if path.endswith(".ppm"):
        return _read_ppm(path)
    with Image.open(path) as img:
        if img.mode == "L":
            return np.asarray(img, dtype=float) / 255.0
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=float) / 255.0


def write_gray_image(path, pixels: np.ndarray) -> None:
    """Write a [0, 1] grayscale array as 8-bit PNG or binary PPM."""
    path = str(path)
    arr = np.clip(np.round(np.asarray(pixels, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    if path.endswith(".ppm"):
        _write_ppm(path, np.stack([arr] * 3, axis=-1))
    else:
        Image.fromarray(arr, mode="L").save(path, format="PNG")


def _read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise FormatError(f"not a binary PPM (P6) file: magic {fields[0]!r}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise FormatError(f"only 8-bit PPM supported, maxval {maxval}")
    pos += 1  # single whitespace after maxval
    raster = np.frombuffer(data, dtype=np.uint8, count=height * width * 3, offset=pos)
    return raster.reshape(height, width, 3).astype(float) / 255.0


def _write_ppm(path: str, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.astype(np.uint8).tobytes())
