"""Conversion of model prediction dumps and COCO-style annotations.

The adapter only transcodes: class ids map through an explicit user-supplied
table, boxes change convention, and masks are re-encoded into the
interchange's row-major RLE. No geometry is computed here beyond scanning a
bitmap for its bounding rectangle; rasterization of polygons stays on the
consuming side, which keeps exactly one rasterizer of record.
"""

from __future__ import annotations

import json
import math

SCHEMA_VERSION = "1"

KNOWN_LABELS = (
    "Casing",
    "CompressorRotor",
    "SurfaceDamage",
    "MaterialSeparation",
    "MaterialDeformation",
)


class AdapterError(Exception):
    """Input cannot be converted; the message says what and where."""


class ClassMap:
    """Explicit class-id (or name) to interchange-label mapping."""

    def __init__(self, table: dict):
        self.table = {str(k): str(v) for k, v in table.items()}
        bad = sorted(v for v in self.table.values() if v not in KNOWN_LABELS)
        if bad:
            raise AdapterError(f"class map targets unknown labels: {', '.join(bad)}")

    @classmethod
    def from_file(cls, path: str) -> "ClassMap":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict) or not data:
            raise AdapterError("class map must be a non-empty JSON object")
        return cls(data)

    def resolve_all(self, class_ids) -> dict:
        """Map every id; unmapped ids abort with a full listing."""
        missing = sorted({str(c) for c in class_ids} - set(self.table))
        if missing:
            raise AdapterError(f"unmapped class ids: {', '.join(missing)}")
        return {str(c): self.table[str(c)] for c in class_ids}


# ---------------------------------------------------------------------------
# mask transcoding


def bitmap_to_row_rle(bitmap: list[list[int]]) -> list[int]:
    """Row-major run lengths, alternating 0s/1s, starting with a 0-run."""
    counts = []
    current = 0
    run = 0
    for row in bitmap:
        for value in row:
            v = 1 if value else 0
            if v == current:
                run += 1
            else:
                counts.append(run)
                current = v
                run = 1
    counts.append(run)
    return counts


def column_counts_to_bitmap(counts: list[int], height: int, width: int) -> list[list[int]]:
    """Decode column-major uncompressed RLE (0-run first) to a bitmap."""
    total = sum(counts)
    if total != height * width:
        raise AdapterError(
            f"RLE counts sum to {total}, expected {height}x{width}={height * width}"
        )
    bitmap = [[0] * width for _ in range(height)]
    pos = 0
    value = 0
    for run in counts:
        if value:
            for k in range(pos, pos + run):
                bitmap[k % height][k // height] = 1
        pos += run
        value = 1 - value
    return bitmap


def bitmap_tight_box(bitmap: list[list[int]]) -> tuple[int, int, int, int] | None:
    """(x, y, w, h) of the set pixels, or None for an all-zero bitmap."""
    rows = [r for r, row in enumerate(bitmap) if any(row)]
    if not rows:
        return None
    cols = [c for row in bitmap for c, v in enumerate(row) if v]
    x0, x1 = min(cols), max(cols)
    y0, y1 = rows[0], rows[-1]
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def union_box(a, b):
    if a is None:
        return b
    if b is None:
        return a
    x0 = min(a[0], b[0])
    y0 = min(a[1], b[1])
    x1 = max(a[0] + a[2], b[0] + b[2])
    y1 = max(a[1] + a[3], b[1] + b[3])
    return (x0, y0, x1 - x0, y1 - y0)


def polygon_cover_box(points: list[float]) -> tuple[float, float, float, float]:
    """Integer-aligned box guaranteed to contain the polygon's rasterization.

    Pixel centers inside the polygon lie strictly within the vertex extent,
    so flooring the minima and ceiling the maxima always covers every set
    pixel of the downstream raster.
    """
    xs = points[0::2]
    ys = points[1::2]
    x0 = math.floor(min(xs))
    y0 = math.floor(min(ys))
    w = max(1, math.ceil(max(xs)) - x0)
    h = max(1, math.ceil(max(ys)) - y0)
    return (float(x0), float(y0), float(w), float(h))


# ---------------------------------------------------------------------------
# exporters


def export_predictions(dump: dict, class_map: ClassMap) -> dict:
    """Convert a prediction dump into an interchange document.

    Expected dump layout: image_width, image_height, frames: [{frame_index,
    instances: [{class_id, score, box: [x1, y1, x2, y2], mask}]}] where mask
    is {"bitmap": [[...]]} or COCO-style uncompressed column-major counts
    {"counts": [...], "size": [h, w]}.
    """
    try:
        width = int(dump["image_width"])
        height = int(dump["image_height"])
        frames_raw = dump["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise AdapterError(f"prediction dump header malformed: {exc}") from exc

    all_ids = [
        inst["class_id"]
        for frame in frames_raw
        for inst in frame.get("instances", [])
    ]
    labels = class_map.resolve_all(all_ids)

    frames = []
    for frame_raw in frames_raw:
        detections = []
        frame_index = int(frame_raw["frame_index"])
        for i, inst in enumerate(frame_raw.get("instances", [])):
            where = f"frame {frame_index} instance {i}"
            bitmap = _instance_bitmap(inst.get("mask"), height, width, where)
            box = _xyxy_to_xywh(inst.get("box"), where)
            box = union_box(box, bitmap_tight_box(bitmap))
            if box is None:
                raise AdapterError(f"{where}: empty mask and no box")
            detections.append(
                {
                    "class": labels[str(inst["class_id"])],
                    "confidence": float(inst["score"]),
                    "bbox": [float(v) for v in box],
                    "mask": {"type": "rle", "counts": bitmap_to_row_rle(bitmap)},
                }
            )
        frames.append({"frame_index": frame_index, "detections": detections})
    frames.sort(key=lambda f: f["frame_index"])
    return {
        "schema_version": SCHEMA_VERSION,
        "image_width": width,
        "image_height": height,
        "frames": frames,
    }


def _instance_bitmap(mask_raw, height: int, width: int, where: str) -> list[list[int]]:
    if not isinstance(mask_raw, dict):
        raise AdapterError(f"{where}: missing mask")
    if "bitmap" in mask_raw:
        bitmap = mask_raw["bitmap"]
        if len(bitmap) != height or any(len(row) != width for row in bitmap):
            raise AdapterError(
                f"{where}: bitmap extent does not match image {height}x{width}"
            )
        return bitmap
    if "counts" in mask_raw:
        size = mask_raw.get("size")
        if not size or [int(size[0]), int(size[1])] != [height, width]:
            raise AdapterError(f"{where}: counts size {size} does not match image")
        try:
            return column_counts_to_bitmap(
                [int(c) for c in mask_raw["counts"]], height, width
            )
        except AdapterError as exc:
            raise AdapterError(f"{where}: {exc}") from exc
    raise AdapterError(f"{where}: unknown mask encoding {sorted(mask_raw)}")


def _xyxy_to_xywh(box, where: str):
    if box is None:
        return None
    x1, y1, x2, y2 = (float(v) for v in box)
    if x2 <= x1 or y2 <= y1:
        raise AdapterError(f"{where}: degenerate box {box}")
    return (x1, y1, x2 - x1, y2 - y1)


def export_ground_truth(coco: dict, class_map: ClassMap) -> dict:
    """Convert COCO-style annotations into an interchange document.

    Polygon segmentations pass through vertex-for-vertex; uncompressed RLE
    segmentations are transcoded. Every image becomes one frame (indexed by
    its image id), annotated or not, all at confidence 1.0.
    """
    try:
        images = sorted(coco["images"], key=lambda im: int(im["id"]))
        annotations = coco.get("annotations", [])
    except (KeyError, TypeError) as exc:
        raise AdapterError(f"COCO document malformed: {exc}") from exc
    if not images:
        raise AdapterError("COCO document lists no images")
    extents = {(int(im["width"]), int(im["height"])) for im in images}
    if len(extents) > 1:
        raise AdapterError(f"images span multiple extents: {sorted(extents)}")
    width, height = next(iter(extents))

    labels = class_map.resolve_all([a["category_id"] for a in annotations])
    by_image: dict[int, list] = {int(im["id"]): [] for im in images}
    for a_pos, ann in enumerate(annotations):
        image_id = int(ann["image_id"])
        if image_id not in by_image:
            raise AdapterError(f"annotation {a_pos} references unknown image {image_id}")
        where = f"annotation {a_pos}"
        mask, cover = _annotation_mask(ann.get("segmentation"), height, width, where)
        box = ann.get("bbox")
        if box is not None:
            box = tuple(float(v) for v in box)
            if box[2] <= 0 or box[3] <= 0:
                raise AdapterError(f"{where}: degenerate bbox {list(box)}")
        box = union_box(box, cover)
        if box is None:
            raise AdapterError(f"{where}: empty segmentation and no bbox")
        by_image[image_id].append(
            {
                "class": labels[str(ann["category_id"])],
                "confidence": 1.0,
                "bbox": [float(v) for v in box],
                "mask": mask,
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "image_width": width,
        "image_height": height,
        "frames": [
            {"frame_index": int(im["id"]), "detections": by_image[int(im["id"])]}
            for im in images
        ],
    }


def _annotation_mask(seg, height: int, width: int, where: str):
    """Returns (interchange mask object, covering box or None)."""
    if isinstance(seg, list) and seg and all(isinstance(p, list) for p in seg):
        if len(seg) != 1:
            raise AdapterError(
                f"{where}: multi-part polygon segmentation ({len(seg)} parts) "
                "is not representable in the interchange format"
            )
        points = [float(v) for v in seg[0]]
        if len(points) < 6 or len(points) % 2:
            raise AdapterError(f"{where}: polygon needs an even point count >= 6")
        return {"type": "polygon", "points": points}, polygon_cover_box(points)
    if isinstance(seg, dict) and "counts" in seg:
        counts = seg["counts"]
        if isinstance(counts, str):
            raise AdapterError(f"{where}: compressed RLE strings are not supported")
        size = seg.get("size")
        if not size or [int(size[0]), int(size[1])] != [height, width]:
            raise AdapterError(f"{where}: RLE size {size} does not match image extent")
        bitmap = column_counts_to_bitmap([int(c) for c in counts], height, width)
        cover = bitmap_tight_box(bitmap)
        return {"type": "rle", "counts": bitmap_to_row_rle(bitmap)}, (
            tuple(float(v) for v in cover) if cover else None
        )
    raise AdapterError(f"{where}: unknown segmentation encoding")


def dump_document(doc: dict) -> bytes:
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")
