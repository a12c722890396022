"""Command-line entry point for the prediction/annotation exporter.

Exit codes: 0 success, 1 I/O failure, 2 conversion failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .convert import AdapterError, ClassMap, dump_document, export_ground_truth, export_predictions


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="blade-adapter",
        description="Convert model prediction dumps or COCO-style annotations "
        "into the bladetrack interchange format.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_pred = sub.add_parser("predictions", help="convert a model prediction dump")
    p_pred.add_argument("input", help="prediction dump (JSON)")
    p_pred.add_argument("--class-map", required=True, help="class id -> label table (JSON)")
    p_pred.add_argument("--out", required=True, help="output interchange file")

    p_gt = sub.add_parser("ground-truth", help="convert COCO-style annotations")
    p_gt.add_argument("input", help="COCO-style annotation file (JSON)")
    p_gt.add_argument("--class-map", required=True, help="category id -> label table (JSON)")
    p_gt.add_argument("--out", required=True, help="output interchange file")

    args = parser.parse_args(argv)
    try:
        with open(args.input, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        class_map = ClassMap.from_file(args.class_map)
        if args.subcommand == "predictions":
            doc = export_predictions(data, class_map)
        else:
            doc = export_ground_truth(data, class_map)
        out = Path(args.out)
        tmp = out.with_name(out.name + ".tmp")
        tmp.write_bytes(dump_document(doc))
        tmp.replace(out)
    except (AdapterError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
