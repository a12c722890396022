"""Exporter bridging segmentation model outputs to the bladetrack toolkit."""

from .convert import (
    AdapterError,
    ClassMap,
    export_ground_truth,
    export_predictions,
)

__version__ = "0.1.0"
