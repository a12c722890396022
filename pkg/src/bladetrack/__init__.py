"""Blade tracking, damage statistics and segmentation metrics for borescope videos."""

from .core_types import (
    BinaryMask,
    BladetrackError,
    BoundingBox,
    ClassLabel,
    ConfigError,
    DAMAGE_CLASSES,
    Detection,
    DimensionError,
    EmptyInputError,
    FormatError,
    FrameDetections,
    ValidationError,
    mask_area,
    rle_round_trip,
)
from .damage_stats import (
    DamageTimeSeries,
    ImpactWeights,
    RowSummary,
    assign_damage,
    performance_impact,
    row_summary,
    spanwise_partition,
    time_series,
)
from .evaluation import (
    EvalReport,
    MatchRecord,
    average_precision,
    evaluate_image,
    evaluate_set,
    match_predictions,
    matched_iou,
    mean_ap,
)
from .geometry import (
    Point2,
    Polygon,
    bbox_center,
    center_distance,
    erode,
    iou,
    overlap_area,
    rasterize_polygon,
)
from .surface_filter import (
    FilterParams,
    GrayImage,
    apply_eroded_mask,
    crop_to_bbox,
    gaussian_kernel,
    high_pass,
    surface_pipeline,
    threshold_enhance,
)
from .synth import GroundTruth, SynthConfig, DamageSpec, generate, oracle_check, perturb
from .tracking import TrackedSequence, TrackingConfig, association_accuracy, track, validate

__version__ = "0.1.0"
