"""Inter-annotator agreement and label convergence for object detection datasets."""

__version__ = "0.1.0"

from .data_model import (
    Category,
    DatasetView,
    ImageRecord,
    IngestConfig,
    Instance,
    MultiAnnotatedDataset,
    ValidationReport,
    load_annotator_files,
    load_dataset,
    subsample,
    validate,
)
from .geometry import Box, Mask, area, iou, union_region
from .kalpha import DEFAULT_THRESHOLDS, alpha_nominal, build_coincidence, interpret_alpha, kalpha_localized
from .map_metric import ap_single, modified_map
from .matching import hungarian, match_multi, match_pair
from .pipeline import convergence_interval, fit_regression, kalpha_bootstrap, regression_points
from .stats import bootstrap, fit_linear, infer_map, normal_ci, pearson, r_squared
from .synthetic import make_dataset
from .variation_analysis import classify_image, variation_report

__all__ = [
    "Box",
    "Category",
    "DEFAULT_THRESHOLDS",
    "DatasetView",
    "ImageRecord",
    "IngestConfig",
    "Instance",
    "Mask",
    "MultiAnnotatedDataset",
    "ValidationReport",
    "alpha_nominal",
    "ap_single",
    "area",
    "bootstrap",
    "build_coincidence",
    "classify_image",
    "convergence_interval",
    "fit_linear",
    "fit_regression",
    "hungarian",
    "infer_map",
    "interpret_alpha",
    "iou",
    "kalpha_bootstrap",
    "kalpha_localized",
    "load_annotator_files",
    "load_dataset",
    "make_dataset",
    "match_multi",
    "match_pair",
    "modified_map",
    "normal_ci",
    "pearson",
    "r_squared",
    "regression_points",
    "subsample",
    "union_region",
    "validate",
    "variation_report",
]
