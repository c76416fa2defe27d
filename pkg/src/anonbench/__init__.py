"""Benchmark image anonymizations against recognition attacks.

Runs an anonymization over an identity-labeled image set, optionally trains a
de-anonymizer, attacks the result with PCA-based recognizers, and reports the
privacy-utility trade-off with content-addressed caching of every stage.
"""

from .anonymize import AnonymizationSpec, anonymize_dataset
from .cache import ArtifactCache
from .dataset import (
    DataPoint,
    Dataset,
    ImageRaster,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .deanonymize import DeanonymizationSpec, deanonymize_dataset, train_deanonymizer
from .metrics import (
    TradeoffCurve,
    TradeoffPoint,
    curve_auc,
    privacy_score,
    ssim,
    utility_of,
    worst_case_auc,
)
from .pipeline import Pipeline, PipelineError, RunConfig, RunResult, StageDescriptor
from .recognize import best_attack, enroll, evaluate_closed_set, fit_pca
from .selection import SelectionSpec, select_identities

__version__ = "0.1.0"

__all__ = [
    "AnonymizationSpec",
    "ArtifactCache",
    "DataPoint",
    "Dataset",
    "DeanonymizationSpec",
    "ImageRaster",
    "Pipeline",
    "PipelineError",
    "RunConfig",
    "RunResult",
    "SelectionSpec",
    "StageDescriptor",
    "SyntheticSpec",
    "TradeoffCurve",
    "TradeoffPoint",
    "anonymize_dataset",
    "best_attack",
    "curve_auc",
    "deanonymize_dataset",
    "enroll",
    "evaluate_closed_set",
    "fit_pca",
    "generate_synthetic",
    "load_dataset",
    "privacy_score",
    "save_dataset",
    "select_identities",
    "ssim",
    "train_deanonymizer",
    "utility_of",
    "worst_case_auc",
]
