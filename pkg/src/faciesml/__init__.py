"""Rock-facies classification from wireline logs with gradient-boosted trees."""

from faciesml.data_model import Dataset, WellLogRecord, parse_dataset, split_blind
from faciesml.features import AugmentationConfig, FeatureMatrix, build_feature_matrix
from faciesml.gbt import GBTConfig, GBTModel, fit, predict, predict_proba

__all__ = [
    "AugmentationConfig",
    "Dataset",
    "FeatureMatrix",
    "GBTConfig",
    "GBTModel",
    "WellLogRecord",
    "build_feature_matrix",
    "fit",
    "parse_dataset",
    "predict",
    "predict_proba",
    "split_blind",
]

__version__ = "0.1.0"
