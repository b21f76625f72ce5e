"""Nutrient-aware food category clustering toolkit.

Builds category-level nutrient tables from food item CSVs, fuses
nutrient and visual similarity into one matrix, clusters categories
with affinity propagation into a two-level hierarchy, trains a small
multi-task classifier against that hierarchy, and scores the results
(variance decompositions, cluster distances, nutrient MAE).
"""

from __future__ import annotations

__version__ = "0.1.0"

from . import errors
from .clustering import APConfig, Cluster, Hierarchy, affinity_propagation, cluster_categories
from .evaluation import (
    DistanceMatrix,
    DistanceReport,
    PredictionRow,
    VarianceReport,
    accuracy,
    cluster_variances,
    distance_report,
    inter_cluster_distance,
    intra_cluster_distance,
    nutrient_mae,
    parse_predictions_csv,
    relative_error_change,
    visual_distance_matrix,
    write_predictions_csv,
)
from .multitask import (
    Checkpoint,
    MultiTaskModel,
    TrainingConfig,
    TrainResult,
    derive_cluster_labels,
    loss_gradients,
    multitask_loss,
    samples_from_features,
    split_indices,
    train,
)
from .nutrient_data import (
    NUTRIENT_CODES,
    NUTRIENT_NAMES,
    NUTRIENT_UNITS,
    CategoryTable,
    FoodItem,
    NutrientStats,
    aggregate_categories,
    inter_class_std,
    parse_counts_csv,
    parse_nutrient_codes,
    parse_nutrient_csv,
)
from .similarity import (
    FeatureStats,
    SimilarityConfig,
    SimilarityMatrix,
    combine_similarity,
    fit_feature_gaussians,
    gaussian_ovl,
    nutrient_similarity_matrix,
    parse_features_csv,
    rbf_similarity,
    visual_similarity_matrix,
    weighted_harmonic_mean,
)
from .synthkit import (
    PlantedConfig,
    PlantedDataset,
    generate_confusion_log,
    generate_planted_dataset,
    hierarchy_from_partition,
)

__all__ = [
    "__version__",
    "errors",
    "APConfig",
    "Cluster",
    "Hierarchy",
    "affinity_propagation",
    "cluster_categories",
    "DistanceMatrix",
    "DistanceReport",
    "PredictionRow",
    "VarianceReport",
    "accuracy",
    "cluster_variances",
    "distance_report",
    "inter_cluster_distance",
    "intra_cluster_distance",
    "nutrient_mae",
    "parse_predictions_csv",
    "relative_error_change",
    "visual_distance_matrix",
    "write_predictions_csv",
    "Checkpoint",
    "MultiTaskModel",
    "TrainingConfig",
    "TrainResult",
    "derive_cluster_labels",
    "loss_gradients",
    "multitask_loss",
    "samples_from_features",
    "split_indices",
    "train",
    "NUTRIENT_CODES",
    "NUTRIENT_NAMES",
    "NUTRIENT_UNITS",
    "CategoryTable",
    "FoodItem",
    "NutrientStats",
    "aggregate_categories",
    "inter_class_std",
    "parse_counts_csv",
    "parse_nutrient_codes",
    "parse_nutrient_csv",
    "FeatureStats",
    "SimilarityConfig",
    "SimilarityMatrix",
    "combine_similarity",
    "fit_feature_gaussians",
    "gaussian_ovl",
    "nutrient_similarity_matrix",
    "parse_features_csv",
    "rbf_similarity",
    "visual_similarity_matrix",
    "weighted_harmonic_mean",
    "PlantedConfig",
    "PlantedDataset",
    "generate_confusion_log",
    "generate_planted_dataset",
    "hierarchy_from_partition",
]
