"""Differentially private K-means clustering and synthetic load-profile generation."""

from .core import (
    BudgetLedger,
    ClusteringResult,
    Dataset,
    IngestionError,
    PrivacyBudget,
    Rng,
    compose,
    load_dataset,
)
from .kmeans import KmeansConfig, cluster, clustering_loss, dp_accuracy_loss, match_clusters
from .mechanisms import (
    ColoredNoiseSpec,
    LabelNoiseSpec,
    WhiteNoiseSpec,
    dp_kmeans,
    label_delta,
    optimize_gamma,
    perturb_centroids,
    perturb_labels,
    rho_for_zero_delta,
    white_sigma,
)
from .sensitivity import SensitivityReport, analyze, filter_outliers

__all__ = [
    "BudgetLedger",
    "ClusteringResult",
    "ColoredNoiseSpec",
    "Dataset",
    "IngestionError",
    "KmeansConfig",
    "LabelNoiseSpec",
    "PrivacyBudget",
    "Rng",
    "SensitivityReport",
    "WhiteNoiseSpec",
    "analyze",
    "cluster",
    "clustering_loss",
    "compose",
    "dp_accuracy_loss",
    "dp_kmeans",
    "filter_outliers",
    "label_delta",
    "load_dataset",
    "match_clusters",
    "optimize_gamma",
    "perturb_centroids",
    "perturb_labels",
    "rho_for_zero_delta",
    "white_sigma",
]
