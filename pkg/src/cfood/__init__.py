"""cfood: out-of-distribution detection via counterfactual distance.

Inputs are scored by their average distance to per-class counterfactuals in a
feature space (raw inputs or penultimate-layer embeddings), normalized by the
distance to the training mean. Small scores mean the input hugs decision
boundaries and is likely out-of-distribution; the counterfactuals double as
nearest-neighbour explanations.
"""

from .counterfactual import Counterfactual, get_distance, nice, nnce
from .data import (
    DatasetManifest,
    FeatureDataset,
    LinearHead,
    load_dataset,
    load_from_manifest,
    load_head,
    load_manifest,
    save_dataset,
    save_head,
    save_manifest,
)
from .errors import (
    DegenerateInputError,
    EmptyClassError,
    FormatError,
    SearchError,
    ToolkitError,
    ValidationError,
)
from .explain import ExplanationReport, build_report, render_text
from .index import (
    ClassIndex,
    build_index,
    k_nearest_in_class,
    kth_nearest_global,
    load_index,
    nearest_in_class,
    save_index,
)
from .metrics import (
    DetectionMetrics,
    auroc,
    classify,
    energy_score,
    evaluate_detection,
    fdbd_score,
    fpr_at_95_tpr,
    knn_score,
    msp_score,
    unit_normalized,
)
from .scoring import (
    ScoreConfig,
    ScoredInput,
    TrainStatistics,
    compute_mu_train,
    distance_to_mean,
    score_batch,
    score_input,
    select_target_classes,
)

__version__ = "0.1.0"

__all__ = [
    "Counterfactual",
    "ClassIndex",
    "DatasetManifest",
    "DetectionMetrics",
    "DegenerateInputError",
    "EmptyClassError",
    "ExplanationReport",
    "FeatureDataset",
    "FormatError",
    "LinearHead",
    "ScoreConfig",
    "ScoredInput",
    "SearchError",
    "ToolkitError",
    "TrainStatistics",
    "ValidationError",
    "auroc",
    "build_index",
    "build_report",
    "classify",
    "compute_mu_train",
    "distance_to_mean",
    "energy_score",
    "evaluate_detection",
    "fdbd_score",
    "fpr_at_95_tpr",
    "get_distance",
    "k_nearest_in_class",
    "knn_score",
    "kth_nearest_global",
    "load_dataset",
    "load_from_manifest",
    "load_head",
    "load_index",
    "load_manifest",
    "msp_score",
    "nearest_in_class",
    "nice",
    "nnce",
    "render_text",
    "save_dataset",
    "save_head",
    "save_index",
    "save_manifest",
    "score_batch",
    "score_input",
    "select_target_classes",
    "unit_normalized",
]
