"""The counterfactual-distance OOD score.

For each non-predicted target class (all of them, or the top-k by logit),
the score averages the Euclidean distance from the input to a counterfactual
of that class and divides by the input's distance to the training mean.
Higher scores mean more in-distribution: ID inputs sit farther from decision
boundaries than OOD inputs. The same pipeline serves raw-input features and
embedding features alike.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .counterfactual import get_distance, nice, nnce
from .data import FeatureDataset, LinearHead
from .errors import DegenerateInputError, EmptyClassError, ValidationError
from .index import ClassIndex

METHODS = ("nnce", "nice")


@dataclass(frozen=True)
class ScoreConfig:
    """Scoring knobs: search method, target-class budget, score shape.

    k_classes=None means all C-1 non-predicted classes. With `average` off the
    per-class distances are summed raw; with `normalize` off the division by
    the distance to the training mean is skipped.
    """

    method: str = "nnce"
    k_classes: Optional[int] = None
    normalize: bool = True
    average: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.k_classes is not None and self.k_classes < 1:
            raise ValidationError(f"k_classes must be >= 1, got {self.k_classes}")


@dataclass(frozen=True)
class TrainStatistics:
    """Mean feature vector of the full (unfiltered) training set."""

    mu_train: np.ndarray  # float64, length D


@dataclass(frozen=True)
class ScoredInput:
    """Per-input score plus the counterfactual distances behind it."""

    predicted_class: int
    score: float
    per_class_distances: dict[int, float] = field(default_factory=dict)
    normalizer: float = 0.0


def compute_mu_train(ds: FeatureDataset) -> TrainStatistics:
    """Coordinate-wise arithmetic mean over all training rows, in float64."""
    return TrainStatistics(mu_train=np.mean(ds.features, axis=0, dtype=np.float64))


def distance_to_mean(stats: TrainStatistics, z: np.ndarray) -> float:
    """The score normalizer: Euclidean distance from z to the training mean."""
    return get_distance(np.asarray(z, dtype=np.float64), stats.mu_train)


def select_target_classes(
    logits: Optional[np.ndarray],
    predicted: int,
    k: int,
    class_count: Optional[int] = None,
) -> list[int]:
    """The k classes with highest logits excluding the predicted one,
    descending, ties to the lowest class index.

    Softmax is monotone in logits, so logit order stands in for probability
    order. k = C-1 needs no logits and falls back to ascending class order.
    """
    if logits is not None:
        logits = np.asarray(logits, dtype=np.float64)
        c = logits.shape[0]
    elif class_count is not None:
        c = class_count
    else:
        raise ValidationError("select_target_classes needs logits or class_count")
    if not 0 <= predicted < c:
        raise ValidationError(f"predicted class {predicted} out of range [0, {c})")
    if not 1 <= k <= c - 1:
        raise ValidationError(f"k_classes must lie in [1, {c - 1}], got {k}")
    if logits is None:
        if k == c - 1:
            return [cls for cls in range(c) if cls != predicted]
        raise ValidationError("logits are required to select k < C-1 target classes")
    order = np.argsort(-logits, kind="stable")  # descending, ties by lowest index
    return [int(cls) for cls in order if cls != predicted][:k]


def score_input(
    idx: ClassIndex,
    head: LinearHead,
    stats: TrainStatistics,
    z: np.ndarray,
    logits: Optional[np.ndarray] = None,
    cfg: ScoreConfig = ScoreConfig(),
) -> ScoredInput:
    """Score one input: average counterfactual distance over target classes,
    normalized by the distance to the training mean.

    When logits are not supplied and a top-k selection is requested, the
    head's own logits are used. Target classes with no eligible training rows
    are skipped with a warning and the averaging denominator shrinks to the
    number of counterfactuals actually computed.
    """
    z = np.asarray(z, dtype=np.float64)
    predicted = head.predict(z)
    normalizer = distance_to_mean(stats, z)
    if normalizer == 0.0:
        raise DegenerateInputError(
            "input coincides with the training mean; the normalizer is zero"
        )
    c = head.class_count
    k = cfg.k_classes if cfg.k_classes is not None else c - 1
    if not 1 <= k <= c - 1:
        raise ValidationError(f"k_classes must lie in [1, {c - 1}], got {k}")
    if logits is None and k < c - 1:
        logits = head.logits_of(z)
    targets = select_target_classes(logits, predicted, k, class_count=c)

    distances: dict[int, float] = {}
    skipped: list[int] = []
    for target in sorted(targets):  # canonical order keeps sums reproducible
        if idx.blocks[target].shape[0] == 0:
            skipped.append(target)
            continue
        if cfg.method == "nice":
            cf = nice(idx, head, z, target)
        else:
            cf = nnce(idx, z, target)
        distances[target] = cf.distance
    if not distances:
        raise EmptyClassError("every selected target class is empty in the index")
    if skipped:
        warnings.warn(
            f"skipped empty target classes {skipped}; averaging over "
            f"{len(distances)} counterfactuals",
            RuntimeWarning,
            stacklevel=2,
        )

    score = 0.0
    for target in sorted(distances):
        score += distances[target]
    if cfg.average:
        score /= len(distances)
    if cfg.normalize:
        score /= normalizer
    return ScoredInput(
        predicted_class=predicted,
        score=score,
        per_class_distances=distances,
        normalizer=normalizer,
    )


def score_batch(
    ds_test: FeatureDataset,
    idx: ClassIndex,
    head: LinearHead,
    stats: TrainStatistics,
    cfg: ScoreConfig = ScoreConfig(),
    threads: int = 1,
) -> list[ScoredInput]:
    """score_input applied per test row, in row order.

    Rows are independent, so results are identical for any thread count.
    Per-row failures are re-raised with the row index attached.
    """
    if ds_test.dim != idx.dim:
        raise ValidationError(
            f"test dataset is {ds_test.dim}-dimensional, index expects {idx.dim}"
        )

    def one(i: int) -> ScoredInput:
        row_logits = ds_test.logits[i] if ds_test.logits is not None else None
        try:
            return score_input(idx, head, stats, ds_test.features[i], row_logits, cfg)
        except ValidationError as e:
            raise ValidationError(f"row {i}: {e}") from e
        except DegenerateInputError as e:
            raise DegenerateInputError(f"row {i}: {e}") from e
        except EmptyClassError as e:
            raise EmptyClassError(f"row {i}: {e}") from e

    n = ds_test.row_count
    if threads <= 1:
        return [one(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n)))
