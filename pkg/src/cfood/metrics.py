"""Baseline detector scores and ID/OOD detection metrics.

Baselines: maximum softmax probability, negative energy, k-th nearest
neighbour distance on unit-normalized features, and the closed-form
decision-boundary distance under a linear head. Metrics: tie-aware AUROC and
the false-positive rate at 95% true-positive rate, both exact (no binning or
curve interpolation).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .counterfactual import get_distance
from .data import FeatureDataset, LinearHead
from .errors import DegenerateInputError, ValidationError
from .index import ClassIndex, kth_nearest_global
from .scoring import TrainStatistics, distance_to_mean

DEFAULT_KNN_K = 50


@dataclass(frozen=True)
class DetectionMetrics:
    """AUROC/FPR95 of one ID-versus-OOD score split."""

    auroc: float
    fpr95: float
    threshold_tau: float
    id_count: int
    ood_count: int

    def to_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "fpr95": self.fpr95,
            "tau": self.threshold_tau,
            "id_count": self.id_count,
            "ood_count": self.ood_count,
        }


def _check_logits(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ValidationError("logits must be a vector of length C >= 2")
    if not np.all(np.isfinite(logits)):
        raise ValidationError("non-finite logits")
    return logits


def msp_score(logits: np.ndarray) -> float:
    """Maximum softmax probability, stabilized by max subtraction."""
    logits = _check_logits(logits)
    e = np.exp(logits - logits.max())
    return float(e.max() / e.sum())


def energy_score(logits: np.ndarray, temperature: float = 1.0) -> float:
    """Negated energy T*logsumexp(logits/T); higher means more ID."""
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    logits = _check_logits(logits) / temperature
    m = logits.max()
    return float(temperature * (m + np.log(np.exp(logits - m).sum())))


def unit_normalized(ds: FeatureDataset) -> FeatureDataset:
    """Copy of a dataset with each row scaled to unit length (zero rows kept)."""
    x = ds.features.astype(np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    norms[norms == 0.0] = 1.0
    return FeatureDataset(
        features=(x / norms[:, None]).astype(np.float32),
        labels=ds.labels,
        class_count=ds.class_count,
        logits=ds.logits,
        input_refs=ds.input_refs,
    )


def knn_score(idx: ClassIndex, z: np.ndarray, k: int = DEFAULT_KNN_K) -> float:
    """Negative distance to the k-th nearest unit-normalized training row.

    The index must be built over unit_normalized() features; the query is
    normalized the same way (float64 norm, then a float32 round trip to match
    the stored rows).
    """
    z = np.asarray(z, dtype=np.float64)
    norm = float(np.sqrt(np.dot(z, z)))
    if norm > 0.0:
        z = z / norm
    z = z.astype(np.float32).astype(np.float64)
    return -float(np.sqrt(kth_nearest_global(idx, z, k)))


def fdbd_score(head: LinearHead, stats: TrainStatistics, z: np.ndarray) -> float:
    """Mean closed-form distance to each class's decision boundary with the
    predicted class, divided by the distance to the training mean."""
    z = np.asarray(z, dtype=np.float64)
    predicted = head.predict(z)
    normalizer = distance_to_mean(stats, z)
    if normalizer == 0.0:
        raise DegenerateInputError(
            "input coincides with the training mean; the normalizer is zero"
        )
    w = head.weights.astype(np.float64)
    b = head.bias.astype(np.float64)
    terms = []
    skipped = []
    for c in range(head.class_count):
        if c == predicted:
            continue
        denom = get_distance(w[predicted], w[c])
        if denom == 0.0:
            skipped.append(c)
            continue
        num = abs(float((w[predicted] - w[c]) @ z) + float(b[predicted] - b[c]))
        terms.append(num / denom)
    if skipped:
        warnings.warn(
            f"skipped classes with weights coincident to class {predicted}: {skipped}",
            RuntimeWarning,
            stacklevel=2,
        )
    if not terms:
        raise ValidationError("every class weight row coincides with the predicted one")
    return float(np.mean(terms)) / normalizer


def _as_scores(values: Sequence[float], side: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"{side} scores must be a non-empty vector")
    return arr


def auroc(id_scores: Sequence[float], ood_scores: Sequence[float]) -> float:
    """Probability a random ID score exceeds a random OOD score, ties counted
    half. Computed from tie-averaged rank sums; exactly matches the pairwise
    comparison count."""
    ids = _as_scores(id_scores, "ID")
    oods = _as_scores(ood_scores, "OOD")
    combined = np.concatenate([ids, oods])
    order = np.argsort(combined, kind="stable")
    sorted_vals = combined[order]
    ranks = np.empty(combined.size, dtype=np.float64)
    i = 0
    while i < combined.size:
        j = i
        while j < combined.size and sorted_vals[j] == sorted_vals[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)  # average of 1-based ranks i+1..j
        i = j
    n_id = ids.size
    u = ranks[:n_id].sum() - 0.5 * n_id * (n_id + 1)
    return float(u / (n_id * oods.size))


def fpr_at_95_tpr(
    id_scores: Sequence[float], ood_scores: Sequence[float]
) -> tuple[float, float]:
    """(fpr95, tau): tau is the largest attained ID score keeping TPR >= 95%
    under the rule "ID iff score >= tau"; fpr95 is the fraction of OOD scores
    at or above it."""
    ids = _as_scores(id_scores, "ID")
    oods = _as_scores(ood_scores, "OOD")
    n = ids.size
    m = (95 * n + 99) // 100  # ceil(0.95 * n) in exact integer arithmetic
    tau = float(np.sort(ids)[n - m])  # m-th largest
    fpr = float(np.count_nonzero(oods >= tau) / oods.size)
    return fpr, tau


def classify(score: float, tau: float) -> Literal["ID", "OOD"]:
    """Threshold verdict: ID iff score >= tau."""
    return "ID" if score >= tau else "OOD"


def evaluate_detection(
    id_scores: Sequence[float], ood_scores: Sequence[float]
) -> DetectionMetrics:
    """AUROC and FPR95 for one ID/OOD score split."""
    fpr, tau = fpr_at_95_tpr(id_scores, ood_scores)
    return DetectionMetrics(
        auroc=auroc(id_scores, ood_scores),
        fpr95=fpr,
        threshold_tau=tau,
        id_count=len(id_scores),
        ood_count=len(ood_scores),
    )
