"""Counterfactual search per target class: nearest unlike neighbour and
greedy feature substitution.

Both methods anchor on the closest training row of the target class. The
substitution search walks from the query toward that anchor one feature at a
time, picking the substitution with the best logit margin toward the target,
and stops at the first candidate the head classifies as the target. With
misclassification filtering on, full substitution reaches the anchor itself,
so termination is guaranteed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import LinearHead
from .errors import SearchError, ValidationError
from .index import ClassIndex, nearest_in_class


@dataclass(frozen=True)
class Counterfactual:
    """A boundary-crossing point for one target class."""

    target_class: int
    point: np.ndarray  # float64, length D
    distance: float  # Euclidean distance from the query
    source_index: int  # training row the search anchored on
    substituted_features: Optional[tuple[int, ...]] = None  # substitution order


def get_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance, accumulated sequentially in float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(
            f"dimension mismatch: got shapes {a.shape} and {b.shape}"
        )
    diff = a - b
    np.multiply(diff, diff, out=diff)
    if diff.size == 0:
        return 0.0
    return float(np.sqrt(np.cumsum(diff)[-1]))


def nnce(idx: ClassIndex, z: np.ndarray, target: int) -> Counterfactual:
    """Nearest unlike neighbour: the closest eligible training row of the
    target class."""
    row, d2 = nearest_in_class(idx, z, target)
    point = idx.blocks[target][
        int(np.searchsorted(idx.block_indices[target], row))
    ].astype(np.float64)
    return Counterfactual(
        target_class=target,
        point=point,
        distance=float(np.sqrt(d2)),
        source_index=row,
    )


def nice(
    idx: ClassIndex, head: LinearHead, z: np.ndarray, target: int
) -> Counterfactual:
    """Greedy feature substitution from the query toward its nearest unlike
    neighbour, stopping at the first candidate predicted as the target.

    Each step substitutes the not-yet-substituted position maximizing
    logit_target - logit_predicted on the resulting candidate (ties to the
    lowest position). The result never lies farther from the query than the
    anchor itself.
    """
    z = np.asarray(z, dtype=np.float64)
    anchor_cf = nnce(idx, z, target)
    anchor = anchor_cf.point
    d = z.shape[0]
    if head.dim != d or not 0 <= target < head.class_count:
        raise ValidationError("head does not match the query/target")

    w = head.weights.astype(np.float64)
    b = head.bias.astype(np.float64)
    wt = np.ascontiguousarray(w.T)  # (D, C)

    candidate = z.copy()
    logits = w @ candidate + b
    pred = int(np.argmax(logits))
    if pred == target:
        raise ValidationError(
            f"target class {target} is already the predicted class of the query"
        )

    substituted: list[int] = []
    used = np.zeros(d, dtype=bool)
    positions = np.arange(d)
    while pred != target:
        if len(substituted) == d:
            raise SearchError(
                f"substitution exhausted all {d} features without reaching class "
                f"{target}; the anchor row is not classified as the target "
                "(was the index built with filter_misclassified=False?)"
            )
        delta = anchor - candidate
        cand_logits = logits[None, :] + wt * delta[:, None]  # (D, C)
        cand_pred = np.argmax(cand_logits, axis=1)
        margins = cand_logits[positions, target] - cand_logits[positions, cand_pred]
        margins[used] = -np.inf
        j = int(np.argmax(margins))  # first maximum = lowest position on ties
        candidate[j] = anchor[j]
        substituted.append(j)
        used[j] = True
        logits = w @ candidate + b
        pred = int(np.argmax(logits))

    return Counterfactual(
        target_class=target,
        point=candidate,
        distance=get_distance(z, candidate),
        source_index=anchor_cf.source_index,
        substituted_features=tuple(substituted),
    )
