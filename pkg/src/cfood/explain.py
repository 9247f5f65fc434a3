"""Nearest-like/unlike-neighbour explanation reports for scored inputs.

A report pairs the detector's verdict with the k nearest training rows of the
predicted class (the "like" row) and, per other class, the k nearest rows of
that class ("unlike" blocks), ordered so the closest class comes first. All
lookups run on the prebuilt index, so explaining adds no counterfactual
searches beyond what scoring already did.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import LinearHead
from .errors import ValidationError
from .index import ClassIndex, k_nearest_in_class
from .metrics import classify
from .scoring import ScoreConfig, TrainStatistics, score_input

MAX_UNLIKE_BLOCKS = 5  # beyond 10 classes, keep only the closest few


@dataclass(frozen=True)
class Neighbour:
    ref: str
    label: int
    distance: float  # true Euclidean distance


@dataclass(frozen=True)
class UnlikeBlock:
    label: int
    neighbours: tuple[Neighbour, ...]


@dataclass(frozen=True)
class ExplanationReport:
    """Ranked like/unlike neighbours with the verdict they explain."""

    query_ref: str
    predicted_class: int
    verdict: str
    score: float
    normalizer: float
    like_neighbours: tuple[Neighbour, ...]
    unlike_blocks: tuple[UnlikeBlock, ...]
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "query_ref": self.query_ref,
            "predicted_class": self.predicted_class,
            "verdict": self.verdict,
            "score": self.score,
            "normalizer": self.normalizer,
            "like_neighbours": [
                {"ref": n.ref, "label": n.label, "distance": n.distance}
                for n in self.like_neighbours
            ],
            "unlike_blocks": [
                {
                    "label": b.label,
                    "neighbours": [
                        {"ref": n.ref, "distance": n.distance} for n in b.neighbours
                    ],
                }
                for b in self.unlike_blocks
            ],
            "notes": list(self.notes),
        }


def _neighbours(
    idx: ClassIndex, z: np.ndarray, label: int, k: int
) -> tuple[Neighbour, ...]:
    hits = k_nearest_in_class(idx, z, label, k)
    refs = idx.input_refs
    return tuple(
        Neighbour(ref=refs[row], label=label, distance=math.sqrt(d2))
        for row, d2 in hits
    )


def build_report(
    idx: ClassIndex,
    head: LinearHead,
    stats: TrainStatistics,
    z: np.ndarray,
    ref: str,
    k: int,
    tau: float,
    cfg: ScoreConfig = ScoreConfig(),
) -> ExplanationReport:
    """Score one input and assemble its neighbour report.

    Unlike blocks cover every non-predicted, non-empty class (the closest
    MAX_UNLIKE_BLOCKS classes when there are more than ten), sorted by their
    nearest member's distance. Lists are clamped to the class size when k
    exceeds it.
    """
    if idx.input_refs is None:
        raise ValidationError(
            "training set has no input refs; add a refs sidecar or set "
            "refs_path in the dataset manifest"
        )
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    z = np.asarray(z, dtype=np.float64)
    scored = score_input(idx, head, stats, z, None, cfg)
    predicted = scored.predicted_class
    verdict = classify(scored.score, tau)

    notes = []
    if idx.blocks[predicted].shape[0] == 0:
        like: tuple[Neighbour, ...] = ()
        notes.append(f"predicted class {predicted} has no eligible rows")
    else:
        like = _neighbours(idx, z, predicted, k)

    blocks = []
    for label in range(idx.class_count):
        if label == predicted:
            continue
        if idx.blocks[label].shape[0] == 0:
            notes.append(f"class {label} omitted: no eligible rows")
            continue
        blocks.append(UnlikeBlock(label=label, neighbours=_neighbours(idx, z, label, k)))
    blocks.sort(key=lambda b: (b.neighbours[0].distance, b.label))
    if idx.class_count > 10:
        blocks = blocks[:MAX_UNLIKE_BLOCKS]

    return ExplanationReport(
        query_ref=ref,
        predicted_class=predicted,
        verdict=verdict,
        score=scored.score,
        normalizer=scored.normalizer,
        like_neighbours=like,
        unlike_blocks=tuple(blocks),
        notes=tuple(notes),
    )


def render_text(report: ExplanationReport) -> str:
    """Plain-text rendering: query line, the like row, then unlike rows."""
    lines = [
        f"query {report.query_ref}: predicted class {report.predicted_class}, "
        f"verdict {report.verdict}, score {report.score:.6g} "
        f"(normalizer {report.normalizer:.6g})"
    ]
    like = "  ".join(f"{n.ref} (d={n.distance:.4g})" for n in report.like_neighbours)
    lines.append(f"  like    class {report.predicted_class}: {like or '(none)'}")
    for block in report.unlike_blocks:
        row = "  ".join(f"{n.ref} (d={n.distance:.4g})" for n in block.neighbours)
        lines.append(f"  unlike  class {block.label}: {row}")
    for note in report.notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines)
