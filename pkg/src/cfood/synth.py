"""Seeded synthetic benchmark generator.

Builds C Gaussian clusters as ID data, fits a least-squares linear head, and
places OOD points either on inter-cluster midpoints (with small jitter) or on
a far-field shell around the data. Midpoint OOD sits near decision
boundaries, so its counterfactual distances are provably small; far-field OOD
probes the normalizer instead. Everything is a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .data import (
    DatasetManifest,
    FeatureDataset,
    LinearHead,
    save_dataset,
    save_head,
    save_manifest,
)
from .errors import ValidationError


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 3
    dim: int = 2
    per_class: int = 500
    test_count: int = 500
    ood_mid_count: int = 500
    ood_far_count: int = 0
    separation: float = 10.0
    jitter: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2 or self.dim < 1 or self.per_class < 1:
            raise ValidationError("need classes >= 2, dim >= 1, per_class >= 1")
        if self.separation <= 0:
            raise ValidationError("separation must be positive")


def _cluster_means(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    """Random cluster means rescaled so the closest pair sits exactly
    `separation` apart (unit in-cluster sigma)."""
    means = rng.uniform(-1.0, 1.0, size=(spec.classes, spec.dim))
    dmin = min(
        float(np.linalg.norm(means[i] - means[j]))
        for i, j in combinations(range(spec.classes), 2)
    )
    if dmin == 0.0:
        # vanishing probability; shift to a deterministic simplex layout
        means = np.eye(spec.classes, spec.dim)
        dmin = float(np.sqrt(2.0)) if spec.dim > 1 else 1.0
    return means * (spec.separation / dmin)


def _spread_counts(total: int, classes: int) -> list[int]:
    base, rem = divmod(total, classes)
    return [base + (1 if c < rem else 0) for c in range(classes)]


def _fit_head(features: np.ndarray, labels: np.ndarray, classes: int) -> LinearHead:
    """Least-squares one-hot regression via ridge-regularized normal equations."""
    x = features.astype(np.float64)
    n, d = x.shape
    a = np.hstack([x, np.ones((n, 1))])
    y = np.zeros((n, classes))
    y[np.arange(n), labels] = 1.0
    gram = a.T @ a + 1e-8 * np.eye(d + 1)
    sol = np.linalg.solve(gram, a.T @ y)  # (D+1, C)
    return LinearHead(weights=sol[:d].T, bias=sol[d])


@dataclass(frozen=True)
class SynthResult:
    out_dir: str
    train_manifest: str
    test_manifest: str
    ood_mid_manifest: str | None
    ood_far_manifest: str | None
    head_path: str
    head_train_accuracy: float
    cluster_means: np.ndarray


def generate(out_dir: str | Path, spec: SynthSpec) -> SynthResult:
    """Write the benchmark files (CFOD/CFHD/manifests/refs) under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    means = _cluster_means(rng, spec)

    def _blob(count_per_class: list[int]) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = [], []
        for c, m in enumerate(count_per_class):
            xs.append(means[c] + rng.standard_normal((m, spec.dim)))
            ys.append(np.full(m, c, dtype=np.int32))
        return np.vstack(xs), np.concatenate(ys)

    train_x, train_y = _blob([spec.per_class] * spec.classes)
    test_x, test_y = _blob(_spread_counts(spec.test_count, spec.classes))

    head = _fit_head(train_x, train_y, spec.classes)
    accuracy = float(np.mean(head.predict_batch(train_x) == train_y))

    pairs = list(combinations(range(spec.classes), 2))
    mid_x = np.empty((spec.ood_mid_count, spec.dim))
    for t in range(spec.ood_mid_count):
        i, j = pairs[t % len(pairs)]
        mid_x[t] = 0.5 * (means[i] + means[j]) + spec.jitter * rng.standard_normal(
            spec.dim
        )

    centre = means.mean(axis=0)
    radius = 3.0 * max(float(np.linalg.norm(m - centre)) for m in means)
    far_x = np.empty((spec.ood_far_count, spec.dim))
    for t in range(spec.ood_far_count):
        g = rng.standard_normal(spec.dim)
        g /= float(np.linalg.norm(g))
        far_x[t] = centre + radius * g

    head_path = out / "head.cfhd"
    save_head(head, head_path)

    def _emit(name: str, x: np.ndarray, y: np.ndarray, space: str) -> str:
        ds = FeatureDataset(
            features=x.astype(np.float32),
            labels=y,
            class_count=spec.classes,
            logits=head.logits_batch(x).astype(np.float32),
            input_refs=tuple(f"synth:{name}:{i}" for i in range(x.shape[0])),
        )
        cfod = out / f"{name}.cfod"
        save_dataset(ds, cfod)
        manifest = DatasetManifest(
            features_path=f"{name}.cfod",
            head_path="head.cfhd",
            refs_path=f"{name}.cfod.refs",
            n=ds.row_count,
            d=ds.dim,
            c=ds.class_count,
            space=space,
        )
        mpath = out / f"{name}.json"
        save_manifest(manifest, mpath)
        return str(mpath)

    train_manifest = _emit("train", train_x, train_y, "input-space")
    test_manifest = _emit("test", test_x, test_y, "input-space")
    ood_mid_manifest = None
    if spec.ood_mid_count:
        # OOD rows have no true class; label 0 is a placeholder (scoring ignores it)
        ood_mid_manifest = _emit(
            "ood_midplane",
            mid_x,
            np.zeros(spec.ood_mid_count, dtype=np.int32),
            "input-space",
        )
    ood_far_manifest = None
    if spec.ood_far_count:
        ood_far_manifest = _emit(
            "ood_farfield",
            far_x,
            np.zeros(spec.ood_far_count, dtype=np.int32),
            "input-space",
        )
    return SynthResult(
        out_dir=str(out),
        train_manifest=train_manifest,
        test_manifest=test_manifest,
        ood_mid_manifest=ood_mid_manifest,
        ood_far_manifest=ood_far_manifest,
        head_path=str(head_path),
        head_train_accuracy=accuracy,
        cluster_means=means,
    )
