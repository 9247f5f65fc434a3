"""Synthetic benchmark generator: determinism, geometry, and head quality."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from cfood.data import load_from_manifest, load_head
from cfood.synth import SynthSpec, generate


def _tree_digest(root: Path) -> dict:
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.iterdir())
        if p.is_file()
    }


class TestDeterminism:
    def test_same_seed_same_bytes(self, tmp_path):
        spec = SynthSpec(classes=3, dim=2, per_class=50, test_count=30,
                         ood_mid_count=30, ood_far_count=10, seed=123)
        generate(tmp_path / "a", spec)
        generate(tmp_path / "b", spec)
        assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")

    def test_different_seed_different_bytes(self, tmp_path):
        spec = SynthSpec(classes=3, dim=2, per_class=50, test_count=30,
                         ood_mid_count=10, seed=1)
        generate(tmp_path / "a", spec)
        generate(tmp_path / "b", SynthSpec(classes=3, dim=2, per_class=50,
                                           test_count=30, ood_mid_count=10, seed=2))
        a = _tree_digest(tmp_path / "a")
        b = _tree_digest(tmp_path / "b")
        assert a["train.cfod"] != b["train.cfod"]


class TestGeometry:
    def test_cluster_means_recovered(self, tmp_path):
        spec = SynthSpec(classes=4, dim=3, per_class=400, test_count=40,
                         ood_mid_count=10, separation=8.0, seed=9)
        result = generate(tmp_path, spec)
        ds, _, _ = load_from_manifest(result.train_manifest)
        for c in range(4):
            rows = ds.features[ds.labels == c].astype(np.float64)
            sample_mean = rows.mean(axis=0)
            # in-cluster sigma is 1; allow 3 sigma / sqrt(n) per coordinate
            tol = 3.0 / np.sqrt(rows.shape[0])
            assert np.all(np.abs(sample_mean - result.cluster_means[c]) < tol * 1.5)

    def test_minimum_separation_is_exact(self, tmp_path):
        spec = SynthSpec(classes=5, dim=4, per_class=20, test_count=10,
                         ood_mid_count=5, separation=12.5, seed=4)
        result = generate(tmp_path, spec)
        means = result.cluster_means
        dmin = min(
            float(np.linalg.norm(means[i] - means[j]))
            for i in range(5) for j in range(i + 1, 5)
        )
        assert dmin == pytest.approx(12.5, rel=1e-9)

    def test_head_classifies_separated_train(self, tmp_path):
        spec = SynthSpec(classes=3, dim=2, per_class=300, test_count=30,
                         ood_mid_count=10, separation=10.0, seed=5)
        result = generate(tmp_path, spec)
        assert result.head_train_accuracy >= 0.99

    def test_ood_counts_and_labels(self, tmp_path):
        spec = SynthSpec(classes=3, dim=2, per_class=40, test_count=25,
                         ood_mid_count=17, ood_far_count=9, seed=6)
        result = generate(tmp_path, spec)
        mid, _, _ = load_from_manifest(result.ood_mid_manifest)
        far, _, _ = load_from_manifest(result.ood_far_manifest)
        assert mid.row_count == 17 and far.row_count == 9
        assert set(mid.labels.tolist()) == {0}
        assert mid.input_refs[0] == "synth:ood_midplane:0"

    def test_test_count_spread(self, tmp_path):
        spec = SynthSpec(classes=3, dim=2, per_class=40, test_count=25,
                         ood_mid_count=5, seed=8)
        result = generate(tmp_path, spec)
        test, _, _ = load_from_manifest(result.test_manifest)
        assert test.row_count == 25
        counts = np.bincount(test.labels, minlength=3)
        assert counts.tolist() == [9, 8, 8]

    def test_logits_match_head(self, tmp_path):
        spec = SynthSpec(classes=3, dim=2, per_class=30, test_count=12,
                         ood_mid_count=6, seed=10)
        result = generate(tmp_path, spec)
        ds, head, _ = load_from_manifest(result.test_manifest)
        recomputed = head.logits_batch(ds.features).astype(np.float32)
        assert np.allclose(ds.logits, recomputed, atol=1e-4)

    def test_far_field_radius(self, tmp_path):
        spec = SynthSpec(classes=3, dim=2, per_class=30, test_count=12,
                         ood_mid_count=5, ood_far_count=20, seed=11)
        result = generate(tmp_path, spec)
        far, _, _ = load_from_manifest(result.ood_far_manifest)
        centre = result.cluster_means.mean(axis=0)
        radius = 3.0 * max(np.linalg.norm(m - centre) for m in result.cluster_means)
        dists = np.linalg.norm(far.features.astype(np.float64) - centre, axis=1)
        assert np.allclose(dists, radius, rtol=1e-6)
