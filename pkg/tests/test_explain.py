"""Explanation reports: neighbour ordering, clamping, and ref resolution."""

import math
import warnings

import numpy as np
import pytest

from cfood.data import FeatureDataset, LinearHead
from cfood.errors import ValidationError
from cfood.explain import build_report, render_text
from cfood.index import build_index, nearest_in_class
from cfood.scoring import compute_mu_train


def toy_problem():
    ds = FeatureDataset(
        features=np.array([[0.0, 0.0], [0.0, 3.0]], dtype=np.float32),
        labels=np.array([0, 1], dtype=np.int32),
        class_count=2,
        input_refs=("ref_A", "ref_B"),
    )
    head = LinearHead(weights=[[1.0, 0.0], [0.0, 1.0]], bias=[0.0, 0.0])
    idx = build_index(ds, head)
    return ds, head, idx


def random_problem(rng, n=200, d=5, c=6):
    while True:
        ds = FeatureDataset(
            features=rng.standard_normal((n, d)).astype(np.float32),
            labels=rng.integers(0, c, size=n).astype(np.int32),
            class_count=c,
            input_refs=tuple(f"r{i}" for i in range(n)),
        )
        head = LinearHead(
            weights=rng.standard_normal((c, d)).astype(np.float32),
            bias=(0.1 * rng.standard_normal(c)).astype(np.float32),
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            idx = build_index(ds, head)
        if not idx.empty_classes:
            return ds, head, idx


class TestToyReport:
    def test_hand_geometry(self):
        ds, head, idx = toy_problem()
        stats = compute_mu_train(ds)
        report = build_report(idx, head, stats, np.array([1.0, 0.0]),
                              "query_1", k=1, tau=0.5)
        assert report.predicted_class == 0
        assert report.query_ref == "query_1"
        assert len(report.like_neighbours) == 1
        like = report.like_neighbours[0]
        assert (like.ref, like.label, like.distance) == ("ref_A", 0, 1.0)
        assert len(report.unlike_blocks) == 1
        block = report.unlike_blocks[0]
        assert block.label == 1
        assert block.neighbours[0].ref == "ref_B"
        assert block.neighbours[0].distance == pytest.approx(math.sqrt(10.0), rel=1e-12)

    def test_k_clamps_to_class_size(self):
        ds, head, idx = toy_problem()
        stats = compute_mu_train(ds)
        report = build_report(idx, head, stats, np.array([1.0, 0.0]),
                              "q", k=10, tau=0.5)
        assert len(report.like_neighbours) == 1
        assert len(report.unlike_blocks[0].neighbours) == 1

    def test_missing_refs_is_distinct_error(self):
        ds, head, _ = toy_problem()
        bare = FeatureDataset(features=ds.features, labels=ds.labels,
                              class_count=ds.class_count)
        idx = build_index(bare, head)
        stats = compute_mu_train(bare)
        with pytest.raises(ValidationError, match="refs"):
            build_report(idx, head, stats, np.array([1.0, 0.0]), "q", k=1, tau=0.5)

    def test_render_text_layout(self):
        ds, head, idx = toy_problem()
        stats = compute_mu_train(ds)
        report = build_report(idx, head, stats, np.array([1.0, 0.0]),
                              "q", k=1, tau=0.5)
        text = render_text(report)
        lines = text.splitlines()
        assert lines[0].startswith("query q:")
        assert "like    class 0" in lines[1]
        assert "unlike  class 1" in lines[2]


class TestReportInvariants:
    def test_ordering_and_resolution(self):
        rng = np.random.default_rng(71)
        ds, head, idx = random_problem(rng)
        stats = compute_mu_train(ds)
        for _ in range(20):
            z = rng.standard_normal(ds.dim)
            report = build_report(idx, head, stats, z, "q", k=4, tau=0.0)
            assert all(n.label == report.predicted_class for n in report.like_neighbours)
            like_d = [n.distance for n in report.like_neighbours]
            assert like_d == sorted(like_d)
            mins = []
            for block in report.unlike_blocks:
                assert block.label != report.predicted_class
                d = [n.distance for n in block.neighbours]
                assert d == sorted(d)
                mins.append(d[0])
                for n in block.neighbours:
                    row = ds.input_refs.index(n.ref)
                    assert ds.labels[row] == block.label
            assert mins == sorted(mins)

    def test_first_block_matches_nearest_unlike_class(self):
        rng = np.random.default_rng(73)
        ds, head, idx = random_problem(rng)
        stats = compute_mu_train(ds)
        z = rng.standard_normal(ds.dim)
        report = build_report(idx, head, stats, z, "q", k=2, tau=0.0)
        best = min(
            math.sqrt(nearest_in_class(idx, z, c)[1])
            for c in range(ds.class_count)
            if c != report.predicted_class
        )
        assert report.unlike_blocks[0].neighbours[0].distance == best

    def test_many_classes_keeps_five_blocks(self):
        rng = np.random.default_rng(79)
        ds, head, idx = random_problem(rng, n=600, d=6, c=12)
        stats = compute_mu_train(ds)
        report = build_report(idx, head, stats, rng.standard_normal(6), "q",
                              k=2, tau=0.0)
        assert len(report.unlike_blocks) == 5

    def test_verdict_matches_threshold(self):
        ds, head, idx = toy_problem()
        stats = compute_mu_train(ds)
        z = np.array([1.0, 0.0])
        low = build_report(idx, head, stats, z, "q", k=1, tau=1e9)
        high = build_report(idx, head, stats, z, "q", k=1, tau=0.0)
        assert low.verdict == "OOD"
        assert high.verdict == "ID"
        assert low.score == high.score

    def test_to_dict_is_json_ready(self):
        import json

        ds, head, idx = toy_problem()
        stats = compute_mu_train(ds)
        report = build_report(idx, head, stats, np.array([1.0, 0.0]), "q",
                              k=1, tau=0.5)
        payload = json.loads(json.dumps(report.to_dict()))
        assert payload["predicted_class"] == 0
        assert payload["unlike_blocks"][0]["label"] == 1
        assert payload["normalizer"] == report.normalizer
