"""Oracle equivalence and determinism for the class-partitioned index."""

import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from cfood.data import FeatureDataset, LinearHead
from cfood.errors import EmptyClassError, FormatError, ValidationError
from cfood.index import (
    build_index,
    k_nearest_in_class,
    kth_nearest_global,
    load_index,
    nearest_in_class,
    save_index,
    squared_distances,
)


def oracle_distances(ds: FeatureDataset, z: np.ndarray) -> np.ndarray:
    """Exhaustive scan with the same accumulation rule: sequential float64
    sum of squared differences over float32-promoted rows."""
    diff = ds.features.astype(np.float64) - np.asarray(z, dtype=np.float64)
    np.multiply(diff, diff, out=diff)
    return np.cumsum(diff, axis=1)[:, -1]


def oracle_class_order(ds, z, c, eligible=None):
    """Rows of class c sorted by (distance, original index)."""
    d = oracle_distances(ds, z)
    mask = ds.labels == c
    if eligible is not None:
        mask &= eligible
    rows = np.flatnonzero(mask)
    order = np.lexsort((rows, d[rows]))
    return rows[order], d[rows][order]


def toy_dataset():
    return FeatureDataset(
        features=np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 3.0], [1.0, 3.0]],
                          dtype=np.float32),
        labels=np.array([0, 0, 1, 1], dtype=np.int32),
        class_count=2,
    )


def identity_head():
    return LinearHead(weights=[[1.0, 0.0], [0.0, 1.0]], bias=[0.0, 0.0])


class TestBuild:
    def test_all_correct_keeps_everything(self):
        idx = build_index(toy_dataset(), identity_head())
        assert idx.class_counts == (2, 2)
        assert idx.total_rows == 4
        assert idx.empty_classes == ()

    def test_misclassified_row_filtered(self):
        ds = FeatureDataset(
            features=np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 3.0], [5.0, 0.5]],
                              dtype=np.float32),
            labels=np.array([0, 0, 1, 1], dtype=np.int32),  # head predicts 0 for row 3
            class_count=2,
        )
        idx = build_index(ds, identity_head())
        assert idx.class_counts == (2, 1)
        assert list(idx.block_indices[1]) == [2]

    def test_filtering_off_keeps_all(self):
        ds = FeatureDataset(
            features=np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 3.0], [5.0, 0.5]],
                              dtype=np.float32),
            labels=np.array([0, 0, 1, 1], dtype=np.int32),
            class_count=2,
        )
        idx = build_index(ds, filter_misclassified=False)
        assert idx.total_rows == ds.row_count

    def test_filtering_requires_head(self):
        with pytest.raises(ValidationError, match="head"):
            build_index(toy_dataset(), None, filter_misclassified=True)

    def test_empty_class_is_warning_not_error(self):
        ds = FeatureDataset(
            features=np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 0.1]], dtype=np.float32),
            labels=np.array([0, 0, 1], dtype=np.int32),  # row 2 misclassified as 0
            class_count=2,
        )
        with pytest.warns(RuntimeWarning, match="no eligible"):
            idx = build_index(ds, identity_head())
        assert idx.empty_classes == (1,)


class TestNearest:
    def test_tie_breaks_low_index(self):
        idx = build_index(toy_dataset(), identity_head())
        row, d2 = nearest_in_class(idx, np.array([1.0, 0.0]), 0)
        assert (row, d2) == (0, 1.0)  # tie with row 1, lower index wins

    def test_single_point_class(self):
        ds = FeatureDataset(
            features=np.array([[0.0, 0.0], [9.0, 9.0]], dtype=np.float32),
            labels=np.array([0, 1], dtype=np.int32),
            class_count=2,
        )
        idx = build_index(ds, filter_misclassified=False)
        assert nearest_in_class(idx, np.array([1.0, 1.0]), 1)[0] == 1

    def test_empty_class_error(self):
        ds = FeatureDataset(
            features=np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 0.1]], dtype=np.float32),
            labels=np.array([0, 0, 1], dtype=np.int32),
            class_count=2,
        )
        with pytest.warns(RuntimeWarning):
            idx = build_index(ds, identity_head())
        with pytest.raises(EmptyClassError, match="class 1"):
            nearest_in_class(idx, np.zeros(2), 1)

    def test_dimension_mismatch(self):
        idx = build_index(toy_dataset(), identity_head())
        with pytest.raises(ValidationError, match="dimension mismatch"):
            nearest_in_class(idx, np.zeros(3), 0)


class TestKNearest:
    def test_k1_agrees_with_nearest(self):
        rng = np.random.default_rng(2)
        ds = FeatureDataset(
            features=rng.standard_normal((80, 4)).astype(np.float32),
            labels=rng.integers(0, 3, size=80).astype(np.int32),
            class_count=3,
        )
        idx = build_index(ds, filter_misclassified=False)
        for _ in range(40):
            z = rng.standard_normal(4)
            c = int(rng.integers(0, 3))
            assert k_nearest_in_class(idx, z, c, 1)[0] == nearest_in_class(idx, z, c)

    def test_clamps_to_class_size(self):
        idx = build_index(toy_dataset(), identity_head())
        assert len(k_nearest_in_class(idx, np.zeros(2), 1, 5)) == 2

    def test_monotone_distances(self):
        rng = np.random.default_rng(4)
        ds = FeatureDataset(
            features=rng.standard_normal((60, 3)).astype(np.float32),
            labels=rng.integers(0, 2, size=60).astype(np.int32),
            class_count=2,
        )
        idx = build_index(ds, filter_misclassified=False)
        hits = k_nearest_in_class(idx, rng.standard_normal(3), 0, 20)
        dists = [d for _, d in hits]
        assert dists == sorted(dists)


class TestKthGlobal:
    def test_self_distance_zero(self):
        ds = toy_dataset()
        idx = build_index(ds, filter_misclassified=False)
        assert kth_nearest_global(idx, ds.features[2], 1) == 0.0

    def test_collinear_geometry(self):
        ds = FeatureDataset(
            features=np.array([[1.0], [2.0], [3.0]], dtype=np.float32),
            labels=np.array([0, 1, 0], dtype=np.int32),
            class_count=2,
        )
        idx = build_index(ds, filter_misclassified=False)
        assert kth_nearest_global(idx, np.array([0.0]), 2) == 4.0  # middle point

    def test_k_exceeds_rows(self):
        idx = build_index(toy_dataset(), identity_head())
        with pytest.raises(ValidationError, match="exceeds"):
            kth_nearest_global(idx, np.zeros(2), 5)


class TestOracleEquivalence:
    """Module-level randomized oracle checks (the acceptance suite runs the
    full 5,000-row grid)."""

    def test_all_queries_match_exhaustive_scan(self):
        rng = np.random.default_rng(42)
        n, d, c = 400, 8, 4
        ds = FeatureDataset(
            features=rng.standard_normal((n, d)).astype(np.float32),
            labels=rng.integers(0, c, size=n).astype(np.int32),
            class_count=c,
        )
        idx = build_index(ds, filter_misclassified=False)
        for _ in range(150):
            z = rng.standard_normal(d)
            target = int(rng.integers(0, c))
            rows, dists = oracle_class_order(ds, z, target)
            assert nearest_in_class(idx, z, target) == (rows[0], dists[0])
            k = int(rng.integers(1, 12))
            got = k_nearest_in_class(idx, z, target, k)
            assert got == list(zip(rows[:k].tolist(), dists[:k].tolist()))
            kg = int(rng.integers(1, n + 1))
            assert kth_nearest_global(idx, z, kg) == float(
                np.sort(oracle_distances(ds, z))[kg - 1]
            )

    def test_duplicate_rows_tie_to_lowest_index(self):
        base = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        ds = FeatureDataset(
            features=np.vstack([base, base]).astype(np.float32),
            labels=np.array([0, 0, 0, 0], dtype=np.int32),
            class_count=2,
        )
        with pytest.warns(RuntimeWarning, match="no eligible"):
            idx = build_index(ds, filter_misclassified=False)
        row, d2 = nearest_in_class(idx, np.array([1.0, 2.0]), 0)
        assert (row, d2) == (0, 0.0)
        hits = k_nearest_in_class(idx, np.array([1.0, 2.0]), 0, 4)
        assert [r for r, _ in hits] == [0, 2, 1, 3]

    def test_filtered_index_matches_filtered_oracle(self):
        rng = np.random.default_rng(9)
        n, d, c = 200, 5, 3
        ds = FeatureDataset(
            features=rng.standard_normal((n, d)).astype(np.float32),
            labels=rng.integers(0, c, size=n).astype(np.int32),
            class_count=c,
        )
        head = LinearHead(
            weights=rng.standard_normal((c, d)).astype(np.float32),
            bias=rng.standard_normal(c).astype(np.float32),
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # empty classes are fine here
            idx = build_index(ds, head)
        eligible = head.predict_batch(ds.features) == ds.labels
        for _ in range(50):
            z = rng.standard_normal(d)
            for target in range(c):
                if not np.any(eligible & (ds.labels == target)):
                    continue
                rows, dists = oracle_class_order(ds, z, target, eligible)
                assert nearest_in_class(idx, z, target) == (rows[0], dists[0])


class TestDeterminism:
    def test_concurrent_queries_match_serial(self):
        rng = np.random.default_rng(21)
        n, d, c = 500, 16, 4
        ds = FeatureDataset(
            features=rng.standard_normal((n, d)).astype(np.float32),
            labels=rng.integers(0, c, size=n).astype(np.int32),
            class_count=c,
        )
        idx = build_index(ds, filter_misclassified=False)
        queries = rng.standard_normal((64, d))
        serial = [nearest_in_class(idx, q, int(i % c)) for i, q in enumerate(queries)]
        with ThreadPoolExecutor(max_workers=8) as pool:
            parallel = list(
                pool.map(lambda t: nearest_in_class(idx, t[1], int(t[0] % c)),
                         enumerate(queries))
            )
        assert serial == parallel

    def test_kernel_matches_numpy_fallback(self):
        rng = np.random.default_rng(33)
        block = rng.standard_normal((100, 37)).astype(np.float32)
        z = rng.standard_normal(37)
        diff = block.astype(np.float64) - z
        np.multiply(diff, diff, out=diff)
        fallback = np.cumsum(diff, axis=1)[:, -1]
        assert np.array_equal(squared_distances(block, z), fallback)


class TestPersistence:
    def test_cfix_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        n, d, c = 120, 6, 3
        ds = FeatureDataset(
            features=rng.standard_normal((n, d)).astype(np.float32),
            labels=rng.integers(0, c, size=n).astype(np.int32),
            class_count=c,
        )
        head = LinearHead(
            weights=rng.standard_normal((c, d)).astype(np.float32),
            bias=rng.standard_normal(c).astype(np.float32),
        )
        idx = build_index(ds, head)
        path = tmp_path / "cache.cfix"
        save_index(idx, str(path))
        loaded = load_index(str(path), ds)
        assert loaded.class_counts == idx.class_counts
        assert loaded.filtered == idx.filtered
        for a, b in zip(loaded.block_indices, idx.block_indices):
            assert np.array_equal(a, b)
        z = rng.standard_normal(d)
        for target in range(c):
            if idx.class_counts[target]:
                assert nearest_in_class(loaded, z, target) == nearest_in_class(idx, z, target)

    def test_cfix_never_authoritative(self, tmp_path):
        ds = toy_dataset()
        idx = build_index(ds, identity_head())
        path = tmp_path / "cache.cfix"
        save_index(idx, str(path))
        other = FeatureDataset(
            features=ds.features,
            labels=np.array([1, 1, 0, 0], dtype=np.int32),  # labels no longer match
            class_count=2,
        )
        with pytest.raises(FormatError, match="labels"):
            load_index(str(path), other)
