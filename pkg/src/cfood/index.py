"""Class-partitioned exact nearest-neighbour search over training features.

The index keeps one contiguous float32 block per class plus the original
training indices. Squared Euclidean distances are accumulated sequentially
(left to right) in float64 with each stored float32 element promoted exactly;
an exhaustive scan using the same rule reproduces every query bit for bit.
Square roots are applied only at scoring/report boundaries.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import FeatureDataset, LinearHead
from .errors import EmptyClassError, FormatError, ValidationError

MAGIC_INDEX = b"CFIX"

try:
    import numba

    @numba.njit(cache=True)
    def _sqdist_kernel(block, z, out):  # pragma: no cover - exercised via wrapper
        n, d = block.shape
        for i in range(n):
            acc = 0.0
            for j in range(d):
                t = np.float64(block[i, j]) - z[j]
                acc += t * t
            out[i] = acc

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def squared_distances(block: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from z (float64) to every float32 row."""
    out = np.empty(block.shape[0], dtype=np.float64)
    if _HAVE_NUMBA:
        _sqdist_kernel(block, z, out)
        return out
    diff = block.astype(np.float64) - z
    np.multiply(diff, diff, out=diff)
    # cumsum is a sequential reduction, matching the kernel's accumulation order
    out[:] = np.cumsum(diff, axis=1)[:, -1]
    return out


@dataclass(frozen=True)
class ClassIndex:
    """Immutable per-class blocks of training features; queries are thread-safe."""

    blocks: tuple[np.ndarray, ...]
    block_indices: tuple[np.ndarray, ...]
    eligible: np.ndarray
    dim: int
    filtered: bool
    input_refs: Optional[tuple[str, ...]] = None

    @property
    def class_count(self) -> int:
        return len(self.blocks)

    @property
    def total_rows(self) -> int:
        return int(sum(b.shape[0] for b in self.blocks))

    @property
    def class_counts(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.blocks)

    @property
    def empty_classes(self) -> tuple[int, ...]:
        return tuple(c for c, b in enumerate(self.blocks) if b.shape[0] == 0)

    def _check_query(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.dim,):
            raise ValidationError(
                f"dimension mismatch: index expects length {self.dim}, got {z.shape}"
            )
        return z

    def _check_class(self, c: int) -> None:
        if not 0 <= c < self.class_count:
            raise ValidationError(f"class {c} out of range [0, {self.class_count})")
        if self.blocks[c].shape[0] == 0:
            raise EmptyClassError(f"class {c} has no eligible training rows")


def build_index(
    ds: FeatureDataset,
    head: Optional[LinearHead] = None,
    filter_misclassified: bool = True,
) -> ClassIndex:
    """Group training rows by class, optionally dropping head-misclassified ones.

    With filtering on (the default) only rows the head classifies as their own
    label are kept, so every stored row truly lies on its class's side of the
    decision boundary. Classes left empty are reported as a warning, not an
    error.
    """
    if filter_misclassified:
        if head is None:
            raise ValidationError("filter_misclassified requires a head")
        if head.dim != ds.dim or head.class_count != ds.class_count:
            raise ValidationError(
                f"head is {head.class_count}x{head.dim}, dataset needs "
                f"{ds.class_count}x{ds.dim}"
            )
        preds = head.predict_batch(ds.features)
        eligible = preds == ds.labels.astype(np.int64)
    else:
        eligible = np.ones(ds.row_count, dtype=bool)

    blocks = []
    block_indices = []
    for c in range(ds.class_count):
        rows = np.flatnonzero((ds.labels == c) & eligible)
        blocks.append(np.ascontiguousarray(ds.features[rows]))
        block_indices.append(rows.astype(np.int64))
    idx = ClassIndex(
        blocks=tuple(blocks),
        block_indices=tuple(block_indices),
        eligible=eligible,
        dim=ds.dim,
        filtered=filter_misclassified,
        input_refs=ds.input_refs,
    )
    if idx.empty_classes:
        warnings.warn(
            f"classes with no eligible training rows: {list(idx.empty_classes)}",
            RuntimeWarning,
            stacklevel=2,
        )
    return idx


def nearest_in_class(idx: ClassIndex, z: np.ndarray, c: int) -> tuple[int, float]:
    """Closest row of class c: (original training index, squared distance).

    Ties break toward the lowest original training index.
    """
    z = idx._check_query(z)
    idx._check_class(c)
    d = squared_distances(idx.blocks[c], z)
    j = int(np.argmin(d))  # first minimum = lowest original index
    return int(idx.block_indices[c][j]), float(d[j])


def k_nearest_in_class(
    idx: ClassIndex, z: np.ndarray, c: int, k: int
) -> list[tuple[int, float]]:
    """The min(k, class size) closest rows of class c, ascending by distance.

    Ties break toward the lowest original training index.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    z = idx._check_query(z)
    idx._check_class(c)
    d = squared_distances(idx.blocks[c], z)
    order = np.argsort(d, kind="stable")[:k]
    rows = idx.block_indices[c]
    return [(int(rows[j]), float(d[j])) for j in order]


def kth_nearest_global(idx: ClassIndex, z: np.ndarray, k: int) -> float:
    """Squared distance to the k-th closest row across all classes."""
    total = idx.total_rows
    if not 1 <= k <= total:
        raise ValidationError(f"k={k} exceeds the {total} indexed rows")
    z = idx._check_query(z)
    parts = [squared_distances(b, z) for b in idx.blocks if b.shape[0]]
    d = np.concatenate(parts)
    return float(np.partition(d, k - 1)[k - 1])


def save_index(idx: ClassIndex, path: str) -> None:
    """Persist the per-class row indices as a CFIX cache file."""
    with open(path, "wb") as f:
        f.write(MAGIC_INDEX)
        f.write(struct.pack("<QB", idx.class_count, 1 if idx.filtered else 0))
        for rows in idx.block_indices:
            f.write(struct.pack("<Q", rows.size))
            f.write(rows.astype("<u8", copy=False).tobytes())


def load_index(path: str, ds: FeatureDataset) -> ClassIndex:
    """Rebuild an index from a CFIX cache against its source dataset.

    The cache is never authoritative: stored indices are validated against the
    dataset's labels and bounds.
    """
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC_INDEX:
            raise FormatError(f"bad magic: expected {MAGIC_INDEX!r}, got {magic!r}")
        raw = f.read(9)
        if len(raw) != 9:
            raise FormatError("truncated file: CFIX header")
        c, filtered = struct.unpack("<QB", raw)
        if c != ds.class_count:
            raise FormatError(
                f"index cache has {c} classes, dataset has {ds.class_count}"
            )
        blocks = []
        block_indices = []
        eligible = np.zeros(ds.row_count, dtype=bool)
        for cls in range(c):
            raw = f.read(8)
            if len(raw) != 8:
                raise FormatError("truncated file: CFIX class header")
            m = struct.unpack("<Q", raw)[0]
            payload = f.read(8 * m)
            if len(payload) != 8 * m:
                raise FormatError("truncated file: CFIX class indices")
            rows = np.frombuffer(payload, dtype="<u8").astype(np.int64)
            if rows.size and (rows.max() >= ds.row_count or rows.min() < 0):
                raise FormatError("index cache row out of dataset bounds")
            if rows.size and not np.all(ds.labels[rows] == cls):
                raise FormatError("index cache rows do not match dataset labels")
            eligible[rows] = True
            blocks.append(np.ascontiguousarray(ds.features[rows]))
            block_indices.append(rows)
        if f.read(1) != b"":
            raise FormatError("dimension mismatch: trailing data in CFIX file")
    return ClassIndex(
        blocks=tuple(blocks),
        block_indices=tuple(block_indices),
        eligible=eligible,
        dim=ds.dim,
        filtered=bool(filtered),
        input_refs=ds.input_refs,
    )
