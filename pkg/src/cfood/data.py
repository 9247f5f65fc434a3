"""Dataset and linear-head containers plus their bit-exact on-disk formats.

Feature files ("CFOD") hold a float32 feature matrix, int32 labels and
optional float32 logits; head files ("CFHD") hold the final-layer weights
and bias. Storage is little-endian 32-bit throughout; all arithmetic in the
rest of the toolkit is done in float64. Input references live in a UTF-8
sidecar (one line per row) so the binaries stay fixed-stride.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import FormatError, ValidationError

MAGIC_DATASET = b"CFOD"
MAGIC_HEAD = b"CFHD"

_FLAG_LOGITS = 0x01
_FLAG_REFS = 0x02
_HEADER = struct.Struct("<QQQB")  # N, D, C, flags

REFS_SUFFIX = ".refs"


@dataclass(frozen=True)
class FeatureDataset:
    """N x D feature matrix with labels, optional logits and input references.

    Containers are immutable after construction; concurrent readers are safe.
    `features` and `logits` are float32 (the storage dtype), `labels` int32.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    logits: Optional[np.ndarray] = None
    input_refs: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float32))
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int32))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        if feats.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        n, d = feats.shape
        if n < 1 or d < 1:
            raise ValidationError(f"dataset needs N >= 1 and D >= 1, got {n}x{d}")
        if self.class_count < 2:
            raise ValidationError(f"class_count must be >= 2, got {self.class_count}")
        if labels.shape != (n,):
            raise ValidationError("labels must be a vector of length N")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValidationError(
                f"label out of range: labels must lie in [0, {self.class_count})"
            )
        if self.logits is not None:
            logits = np.ascontiguousarray(np.asarray(self.logits, dtype=np.float32))
            object.__setattr__(self, "logits", logits)
            if logits.shape != (n, self.class_count):
                raise ValidationError(
                    f"logits must be N x C = {n}x{self.class_count}, got {logits.shape}"
                )
        if self.input_refs is not None:
            refs = tuple(str(r) for r in self.input_refs)
            object.__setattr__(self, "input_refs", refs)
            if len(refs) != n:
                raise ValidationError("input_refs must have one entry per row")
            if any("\n" in r or "\r" in r for r in refs):
                raise ValidationError("input_refs must not contain newlines")

    @property
    def row_count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class LinearHead:
    """Final-layer weights (C x D) and bias (C,) mapping features to logits.

    Prediction is argmax over classes with ties broken by lowest class index.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float32))
        b = np.ascontiguousarray(np.asarray(self.bias, dtype=np.float32))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        if w.ndim != 2:
            raise ValidationError("weights must be a C x D matrix")
        c, d = w.shape
        if c < 2 or d < 1:
            raise ValidationError(f"head needs C >= 2 and D >= 1, got {c}x{d}")
        if b.shape != (c,):
            raise ValidationError("bias length must equal the weight row count")

    @property
    def class_count(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def logits_of(self, z: np.ndarray) -> np.ndarray:
        """Class logits W.z + b for one feature vector, in float64."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.dim,):
            raise ValidationError(
                f"dimension mismatch: head expects length {self.dim}, got {z.shape}"
            )
        return self.weights.astype(np.float64) @ z + self.bias.astype(np.float64)

    def logits_batch(self, x: np.ndarray) -> np.ndarray:
        """Class logits for a batch of rows (n x D), in float64."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValidationError(
                f"dimension mismatch: head expects n x {self.dim}, got {x.shape}"
            )
        return x @ self.weights.astype(np.float64).T + self.bias.astype(np.float64)

    def predict(self, z: np.ndarray) -> int:
        """Predicted class for one feature vector (lowest index wins ties)."""
        return int(np.argmax(self.logits_of(z)))

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        """Predicted classes for a batch of rows."""
        return np.argmax(self.logits_batch(x), axis=1)


@dataclass(frozen=True)
class DatasetManifest:
    """Paths and dimensional metadata tying a feature file to its extras."""

    features_path: str
    n: int
    d: int
    c: int
    space: str
    head_path: Optional[str] = None
    refs_path: Optional[str] = None

    def __post_init__(self):
        if self.space not in ("input-space", "embedding-space"):
            raise ValidationError(
                f"space must be 'input-space' or 'embedding-space', got {self.space!r}"
            )


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise FormatError(f"truncated file: expected {count} bytes for {what}")
    return data


def _refs_path_for(path: str | Path) -> str:
    return str(path) + REFS_SUFFIX


def _read_refs(path: str, n: int) -> tuple[str, ...]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().split("\n")
    except FileNotFoundError:
        raise FormatError(f"refs sidecar not found: {path}")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) != n:
        raise FormatError(
            f"refs sidecar {path} has {len(lines)} lines, dataset has {n} rows"
        )
    return tuple(lines)


def _write_refs(path: str, refs: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in refs:
            f.write(r)
            f.write("\n")


def save_dataset(ds: FeatureDataset, path: str | Path) -> None:
    """Write a CFOD file (plus refs sidecar when input_refs are present)."""
    flags = 0
    if ds.logits is not None:
        flags |= _FLAG_LOGITS
    if ds.input_refs is not None:
        flags |= _FLAG_REFS
    with open(path, "wb") as f:
        f.write(MAGIC_DATASET)
        f.write(_HEADER.pack(ds.row_count, ds.dim, ds.class_count, flags))
        f.write(ds.features.astype("<f4", copy=False).tobytes(order="C"))
        f.write(ds.labels.astype("<i4", copy=False).tobytes())
        if ds.logits is not None:
            f.write(ds.logits.astype("<f4", copy=False).tobytes(order="C"))
    if ds.input_refs is not None:
        _write_refs(_refs_path_for(path), ds.input_refs)


def load_dataset(path: str | Path, refs_path: Optional[str] = None) -> FeatureDataset:
    """Read a CFOD file; the sidecar is pulled in when the header flags it."""
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC_DATASET:
            raise FormatError(
                f"bad magic: expected {MAGIC_DATASET!r}, got {magic!r} in {path}"
            )
        n, d, c, flags = _HEADER.unpack(_read_exact(f, _HEADER.size, "header"))
        if n < 1 or d < 1 or c < 2:
            raise FormatError(f"invalid header dimensions N={n} D={d} C={c}")
        if flags & ~(_FLAG_LOGITS | _FLAG_REFS):
            raise FormatError(f"unsupported header flags 0x{flags:02x}")
        has_logits = bool(flags & _FLAG_LOGITS)
        expected = 4 + _HEADER.size + 4 * n * d + 4 * n + (4 * n * c if has_logits else 0)
        if size < expected:
            raise FormatError(
                f"truncated file: {path} is {size} bytes, header implies {expected}"
            )
        if size > expected:
            raise FormatError(
                f"dimension mismatch: {path} is {size} bytes, header implies {expected}"
            )
        features = np.frombuffer(
            _read_exact(f, 4 * n * d, "features"), dtype="<f4"
        ).reshape(n, d)
        labels = np.frombuffer(_read_exact(f, 4 * n, "labels"), dtype="<i4")
        logits = None
        if has_logits:
            logits = np.frombuffer(
                _read_exact(f, 4 * n * c, "logits"), dtype="<f4"
            ).reshape(n, c)
    refs = None
    if flags & _FLAG_REFS:
        refs = _read_refs(refs_path or _refs_path_for(path), n)
    elif refs_path is not None:
        refs = _read_refs(refs_path, n)
    return FeatureDataset(
        features=features, labels=labels, class_count=c, logits=logits, input_refs=refs
    )


def save_head(head: LinearHead, path: str | Path) -> None:
    """Write a CFHD file."""
    with open(path, "wb") as f:
        f.write(MAGIC_HEAD)
        f.write(struct.pack("<QQ", head.class_count, head.dim))
        f.write(head.weights.astype("<f4", copy=False).tobytes(order="C"))
        f.write(head.bias.astype("<f4", copy=False).tobytes())


def load_head(path: str | Path) -> LinearHead:
    """Read a CFHD file."""
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC_HEAD:
            raise FormatError(
                f"bad magic: expected {MAGIC_HEAD!r}, got {magic!r} in {path}"
            )
        c, d = struct.unpack("<QQ", _read_exact(f, 16, "header"))
        if c < 2 or d < 1:
            raise FormatError(f"invalid header dimensions C={c} D={d}")
        expected = 4 + 16 + 4 * c * d + 4 * c
        if size < expected:
            raise FormatError(
                f"truncated file: {path} is {size} bytes, header implies {expected}"
            )
        if size > expected:
            raise FormatError(
                f"dimension mismatch: {path} is {size} bytes, header implies {expected}"
            )
        weights = np.frombuffer(_read_exact(f, 4 * c * d, "weights"), dtype="<f4")
        bias = np.frombuffer(_read_exact(f, 4 * c, "bias"), dtype="<f4")
    return LinearHead(weights=weights.reshape(c, d), bias=bias)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a dataset manifest as JSON; paths are stored as given."""
    payload = {
        "features_path": manifest.features_path,
        "head_path": manifest.head_path,
        "refs_path": manifest.refs_path,
        "n": manifest.n,
        "d": manifest.d,
        "c": manifest.c,
        "space": manifest.space,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a dataset manifest from JSON."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest {path} is not valid JSON: {e}")
    required = {"features_path", "n", "d", "c", "space"}
    missing = required - raw.keys()
    if missing:
        raise FormatError(f"manifest {path} is missing keys: {sorted(missing)}")
    return DatasetManifest(
        features_path=raw["features_path"],
        head_path=raw.get("head_path"),
        refs_path=raw.get("refs_path"),
        n=int(raw["n"]),
        d=int(raw["d"]),
        c=int(raw["c"]),
        space=raw["space"],
    )


def load_from_manifest(
    path: str | Path,
) -> tuple[FeatureDataset, Optional[LinearHead], DatasetManifest]:
    """Load the dataset (and head, when referenced) described by a manifest.

    Relative paths resolve against the manifest's directory. The manifest's
    dimensional metadata must match the binary headers exactly.
    """
    manifest = load_manifest(path)
    base = Path(path).parent

    def _resolve(p: str) -> str:
        q = Path(p)
        return str(q if q.is_absolute() else base / q)

    refs = _resolve(manifest.refs_path) if manifest.refs_path else None
    ds = load_dataset(_resolve(manifest.features_path), refs_path=refs)
    if (ds.row_count, ds.dim, ds.class_count) != (manifest.n, manifest.d, manifest.c):
        raise FormatError(
            f"manifest {path} declares N={manifest.n} D={manifest.d} C={manifest.c} "
            f"but {manifest.features_path} holds N={ds.row_count} D={ds.dim} "
            f"C={ds.class_count}"
        )
    head = None
    if manifest.head_path:
        head = load_head(_resolve(manifest.head_path))
        if head.class_count != manifest.c or head.dim != manifest.d:
            raise FormatError(
                f"manifest {path} declares D={manifest.d} C={manifest.c} but head "
                f"{manifest.head_path} holds D={head.dim} C={head.class_count}"
            )
    return ds, head, manifest


def _parse_csv_row(row: list[str], line_no: int, dim: Optional[int]) -> tuple[list[float], int]:
    if dim is not None and len(row) != dim + 1:
        raise FormatError(
            f"malformed CSV row {line_no}: expected {dim + 1} fields, got {len(row)}"
        )
    if len(row) < 2:
        raise FormatError(f"malformed CSV row {line_no}: need at least one feature and a label")
    try:
        feats = [float(v) for v in row[:-1]]
        label = int(row[-1])
    except ValueError:
        raise FormatError(f"malformed CSV row {line_no}: non-numeric field")
    return feats, label


def csv_to_dataset(path: str | Path, class_count: Optional[int] = None) -> FeatureDataset:
    """Parse `f1,...,fD,label` rows into a dataset (C inferred unless given)."""
    feats: list[list[float]] = []
    labels: list[int] = []
    dim: Optional[int] = None
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            row_feats, label = _parse_csv_row(row, line_no, dim)
            dim = len(row_feats)
            feats.append(row_feats)
            labels.append(label)
    if not feats:
        raise FormatError(f"CSV {path} contains no rows")
    c = class_count if class_count is not None else max(max(labels) + 1, 2)
    return FeatureDataset(
        features=np.array(feats, dtype=np.float32),
        labels=np.array(labels, dtype=np.int32),
        class_count=c,
    )


def dataset_to_csv(ds: FeatureDataset, path: str | Path) -> None:
    """Write a dataset as `f1,...,fD,label` rows (logits and refs are dropped)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        for i in range(ds.row_count):
            w.writerow([repr(float(v)) for v in ds.features[i]] + [int(ds.labels[i])])


def csv_to_cfod_stream(
    csv_path: str | Path, out_path: str | Path, class_count: Optional[int] = None
) -> None:
    """Two-pass CSV conversion that streams features instead of buffering them.

    Produces a file byte-identical to save_dataset(csv_to_dataset(csv_path)).
    """
    n = 0
    dim: Optional[int] = None
    max_label = -1
    with open(csv_path, "r", encoding="utf-8", newline="") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            row_feats, label = _parse_csv_row(row, line_no, dim)
            dim = len(row_feats)
            max_label = max(max_label, label)
            n += 1
    if n == 0:
        raise FormatError(f"CSV {csv_path} contains no rows")
    c = class_count if class_count is not None else max(max_label + 1, 2)
    if max_label >= c or max_label < -1:
        raise ValidationError(f"label out of range: labels must lie in [0, {c})")
    labels = np.empty(n, dtype=np.int32)
    with open(out_path, "wb") as out:
        out.write(MAGIC_DATASET)
        out.write(_HEADER.pack(n, dim, c, 0))
        with open(csv_path, "r", encoding="utf-8", newline="") as f:
            i = 0
            for line_no, row in enumerate(csv.reader(f), start=1):
                if not row:
                    continue
                row_feats, label = _parse_csv_row(row, line_no, dim)
                if label < 0:
                    raise ValidationError(f"label out of range: labels must lie in [0, {c})")
                out.write(np.array(row_feats, dtype="<f4").tobytes())
                labels[i] = label
                i += 1
        out.write(labels.astype("<i4", copy=False).tobytes())
