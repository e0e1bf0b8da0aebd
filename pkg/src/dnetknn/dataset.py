"""Labeled vector datasets: IDX and CSV ingestion, splitting, batching.

The IDX reader/writer follows the public MNIST layout bit for bit:
big-endian 32-bit magic (2051 for images, 2049 for labels), big-endian
dimension sizes, unsigned-byte payload.  The CSV fallback is header-free
with an integer label in the first column and D real features after it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigError, ConsistencyError, FormatError

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


@dataclass(frozen=True)
class Example:
    """A single feature vector with its integer class label."""

    features: np.ndarray
    label: int


@dataclass(frozen=True)
class SplitSpec:
    """Per-class train/test counts, optionally preceded by a seeded shuffle."""

    per_class_train: int
    per_class_test: int
    shuffle_seed: int | None = None

    def __post_init__(self):
        if self.per_class_train < 0 or self.per_class_test < 0:
            raise ConfigError("split counts must be nonnegative")


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of labeled feature vectors.

    ``features`` is an (n, dim) float array, ``labels`` an (n,) integer array
    with every value in [0, num_classes).  Instances are treated as immutable
    after construction; the arrays are exposed as read-only views.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ConsistencyError(f"features must be 2-D, got shape {feats.shape}")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ConsistencyError(
                f"{labs.shape[0] if labs.ndim == 1 else labs.shape} labels "
                f"for {feats.shape[0]} feature rows"
            )
        if not np.all(np.isfinite(feats)):
            raise ConsistencyError("features contain non-finite values")
        if self.num_classes < 1:
            raise ConsistencyError("num_classes must be positive")
        if labs.size and (labs.min() < 0 or labs.max() >= self.num_classes):
            raise ConsistencyError(
                f"labels must lie in [0, {self.num_classes}), "
                f"found range [{labs.min()}, {labs.max()}]"
            )
        feats = feats.view()
        feats.setflags(write=False)
        labs = labs.view()
        labs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Example:
        return Example(self.features[i], int(self.labels[i]))

    def subset(self, indices) -> "Dataset":
        """New Dataset holding the given rows; num_classes is preserved."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx].copy(), self.labels[idx].copy(), self.num_classes)

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def _read_exact(f, n: int, path, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ConsistencyError(
            f"{path}: truncated while reading {what} (wanted {n} bytes, got {len(buf)})"
        )
    return buf


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label file pair into a Dataset.

    Pixel bytes are scaled by 1/255 so features land in [0, 1].  Example
    order is preserved from the files.
    """
    with open(images_path, "rb") as f:
        header = f.read(16)
        if len(header) < 16:
            raise FormatError(f"{images_path}: image header shorter than 16 bytes")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IMAGE_MAGIC:
            raise FormatError(
                f"{images_path}: bad image magic {magic} (expected {IMAGE_MAGIC})"
            )
        payload = f.read()
    expected = count * rows * cols
    if len(payload) != expected:
        raise ConsistencyError(
            f"{images_path}: payload holds {len(payload)} bytes, "
            f"header promises {expected}"
        )

    with open(labels_path, "rb") as f:
        header = f.read(8)
        if len(header) < 8:
            raise FormatError(f"{labels_path}: label header shorter than 8 bytes")
        magic, label_count = struct.unpack(">II", header)
        if magic != LABEL_MAGIC:
            raise FormatError(
                f"{labels_path}: bad label magic {magic} (expected {LABEL_MAGIC})"
            )
        label_payload = f.read()
    if len(label_payload) != label_count:
        raise ConsistencyError(
            f"{labels_path}: payload holds {len(label_payload)} bytes, "
            f"header promises {label_count}"
        )
    if label_count != count:
        raise ConsistencyError(
            f"image file has {count} items but label file has {label_count}"
        )

    features = (
        np.frombuffer(payload, dtype=np.uint8)
        .reshape(count, rows * cols)
        .astype(np.float64)
        / 255.0
    )
    labels = np.frombuffer(label_payload, dtype=np.uint8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if count else 1
    return Dataset(features, labels, num_classes)


def save_idx(data: Dataset, images_path, labels_path, rows: int | None = None,
             cols: int | None = None) -> None:
    """Write a Dataset as an IDX pair (inverse of :func:`load_idx`).

    Features are scaled back by 255 and rounded to bytes, so the round trip
    is exact only for data that originated as 8-bit pixels.  When rows/cols
    are omitted the feature length must be a perfect square.
    """
    n = len(data)
    if rows is None or cols is None:
        side = int(round(data.dim ** 0.5))
        if side * side != data.dim:
            raise ConfigError(
                f"feature length {data.dim} is not square; pass rows and cols"
            )
        rows = cols = side
    if rows * cols != data.dim:
        raise ConsistencyError(f"rows*cols={rows * cols} != feature length {data.dim}")
    pixels = np.clip(np.round(data.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, n))
        f.write(data.labels.astype(np.uint8).tobytes())


def load_csv(path) -> Dataset:
    """Read a header-free CSV with an integer label column followed by features."""
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: not parseable as numeric CSV: {exc}") from exc
    if table.size == 0:
        raise FormatError(f"{path}: empty CSV")
    if table.shape[1] < 2:
        raise FormatError(f"{path}: need a label column plus at least one feature")
    raw_labels = table[:, 0]
    labels = raw_labels.astype(np.int64)
    if not np.all(raw_labels == labels):
        raise FormatError(f"{path}: first column must hold integer labels")
    if labels.min() < 0:
        raise FormatError(f"{path}: labels must be nonnegative")
    features = np.ascontiguousarray(table[:, 1:])
    return Dataset(features, labels, int(labels.max()) + 1)


def save_csv(data: Dataset, path) -> None:
    """Write a Dataset in the CSV fallback layout (label, then features)."""
    with open(path, "w") as f:
        for row, label in zip(data.features, data.labels):
            f.write("%d,%s\n" % (label, ",".join("%.17g" % v for v in row)))


def fixed_split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Split per class: the first per_class_train examples of each class go to
    train, the next per_class_test to test.

    Without a seed, per-class order of appearance is used; with a seed, a
    seeded per-class shuffle precedes the split, so the same seed always
    reproduces the same split.
    """
    rng = None
    if spec.shuffle_seed is not None:
        rng = np.random.default_rng(spec.shuffle_seed)
    need = spec.per_class_train + spec.per_class_test
    train_parts, test_parts = [], []
    for cls in range(data.num_classes):
        idx = data.class_indices(cls)
        if idx.size < need:
            raise CapacityError(
                f"class {cls} has {idx.size} examples, "
                f"need {need} for the requested split"
            )
        if rng is not None:
            idx = rng.permutation(idx)
        train_parts.append(idx[: spec.per_class_train])
        test_parts.append(idx[spec.per_class_train : need])
    return data.subset(np.concatenate(train_parts)), data.subset(np.concatenate(test_parts))


def make_batches(data: Dataset, batch_size: int, seed: int) -> list[Dataset]:
    """Seeded random partition into batches of batch_size (last may be smaller).

    Every example lands in exactly one batch.
    """
    if batch_size < data.num_classes:
        raise ConfigError(
            f"batch_size {batch_size} is smaller than num_classes {data.num_classes}"
        )
    perm = np.random.default_rng(seed).permutation(len(data))
    return [
        data.subset(perm[start : start + batch_size])
        for start in range(0, len(data), batch_size)
    ]
