"""Datasets: shards, synthetic Gaussian clusters, IDX files and label-skewed partitions."""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


@dataclass(frozen=True)
class DataPoint:
    x: np.ndarray
    y: int


@dataclass(frozen=True)
class Shard:
    """A device's local dataset, stored column-wise for vectorized losses."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(X) == 0:
            raise ValueError("shard must be non-empty")
        if len(y) != len(X):
            raise ValueError("feature/label count mismatch")
        if not np.isfinite(X).all():
            raise ValueError("non-finite features")
        if (y < 0).any():
            raise ValueError("negative label")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_points(cls, points) -> Shard:
        points = list(points)
        if not points:
            raise ValueError("shard must be non-empty")
        return cls(np.stack([p.x for p in points]), np.array([p.y for p in points]))

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def points(self) -> Iterator[DataPoint]:
        for x, y in zip(self.X, self.y):
            yield DataPoint(x, int(y))

    def subset(self, idx) -> Shard:
        return Shard(self.X[idx], self.y[idx])

    def to_csv(self, fh: TextIO) -> None:
        fh.write(",".join(["y"] + [f"x{j}" for j in range(self.n_features)]) + "\n")
        for x, y in zip(self.X, self.y):
            fh.write(f"{y}," + ",".join(repr(float(v)) for v in x) + "\n")


def make_synthetic_classification(C: int = 10, n_features: int = 64, per_class: int = 100,
                                  spread: float = 0.55, seed: int = 0,
                                  test_per_class: int | None = None) -> tuple[Shard, Shard]:
    """Gaussian clusters around class means drawn uniformly from the unit cube.

    Features sit in roughly the same range as normalized pixel intensities.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if C < 2:
        raise ValueError("need at least two classes")
    if test_per_class is None:
        test_per_class = max(1, per_class // 5)
    rng = np.random.default_rng(seed)
    means = rng.random((C, n_features))

    def draw(count):
        y = np.repeat(np.arange(C), count)
        X = means[y] + spread * rng.standard_normal((C * count, n_features))
        return Shard(X, y)

    return draw(per_class), draw(test_per_class)


def _read_header(buf: bytes, path, expected_magic: int, ndim: int) -> tuple[int, ...]:
    need = 4 * (1 + ndim)
    if len(buf) < need:
        raise ValueError(f"{path}: truncated IDX header")
    magic, *dims = struct.unpack(f">{1 + ndim}i", buf[:need])
    if magic != expected_magic:
        raise ValueError(f"{path}: bad magic number {magic} (expected {expected_magic})")
    expected = need + int(np.prod(dims))
    if len(buf) < expected:
        raise ValueError(f"{path}: truncated IDX body ({len(buf)} < {expected} bytes)")
    return tuple(dims)


def load_idx_dataset(images_path, labels_path) -> Shard:
    """Read an IDX image/label file pair (uint8 payloads) into a shard with pixels in [0, 1]."""
    img = Path(images_path).read_bytes()
    lab = Path(labels_path).read_bytes()
    count, rows, cols = _read_header(img, images_path, IDX_IMAGE_MAGIC, 3)
    (n_labels,) = _read_header(lab, labels_path, IDX_LABEL_MAGIC, 1)
    if count != n_labels:
        raise ValueError(f"image/label count mismatch: {count} vs {n_labels}")
    pixels = np.frombuffer(img, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(lab, dtype=np.uint8, count=count, offset=8)
    return Shard(pixels.reshape(count, rows * cols) / 255.0, labels.astype(np.int64))


def write_idx_dataset(shard: Shard, images_path, labels_path, rows: int, cols: int) -> None:
    """Inverse of :func:`load_idx_dataset` for features already in [0, 1]."""
    if shard.n_features != rows * cols:
        raise ValueError("feature count does not match rows*cols")
    pixels = np.clip(np.rint(shard.X * 255), 0, 255).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">4i", IDX_IMAGE_MAGIC, len(shard), rows, cols)
                                  + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2i", IDX_LABEL_MAGIC, len(shard))
                                  + shard.y.astype(np.uint8).tobytes())


def partition_noniid(dataset: Shard, m: int, labels_per_device: int, seed: int) -> list[Shard]:
    """Give each device ``labels_per_device`` labels and split every label's
    points evenly among the devices that own it."""
    if labels_per_device < 1:
        raise ValueError("labels_per_device must be >= 1")
    labels = np.unique(dataset.y)
    C = len(labels)
    if labels_per_device > C:
        raise ValueError(f"labels_per_device={labels_per_device} exceeds {C} labels")
    rng = np.random.default_rng(seed)
    perm = labels[rng.permutation(C)]
    owners: dict[int, list[int]] = {int(c): [] for c in labels}
    for d in range(m):
        for j in range(labels_per_device):
            owners[int(perm[(d * labels_per_device + j) % C])].append(d)
    parts: list[list[np.ndarray]] = [[] for _ in range(m)]
    for c in labels:
        c = int(c)
        idx = np.flatnonzero(dataset.y == c)
        if not owners[c]:
            warnings.warn(f"label {c} is not owned by any device; its points are unused")
            continue
        idx = idx[rng.permutation(len(idx))]
        for d, chunk in zip(owners[c], np.array_split(idx, len(owners[c]))):
            parts[d].append(chunk)
    shards = []
    for d, chunks in enumerate(parts):
        idx = np.sort(np.concatenate(chunks)) if chunks else np.array([], dtype=int)
        if idx.size == 0:
            raise ValueError(f"device {d} would receive an empty shard")
        shards.append(dataset.subset(idx))
    return shards
