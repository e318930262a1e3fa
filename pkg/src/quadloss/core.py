"""Domain types and the label-disagreement metric.

Labels are dense integer codes, one per output dimension. Dimension 0 is
always the identity label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ID_DIM = 0


class DimensionError(ValueError):
    """Raised when two vectors that must share a length do not."""


@dataclass(frozen=True)
class LabelVector:
    labels: tuple[int, ...]

    def __post_init__(self):
        labels = tuple(int(v) for v in self.labels)
        if len(labels) < 1:
            raise ValueError("a label vector needs at least one dimension")
        if any(v < 0 for v in labels):
            raise ValueError(f"label codes must be non-negative, got {labels}")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __getitem__(self, k):
        return self.labels[k]

    @property
    def identity(self) -> int:
        return self.labels[ID_DIM]

    def validate(self, cardinalities: Sequence[int]) -> None:
        if len(cardinalities) != len(self.labels):
            raise DimensionError(
                f"expected {len(cardinalities)} label dimensions, got {len(self.labels)}"
            )
        for k, (v, c) in enumerate(zip(self.labels, cardinalities)):
            if v >= c:
                raise ValueError(f"label {v} in dimension {k} exceeds cardinality {c}")


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    labels: LabelVector

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim != 1:
            raise ValueError("features must be a 1-D vector")
        if not np.all(np.isfinite(features)):
            raise ValueError(f"sample {self.id} has non-finite features")
        features.setflags(write=False)
        object.__setattr__(self, "features", features)
        if not isinstance(self.labels, LabelVector):
            object.__setattr__(self, "labels", LabelVector(tuple(self.labels)))


def semantic_dissimilarity(a, b) -> int:
    """Number of label dimensions on which ``a`` and ``b`` disagree."""
    a = np.asarray(tuple(a))
    b = np.asarray(tuple(b))
    if a.shape != b.shape:
        raise DimensionError(f"label vectors differ in length: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


def pairwise_dissimilarity(labels_a: np.ndarray, labels_b: np.ndarray | None = None) -> np.ndarray:
    """Matrix of label disagreement counts between the rows of two label arrays."""
    labels_a = np.asarray(labels_a)
    labels_b = labels_a if labels_b is None else np.asarray(labels_b)
    if labels_a.shape[1] != labels_b.shape[1]:
        raise DimensionError("label arrays have different numbers of dimensions")
    return (labels_a[:, None, :] != labels_b[None, :, :]).sum(axis=2)


def squared_distance(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionError(f"embeddings differ in shape: {u.shape} vs {v.shape}")
    diff = u - v
    return float(diff @ diff)


def pairwise_squared_distances(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """All squared Euclidean distances between rows of ``a`` and rows of ``b``.

    Computed from explicit differences rather than the Gram expansion so that
    identical rows give exactly zero.
    """
    a = np.asarray(a, dtype=float)
    b = a if b is None else np.asarray(b, dtype=float)
    if a.shape[1] != b.shape[1]:
        raise DimensionError("embedding arrays have different dimensions")
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)
