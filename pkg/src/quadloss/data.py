"""Datasets: the text file format, train/test splits, and a synthetic generator.

File grammar (UTF-8, ``\\n`` line endings)::

    #quadloss-dataset v1
    n=<feature dim>
    t=<label dims>
    cardinalities=<c_0>,...,<c_{t-1}>
    names=ID,<name_1>,...,<name_{t-1}>
    rows=<N>
    id,<label names...>,f0,...,f<n-1>
    <id>,<t integer label codes>,<n real features>    (N lines)

Features are written with ``repr`` so a save/load round trip is exact.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import LabelVector, Sample, pairwise_dissimilarity

MAGIC = "#quadloss-dataset v1"


class DatasetFormatError(ValueError):
    pass


class SplitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DatasetHeader:
    n: int
    cardinalities: tuple[int, ...]
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))
        object.__setattr__(self, "names", tuple(self.names))
        if self.n < 1:
            raise ValueError("feature dimension must be positive")
        if len(self.cardinalities) < 1 or any(c < 1 for c in self.cardinalities):
            raise ValueError("every label dimension needs cardinality >= 1")
        if len(self.names) != len(self.cardinalities):
            raise ValueError("one name per label dimension is required")
        if self.names[0] != "ID":
            raise ValueError("label dimension 0 must be named 'ID'")

    @property
    def t(self) -> int:
        return len(self.cardinalities)


@dataclass(frozen=True, eq=False)
class Dataset:
    header: DatasetHeader
    ids: np.ndarray
    labels: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(len(ids), -1)
        features = np.asarray(self.features, dtype=float).reshape(len(ids), -1) \
            if len(ids) else np.empty((0, self.header.n))
        h = self.header
        if labels.shape[1] != h.t:
            raise ValueError(f"expected {h.t} label columns, got {labels.shape[1]}")
        if features.shape[1] != h.n:
            raise ValueError(f"expected {h.n} feature columns, got {features.shape[1]}")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("sample ids must be unique")
        if np.any(ids < 0):
            raise ValueError("sample ids must be non-negative")
        if np.any(labels < 0) or np.any(labels >= np.array(h.cardinalities)):
            raise ValueError("label code outside its dimension's cardinality")
        if not np.all(np.isfinite(features)):
            raise ValueError("features must be finite")
        for arr in (ids, labels, features):
            arr.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", features)

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, k: int) -> Sample:
        return Sample(int(self.ids[k]), self.features[k], LabelVector(tuple(self.labels[k])))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.header == other.header
                and np.array_equal(self.ids, other.ids)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.features, other.features))

    @property
    def identities(self) -> np.ndarray:
        return self.labels[:, 0]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(self.header, self.ids[indices], self.labels[indices],
                       self.features[indices])

    @classmethod
    def from_samples(cls, header: DatasetHeader, samples: Sequence[Sample]) -> "Dataset":
        for smp in samples:
            smp.labels.validate(header.cardinalities)
        return cls(header,
                   np.array([smp.id for smp in samples], dtype=np.int64),
                   np.array([tuple(smp.labels) for smp in samples], dtype=np.int64).reshape(-1, header.t),
                   np.array([smp.features for smp in samples], dtype=float).reshape(-1, header.n))


def save_dataset(dataset: Dataset, path) -> None:
    h = dataset.header
    lines = [
        MAGIC,
        f"n={h.n}",
        f"t={h.t}",
        "cardinalities=" + ",".join(str(c) for c in h.cardinalities),
        "names=" + ",".join(h.names),
        f"rows={len(dataset)}",
        ",".join(["id", *h.names, *(f"f{k}" for k in range(h.n))]),
    ]
    for sid, lab, feat in zip(dataset.ids, dataset.labels, dataset.features):
        lines.append(",".join([str(int(sid)), *(str(int(v)) for v in lab),
                               *(repr(float(v)) for v in feat)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _header_value(lines, lineno, key):
    if lineno >= len(lines):
        raise DatasetFormatError(f"line {lineno + 1}: missing header field '{key}'")
    text = lines[lineno]
    prefix = key + "="
    if not text.startswith(prefix):
        raise DatasetFormatError(f"line {lineno + 1}: expected '{prefix}...', got {text!r}")
    return text[len(prefix):]


def load_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != MAGIC:
        raise DatasetFormatError(f"line 1: expected {MAGIC!r}")
    try:
        n = int(_header_value(lines, 1, "n"))
        t = int(_header_value(lines, 2, "t"))
        cards = tuple(int(c) for c in _header_value(lines, 3, "cardinalities").split(","))
        rows = int(_header_value(lines, 5, "rows"))
    except ValueError as exc:
        if isinstance(exc, DatasetFormatError):
            raise
        raise DatasetFormatError(f"malformed header: {exc}") from None
    names = tuple(_header_value(lines, 4, "names").split(","))
    if len(cards) != t or len(names) != t:
        raise DatasetFormatError("header: cardinalities/names do not match t")
    try:
        header = DatasetHeader(n, cards, names)
    except ValueError as exc:
        raise DatasetFormatError(f"header: {exc}") from None
    expected_cols = ["id", *names, *(f"f{k}" for k in range(n))]
    if len(lines) < 7 or lines[6].split(",") != expected_cols:
        raise DatasetFormatError("line 7: column header does not match n/t/names")
    body = lines[7:]
    if len(body) != rows:
        raise DatasetFormatError(f"header declares {rows} rows, file has {len(body)}")

    ids = np.empty(rows, dtype=np.int64)
    labels = np.empty((rows, t), dtype=np.int64)
    features = np.empty((rows, n), dtype=float)
    seen: dict[int, int] = {}
    for r, row in enumerate(body):
        lineno = r + 8
        cells = row.split(",")
        if len(cells) != 1 + t + n:
            raise DatasetFormatError(
                f"line {lineno}: expected {1 + t + n} fields, got {len(cells)}")
        try:
            sid = int(cells[0])
            lab = [int(v) for v in cells[1:1 + t]]
            feat = [float(v) for v in cells[1 + t:]]
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from None
        if sid < 0:
            raise DatasetFormatError(f"line {lineno}: negative id {sid}")
        if sid in seen:
            raise DatasetFormatError(
                f"line {lineno}: duplicate id {sid} (first seen on line {seen[sid]})")
        seen[sid] = lineno
        for k, (v, c) in enumerate(zip(lab, cards)):
            if not 0 <= v < c:
                raise DatasetFormatError(
                    f"line {lineno}: label {v} in dimension {k} ({names[k]}) "
                    f"outside cardinality {c}")
        if not all(np.isfinite(feat)):
            raise DatasetFormatError(f"line {lineno}: non-finite feature")
        ids[r], labels[r], features[r] = sid, lab, feat
    return Dataset(header, ids, labels, features)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic multi-label set.

    Each identity gets a fixed soft-label combination. Its centroid mixes a
    semantic part (a sum of per-label codewords) with an identity-specific
    random part; ``rho`` is the share of centroid variance carried by the
    semantic part. ``rho=1`` makes centroid distances grow with label
    disagreement, ``rho=0`` places centroids independently of the labels.
    """
    identities: int = 40
    soft_cardinalities: tuple[int, ...] = (2, 3)
    samples_per_identity: int = 20
    feature_dim: int = 32
    noise: float = 0.3
    rho: float = 0.3
    centroid_scale: float = 1.0
    label_rule: str = "balanced"
    soft_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "soft_cardinalities", tuple(int(c) for c in self.soft_cardinalities))
        if self.identities < 2:
            raise ValueError("a synthetic set needs at least 2 identities")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.samples_per_identity < 1 or self.feature_dim < 1:
            raise ValueError("samples_per_identity and feature_dim must be positive")
        if self.noise < 0 or self.centroid_scale <= 0:
            raise ValueError("noise must be >= 0 and centroid_scale > 0")
        if any(c < 1 for c in self.soft_cardinalities):
            raise ValueError("soft label cardinalities must be >= 1")
        if self.label_rule not in ("balanced", "random"):
            raise ValueError("label_rule must be 'balanced' or 'random'")
        if self.soft_names is not None and len(self.soft_names) != len(self.soft_cardinalities):
            raise ValueError("one name per soft label dimension is required")

    @property
    def t(self) -> int:
        return 1 + len(self.soft_cardinalities)

    def header(self) -> DatasetHeader:
        names = self.soft_names or tuple(f"attr{k}" for k in range(1, self.t))
        return DatasetHeader(self.feature_dim, (self.identities, *self.soft_cardinalities),
                             ("ID", *names))


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    """A generated dataset plus the per-identity ground truth used to build it."""
    dataset: Dataset
    identity_labels: np.ndarray
    centroids: np.ndarray
    spec: SyntheticSpec = field(repr=False)

    def identity_phi(self) -> np.ndarray:
        return pairwise_dissimilarity(self.identity_labels)


def _assign_soft_labels(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    cards = spec.soft_cardinalities
    if not cards:
        return np.empty((spec.identities, 0), dtype=np.int64)
    if spec.label_rule == "random":
        return np.stack([rng.integers(0, c, spec.identities) for c in cards], axis=1)
    # cycle through every label combination, in a shuffled identity order
    combos = np.array(np.unravel_index(np.arange(int(np.prod(cards))), cards)).T
    rows = combos[np.arange(spec.identities) % len(combos)]
    return rows[rng.permutation(spec.identities)]


def generate_synthetic(spec: SyntheticSpec, seed: int) -> SyntheticDataset:
    rng = np.random.default_rng(seed)
    soft = _assign_soft_labels(spec, rng)
    n = spec.feature_dim
    n_soft = len(spec.soft_cardinalities)

    semantic = np.zeros((spec.identities, n))
    for k, c in enumerate(spec.soft_cardinalities):
        codebook = rng.normal(0.0, 1.0 / np.sqrt(max(n_soft, 1)), size=(c, n))
        semantic += codebook[soft[:, k]]
    appearance = rng.normal(0.0, 1.0, size=(spec.identities, n))
    centroids = spec.centroid_scale * (np.sqrt(spec.rho) * semantic
                                       + np.sqrt(1.0 - spec.rho) * appearance)

    m = spec.samples_per_identity
    identity = np.repeat(np.arange(spec.identities), m)
    noise = rng.normal(0.0, spec.noise, size=(len(identity), n))
    features = centroids[identity] + noise
    identity_labels = np.column_stack([np.arange(spec.identities), soft]).astype(np.int64)
    dataset = Dataset(spec.header(), np.arange(len(identity)), identity_labels[identity], features)
    return SyntheticDataset(dataset, identity_labels, centroids, spec)


def split(dataset: Dataset, train_fraction: float, stratify_by_identity: bool = True,
          seed: int = 0) -> tuple[Dataset, Dataset]:
    """Disjoint train/test partitions.

    Stratified splits keep at least one sample of every identity on each
    side when the identity has two or more samples; single-sample
    identities go to train with a ``SplitWarning``.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    if not stratify_by_identity:
        order = rng.permutation(len(dataset))
        cut = int(round(train_fraction * len(dataset)))
        return dataset.subset(np.sort(order[:cut])), dataset.subset(np.sort(order[cut:]))

    train_idx, test_idx = [], []
    for ident in np.unique(dataset.identities):
        members = np.flatnonzero(dataset.identities == ident)
        members = members[rng.permutation(len(members))]
        if len(members) == 1:
            warnings.warn(f"identity {int(ident)} has a single sample; kept in train",
                          SplitWarning, stacklevel=2)
            train_idx.extend(members)
            continue
        cut = int(round(train_fraction * len(members)))
        cut = min(max(cut, 1), len(members) - 1)
        train_idx.extend(members[:cut])
        test_idx.extend(members[cut:])
    return (dataset.subset(np.sort(np.array(train_idx, dtype=np.intp))),
            dataset.subset(np.sort(np.array(test_idx, dtype=np.intp))))
