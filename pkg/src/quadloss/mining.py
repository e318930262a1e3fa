"""Batch construction and mini-batch sampling of valid quadruplets.

A quadruplet combination is a 4-subset of the batch together with one of its
three perfect pairings. Combinations whose two pairs have the same number of
disagreeing labels carry no learning signal and are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import QuadrupletInstance

# positions within a drawn 4-tuple for each of the three pairings
_PAIRINGS = np.array([[0, 1, 2, 3], [0, 2, 1, 3], [0, 3, 1, 2]])


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Batch:
    sample_indices: np.ndarray

    @property
    def b(self) -> int:
        return len(self.sample_indices)


@dataclass(frozen=True)
class MiniBatch:
    """Canonical quadruplets in batch-local positions.

    ``quads`` is ``(m, 4)`` in ``(i, j, p, q)`` order with ``phi[:, 0] > phi[:, 1]``.
    """
    quads: np.ndarray
    phi: np.ndarray
    degenerate: bool = False
    attempts: int = field(default=0, compare=False)

    def __len__(self):
        return len(self.quads)

    @property
    def instances(self) -> list[QuadrupletInstance]:
        return [QuadrupletInstance(*map(int, q), int(a), int(b))
                for q, (a, b) in zip(self.quads, self.phi)]


@dataclass(frozen=True)
class TripletBatch:
    """Anchor/positive/negative rows in batch-local positions."""
    triplets: np.ndarray
    degenerate: bool = False

    def __len__(self):
        return len(self.triplets)


def sample_batch(dataset_size: int, b: int, rng: np.random.Generator) -> Batch:
    if b > dataset_size:
        raise ConfigError(f"batch size {b} exceeds dataset size {dataset_size}")
    if b < 1:
        raise ConfigError("batch size must be positive")
    return Batch(rng.choice(dataset_size, size=b, replace=False))


def _phi(labels: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.count_nonzero(labels[a] != labels[b], axis=-1)


def sample_minibatch(batch: Batch, labels: np.ndarray, s: int, rng: np.random.Generator,
                     max_attempts: int | None = None) -> MiniBatch:
    """Rejection-sample up to ``s`` distinct valid quadruplets from ``batch``.

    Each draw picks four distinct batch members and one pairing uniformly.
    ``labels`` is the full ``(N, t)`` label array of the dataset; returned
    positions index into ``batch.sample_indices``.
    """
    if s < 1:
        raise ConfigError("minibatch size must be positive")
    if max_attempts is None:
        max_attempts = 50 * s
    b = batch.b
    local = np.asarray(labels)[batch.sample_indices]
    if b < 4:
        return MiniBatch(np.empty((0, 4), np.intp), np.empty((0, 2), np.intp), True, 0)

    chosen: list[tuple[int, int, int, int]] = []
    phis: list[tuple[int, int]] = []
    seen: set = set()
    attempts = 0
    chunk = max(2 * s, 16)
    while len(chosen) < s and attempts < max_attempts:
        k = min(chunk, max_attempts - attempts)
        attempts += k
        draws = rng.integers(0, b, size=(k, 4))
        pairing = rng.integers(0, 3, size=k)
        ordered = np.take_along_axis(draws, _PAIRINGS[pairing], axis=1)
        srt = np.sort(draws, axis=1)
        distinct = np.all(srt[:, 1:] != srt[:, :-1], axis=1)
        phi_a = _phi(local, ordered[:, 0], ordered[:, 1])
        phi_b = _phi(local, ordered[:, 2], ordered[:, 3])
        keep = np.flatnonzero(distinct & (phi_a != phi_b))
        for r in keep:
            i, j, p, q = (int(v) for v in ordered[r])
            pa, pb = int(phi_a[r]), int(phi_b[r])
            if pa < pb:
                i, j, p, q, pa, pb = p, q, i, j, pb, pa
            key = (frozenset((i, j)), frozenset((p, q)))
            if key in seen:
                continue
            seen.add(key)
            chosen.append((i, j, p, q))
            phis.append((pa, pb))
            if len(chosen) == s:
                break
    quads = np.array(chosen, dtype=np.intp).reshape(-1, 4)
    phi = np.array(phis, dtype=np.intp).reshape(-1, 2)
    return MiniBatch(quads, phi, degenerate=len(chosen) == 0, attempts=attempts)


def sample_triplets(batch: Batch, labels: np.ndarray, s: int, rng: np.random.Generator,
                    embeddings: np.ndarray | None = None, margin: float = 0.1,
                    semi_hard: bool = False) -> TripletBatch:
    """Draw ``s`` identity triplets from ``batch``.

    Anchors are drawn among members that have a same-identity partner in the
    batch; the positive is a uniformly chosen partner and the negative a
    uniformly chosen member of another identity. With ``semi_hard`` (which
    needs ``embeddings`` for the batch), the negative is drawn from the
    semi-hard band ``d(a,p) < d(a,n) < d(a,p) + margin`` when that band is
    non-empty.
    """
    ident = np.asarray(labels)[batch.sample_indices, 0]
    same = ident[:, None] == ident[None, :]
    np.fill_diagonal(same, False)
    anchors = np.flatnonzero(same.any(axis=1))
    if len(anchors) == 0 or np.all(ident == ident[0]):
        return TripletBatch(np.empty((0, 3), np.intp), degenerate=True)
    if semi_hard and embeddings is None:
        raise ConfigError("semi-hard triplet mining needs the batch embeddings")

    out = np.empty((s, 3), dtype=np.intp)
    for r in range(s):
        a = int(anchors[rng.integers(len(anchors))])
        positives = np.flatnonzero(same[a])
        p = int(positives[rng.integers(len(positives))])
        negatives = np.flatnonzero(ident != ident[a])
        if semi_hard:
            e = np.asarray(embeddings)
            d_ap = float(np.sum((e[a] - e[p]) ** 2))
            d_an = np.sum((e[negatives] - e[a]) ** 2, axis=1)
            band = negatives[(d_an > d_ap) & (d_an < d_ap + margin)]
            if len(band):
                negatives = band
        n = int(negatives[rng.integers(len(negatives))])
        out[r] = (a, p, n)
    return TripletBatch(out)
