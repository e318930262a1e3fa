"""Quadruplet loss, its analytic gradients, and baseline losses.

A quadruplet is two disjoint pairs ``(i, j)`` and ``(p, q)`` of batch members.
Instances used for learning are canonicalized so that ``(i, j)`` is the less
similar pair (more disagreeing labels); the hinge then asks for
``|f_p - f_q|^2 + margin <= |f_i - f_j|^2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DimensionError, squared_distance


class EmptyBatchWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class QuadrupletInstance:
    i: int
    j: int
    p: int
    q: int
    phi_ij: int
    phi_pq: int

    def __post_init__(self):
        if len({self.i, self.j, self.p, self.q}) != 4:
            raise ValueError(f"quadruplet indices must be distinct: {self.indices}")

    @property
    def indices(self) -> tuple[int, int, int, int]:
        return (self.i, self.j, self.p, self.q)

    def canonical(self) -> "QuadrupletInstance":
        """Return the instance with the less similar pair in the ``(i, j)`` slot."""
        if self.phi_ij >= self.phi_pq:
            return self
        return QuadrupletInstance(self.p, self.q, self.i, self.j, self.phi_pq, self.phi_ij)


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.1
    minibatch_size: int = 64

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be at least 1")


def _check_same_shape(*vectors):
    shape = vectors[0].shape
    for v in vectors[1:]:
        if v.shape != shape:
            raise DimensionError(f"embedding shapes differ: {shape} vs {v.shape}")


def delta_phi(quad: QuadrupletInstance) -> int:
    return quad.phi_ij - quad.phi_pq


def delta_f(f_i, f_j, f_p, f_q, alpha: float) -> float:
    """Similar-pair distance minus dissimilar-pair distance, plus the margin.

    Non-negative values mean the margin is violated.
    """
    f_i, f_j, f_p, f_q = (np.asarray(v, dtype=float) for v in (f_i, f_j, f_p, f_q))
    _check_same_shape(f_i, f_j, f_p, f_q)
    return squared_distance(f_p, f_q) - squared_distance(f_i, f_j) + alpha


def quadruplet_term(quad: QuadrupletInstance, embeddings: np.ndarray, alpha: float) -> float:
    """Signed per-quadruplet value: ``sgn(phi_ij - phi_pq) * delta_f``."""
    sign = np.sign(delta_phi(quad))
    if sign == 0:
        return 0.0
    f = np.asarray(embeddings, dtype=float)
    return float(sign) * delta_f(f[quad.i], f[quad.j], f[quad.p], f[quad.q], alpha)


def batch_loss(instances: Sequence[QuadrupletInstance], embeddings: np.ndarray,
               config: LossConfig = LossConfig()) -> float:
    """Truncated mean of the per-quadruplet terms.

    An empty instance list yields 0 and an ``EmptyBatchWarning``.
    """
    instances = list(instances)
    if not instances:
        warnings.warn("batch_loss called with no quadruplets", EmptyBatchWarning, stacklevel=2)
        return 0.0
    total = 0.0
    for quad in instances:
        total += max(quadruplet_term(quad, embeddings, config.margin), 0.0)
    return total / len(instances)


def quadruplet_gradients(quad: QuadrupletInstance, embeddings: np.ndarray, alpha: float):
    """Gradients of the hinged term w.r.t. ``f_i, f_j, f_p, f_q``.

    Active iff ``delta_phi > 0`` and ``delta_f >= 0``; at the kink the
    non-zero subgradient is used. Inactive instances give zero vectors.
    """
    f = np.asarray(embeddings, dtype=float)
    f_i, f_j, f_p, f_q = f[quad.i], f[quad.j], f[quad.p], f[quad.q]
    if delta_phi(quad) > 0 and delta_f(f_i, f_j, f_p, f_q, alpha) >= 0:
        return (2 * (f_j - f_i), 2 * (f_i - f_j), 2 * (f_p - f_q), 2 * (f_q - f_p))
    zero = np.zeros_like(f_i)
    return (zero, zero.copy(), zero.copy(), zero.copy())


def quadruplet_loss_and_grad(quads: np.ndarray, embeddings: np.ndarray, alpha: float):
    """Vectorized batch loss and embedding gradient for canonical quadruplets.

    ``quads`` is an ``(m, 4)`` index array in ``(i, j, p, q)`` order with the
    less similar pair first. Returns the mean hinge value over the ``m``
    instances and an array shaped like ``embeddings`` holding the summed
    per-instance gradients divided by ``m``.
    """
    quads = np.asarray(quads, dtype=np.intp).reshape(-1, 4)
    f = np.asarray(embeddings, dtype=float)
    grad = np.zeros_like(f)
    m = len(quads)
    if m == 0:
        return 0.0, grad
    f_i, f_j, f_p, f_q = (f[quads[:, k]] for k in range(4))
    d_ij = f_i - f_j
    d_pq = f_p - f_q
    df = np.einsum("ij,ij->i", d_pq, d_pq) - np.einsum("ij,ij->i", d_ij, d_ij) + alpha
    active = (df >= 0)[:, None]
    # fixed accumulation order keeps results reproducible
    np.add.at(grad, quads[:, 0], np.where(active, -2 * d_ij, 0.0))
    np.add.at(grad, quads[:, 1], np.where(active, 2 * d_ij, 0.0))
    np.add.at(grad, quads[:, 2], np.where(active, 2 * d_pq, 0.0))
    np.add.at(grad, quads[:, 3], np.where(active, -2 * d_pq, 0.0))
    return float(np.maximum(df, 0.0).sum() / m), grad / m


def triplet_loss(anchor, positive, negative, alpha: float):
    """Standard triplet hinge ``max(0, |a-p|^2 - |a-n|^2 + alpha)``.

    Returns ``(loss, (grad_anchor, grad_positive, grad_negative))``.
    """
    a, p, n = (np.asarray(v, dtype=float) for v in (anchor, positive, negative))
    _check_same_shape(a, p, n)
    value = squared_distance(a, p) - squared_distance(a, n) + alpha
    if value >= 0:
        grads = (2 * (n - p), 2 * (p - a), 2 * (a - n))
    else:
        grads = (np.zeros_like(a), np.zeros_like(a), np.zeros_like(a))
    return max(value, 0.0), grads


def triplet_loss_and_grad(triplets: np.ndarray, embeddings: np.ndarray, alpha: float):
    """Vectorized mean triplet hinge over ``(m, 3)`` anchor/positive/negative rows."""
    triplets = np.asarray(triplets, dtype=np.intp).reshape(-1, 3)
    f = np.asarray(embeddings, dtype=float)
    grad = np.zeros_like(f)
    m = len(triplets)
    if m == 0:
        return 0.0, grad
    a, p, n = (f[triplets[:, k]] for k in range(3))
    d_ap = a - p
    d_an = a - n
    value = np.einsum("ij,ij->i", d_ap, d_ap) - np.einsum("ij,ij->i", d_an, d_an) + alpha
    active = (value >= 0)[:, None]
    np.add.at(grad, triplets[:, 0], np.where(active, 2 * (n - p), 0.0))
    np.add.at(grad, triplets[:, 1], np.where(active, -2 * d_ap, 0.0))
    np.add.at(grad, triplets[:, 2], np.where(active, 2 * d_an, 0.0))
    return float(np.maximum(value, 0.0).sum() / m), grad / m


def center_loss(embeddings, identity_labels, centers, lam: float):
    """Center loss ``(lam / 2) * mean_i |x_i - c_{y_i}|^2``.

    Returns ``(loss, grad_embeddings)``. ``centers`` has one row per identity.
    """
    x = np.atleast_2d(np.asarray(embeddings, dtype=float))
    y = np.atleast_1d(np.asarray(identity_labels, dtype=np.intp))
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 2 or centers.shape[1] != x.shape[1]:
        raise DimensionError("centers must be (num_identities, d) matching the embeddings")
    if len(y) != len(x):
        raise DimensionError("one identity label per embedding is required")
    if np.any(y < 0) or np.any(y >= len(centers)):
        bad = y[(y < 0) | (y >= len(centers))]
        raise KeyError(f"no center for identity {int(bad[0])}")
    diff = x - centers[y]
    m = len(x)
    loss = 0.5 * lam * float(np.einsum("ij,ij->", diff, diff)) / m
    return loss, lam * diff / m


def update_centers(centers, embeddings, identity_labels, rate: float) -> np.ndarray:
    """One running-mean step of the center update.

    ``c_j -= rate * sum_{y_i = j}(c_j - x_i) / (1 + n_j)``; identities absent
    from the batch keep their center.
    """
    centers = np.array(centers, dtype=float)
    x = np.atleast_2d(np.asarray(embeddings, dtype=float))
    y = np.atleast_1d(np.asarray(identity_labels, dtype=np.intp))
    delta = np.zeros_like(centers)
    np.add.at(delta, y, centers[y] - x)
    counts = np.bincount(y, minlength=len(centers))
    centers -= rate * delta / (1.0 + counts)[:, None]
    return centers


def softmax_loss(logits, identity_label):
    """Cross-entropy of a softmax head.

    Accepts one logit vector with an integer label, or an ``(m, k)`` array
    with ``m`` labels (averaged). Returns ``(loss, grad_logits)``.
    """
    z = np.asarray(logits, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    y = np.atleast_1d(np.asarray(identity_label, dtype=np.intp))
    k = z.shape[1]
    if len(y) != len(z):
        raise DimensionError("one label per logit row is required")
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"identity label out of range for {k} classes")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_prob = shifted[np.arange(len(y)), y] - log_norm
    prob = np.exp(shifted - log_norm[:, None])
    prob[np.arange(len(y)), y] -= 1.0
    m = len(y)
    loss = float(-log_prob.sum() / m)
    grad = prob / m
    return (loss, grad[0]) if single else (loss, grad)
