"""The embedding function: a small feed-forward network trained with SGD.

Hidden layers use the configured activation; the output layer is linear
(optionally followed by l2 normalization). A linear classifier head on top
of the embedding is only built for the softmax and center-loss baselines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses
from .data import Dataset, split
from .mining import ConfigError, sample_batch, sample_minibatch, sample_triplets

log = logging.getLogger(__name__)

LOSSES = ("quadruplet", "triplet", "center", "softmax")
CHECKPOINT_MAGIC = "#quadloss-checkpoint v1"


class TrainingError(RuntimeError):
    pass


_ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    # (activation, derivative expressed through the pre-activation)
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(float)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "linear": (lambda z: z, lambda z: np.ones_like(z)),
}


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    hidden: tuple[int, ...] = (64,)
    embedding_dim: int = 128
    activation: str = "relu"
    normalize_output: bool = False
    classifier_head: bool = False
    num_classes: int = 0
    zero_depth: bool = False
    weight_std: float = 0.01
    bias_init: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.embedding_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("all layer sizes must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.classifier_head and self.num_classes < 1:
            raise ConfigError("a classifier head needs num_classes >= 1")
        if self.zero_depth and (self.hidden or self.embedding_dim != self.input_dim):
            raise ConfigError("a zero-depth network maps R^n to itself with no hidden layers")

    @classmethod
    def identity(cls, n: int) -> "NetworkConfig":
        return cls(input_dim=n, hidden=(), embedding_dim=n, zero_depth=True)

    @property
    def layer_sizes(self) -> list[int]:
        if self.zero_depth:
            return [self.input_dim]
        return [self.input_dim, *self.hidden, self.embedding_dim]


@dataclass
class NetworkParams:
    config: NetworkConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    head_weight: np.ndarray | None = None
    head_bias: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (layers, then head)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        if self.head_weight is not None:
            out.extend((self.head_weight, self.head_bias))
        return out

    def names(self) -> list[str]:
        out = []
        for k in range(len(self.weights)):
            out.extend((f"W{k}", f"b{k}"))
        if self.head_weight is not None:
            out.extend(("head_W", "head_b"))
        return out

    def with_arrays(self, arrays) -> "NetworkParams":
        arrays = [np.array(a, dtype=float) for a in arrays]
        nl = len(self.weights)
        head = arrays[2 * nl:] if self.head_weight is not None else [None, None]
        return NetworkParams(self.config, arrays[0:2 * nl:2], arrays[1:2 * nl:2], *head)

    def zeros_like(self) -> "NetworkParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def copy(self) -> "NetworkParams":
        return self.with_arrays(self.arrays())

    def equals(self, other: "NetworkParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def init_params(config: NetworkConfig, seed: int) -> NetworkParams:
    rng = np.random.default_rng(seed)
    sizes = config.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, config.weight_std, size=(fan_out, fan_in)))
        biases.append(np.full(fan_out, config.bias_init))
    head_w = head_b = None
    if config.classifier_head:
        head_w = rng.normal(0.0, config.weight_std, size=(config.num_classes, sizes[-1]))
        head_b = np.full(config.num_classes, config.bias_init)
    return NetworkParams(config, weights, biases, head_w, head_b)


def _forward_cache(params: NetworkParams, x: np.ndarray):
    act, _ = _ACTIVATIONS[params.config.activation]
    inputs, pre = [], []
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        h = z if k == last else act(z)
    return h, inputs, pre


def _features(params: NetworkParams, features) -> tuple[np.ndarray, bool]:
    x = np.asarray(features, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.config.input_dim:
        raise losses.DimensionError(
            f"expected {params.config.input_dim} features, got {x.shape[1]}")
    return x, single


def forward(params: NetworkParams, features, return_logits: bool = False):
    """Embed one feature vector or a ``(m, n)`` batch of them.

    With ``return_logits`` (classifier-head networks only) returns
    ``(embeddings, logits)``.
    """
    x, single = _features(params, features)
    raw, _, _ = _forward_cache(params, x)
    emb = raw / np.linalg.norm(raw, axis=1, keepdims=True) if params.config.normalize_output else raw
    if single:
        emb = emb[0]
    if not return_logits:
        return emb
    if params.head_weight is None:
        raise ConfigError("network has no classifier head")
    logits = emb @ params.head_weight.T + params.head_bias
    return emb, logits


def backward(params: NetworkParams, features, embedding_gradients,
             logit_gradients=None) -> NetworkParams:
    """Chain-rule gradients of a scalar loss w.r.t. every parameter.

    ``embedding_gradients`` is dL/d(embedding) for each row of ``features``;
    ``logit_gradients`` adds dL/d(logits) through the classifier head.
    """
    x, single = _features(params, features)
    g = np.atleast_2d(np.asarray(embedding_gradients, dtype=float))
    if g.shape != (len(x), params.config.layer_sizes[-1]):
        raise losses.DimensionError(f"embedding gradient shape {g.shape} does not match output")
    raw, inputs, pre = _forward_cache(params, x)
    grads = params.zeros_like()

    emb = raw
    if params.config.normalize_output:
        norm = np.linalg.norm(raw, axis=1, keepdims=True)
        emb = raw / norm
    if logit_gradients is not None:
        if params.head_weight is None:
            raise ConfigError("network has no classifier head")
        gl = np.atleast_2d(np.asarray(logit_gradients, dtype=float))
        grads.head_weight = gl.T @ emb
        grads.head_bias = gl.sum(axis=0)
        g = g + gl @ params.head_weight
    if params.config.normalize_output:
        g = (g - emb * np.sum(emb * g, axis=1, keepdims=True)) / norm

    _, dact = _ACTIVATIONS[params.config.activation]
    last = len(params.weights) - 1
    for k in range(last, -1, -1):
        if k != last:
            g = g * dact(pre[k])
        grads.weights[k] = g.T @ inputs[k]
        grads.biases[k] = g.sum(axis=0)
        g = g @ params.weights[k]
    return grads


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "quadruplet"
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    minibatch_size: int = 64
    patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    margin: float = 0.1
    validation_fraction: float = 0.1
    iterations_per_epoch: int | None = None
    validation_batches: int = 8
    semi_hard: bool = False
    center_weight: float = 0.003
    center_rate: float = 0.5
    lr_decay_every: int = 0
    lr_decay_factor: float = 0.1

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.learning_rate <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("learning rate must be positive; momentum and decay non-negative")
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("patience and max_epochs must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.minibatch_size < 1:
            raise ConfigError("batch and minibatch sizes must be >= 1")
        if self.margin < 0:
            raise ConfigError("margin must be non-negative")

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay_every <= 0:
            return self.learning_rate
        return self.learning_rate * self.lr_decay_factor ** ((epoch - 1) // self.lr_decay_every)


def sgd_step(params: NetworkParams, grads: NetworkParams, velocity: NetworkParams | None,
             config: TrainConfig, learning_rate: float | None = None):
    """Classical momentum step: ``v = mu*v - lr*(g + decay*w)``, ``w += v``.

    Returns ``(new_params, new_velocity)``; inputs are not modified.
    """
    lr = config.learning_rate if learning_rate is None else learning_rate
    if velocity is None:
        velocity = params.zeros_like()
    new_w, new_v = [], []
    for w, g, v in zip(params.arrays(), grads.arrays(), velocity.arrays()):
        v = config.momentum * v - lr * (g + config.weight_decay * w)
        new_v.append(v)
        new_w.append(w + v)
    return params.with_arrays(new_w), velocity.with_arrays(new_v)


class EarlyStopping:
    """Tracks the best validation loss; ``stop`` once ``patience`` epochs pass without a strict decrease."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, value: float) -> bool:
        self.epoch += 1
        if value < self.best:
            self.best = value
            self.best_epoch = self.epoch
        return self.stop

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch

    @property
    def stop(self) -> bool:
        return self.epoch - self.best_epoch >= self.patience


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    validation_loss: float


@dataclass
class TrainResult:
    params: NetworkParams
    history: list[EpochRecord]
    best_epoch: int
    centers: np.ndarray | None = None
    degenerate_steps: int = 0
    final_params: NetworkParams | None = field(default=None, repr=False)


class _Objective:
    """Per-loss batch sampling and loss/gradient evaluation."""

    def __init__(self, dataset: Dataset, cfg: TrainConfig):
        self.cfg = cfg
        self.labels = dataset.labels
        self.num_ids = dataset.header.cardinalities[0]

    def sample(self, n: int, b: int, rng, params, features):
        cfg = self.cfg
        batch = sample_batch(n, min(b, n), rng)
        if cfg.loss == "quadruplet":
            mb = sample_minibatch(batch, self.labels, cfg.minibatch_size, rng)
            return batch, mb.quads, mb.degenerate
        if cfg.loss == "triplet":
            emb = forward(params, features[batch.sample_indices]) if cfg.semi_hard else None
            tb = sample_triplets(batch, self.labels, cfg.minibatch_size, rng,
                                 embeddings=emb, margin=cfg.margin, semi_hard=cfg.semi_hard)
            return batch, tb.triplets, tb.degenerate
        return batch, None, False

    def evaluate(self, params, x, labels, instances, centers):
        """Returns ``(loss, embedding_grad, logit_grad, embeddings)``."""
        cfg = self.cfg
        if cfg.loss == "quadruplet":
            emb = forward(params, x)
            loss, g = losses.quadruplet_loss_and_grad(instances, emb, cfg.margin)
            return loss, g, None, emb
        if cfg.loss == "triplet":
            emb = forward(params, x)
            loss, g = losses.triplet_loss_and_grad(instances, emb, cfg.margin)
            return loss, g, None, emb
        emb, logits = forward(params, x, return_logits=True)
        loss, gl = losses.softmax_loss(logits, labels[:, 0])
        g = np.zeros_like(emb)
        if cfg.loss == "center":
            closs, g = losses.center_loss(emb, labels[:, 0], centers, cfg.center_weight)
            loss += closs
        return loss, g, gl, emb


def _ensure_head(net: NetworkConfig, cfg: TrainConfig, num_ids: int) -> NetworkConfig:
    if cfg.loss in ("center", "softmax") and not net.classifier_head:
        return replace(net, classifier_head=True, num_classes=num_ids)
    return net


def train(dataset: Dataset, network_config: NetworkConfig, train_config: TrainConfig,
          init: NetworkParams | None = None) -> TrainResult:
    """Fit the embedding network with SGD and early stopping on a held-out split.

    Each epoch runs ``round(n / s)`` steps (or ``iterations_per_epoch``): draw
    a batch, sample the mini-batch of learning instances, update. The returned
    params are those of the epoch with the lowest validation loss.
    """
    cfg = train_config
    num_ids = dataset.header.cardinalities[0]
    if cfg.loss in ("quadruplet", "triplet") and len(np.unique(dataset.identities)) < 2:
        raise TrainingError(f"{cfg.loss} loss needs at least 2 identities")
    net = _ensure_head(network_config, cfg, num_ids)
    if net.input_dim != dataset.header.n:
        raise ConfigError(f"network expects {net.input_dim} features, dataset has {dataset.header.n}")

    rng = np.random.default_rng(cfg.seed)
    fit, val = split(dataset, 1.0 - cfg.validation_fraction, True, seed=int(rng.integers(2**31)))
    if len(val) == 0:
        raise TrainingError("validation split is empty")
    params = init.copy() if init is not None else init_params(net, int(rng.integers(2**31)))
    if params.config != net:
        raise ConfigError("initial params do not match the network config")
    objective = _Objective(fit, cfg)
    val_objective = _Objective(val, cfg)
    centers = np.zeros((num_ids, net.embedding_dim)) if cfg.loss == "center" else None

    # fixed validation instances so the validation loss is comparable across epochs
    val_rng = np.random.default_rng(int(rng.integers(2**31)))
    val_sets = []
    for _ in range(cfg.validation_batches if cfg.loss in ("quadruplet", "triplet") else 1):
        if cfg.loss in ("quadruplet", "triplet"):
            batch, inst, degenerate = val_objective.sample(len(val), cfg.batch_size, val_rng,
                                                           params, val.features)
            if degenerate:
                continue
            val_sets.append((batch.sample_indices, inst))
        else:
            val_sets.append((np.arange(len(val)), None))

    if not val_sets:
        raise TrainingError(
            "validation split yields no valid learning instances; the triplet loss needs "
            "two samples of some identity there, so raise validation_fraction")

    def validation_loss(p):
        vals = [val_objective.evaluate(p, val.features[idx], val.labels[idx], inst, centers)[0]
                for idx, inst in val_sets]
        return float(np.mean(vals))

    steps = cfg.iterations_per_epoch or max(1, int(round(len(fit) / cfg.minibatch_size)))
    velocity = params.zeros_like()
    stopper = EarlyStopping(cfg.patience)
    history: list[EpochRecord] = []
    best = params.copy()
    best_centers = None if centers is None else centers.copy()
    degenerate_total = 0

    for epoch in range(1, cfg.max_epochs + 1):
        lr = cfg.lr_at(epoch)
        step_losses = []
        for _ in range(steps):
            batch, inst, degenerate = objective.sample(len(fit), cfg.batch_size, rng,
                                                       params, fit.features)
            if degenerate:
                degenerate_total += 1
                continue
            idx = batch.sample_indices
            x, lab = fit.features[idx], fit.labels[idx]
            loss, g_emb, g_logit, emb = objective.evaluate(params, x, lab, inst, centers)
            grads = backward(params, x, g_emb, g_logit)
            params, velocity = sgd_step(params, grads, velocity, cfg, learning_rate=lr)
            if centers is not None:
                centers = losses.update_centers(centers, emb, lab[:, 0], cfg.center_rate)
            step_losses.append(loss)
        if not step_losses:
            raise TrainingError(
                f"epoch {epoch}: every mini-batch was degenerate (no quadruplet with "
                "differing label disagreement); check that labels vary across samples")
        if not (np.all(np.isfinite(step_losses))
                and all(np.isfinite(a).all() for a in params.arrays())):
            raise TrainingError(f"epoch {epoch}: parameters diverged; lower the learning rate")
        vloss = validation_loss(params)
        history.append(EpochRecord(epoch, float(np.mean(step_losses)), vloss))
        stop = stopper.update(vloss)
        if stopper.improved:
            best = params.copy()
            best_centers = None if centers is None else centers.copy()
        log.debug("epoch %d train=%.6g val=%.6g", epoch, history[-1].train_loss, vloss)
        if stop:
            break
    return TrainResult(best, history, stopper.best_epoch, best_centers, degenerate_total,
                       final_params=params)


def _format_array(a: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(a).ravel())


def save_checkpoint(path, params: NetworkParams, extra: dict[str, np.ndarray] | None = None,
                    meta: dict[str, str] | None = None) -> None:
    """Write a plain-text checkpoint; identical params give identical bytes."""
    c = params.config
    lines = [CHECKPOINT_MAGIC]
    fields = {
        "input_dim": c.input_dim,
        "hidden": ",".join(str(h) for h in c.hidden),
        "embedding_dim": c.embedding_dim,
        "activation": c.activation,
        "normalize_output": int(c.normalize_output),
        "classifier_head": int(c.classifier_head),
        "num_classes": c.num_classes,
        "zero_depth": int(c.zero_depth),
        "weight_std": repr(float(c.weight_std)),
        "bias_init": repr(float(c.bias_init)),
    }
    lines += [f"config.{k}={v}" for k, v in fields.items()]
    for k, v in sorted((meta or {}).items()):
        lines.append(f"meta.{k}={v}")
    arrays = list(zip(params.names(), params.arrays()))
    arrays += sorted((extra or {}).items())
    for name, arr in arrays:
        arr = np.asarray(arr, dtype=float)
        lines.append(f"array {name} shape={','.join(str(s) for s in arr.shape)}")
        lines.append(_format_array(arr))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Read a checkpoint. Returns ``(params, extra_arrays, meta)``."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a quadloss checkpoint")
    cfg, meta, arrays = {}, {}, {}
    k = 1
    while k < len(lines) and lines[k]:
        line = lines[k]
        if line.startswith("config."):
            key, _, value = line[len("config."):].partition("=")
            cfg[key] = value
        elif line.startswith("meta."):
            key, _, value = line[len("meta."):].partition("=")
            meta[key] = value
        elif line.startswith("array "):
            name, _, shape = line[len("array "):].partition(" shape=")
            dims = tuple(int(s) for s in shape.split(",") if s)
            values = lines[k + 1]
            flat = np.array([float(v) for v in values.split(",")] if values else [], dtype=float)
            arrays[name] = flat.reshape(dims)
            k += 1
        else:
            raise ValueError(f"{path}: line {k + 1}: unrecognised record {line!r}")
        k += 1
    config = NetworkConfig(
        input_dim=int(cfg["input_dim"]),
        hidden=tuple(int(h) for h in cfg["hidden"].split(",") if h),
        embedding_dim=int(cfg["embedding_dim"]),
        activation=cfg["activation"],
        normalize_output=bool(int(cfg["normalize_output"])),
        classifier_head=bool(int(cfg["classifier_head"])),
        num_classes=int(cfg["num_classes"]),
        zero_depth=bool(int(cfg["zero_depth"])),
        weight_std=float(cfg["weight_std"]),
        bias_init=float(cfg["bias_init"]),
    )
    nl = len(config.layer_sizes) - 1
    weights = [arrays.pop(f"W{i}") for i in range(nl)]
    biases = [arrays.pop(f"b{i}") for i in range(nl)]
    head_w = arrays.pop("head_W", None)
    head_b = arrays.pop("head_b", None)
    params = NetworkParams(config, weights, biases, head_w, head_b)
    for w, (fan_in, fan_out) in zip(weights, zip(config.layer_sizes[:-1], config.layer_sizes[1:])):
        if w.shape != (fan_out, fan_in):
            raise ValueError(f"{path}: weight shape {w.shape} inconsistent with config")
    return params, arrays, meta

