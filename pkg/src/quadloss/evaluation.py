"""Retrieval and soft-label evaluation protocols.

All rankings use squared Euclidean distance between embeddings, and ties
always break by ascending gallery index. Identity is label dimension 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import ID_DIM, DimensionError, pairwise_squared_distances


class ProtocolError(ValueError):
    """The split does not support the requested protocol."""


class EvaluationWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class GalleryProbeSplit:
    gallery_embeddings: np.ndarray
    gallery_labels: np.ndarray
    probe_embeddings: np.ndarray
    probe_labels: np.ndarray
    open_set: bool = False

    def __post_init__(self):
        ge = np.atleast_2d(np.asarray(self.gallery_embeddings, dtype=float))
        pe = np.atleast_2d(np.asarray(self.probe_embeddings, dtype=float))
        if len(ge) == 0:
            raise ProtocolError("gallery is empty")
        gl = np.asarray(self.gallery_labels, dtype=np.int64).reshape(len(ge), -1)
        pl = np.asarray(self.probe_labels, dtype=np.int64).reshape(len(pe), -1)
        if ge.shape[1] != pe.shape[1]:
            raise DimensionError("gallery and probe embeddings differ in dimension")
        if gl.shape[1] != pl.shape[1]:
            raise DimensionError("gallery and probe labels differ in dimensionality")
        object.__setattr__(self, "gallery_embeddings", ge)
        object.__setattr__(self, "probe_embeddings", pe)
        object.__setattr__(self, "gallery_labels", gl)
        object.__setattr__(self, "probe_labels", pl)
        if self.open_set and not np.any(~self.genuine):
            raise ProtocolError("an open-set split needs impostor probes")

    @property
    def genuine(self) -> np.ndarray:
        """Probe mask: identity enrolled in the gallery."""
        return np.isin(self.probe_labels[:, ID_DIM], self.gallery_labels[:, ID_DIM])

    def distances(self) -> np.ndarray:
        return pairwise_squared_distances(self.probe_embeddings, self.gallery_embeddings)

    def probes(self, mask) -> "GalleryProbeSplit":
        mask = np.asarray(mask)
        return GalleryProbeSplit(self.gallery_embeddings, self.gallery_labels,
                                 self.probe_embeddings[mask], self.probe_labels[mask], False)


@dataclass(frozen=True)
class Curve:
    x: np.ndarray
    y: np.ndarray
    x_name: str
    y_name: str

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.x.tolist(), self.y.tolist()))


def _same_identity(split: GalleryProbeSplit) -> np.ndarray:
    return split.probe_labels[:, ID_DIM][:, None] == split.gallery_labels[:, ID_DIM][None, :]


def verification_roc(split: GalleryProbeSplit) -> Curve:
    """ROC over every probe-gallery pair, accepting pairs with distance <= threshold.

    The first point is the reject-all threshold (0, 0); one point follows
    for each distinct observed distance.
    """
    d = split.distances().ravel()
    genuine = _same_identity(split).ravel()
    n_gen = int(genuine.sum())
    n_imp = len(genuine) - n_gen
    if n_gen == 0 or n_imp == 0:
        raise ProtocolError("ROC needs both genuine and impostor pairs")
    order = np.argsort(d, kind="stable")
    d, genuine = d[order], genuine[order]
    last_of_group = np.r_[d[1:] != d[:-1], True]
    tp = np.cumsum(genuine)[last_of_group]
    fp = np.cumsum(~genuine)[last_of_group]
    far = np.r_[0.0, fp / n_imp]
    vr = np.r_[0.0, tp / n_gen]
    return Curve(far, vr, "far", "vr")


def _first_match_rank(split: GalleryProbeSplit, keep: np.ndarray | None = None) -> np.ndarray:
    """1-based rank of the first same-identity gallery entry per probe (0 = absent).

    ``keep`` optionally masks gallery entries per probe (``(probes, gallery)``).
    """
    d = split.distances()
    same = _same_identity(split)
    if keep is not None:
        d = np.where(keep, d, np.inf)
        same = same & keep
    order = np.argsort(d, axis=1, kind="stable")
    ranked = np.take_along_axis(same, order, axis=1)
    has = ranked.any(axis=1)
    return np.where(has, ranked.argmax(axis=1) + 1, 0)


def cmc_curve(split: GalleryProbeSplit) -> np.ndarray:
    """Identification rate at ranks 1..gallery size.

    Closed-set splits require every probe identity to be enrolled; open-set
    splits are scored over their genuine probes.
    """
    genuine = split.genuine
    if split.open_set:
        split = split.probes(genuine)
    elif not genuine.all():
        missing = split.probe_labels[~genuine, ID_DIM][0]
        raise ProtocolError(f"probe identity {int(missing)} is not enrolled in the gallery")
    if len(split.probe_embeddings) == 0:
        raise ProtocolError("no genuine probes")
    ranks = _first_match_rank(split)
    g = len(split.gallery_embeddings)
    return np.array([np.mean(ranks <= k) for k in range(1, g + 1)])


def rank_k(cmc: np.ndarray, k: int) -> float:
    return float(cmc[min(k, len(cmc)) - 1])


def top_fraction(cmc: np.ndarray, fraction: float = 0.1) -> float:
    """CMC at rank ``ceil(fraction * gallery size)``."""
    return rank_k(cmc, max(1, math.ceil(fraction * len(cmc))))


def _nearest(split: GalleryProbeSplit):
    d = split.distances()
    nn = np.argmin(d, axis=1)  # first minimum, i.e. lowest gallery index on ties
    return nn, d[np.arange(len(nn)), nn]


def dir_at_rank1(split: GalleryProbeSplit, thresholds=None) -> Curve:
    """Open-set detection-and-identification rate at rank 1 versus FAR.

    For each threshold, DIR is the share of genuine probes whose nearest
    gallery entry has their identity and lies within the threshold; FAR is
    the share of impostor probes whose nearest entry lies within it. The
    default grid is 0 plus every distinct nearest-neighbour distance.
    """
    if not split.open_set:
        raise ProtocolError("DIR needs an open-set split")
    nn, dist = _nearest(split)
    genuine = split.genuine
    correct = split.gallery_labels[nn, ID_DIM] == split.probe_labels[:, ID_DIM]
    if thresholds is None:
        thresholds = np.unique(np.r_[0.0, dist])
    thresholds = np.asarray(thresholds, dtype=float)
    g_dist, g_ok = dist[genuine], correct[genuine]
    i_dist = dist[~genuine]
    dir_ = np.array([np.mean(g_ok & (g_dist <= tau)) for tau in thresholds])
    far = np.array([np.mean(i_dist <= tau) for tau in thresholds])
    return Curve(far, dir_, "far", "dir")


def average_precision(relevance) -> float:
    """Sum over cut-offs of precision times the change in recall."""
    rel = np.asarray(relevance, dtype=bool)
    total = rel.sum()
    if total == 0:
        return float("nan")
    precision = np.cumsum(rel) / np.arange(1, len(rel) + 1)
    return float(np.sum(precision * rel) / total)


def map_score(ranked_relevance: Sequence) -> float:
    """Mean average precision over queries given their ranked relevance lists.

    Queries without any relevant item are dropped with an ``EvaluationWarning``.
    """
    aps = [average_precision(r) for r in ranked_relevance]
    kept = [a for a in aps if not math.isnan(a)]
    if len(kept) < len(aps):
        warnings.warn(f"{len(aps) - len(kept)} queries have no relevant item and were excluded",
                      EvaluationWarning, stacklevel=2)
    if not kept:
        raise ProtocolError("no query has a relevant gallery item")
    return float(np.mean(kept))


def ranked_relevance(split: GalleryProbeSplit) -> np.ndarray:
    """Per-probe same-identity flags of the gallery in ranked order."""
    order = np.argsort(split.distances(), axis=1, kind="stable")
    return np.take_along_axis(_same_identity(split), order, axis=1)


def map_from_split(split: GalleryProbeSplit) -> float:
    return map_score(ranked_relevance(split))


def knn_soft_labels(split: GalleryProbeSplit, label_dims: Sequence[int] | None = None) -> np.ndarray:
    """Labels of each probe's single nearest gallery entry."""
    nn, _ = _nearest(split)
    dims = list(range(split.gallery_labels.shape[1])) if label_dims is None else list(label_dims)
    return split.gallery_labels[nn][:, dims]


def labelling_error(predicted, ground_truth) -> float:
    """Mean per-dimension disagreement rate between predicted and true labels."""
    p = np.atleast_2d(np.asarray(predicted))
    g = np.atleast_2d(np.asarray(ground_truth))
    if p.shape != g.shape:
        raise DimensionError(f"predictions {p.shape} and ground truth {g.shape} differ")
    if p.size == 0:
        raise DimensionError("nothing to score")
    return float(np.count_nonzero(p != g) / p.size)


@dataclass(frozen=True)
class BootstrapResult:
    mean: float
    std: float
    values: tuple[float, ...]

    def __str__(self):
        return format_mean_std(self.mean, self.std)


def format_mean_std(mean: float, std: float) -> str:
    """``0.958 ± 3e-3`` style: small deviations as one-digit ``e-3`` values."""
    if std == 0:
        dev = "0"
    elif std < 0.0095:
        dev = f"{round(std * 1000):d}e-3" if round(std * 1000) > 0 else f"{std:.0e}"
    else:
        dev = f"{std:.3f}"
    return f"{mean:.3f} ± {dev}"


def bootstrap_eval(metric_fn: Callable, test_set, trials: int = 10, fraction: float = 0.9,
                   seed: int = 0) -> BootstrapResult:
    """Score ``metric_fn`` on ``trials`` resamples drawn with replacement.

    Each resample holds ``round(fraction * n)`` items. The deviation is the
    sample standard deviation (0 for a single trial).
    """
    n = len(test_set)
    if n == 0:
        raise ValueError("bootstrap needs a nonempty test set")
    rng = np.random.default_rng(seed)
    size = max(1, int(round(fraction * n)))
    values = []
    for _ in range(trials):
        idx = rng.integers(0, n, size=size)
        if isinstance(test_set, np.ndarray):
            sample = test_set[idx]
        else:
            sample = [test_set[i] for i in idx]
        values.append(float(metric_fn(sample)))
    std = float(np.std(values, ddof=1)) if trials > 1 else 0.0
    return BootstrapResult(float(np.mean(values)), std, tuple(values))


@dataclass(frozen=True)
class HitPenetration:
    penetration: np.ndarray
    hit: np.ndarray
    flagged: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))

    def hit_at(self, penetration: float) -> float:
        """Hit rate after examining the given fraction of the enrolled gallery."""
        k = int(np.searchsorted(self.penetration, penetration, side="right"))
        return 0.0 if k == 0 else float(self.hit[k - 1])


def _filter_mask(split: GalleryProbeSplit, query_filter) -> np.ndarray | None:
    if query_filter is None:
        return None
    n_probe = len(split.probe_embeddings)
    per_query = [query_filter] * n_probe if isinstance(query_filter, Mapping) else list(query_filter)
    if len(per_query) != n_probe:
        raise DimensionError("one filter per query is required")
    keep = np.ones((n_probe, len(split.gallery_embeddings)), dtype=bool)
    for r, criteria in enumerate(per_query):
        for dim, value in (criteria or {}).items():
            keep[r] &= split.gallery_labels[:, int(dim)] == value
    return keep


def semantic_retrieval(split: GalleryProbeSplit, query_filter=None) -> HitPenetration:
    """Hit rate versus penetration, optionally after semantic filtering.

    ``query_filter`` is ``None`` (unfiltered baseline), one mapping
    ``{label_dim: required_code}`` applied to every query, or a sequence of
    such mappings, one per query. Filtered-out gallery entries are removed
    before ranking. Penetration ``k / G`` is the share of the ``G`` enrolled
    gallery entries examined, so filtered and baseline curves share one
    axis. Queries whose filter empties the gallery miss at every ``k`` and
    are listed in ``flagged``.
    """
    keep = _filter_mask(split, query_filter)
    flagged = np.empty(0, dtype=np.intp)
    if keep is not None:
        flagged = np.flatnonzero(~keep.any(axis=1))
        if len(flagged):
            warnings.warn(f"{len(flagged)} queries have an empty filtered gallery",
                          EvaluationWarning, stacklevel=2)
    ranks = _first_match_rank(split, keep)
    g = len(split.gallery_embeddings)
    ks = np.arange(1, g + 1)
    found = ranks > 0
    hit = np.array([np.mean(found & (ranks <= k)) for k in ks])
    return HitPenetration(ks / g, hit, flagged)


@dataclass
class EvalReport:
    roc: Curve | None = None
    cmc: np.ndarray | None = None
    dir_rank1: Curve | None = None
    hit_penetration: HitPenetration | None = None
    hit_penetration_baseline: HitPenetration | None = None
    scalars: dict[str, float] = field(default_factory=dict)
    bootstrap: dict[str, BootstrapResult] = field(default_factory=dict)


def _write_csv(path: Path, header: tuple[str, str], xs, ys) -> None:
    lines = [",".join(header)]
    lines += [f"{x!r},{y!r}" for x, y in zip(np.asarray(xs).tolist(), np.asarray(ys).tolist())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_report(report: EvalReport, out_dir) -> list[Path]:
    """Write each present curve as a two-column CSV plus ``scalars.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if report.roc is not None:
        _write_csv(out / "roc.csv", ("far", "vr"), report.roc.x, report.roc.y)
        written.append(out / "roc.csv")
    if report.cmc is not None:
        _write_csv(out / "cmc.csv", ("rank", "rate"), np.arange(1, len(report.cmc) + 1), report.cmc)
        written.append(out / "cmc.csv")
    if report.dir_rank1 is not None:
        _write_csv(out / "dir.csv", ("far", "dir"), report.dir_rank1.x, report.dir_rank1.y)
        written.append(out / "dir.csv")
    for name, hp in (("hit_penetration.csv", report.hit_penetration),
                     ("hit_penetration_baseline.csv", report.hit_penetration_baseline)):
        if hp is not None:
            _write_csv(out / name, ("penetration", "hit"), hp.penetration, hp.hit)
            written.append(out / name)
    lines = [f"{k}={v!r}" for k, v in sorted(report.scalars.items())]
    for k, res in sorted(report.bootstrap.items()):
        lines += [f"{k}_mean={res.mean!r}", f"{k}_std={res.std!r}", f"{k}_table={res}"]
    (out / "scalars.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(out / "scalars.txt")
    return written


def read_curve(path) -> tuple[tuple[str, str], np.ndarray, np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").strip().split("\n")
    header = tuple(lines[0].split(","))
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, 2)
    return header, rows[:, 0], rows[:, 1]
