"""Command-line front end: ``quadloss {gen,train,embed,eval,plot}``.

Every command takes ``--config FILE`` (flat ``key=value`` lines), ``--seed``
and ``--out``; explicit flags override the file, which overrides defaults.
Outputs are pure functions of inputs, config and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .data import (DatasetFormatError, SyntheticSpec, generate_synthetic, load_dataset,
                   save_dataset, split)
from .evaluation import (EvalReport, GalleryProbeSplit, ProtocolError, bootstrap_eval,
                         cmc_curve, dir_at_rank1, knn_soft_labels, labelling_error,
                         map_from_split, read_curve, semantic_retrieval, top_fraction,
                         verification_roc, write_report)
from .mining import ConfigError
from .network import (LOSSES, NetworkConfig, TrainConfig, TrainingError, forward,
                      load_checkpoint, save_checkpoint, train)

log = logging.getLogger("quadloss")


class UsageError(ValueError):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(",") if v.strip())


@dataclass(frozen=True)
class Param:
    name: str
    kind: Callable[[Any], Any]
    default: Any
    help: str = ""


COMMON = [Param("seed", int, 0, "seed for all randomness"),
          Param("out", str, None, "output directory")]

PARAMS: dict[str, list[Param]] = {
    "gen": [
        Param("identities", int, 40),
        Param("soft_cardinalities", _int_list, (2, 3), "cardinality of each soft label, comma separated"),
        Param("samples_per_identity", int, 20),
        Param("feature_dim", int, 32),
        Param("noise", float, 0.3, "feature noise standard deviation"),
        Param("rho", float, 0.3, "share of centroid variance explained by soft labels"),
        Param("centroid_scale", float, 1.0),
        Param("label_rule", str, "balanced", "balanced or random"),
    ],
    "train": [
        Param("dataset", str, None, "dataset file"),
        Param("loss", str, "quadruplet", "/".join(LOSSES)),
        Param("hidden", _int_list, (64,), "hidden layer sizes, comma separated"),
        Param("embedding_dim", int, 128),
        Param("activation", str, "relu"),
        Param("normalize_output", _bool, False),
        Param("weight_std", float, 0.01),
        Param("bias_init", float, 0.5),
        Param("learning_rate", float, 0.01),
        Param("momentum", float, 0.9),
        Param("weight_decay", float, 5e-4),
        Param("batch_size", int, 64),
        Param("minibatch_size", int, 64),
        Param("patience", int, 10),
        Param("max_epochs", int, 100),
        Param("margin", float, 0.1),
        Param("validation_fraction", float, 0.1),
        Param("iterations_per_epoch", int, 0, "0 = round(n / minibatch_size)"),
        Param("validation_batches", int, 8),
        Param("semi_hard", _bool, False, "semi-hard negatives for the triplet baseline"),
        Param("center_weight", float, 0.003),
        Param("center_rate", float, 0.5),
        Param("lr_decay_every", int, 0),
        Param("lr_decay_factor", float, 0.1),
        Param("resume", str, None, "checkpoint to continue from"),
    ],
    "embed": [
        Param("checkpoint", str, None),
        Param("dataset", str, None),
    ],
    "eval": [
        Param("dataset", str, None),
        Param("checkpoint", str, None),
        Param("embeddings", str, None, "embeddings CSV (alternative to --checkpoint)"),
        Param("protocol", str, "closed", "closed or open"),
        Param("gallery_fraction", float, 0.5, "per-identity share of samples enrolled"),
        Param("impostor_fraction", float, 0.2, "share of identities held out as impostors (open)"),
        Param("bootstrap", _bool, False),
        Param("trials", int, 10),
        Param("bootstrap_fraction", float, 0.9),
        Param("semantic_filter", _int_list, (), "label dimensions used to filter retrieval"),
        Param("soft_dims", _int_list, (), "dimensions inferred by 1-NN (default: all but ID)"),
    ],
    "plot": [
        Param("report", str, None, "directory written by eval"),
        Param("curves", str, "", "comma separated CSV stems to plot (default: all present)"),
        Param("embeddings", str, None, "embeddings CSV for a scatter plot"),
        Param("dataset", str, None, "dataset supplying scatter colours"),
        Param("color_dim", int, 1),
    ],
}

REQUIRED = {
    "gen": ("out",),
    "train": ("dataset", "out"),
    "embed": ("checkpoint", "dataset", "out"),
    "eval": ("dataset", "out"),
    "plot": ("report",),
}


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve(command: str, flags: dict[str, Any], config_path: str | None) -> dict[str, Any]:
    """Merged run config for ``command``: flags > config file > defaults."""
    table = {p.name: p for p in PARAMS[command] + COMMON}
    merged = {name: p.default for name, p in table.items()}
    if config_path:
        file_values = read_config_file(config_path)
        unknown = sorted(set(file_values) - set(table))
        if unknown:
            raise UsageError(f"unknown config key(s) for '{command}': {', '.join(unknown)}")
        for key, text in file_values.items():
            merged[key] = text
    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    out = {}
    for name, p in table.items():
        value = merged[name]
        try:
            out[name] = p.kind(value) if value is not None and not isinstance(value, tuple) else value
        except ValueError as exc:
            raise UsageError(f"bad value for {name}: {exc}") from None
    missing = [k for k in REQUIRED[command] if out.get(k) in (None, "")]
    if missing:
        raise UsageError(f"'{command}' needs: {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return out


def _manifest(path: Path, command: str, cfg: dict[str, Any], extra: dict[str, Any] | None = None):
    lines = [f"command={command}", f"version={__version__}"]
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    for key in ("dataset", "checkpoint", "embeddings", "resume"):
        if cfg.get(key) and Path(cfg[key]).is_file():
            digest = hashlib.sha256(Path(cfg[key]).read_bytes()).hexdigest()
            lines.append(f"{key}_sha256={digest}")
    for key in sorted(extra or {}):
        lines.append(f"{key}={extra[key]}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    return dict(line.split("=", 1) for line in Path(path).read_text(encoding="utf-8").splitlines() if line)


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def cmd_gen(cfg):
    try:
        spec = SyntheticSpec(
            identities=cfg["identities"], soft_cardinalities=cfg["soft_cardinalities"],
            samples_per_identity=cfg["samples_per_identity"], feature_dim=cfg["feature_dim"],
            noise=cfg["noise"], rho=cfg["rho"], centroid_scale=cfg["centroid_scale"],
            label_rule=cfg["label_rule"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(cfg)
    syn = generate_synthetic(spec, cfg["seed"])
    save_dataset(syn.dataset, out / "dataset.txt")
    _manifest(out / "manifest.txt", "gen", cfg, {"rows": len(syn.dataset), "t": spec.t})
    log.info("wrote %d samples to %s", len(syn.dataset), out / "dataset.txt")


def _write_history(path: Path, history):
    lines = ["epoch,train_loss,validation_loss"]
    lines += [f"{r.epoch},{r.train_loss!r},{r.validation_loss!r}" for r in history]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_train(cfg):
    dataset = load_dataset(cfg["dataset"])
    try:
        net = NetworkConfig(
            input_dim=dataset.header.n, hidden=cfg["hidden"], embedding_dim=cfg["embedding_dim"],
            activation=cfg["activation"], normalize_output=cfg["normalize_output"],
            weight_std=cfg["weight_std"], bias_init=cfg["bias_init"])
        tc = TrainConfig(
            loss=cfg["loss"], learning_rate=cfg["learning_rate"], momentum=cfg["momentum"],
            weight_decay=cfg["weight_decay"], batch_size=cfg["batch_size"],
            minibatch_size=cfg["minibatch_size"], patience=cfg["patience"],
            max_epochs=cfg["max_epochs"], seed=cfg["seed"], margin=cfg["margin"],
            validation_fraction=cfg["validation_fraction"],
            iterations_per_epoch=cfg["iterations_per_epoch"] or None,
            validation_batches=cfg["validation_batches"], semi_hard=cfg["semi_hard"],
            center_weight=cfg["center_weight"], center_rate=cfg["center_rate"],
            lr_decay_every=cfg["lr_decay_every"], lr_decay_factor=cfg["lr_decay_factor"])
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    init = None
    if cfg["resume"]:
        init, _, _ = load_checkpoint(cfg["resume"])
        net = init.config
        if init.config.classifier_head != (tc.loss in ("center", "softmax")):
            raise UsageError("resumed checkpoint was trained with an incompatible loss head")
    out = _out_dir(cfg)
    result = train(dataset, net, tc, init=init)
    extra = {"centers": result.centers} if result.centers is not None else None
    save_checkpoint(out / "checkpoint.txt", result.params, extra=extra,
                    meta={"loss": tc.loss, "seed": str(tc.seed), "best_epoch": str(result.best_epoch)})
    _write_history(out / "history.csv", result.history)
    _manifest(out / "manifest.txt", "train", cfg,
              {"best_epoch": result.best_epoch, "epochs_run": len(result.history)})
    log.info("best epoch %d of %d", result.best_epoch, len(result.history))


def _write_embeddings(path: Path, ids, emb):
    d = emb.shape[1]
    lines = [",".join(["id", *(f"e{k}" for k in range(d))])]
    for sid, row in zip(ids, emb):
        lines.append(",".join([str(int(sid)), *(repr(float(v)) for v in row)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_embeddings(path) -> tuple[np.ndarray, np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").strip().split("\n")
    if not lines or not lines[0].startswith("id"):
        raise UsageError(f"{path}: not an embeddings CSV")
    rows = [ln.split(",") for ln in lines[1:]]
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    emb = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float)
    return ids, emb.reshape(len(ids), len(lines[0].split(",")) - 1)


def cmd_embed(cfg):
    params, _, _ = load_checkpoint(cfg["checkpoint"])
    dataset = load_dataset(cfg["dataset"])
    out = _out_dir(cfg)
    emb = forward(params, dataset.features)
    _write_embeddings(out / "embeddings.csv", dataset.ids, np.atleast_2d(emb))
    _manifest(out / "manifest.txt", "embed", cfg, {"rows": len(dataset)})


def _dataset_embeddings(cfg, dataset) -> np.ndarray:
    if bool(cfg["checkpoint"]) == bool(cfg["embeddings"]):
        raise UsageError("eval needs exactly one of --checkpoint or --embeddings")
    if cfg["checkpoint"]:
        params, _, _ = load_checkpoint(cfg["checkpoint"])
        return np.atleast_2d(forward(params, dataset.features))
    ids, emb = read_embeddings(cfg["embeddings"])
    position = {int(i): k for k, i in enumerate(ids)}
    try:
        return emb[[position[int(i)] for i in dataset.ids]]
    except KeyError as exc:
        raise UsageError(f"embeddings file lacks sample id {exc}") from None


def gallery_probe_split(dataset, emb, protocol: str, gallery_fraction: float,
                        impostor_fraction: float, seed: int) -> GalleryProbeSplit:
    """Enrol part of each identity's samples; open-set holds out whole identities as impostors."""
    rng = np.random.default_rng(seed)
    idents = np.unique(dataset.identities)
    impostors = np.empty(0, dtype=idents.dtype)
    if protocol == "open":
        n_imp = max(1, int(round(impostor_fraction * len(idents))))
        if n_imp >= len(idents):
            raise UsageError("impostor_fraction leaves no enrolled identity")
        impostors = np.sort(rng.choice(idents, size=n_imp, replace=False))
    elif protocol != "closed":
        raise UsageError("protocol must be 'closed' or 'open'")
    enrolled = ~np.isin(dataset.identities, impostors)
    sub = dataset.subset(np.flatnonzero(enrolled))
    gal, probe = split(sub, gallery_fraction, True, seed=int(rng.integers(2**31)))
    position = {int(i): k for k, i in enumerate(dataset.ids)}
    g_idx = [position[int(i)] for i in gal.ids]
    p_idx = [position[int(i)] for i in probe.ids] + list(np.flatnonzero(~enrolled))
    p_idx = np.array(p_idx, dtype=np.intp)
    return GalleryProbeSplit(emb[g_idx], dataset.labels[g_idx], emb[p_idx],
                             dataset.labels[p_idx], open_set=protocol == "open")


def cmd_eval(cfg):
    dataset = load_dataset(cfg["dataset"])
    emb = _dataset_embeddings(cfg, dataset)
    sp = gallery_probe_split(dataset, emb, cfg["protocol"], cfg["gallery_fraction"],
                             cfg["impostor_fraction"], cfg["seed"])
    t = dataset.header.t
    soft_dims = list(cfg["soft_dims"]) or list(range(1, t))
    for dim in [*soft_dims, *cfg["semantic_filter"]]:
        if not 0 <= dim < t:
            raise UsageError(f"label dimension {dim} outside 0..{t - 1}")

    report = EvalReport()
    report.roc = verification_roc(sp)
    report.cmc = cmc_curve(sp)
    closed = sp.probes(sp.genuine)
    report.scalars["rank1"] = float(report.cmc[0])
    report.scalars["top10pct"] = top_fraction(report.cmc)
    report.scalars["map"] = map_from_split(closed)
    if soft_dims:
        pred = knn_soft_labels(closed, soft_dims)
        report.scalars["labelling_error"] = labelling_error(pred, closed.probe_labels[:, soft_dims])
    if sp.open_set:
        report.dir_rank1 = dir_at_rank1(sp)
    if cfg["semantic_filter"]:
        dims = cfg["semantic_filter"]
        filters = [{d: int(row[d]) for d in dims} for row in closed.probe_labels]
        report.hit_penetration = semantic_retrieval(closed, filters)
        report.hit_penetration_baseline = semantic_retrieval(closed, None)
    if cfg["bootstrap"]:
        def on(idx, fn):
            return fn(closed.probes(np.asarray(idx)))
        metrics = {
            "rank1": lambda s: cmc_curve(s)[0],
            "top10pct": lambda s: top_fraction(cmc_curve(s)),
            "map": map_from_split,
        }
        if soft_dims:
            metrics["labelling_error"] = lambda s: labelling_error(
                knn_soft_labels(s, soft_dims), s.probe_labels[:, soft_dims])
        idx = np.arange(len(closed.probe_embeddings))
        for k, (name, fn) in enumerate(metrics.items()):
            report.bootstrap[name] = bootstrap_eval(
                lambda sel, fn=fn: on(sel, fn), idx, trials=cfg["trials"],
                fraction=cfg["bootstrap_fraction"], seed=cfg["seed"])
    out = _out_dir(cfg)
    write_report(report, out)
    _manifest(out / "manifest.txt", "eval", cfg,
              {"gallery": len(sp.gallery_embeddings), "probes": len(sp.probe_embeddings)})


CURVE_FILES = ("roc", "cmc", "dir", "hit_penetration", "hit_penetration_baseline")


def _svg_figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "quadloss"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def cmd_plot(cfg):
    report = Path(cfg["report"])
    wanted = [c for c in cfg["curves"].split(",") if c] if cfg["curves"] else None
    if wanted:
        unknown = [c for c in wanted if c not in CURVE_FILES]
        if unknown:
            raise UsageError(f"unknown curve(s): {', '.join(unknown)}")
        for c in wanted:
            if not (report / f"{c}.csv").exists():
                raise UsageError(f"missing curve file {report / (c + '.csv')}")
    else:
        wanted = [c for c in CURVE_FILES if (report / f"{c}.csv").exists()]
        if not wanted and not cfg["embeddings"]:
            raise UsageError(f"no curve CSV ({', '.join(c + '.csv' for c in CURVE_FILES)}) in {report}")
    out = Path(cfg["out"]) if cfg["out"] else report
    out.mkdir(parents=True, exist_ok=True)
    plt = _svg_figure()
    meta = {"Date": None, "Creator": None}
    for name in wanted:
        (xname, yname), x, y = read_curve(report / f"{name}.csv")
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        ax.plot(x, y, drawstyle="steps-post" if name != "cmc" else "default")
        ax.set_xlabel(xname)
        ax.set_ylabel(yname)
        ax.set_title(name)
        ax.set_ylim(-0.02, 1.02)
        fig.tight_layout()
        fig.savefig(out / f"{name}.svg", format="svg", metadata=meta)
        plt.close(fig)
    if cfg["embeddings"]:
        ids, emb = read_embeddings(cfg["embeddings"])
        xy = project_2d(emb)
        colors = np.zeros(len(ids))
        if cfg["dataset"]:
            dataset = load_dataset(cfg["dataset"])
            if not 0 <= cfg["color_dim"] < dataset.header.t:
                raise UsageError(f"color_dim {cfg['color_dim']} outside the label dimensions")
            label_of = {int(i): int(v) for i, v in zip(dataset.ids, dataset.labels[:, cfg["color_dim"]])}
            colors = np.array([label_of.get(int(i), -1) for i in ids])
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        ax.scatter(xy[:, 0], xy[:, 1], c=colors, s=6, cmap="tab10")
        ax.set_title("embedding" if emb.shape[1] <= 2 else "embedding (2-component projection)")
        fig.tight_layout()
        fig.savefig(out / "scatter.svg", format="svg", metadata=meta)
        plt.close(fig)


def project_2d(emb: np.ndarray) -> np.ndarray:
    """Top-2 principal-component projection; embeddings of width <= 2 are used as is."""
    emb = np.asarray(emb, dtype=float)
    if emb.shape[1] <= 2:
        return np.column_stack([emb, np.zeros((len(emb), 2 - emb.shape[1]))])
    centered = emb - emb.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    # fix the sign of each axis so the projection is deterministic
    signs = np.sign(vt[:2, np.argmax(np.abs(vt[:2]), axis=1)].diagonal())
    return centered @ (vt[:2].T * np.where(signs == 0, 1, signs))


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "embed": cmd_embed, "eval": cmd_eval,
            "plot": cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadloss", description="Train and evaluate quadruplet metric embeddings.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, params in PARAMS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("-v", "--verbose", action="store_true")
        for prm in params + COMMON:
            flag = "--" + prm.name.replace("_", "-")
            p.add_argument(flag, dest=prm.name, default=None, help=prm.help or None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = resolve(args.command, flags, args.config)
        COMMANDS[args.command](cfg)
    except (UsageError, ConfigError, DatasetFormatError, ProtocolError, OSError) as exc:
        print(f"quadloss {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"quadloss {args.command}: training failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
