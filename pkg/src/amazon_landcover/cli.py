"""Command-line entry point: ``amazon-landcover analyze|synth|train|evaluate|predict``.

Settings come from a flat ``key = value`` file (``--config``) and are
overridden by flags. Relative paths in a config file are resolved
against the file's directory. Exit codes: 0 success, 2 configuration or
usage error, 3 runtime or numerical error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import analysis, imaging, labels, metrics, model, training
from .losses import binary_cross_entropy, categorical_cross_entropy
from .errors import (
    CheckpointMismatchError,
    ConfigError,
    ImageDecodeError,
    IoError,
    MalformedRowError,
    ManifestNotFoundError,
    NumericalError,
    ShapeError,
    UnknownTagError,
    WeightShapeError,
)

log = logging.getLogger("amazon_landcover")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

PATH_KEYS = ("manifest", "image_dir", "catalog", "output_dir", "checkpoint", "weights")


@dataclass
class RunConfig:
    manifest: str = ""
    image_dir: str = ""
    catalog: str = ""
    output_dir: str = "runs/default"
    seed: int = 0
    # training
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 15
    val_fraction: float = 0.2
    freeze_backbone: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    input_size: int = 128
    head_activation: str = "sigmoid"
    weights: str = "vgg16-imagenet-notop"
    allow_random_weights: bool = True
    workers: int = 1
    resume: bool = False
    # metrics
    threshold: float = 0.5
    beta: float = 2.0
    fbeta_form: str = "standard"
    # evaluate / predict
    checkpoint: str = ""
    # synth
    num_samples: int = 200
    num_classes: int = 4

    def train_config(self) -> training.TrainConfig:
        return training.config_from_mapping({f.name: getattr(self, f.name) for f in fields(self)})


def _coerce(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind in ("bool", bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    types = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        value = _coerce(key, raw, types[key])
        if key in PATH_KEYS and value and not (key == "weights" and value in model.REGISTRY):
            p = Path(value)
            value = str(p if p.is_absolute() else (path.parent / p))
        values[key] = value
    return values


def build_config(args) -> RunConfig:
    values = parse_config_file(args.config) if args.config else {}
    overrides = {
        "output_dir": args.output, "seed": args.seed, "epochs": args.epochs, "batch_size": args.batch_size,
        "learning_rate": args.lr, "threshold": args.threshold, "beta": args.beta, "fbeta_form": args.fbeta_form,
        "manifest": getattr(args, "manifest", None), "image_dir": getattr(args, "image_dir", None),
        "checkpoint": getattr(args, "checkpoint", None), "num_samples": getattr(args, "num_samples", None),
        "num_classes": getattr(args, "num_classes", None),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if args.freeze_backbone:
        values["freeze_backbone"] = True
    cfg = RunConfig(**values)
    if not 0.0 < cfg.threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {cfg.threshold}")
    if cfg.beta <= 0:
        raise ConfigError(f"beta must be > 0, got {cfg.beta}")
    if cfg.fbeta_form not in metrics.FBETA_FORMS:
        raise ConfigError(f"fbeta_form must be one of {metrics.FBETA_FORMS}")
    return cfg


def _catalog(cfg: RunConfig) -> labels.LabelCatalog:
    if cfg.catalog:
        return labels.load_catalog_file(cfg.catalog)
    if cfg.manifest:
        beside = Path(cfg.manifest).parent / "catalog.txt"
        if beside.is_file():
            return labels.load_catalog_file(beside)
    return labels.default_catalog()


def _manifest(cfg: RunConfig, path=None) -> labels.DatasetManifest:
    path = path or cfg.manifest
    if not path:
        raise ConfigError("no manifest configured")
    if not Path(path).is_file():
        raise ManifestNotFoundError(f"manifest not found: {path}")
    return labels.load_manifest(path, _catalog(cfg), cfg.image_dir or None)


def _seed_line(cfg: RunConfig) -> str:
    return f"seed={cfg.seed}"


def _load_checkpoint(cfg: RunConfig, catalog: labels.LabelCatalog):
    if not cfg.checkpoint:
        raise ConfigError("no checkpoint configured")
    if not Path(cfg.checkpoint).is_file():
        raise ConfigError(f"checkpoint not found: {cfg.checkpoint}")
    bundle = model.WeightBundle.load(cfg.checkpoint)
    meta = bundle.metadata
    spec = model.build_classifier(int(meta.get("input_size", cfg.input_size)), len(catalog),
                                  meta.get("head_activation", cfg.head_activation))
    model.check_bundle(spec, bundle)
    tags = meta.get("tags")
    if tags is not None and list(tags) != list(catalog.tags):
        raise CheckpointMismatchError(f"checkpoint was trained for tags {tags}, catalog has {list(catalog.tags)}")
    return model.Classifier(spec, bundle)


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    dist = analysis.label_distribution(manifest)
    cooc = analysis.cooccurrence(manifest)
    written = analysis.emit_report(dist, cooc, cfg.output_dir, comment=_seed_line(cfg))
    for path in written:
        print(path)
    top = ", ".join(f"{t} ({c})" for t, c in dist.ranked()[:3])
    print(f"{dist.total_samples} chips; most frequent: {top}")
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    try:
        manifest = imaging.generate_synthetic_dataset(cfg.num_samples, cfg.num_classes, cfg.seed, cfg.output_dir)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(cfg.output_dir)
    (out / "dataset.cfg").write_text(
        f"# synthetic dataset, seed={cfg.seed}\n"
        "manifest = manifest.csv\n"
        "image_dir = images\n"
        "catalog = catalog.txt\n"
        f"seed = {cfg.seed}\n",
        encoding="utf-8",
    )
    print(f"wrote {len(manifest)} chips with tags {', '.join(manifest.catalog.tags)} to {out}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    tcfg = cfg.train_config()
    manifest = _manifest(cfg)
    spec = model.build_classifier(cfg.input_size, len(manifest.catalog), cfg.head_activation, tcfg.freeze_backbone)
    weights = model.load_backbone_weights(spec, cfg.weights or None, allow_random=cfg.allow_random_weights,
                                          seed=cfg.seed)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    # the split manifests land here; keep their tag list beside them
    (out / "catalog.txt").write_text("\n".join(manifest.catalog.tags) + "\n", encoding="utf-8")
    try:
        history = training.train(spec, weights, manifest, tcfg, out, resume=cfg.resume, workers=cfg.workers)
    except NumericalError as exc:
        print(f"error: {exc} (partial history in {out / 'history.csv'})", file=sys.stderr)
        return EXIT_RUNTIME
    summary = {"seed": cfg.seed, **training.summarize(history)}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    last = history.records[-1]
    print(f"trained {len(history)} epochs: train_loss {history.records[0].train_loss:.4f} -> {last.train_loss:.4f}, "
          f"val_acc {last.val_accuracy:.4f}; checkpoint {history.checkpoint_path}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    net = _load_checkpoint(cfg, manifest.catalog)
    probs, y, _ = training.predict_manifest(net, manifest, min(cfg.batch_size, 32), cfg.workers)
    report = metrics.evaluate(y, probs, cfg.threshold, cfg.beta, cfg.fbeta_form, manifest.catalog.tags)
    report.metadata = {
        "seed": cfg.seed,
        "manifest": str(cfg.manifest),
        "checkpoint": str(cfg.checkpoint),
        "binary_cross_entropy": binary_cross_entropy(y, probs),
        "categorical_cross_entropy": categorical_cross_entropy(y, probs),
    }
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "metrics_report.json")
    report.write_csv(out / "metrics_per_class.csv")
    agg = report.aggregates
    print(f"{report.num_samples} chips: elementwise accuracy {report.elementwise_accuracy:.4f}, "
          f"F{cfg.beta:g} micro {agg['micro']['fbeta']:.4f} / per-sample {agg['per_sample_mean']['fbeta']:.4f}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig, images) -> int:
    catalog = _catalog(cfg)
    net = _load_checkpoint(cfg, catalog)
    size = net.spec.input_size
    rows, ok = [], 0
    for path in images:
        chip_id = Path(path).stem
        try:
            img = imaging.resize_to_standard(imaging.load_image(path), size)
        except ImageDecodeError as exc:
            rows.append([chip_id, f"failed: {exc}", "", *[""] * len(catalog)])
            continue
        p = model.forward(net, img[None])[0]
        bits = metrics.threshold_predictions(p[None], cfg.threshold)[0]
        tags = [t for t in catalog.tags if t in labels.decode_vector(bits, catalog)]
        rows.append([chip_id, "ok", " ".join(tags), *(f"{v:.6f}" for v in p)])
        ok += 1
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "predictions.csv").open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_seed_line(cfg)} threshold={cfg.threshold}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_name", "status", "tags", *(f"p_{t}" for t in catalog.tags)])
        w.writerows(rows)
    failed = len(rows) - ok
    print(f"predicted {ok} images ({failed} failed) -> {out / 'predictions.csv'}")
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--output", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--threshold", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--fbeta-form", choices=metrics.FBETA_FORMS)
    common.add_argument("--freeze-backbone", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="amazon-landcover", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("analyze", parents=[common], help="label distribution and co-occurrence report")
    p.add_argument("--manifest")
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic labelled chip set")
    p.add_argument("--num-samples", type=int)
    p.add_argument("--num-classes", type=int)
    p = sub.add_parser("train", parents=[common], help="fine-tune the classifier")
    p.add_argument("--manifest")
    p.add_argument("--image-dir")
    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--image-dir")
    p = sub.add_parser("predict", parents=[common], help="tag individual images")
    p.add_argument("--checkpoint")
    p.add_argument("images", nargs="+")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        if args.command == "analyze":
            return cmd_analyze(cfg)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_predict(cfg, args.images)
    except (ConfigError, ManifestNotFoundError, MalformedRowError, UnknownTagError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointMismatchError, NumericalError, WeightShapeError, ShapeError, ImageDecodeError, IoError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
