"""Adam fine-tuning loop with per-epoch history and checkpoints."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, EmptyDatasetError, NumericalError
from .imaging import make_batches
from .labels import DatasetManifest, split_train_val, write_manifest
from .losses import EPSILON, binary_cross_entropy
from .model import Classifier, ModelSpec, WeightBundle, forward
from .metrics import threshold_predictions

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc", "seconds")
CHECKPOINT = "checkpoint.npz"
OPTIMIZER_STATE = "optimizer_state.npz"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 15
    val_fraction: float = 0.2
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    freeze_backbone: bool = False
    threshold: float = 0.5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ConfigError("adam betas must be in [0, 1)")
        if not self.adam_epsilon > 0:
            raise ConfigError("adam_epsilon must be > 0")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_accuracy: float
    val_accuracy: float
    wall_seconds: float
    num_batches: int = 0
    val_subset_accuracy: float = float("nan")

    def row(self):
        return [self.epoch, f"{self.train_loss:.8f}", f"{self.val_loss:.8f}",
                f"{self.train_accuracy:.8f}", f"{self.val_accuracy:.8f}", f"{self.wall_seconds:.3f}"]


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)
    final_weights: WeightBundle | None = None
    checkpoint_path: Path | None = None

    def __len__(self):
        return len(self.records)

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.records]

    def write_csv(self, path, comment=None) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_FIELDS)
            for r in self.records:
                w.writerow(r.row())

    @staticmethod
    def read_csv(path) -> list[EpochRecord]:
        with Path(path).open(encoding="utf-8") as fh:
            rows = [line for line in fh if not line.startswith("#")]
        out = []
        for row in csv.DictReader(rows):
            out.append(EpochRecord(int(row["epoch"]), float(row["train_loss"]), float(row["val_loss"]),
                                   float(row["train_acc"]), float(row["val_acc"]), float(row["seconds"])))
        return out

    def plot(self, path) -> None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        epochs = [r.epoch for r in self.records]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, [r.train_loss for r in self.records], marker="o", label="train")
        ax.plot(epochs, [r.val_loss for r in self.records], marker="s", label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("binary cross-entropy")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=100)
        plt.close(fig)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _sqrt(x):
    return x.sqrt() if isinstance(x, torch.Tensor) else np.sqrt(x)


def _finite(x) -> bool:
    if isinstance(x, torch.Tensor):
        return bool(torch.isfinite(x).all())
    return bool(np.all(np.isfinite(x)))


def _zeros_like(x):
    return torch.zeros_like(x) if isinstance(x, torch.Tensor) else np.zeros_like(np.asarray(x, dtype=np.float64))


def init_adam_state(weights: dict) -> AdamState:
    return AdamState(0, {k: _zeros_like(w) for k, w in weights.items()}, {k: _zeros_like(w) for k, w in weights.items()})


def adam_step(weights: dict, gradients: dict, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns ``(new_weights, new_state)``.

    Works on mappings of numpy arrays or torch tensors. Inputs are not
    modified. A non-finite gradient raises :class:`NumericalError`
    naming the layer before anything is updated.
    """
    for name, g in gradients.items():
        if not _finite(g):
            raise NumericalError(f"non-finite gradient in {name}", layer=name)
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.step + 1
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_w, new_m, new_v = {}, {}, {}
    for name, w in weights.items():
        g = gradients.get(name)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m, v = _zeros_like(w), _zeros_like(w)
        if g is None:
            new_w[name], new_m[name], new_v[name] = w, m, v
            continue
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        new_w[name] = w - config.learning_rate * m_hat / (_sqrt(v_hat) + config.adam_epsilon)
        new_m[name], new_v[name] = m, v
    return new_w, AdamState(t, new_m, new_v)


def _save_adam(state: AdamState, path: Path, epoch: int) -> None:
    payload = {"__step__": np.array(state.step), "__epoch__": np.array(epoch)}
    for k in state.m:
        payload[f"m/{k}"] = state.m[k].cpu().numpy()
        payload[f"v/{k}"] = state.v[k].cpu().numpy()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    tmp.replace(path)


def _load_adam(path: Path) -> tuple[AdamState, int]:
    with np.load(path) as data:
        state = AdamState(int(data["__step__"]))
        for key in data.files:
            if key.startswith("m/"):
                state.m[key[2:]] = torch.from_numpy(data[key])
            elif key.startswith("v/"):
                state.v[key[2:]] = torch.from_numpy(data[key])
        return state, int(data["__epoch__"])


# ---------------------------------------------------------------------------
# loops


def torch_bce(probs: torch.Tensor, targets: torch.Tensor, eps: float = EPSILON) -> torch.Tensor:
    """Torch twin of :func:`binary_cross_entropy` for autograd."""
    p = probs.clamp(eps, 1.0 - eps)
    return -(targets * torch.log(p) + (1.0 - targets) * torch.log1p(-p)).mean()


def training_loss(model: Classifier, logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy for one batch, differentiable.

    A sigmoid head is scored straight from the logits. Clipping the
    probabilities first would zero the gradient of any saturated tag,
    so a confidently wrong output could never be pulled back.
    """
    if model.spec.head_activation == "sigmoid":
        return torch.nn.functional.binary_cross_entropy_with_logits(logits, targets)
    return torch_bce(model.activate(logits), targets)


def predict_manifest(model: Classifier, manifest: DatasetManifest, batch_size: int = 32, workers: int = 1):
    """Inference over a manifest in file order: ``(probs, targets, chip_ids)``."""
    probs, targets, ids = [], [], []
    size = model.spec.input_size
    for batch in make_batches(manifest, batch_size, None, size=size, workers=workers):
        probs.append(forward(model, batch.images, chunk=batch_size))
        targets.append(batch.targets)
        ids.extend(batch.chip_ids)
    k = model.spec.num_classes
    if not probs:
        return np.zeros((0, k)), np.zeros((0, k), dtype=np.uint8), ids
    return np.concatenate(probs), np.concatenate(targets), ids


def score_manifest(model: Classifier, manifest: DatasetManifest, threshold: float = 0.5, batch_size: int = 32):
    """``(loss, elementwise accuracy, subset accuracy)`` in inference mode."""
    if len(manifest) == 0:
        return float("nan"), float("nan"), float("nan")
    probs, y, _ = predict_manifest(model, manifest, batch_size)
    y_hat = threshold_predictions(probs, threshold)
    return (binary_cross_entropy(y, probs), float(np.mean(y_hat == y)),
            float(np.mean(np.all(y_hat == y, axis=1))))


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


def train(
    spec: ModelSpec,
    weights: WeightBundle,
    manifest: DatasetManifest,
    config: TrainConfig,
    out_dir=None,
    *,
    resume: bool = False,
    eval_batch_size: int | None = None,
    workers: int = 1,
) -> TrainingHistory:
    """Fit the classifier on ``manifest`` with a held-out validation split.

    Each epoch shuffles the training split with a seed derived from
    ``(config.seed, epoch)``, applies :func:`adam_step` per batch, then
    scores the validation split in inference mode. With ``out_dir`` set,
    ``history.csv``, ``checkpoint.npz``, ``optimizer_state.npz`` and the
    split manifests are rewritten after every epoch and ``loss_curve.png``
    at the end; ``resume=True`` continues from those files.

    On a non-finite loss or gradient the history so far is written and
    :class:`NumericalError` is raised with ``.history`` attached.
    """
    torch.manual_seed(config.seed)
    spec = spec.with_frozen_backbone(config.freeze_backbone)
    if spec.num_classes != len(manifest.catalog):
        raise ConfigError(f"model has {spec.num_classes} outputs but catalog has {len(manifest.catalog)} tags")
    train_set, val_set = split_train_val(manifest, config.val_fraction, config.seed)
    if len(train_set) == 0:
        raise EmptyDatasetError("training split is empty")
    eval_bs = eval_batch_size or min(config.batch_size, 32)

    out = Path(out_dir) if out_dir is not None else None
    comment = f"seed={config.seed}"
    model = Classifier(spec, weights)
    history = TrainingHistory()
    state = None
    start_epoch = 1
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(train_set, out / "train_manifest.csv")
        write_manifest(val_set, out / "val_manifest.csv")
        if resume and (out / CHECKPOINT).is_file() and (out / OPTIMIZER_STATE).is_file():
            model.load_bundle(WeightBundle.load(out / CHECKPOINT))
            state, done = _load_adam(out / OPTIMIZER_STATE)
            history.records = TrainingHistory.read_csv(out / "history.csv")[:done]
            start_epoch = done + 1
            log.info("resuming after epoch %d", done)

    params = model.named_trainables()
    if state is None:
        state = init_adam_state({k: p.detach() for k, p in params.items()})
    metadata = {"tags": list(manifest.catalog.tags), "input_size": spec.input_size,
                "head_activation": spec.head_activation, "seed": config.seed}

    def finish():
        history.final_weights = model.to_bundle(weights.pretrained, metadata)
        if out is not None:
            history.write_csv(out / "history.csv", comment)
            try:
                history.plot(out / "loss_curve.png")
            except Exception as exc:  # plotting is best-effort
                log.warning("loss curve not written: %s", exc)

    for epoch in range(start_epoch, config.epochs + 1):
        t0 = time.perf_counter()
        model.train()
        loss_sum, correct, seen, batches = 0.0, 0, 0, 0
        for batch in make_batches(train_set, config.batch_size, _epoch_seed(config.seed, epoch),
                                  size=spec.input_size, workers=workers):
            x = torch.from_numpy(batch.images)
            y = torch.from_numpy(batch.targets.astype(np.float32))
            logits = model(x)
            loss = training_loss(model, logits, y)
            if not torch.isfinite(loss):
                finish()
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {batches + 1}", history=history)
            model.zero_grad(set_to_none=True)
            loss.backward()
            current = {k: p.detach() for k, p in params.items()}
            grads = {k: p.grad.detach() for k, p in params.items() if p.grad is not None}
            try:
                new_w, state = adam_step(current, grads, state, config)
            except NumericalError as exc:
                exc.history = history
                finish()
                raise
            with torch.no_grad():
                for k, p in params.items():
                    p.copy_(new_w[k])
            n = len(batch)
            loss_sum += loss.item() * n
            correct += int(((model.activate(logits.detach()) >= config.threshold).to(y.dtype) == y).sum())
            seen += n
            batches += 1

        val_loss, val_acc, val_subset = score_manifest(model, val_set, config.threshold, eval_bs)
        rec = EpochRecord(epoch, loss_sum / seen, val_loss, correct / (seen * spec.num_classes), val_acc,
                          time.perf_counter() - t0, batches, val_subset)
        history.records.append(rec)
        log.info("epoch %d/%d train_loss=%.4f val_loss=%.4f train_acc=%.4f val_acc=%.4f (%.1fs)",
                 epoch, config.epochs, rec.train_loss, rec.val_loss, rec.train_accuracy, rec.val_accuracy,
                 rec.wall_seconds)
        if out is not None:
            model.to_bundle(weights.pretrained, {**metadata, "epoch": epoch}).save(out / CHECKPOINT)
            _save_adam(state, out / OPTIMIZER_STATE, epoch)
            history.write_csv(out / "history.csv", comment)

    finish()
    if out is not None:
        history.checkpoint_path = out / CHECKPOINT
    return history


def config_from_mapping(values: dict) -> TrainConfig:
    """Build a :class:`TrainConfig` from a dict, ignoring unknown keys."""
    names = {f.name: f.type for f in fields(TrainConfig)}
    kwargs = {k: v for k, v in values.items() if k in names}
    return TrainConfig(**kwargs)


def summarize(history: TrainingHistory) -> dict:
    if not history.records:
        return {}
    last = history.records[-1]
    return {**asdict(last), "epochs_run": len(history.records),
            "loss_ratio": last.train_loss / history.records[0].train_loss if history.records[0].train_loss else math.nan}
