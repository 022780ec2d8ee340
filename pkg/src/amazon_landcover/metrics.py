"""Confusion counts, precision/recall/accuracy and F-beta for multi-label
predictions, with micro, macro and per-sample aggregation.

Zero denominators yield 0 and are recorded as degenerate rather than
raised: rare classes routinely have no predicted or no true positives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError

METRICS = ("precision", "recall", "accuracy", "fbeta")
FBETA_FORMS = ("paper", "standard")


@dataclass(frozen=True)
class ConfusionCounts:
    """TP/FP/TN/FN, either scalars or per-class arrays."""

    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def pooled(self) -> "ConfusionCounts":
        return ConfusionCounts(*(int(np.sum(a)) for a in (self.tp, self.fp, self.tn, self.fn)))

    def __getitem__(self, k) -> "ConfusionCounts":
        return ConfusionCounts(*(int(np.asarray(a)[k]) for a in (self.tp, self.fp, self.tn, self.fn)))


def _ratio(num, den, return_flag):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    degenerate = den == 0
    value = np.divide(num, den, out=np.zeros(np.broadcast(num, den).shape), where=~degenerate)
    if value.ndim == 0:
        value, degenerate = float(value), bool(degenerate)
    return (value, degenerate) if return_flag else value


def precision(c: ConfusionCounts, return_flag: bool = False):
    return _ratio(c.tp, np.add(c.tp, c.fp), return_flag)


def recall(c: ConfusionCounts, return_flag: bool = False):
    return _ratio(c.tp, np.add(c.tp, c.fn), return_flag)


def accuracy(c: ConfusionCounts, return_flag: bool = False):
    return _ratio(np.add(c.tp, c.tn), c.total, return_flag)


def fbeta(p, r, beta: float = 2.0, form: str = "standard", return_flag: bool = False):
    """F-beta from precision and recall.

    ``form="standard"``: ``(1 + b^2) P R / (b^2 P + R)``.
    ``form="paper"``: the weighted harmonic mean
    ``1 / ((1/(b+1)) / P + (b/(b+1)) / R)``, i.e. ``(b + 1) P R / (b P + R)``.
    Both reduce to F1 at ``beta=1``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if form == "standard":
        w = beta * beta
    elif form == "paper":
        w = beta
    else:
        raise ValueError(f"form must be one of {FBETA_FORMS}, got {form!r}")
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return _ratio((1.0 + w) * p * r, w * p + r, return_flag)


def threshold_predictions(probs, threshold: float = 0.5) -> np.ndarray:
    """1 where ``prob >= threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return (np.asarray(probs) >= threshold).astype(np.uint8)


def _check(y_true, y_hat):
    y = np.asarray(y_true).astype(bool)
    h = np.asarray(y_hat).astype(bool)
    if y.shape != h.shape:
        raise ShapeError(f"y_true shape {y.shape} != predictions shape {h.shape}")
    if y.ndim != 2:
        raise ShapeError(f"expected N x K matrices, got shape {y.shape}")
    return y, h


def confusion_counts(y_true, y_hat, axis: int = 0) -> ConfusionCounts:
    """Per-class counts (``axis=0``) or per-sample counts (``axis=1``)."""
    y, h = _check(y_true, y_hat)
    return ConfusionCounts(
        tp=np.sum(y & h, axis=axis),
        fp=np.sum(~y & h, axis=axis),
        tn=np.sum(~y & ~h, axis=axis),
        fn=np.sum(y & ~h, axis=axis),
    )


def _all_metrics(c: ConfusionCounts, beta, form):
    p, p_deg = precision(c, True)
    r, r_deg = recall(c, True)
    a, a_deg = accuracy(c, True)
    f, f_deg = fbeta(p, r, beta, form, True)
    return {"precision": p, "recall": r, "accuracy": a, "fbeta": f}, {
        "precision": p_deg, "recall": r_deg, "accuracy": a_deg, "fbeta": f_deg,
    }


@dataclass
class MetricsReport:
    per_class: dict
    aggregates: dict
    threshold: float
    beta: float
    fbeta_form: str
    counts: dict = field(default_factory=dict)
    degenerate: dict = field(default_factory=dict)
    subset_accuracy: float = 0.0
    num_samples: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def elementwise_accuracy(self) -> float:
        return self.aggregates["micro"]["accuracy"]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "beta": self.beta,
            "fbeta_form": self.fbeta_form,
            "num_samples": self.num_samples,
            "elementwise_accuracy": self.elementwise_accuracy,
            "subset_accuracy": self.subset_accuracy,
            "aggregates": self.aggregates,
            "per_class": self.per_class,
            "counts": self.counts,
            "degenerate": self.degenerate,
            **({"metadata": self.metadata} if self.metadata else {}),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n", encoding="utf-8")

    def write_csv(self, path) -> None:
        lines = ["tag,tp,fp,tn,fn," + ",".join(METRICS)]
        for tag, m in self.per_class.items():
            c = self.counts[tag]
            lines.append(",".join([tag, *(str(c[k]) for k in ("tp", "fp", "tn", "fn")), *(f"{m[k]:.6f}" for k in METRICS)]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def evaluate(y_true, probs, threshold: float = 0.5, beta: float = 2.0, form: str = "standard", labels=None) -> MetricsReport:
    """Score probabilities against multi-hot targets.

    micro: pool counts over every (sample, class) decision, then compute.
    macro: unweighted mean of per-class values.
    per_sample_mean: compute each metric over one sample's K decisions,
    then average over samples.
    """
    y_hat = threshold_predictions(probs, threshold)
    y, h = _check(y_true, y_hat)
    n, k = y.shape
    labels = list(labels) if labels is not None else [str(i) for i in range(k)]
    if len(labels) != k:
        raise ShapeError(f"{len(labels)} labels for {k} columns")

    per_class_counts = confusion_counts(y, h, axis=0)
    values, flags = _all_metrics(per_class_counts, beta, form)
    per_class = {t: {m: float(values[m][i]) for m in METRICS} for i, t in enumerate(labels)}
    counts = {t: {"tp": int(per_class_counts.tp[i]), "fp": int(per_class_counts.fp[i]),
                  "tn": int(per_class_counts.tn[i]), "fn": int(per_class_counts.fn[i])}
              for i, t in enumerate(labels)}
    degenerate = {m: [t for i, t in enumerate(labels) if flags[m][i]] for m in METRICS}

    micro_vals, micro_flags = _all_metrics(per_class_counts.pooled(), beta, form)
    sample_vals, sample_flags = _all_metrics(confusion_counts(y, h, axis=1), beta, form)
    aggregates = {
        "micro": {m: float(micro_vals[m]) for m in METRICS},
        "macro": {m: float(np.mean(values[m])) if k else 0.0 for m in METRICS},
        "per_sample_mean": {m: float(np.mean(sample_vals[m])) if n else 0.0 for m in METRICS},
    }
    degenerate["micro"] = [m for m in METRICS if micro_flags[m]]
    degenerate["per_sample_count"] = {m: int(np.sum(sample_flags[m])) for m in METRICS}
    subset = float(np.mean(np.all(y == h, axis=1))) if n else 0.0
    return MetricsReport(per_class, aggregates, float(threshold), float(beta), form,
                         counts, degenerate, subset, n)
