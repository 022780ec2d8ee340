"""Label frequency and co-occurrence statistics over a manifest."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, IoError
from .labels import DatasetManifest

log = logging.getLogger(__name__)

REPORT_FILES = (
    "label_distribution.csv",
    "cooccurrence_counts.csv",
    "correlation.csv",
    "distribution.png",
    "correlation.png",
)


@dataclass(frozen=True)
class LabelDistribution:
    counts: dict
    total_samples: int

    def ranked(self) -> list[tuple[str, int]]:
        """Tags by descending count; ties broken by tag name."""
        return sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))


@dataclass(frozen=True)
class CooccurrenceMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray
    correlation: np.ndarray
    constant_labels: tuple[str, ...] = ()


def label_distribution(manifest: DatasetManifest) -> LabelDistribution:
    counts = {t: 0 for t in manifest.catalog.tags}
    for r in manifest.records:
        for t in r.tags:
            counts[t] += 1
    return LabelDistribution(counts, len(manifest))


def phi_correlation(indicators: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation between binary columns.

    Returns ``(corr, constant)`` where ``constant`` marks zero-variance
    columns; their rows and columns (diagonal included) are set to 0.
    """
    x = np.asarray(indicators, dtype=np.float64)
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered
    sd = np.sqrt(np.diag(cov))
    constant = sd == 0
    denom = np.outer(sd, sd)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, cov / np.where(denom > 0, denom, 1.0), 0.0)
    corr = np.clip(corr, -1.0, 1.0)
    idx = np.flatnonzero(~constant)
    corr[idx, idx] = 1.0
    return corr, constant


def cooccurrence(manifest: DatasetManifest) -> CooccurrenceMatrix:
    if len(manifest) == 0:
        raise EmptyDatasetError("co-occurrence needs at least one record")
    y = manifest.targets().astype(np.int64)
    counts = y.T @ y
    corr, constant = phi_correlation(y)
    labels = manifest.catalog.tags
    flagged = tuple(labels[i] for i in np.flatnonzero(constant))
    if flagged:
        log.info("zero-variance labels, correlation set to 0: %s", ", ".join(flagged))
    return CooccurrenceMatrix(labels, counts, corr, flagged)


def _write_matrix(path: Path, labels, matrix, fmt, comment):
    with path.open("w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tag", *labels])
        for tag, row in zip(labels, matrix):
            w.writerow([tag, *(fmt(v) for v in row)])


def _plot(dist: LabelDistribution, cooc: CooccurrenceMatrix, out: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ranked = dist.ranked()
    fig, ax = plt.subplots(figsize=(10, 5))
    ax.bar(range(len(ranked)), [c for _, c in ranked], color="tab:green")
    ax.set_xticks(range(len(ranked)))
    ax.set_xticklabels([t for t, _ in ranked], rotation=60, ha="right")
    ax.set_ylabel("chips")
    ax.set_title(f"Label distribution ({dist.total_samples} chips)")
    fig.tight_layout()
    fig.savefig(out / "distribution.png", dpi=100)
    plt.close(fig)

    n = len(cooc.labels)
    fig, ax = plt.subplots(figsize=(8, 7))
    im = ax.imshow(cooc.correlation, cmap="RdYlBu_r", vmin=-1, vmax=1)
    ax.set_xticks(range(n))
    ax.set_yticks(range(n))
    ax.set_xticklabels(cooc.labels, rotation=90)
    ax.set_yticklabels(cooc.labels)
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_title("Label correlation (phi)")
    fig.tight_layout()
    fig.savefig(out / "correlation.png", dpi=100)
    plt.close(fig)


def emit_report(dist: LabelDistribution, cooc: CooccurrenceMatrix, out_dir, comment=None) -> list[Path]:
    """Write the distribution/co-occurrence tables and their plots.

    The CSV tables are deterministic. Plotting failures are logged and
    skipped; table failures raise :class:`IoError`. ``comment`` is written
    as a leading ``#`` line in every table.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "label_distribution.csv").open("w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tag", "count"])
            for tag in cooc.labels:
                w.writerow([tag, dist.counts[tag]])
        _write_matrix(out / "cooccurrence_counts.csv", cooc.labels, cooc.counts, str, comment)
        _write_matrix(out / "correlation.csv", cooc.labels, cooc.correlation, lambda v: f"{v:.6f}", comment)
    except OSError as exc:
        raise IoError(f"cannot write analysis report to {out}: {exc}") from exc

    written = [out / name for name in REPORT_FILES[:3]]
    try:
        _plot(dist, cooc, out)
        written += [out / name for name in REPORT_FILES[3:]]
    except Exception as exc:  # plotting is best-effort
        log.warning("plot emission failed: %s", exc)
    return written
