"""Tag vocabulary, multi-hot encoding and manifest ingestion.

Manifests use the Planet chip-label layout: a CSV with header
``image_name,tags`` and space-separated tags in the second field. The chip
image for row ``img_0`` is ``<image_dir>/img_0.jpg``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    EmptyDatasetError,
    MalformedRowError,
    ManifestNotFoundError,
    ShapeError,
    UnknownTagError,
)

ATMOSPHERIC = "atmospheric"
COMMON_LAND = "common_land"
RARE_LAND = "rare_land"

ATMOSPHERIC_TAGS = frozenset({"clear", "cloudy", "haze", "partly_cloudy"})

# Spelling kept as distributed with the dataset, including "artisinal_mine".
_DEFAULT_GROUPS = {
    "agriculture": COMMON_LAND,
    "artisinal_mine": RARE_LAND,
    "bare_ground": RARE_LAND,
    "blooming": RARE_LAND,
    "blow_down": RARE_LAND,
    "clear": ATMOSPHERIC,
    "cloudy": ATMOSPHERIC,
    "conventional_mine": RARE_LAND,
    "cultivation": COMMON_LAND,
    "habitation": COMMON_LAND,
    "haze": ATMOSPHERIC,
    "partly_cloudy": ATMOSPHERIC,
    "primary": COMMON_LAND,
    "road": COMMON_LAND,
    "selective_logging": RARE_LAND,
    "slash_burn": RARE_LAND,
    "water": COMMON_LAND,
}

MANIFEST_HEADER = ("image_name", "tags")


@dataclass(frozen=True)
class LabelCatalog:
    """Ordered tag vocabulary with a group for every tag."""

    tags: tuple[str, ...]
    groups: Mapping[str, str] = field(compare=False)

    def __post_init__(self):
        tags = tuple(self.tags)
        object.__setattr__(self, "tags", tags)
        if len(set(tags)) != len(tags):
            raise ValueError("catalog tags must be unique")
        missing = [t for t in tags if t not in self.groups]
        if missing:
            raise ValueError(f"tags without a group: {missing}")
        object.__setattr__(self, "groups", dict((t, self.groups[t]) for t in tags))
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(tags)})

    def __len__(self):
        return len(self.tags)

    def __contains__(self, tag):
        return tag in self._index

    def __iter__(self):
        return iter(self.tags)

    def index(self, tag: str) -> int:
        try:
            return self._index[tag]
        except KeyError:
            raise UnknownTagError(tag) from None

    def group(self, name: str) -> tuple[str, ...]:
        return tuple(t for t in self.tags if self.groups[t] == name)

    def subset(self, tags: Iterable[str]) -> "LabelCatalog":
        """Catalog restricted to ``tags``, keeping this catalog's order."""
        wanted = set(tags)
        for t in wanted:
            self.index(t)
        kept = tuple(t for t in self.tags if t in wanted)
        return LabelCatalog(kept, {t: self.groups[t] for t in kept})


def default_catalog() -> LabelCatalog:
    """The 17 Planet Amazon tags in alphabetical order."""
    tags = tuple(sorted(_DEFAULT_GROUPS))
    return LabelCatalog(tags, _DEFAULT_GROUPS)


def encode_tags(tags: Iterable[str], catalog: LabelCatalog) -> np.ndarray:
    """Multi-hot uint8 vector aligned to ``catalog.tags``."""
    vec = np.zeros(len(catalog), dtype=np.uint8)
    for t in tags:
        vec[catalog.index(t)] = 1
    return vec


def decode_vector(vector, catalog: LabelCatalog) -> set[str]:
    v = np.asarray(vector)
    if v.ndim != 1 or v.shape[0] != len(catalog):
        raise ShapeError(f"expected vector of length {len(catalog)}, got shape {v.shape}")
    return {catalog.tags[i] for i in np.flatnonzero(v)}


def check_atmospheric(tags: Iterable[str]) -> bool:
    """True when exactly one atmospheric tag is present.

    Planet labels carry one weather tag per chip by convention. This is
    advisory only; callers decide whether to warn.
    """
    return len(ATMOSPHERIC_TAGS.intersection(tags)) == 1


@dataclass(frozen=True)
class SampleRecord:
    chip_id: str
    image_path: str
    tags: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "tags", frozenset(self.tags))
        if not self.tags:
            raise ValueError(f"record {self.chip_id!r} has no tags")


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[SampleRecord, ...]
    catalog: LabelCatalog

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        seen = set()
        for r in records:
            if r.chip_id in seen:
                raise ValueError(f"duplicate chip id {r.chip_id!r}")
            seen.add(r.chip_id)
            for t in r.tags:
                if t not in self.catalog:
                    raise UnknownTagError(t)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def chip_ids(self) -> list[str]:
        return [r.chip_id for r in self.records]

    def targets(self) -> np.ndarray:
        """N x K multi-hot target matrix."""
        out = np.zeros((len(self.records), len(self.catalog)), dtype=np.uint8)
        for i, r in enumerate(self.records):
            out[i] = encode_tags(r.tags, self.catalog)
        return out

    def select(self, indices) -> "DatasetManifest":
        return DatasetManifest(tuple(self.records[i] for i in indices), self.catalog)


def load_manifest(path, catalog: LabelCatalog, image_dir=None, *, warn_atmospheric=False) -> DatasetManifest:
    """Read a ``image_name,tags`` CSV into a manifest.

    Row numbers in errors are 1-based file line numbers (the header is
    line 1). ``image_dir`` defaults to the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestNotFoundError(f"manifest not found: {path}")
    image_dir = Path(image_dir) if image_dir is not None else path.parent

    records = []
    seen = set()
    suspicious = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise MalformedRowError(f"expected header 'image_name,tags', got {header!r}", row=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MalformedRowError(f"expected 2 fields, got {len(row)}", row=lineno)
            chip_id, tag_field = row[0].strip(), row[1].strip()
            if not chip_id:
                raise MalformedRowError("empty image_name", row=lineno)
            if chip_id in seen:
                raise MalformedRowError(f"duplicate image_name {chip_id!r}", row=lineno)
            tags = [t for t in tag_field.split(" ") if t]
            if not tags:
                raise MalformedRowError(f"no tags for {chip_id!r}", row=lineno)
            for t in tags:
                if t not in catalog:
                    raise UnknownTagError(t, row=lineno)
            if warn_atmospheric and not check_atmospheric(tags):
                suspicious += 1
            seen.add(chip_id)
            records.append(SampleRecord(chip_id, str(image_dir / f"{chip_id}.jpg"), frozenset(tags)))
    if suspicious:
        warnings.warn(f"{suspicious} rows do not carry exactly one atmospheric tag", stacklevel=2)
    return DatasetManifest(tuple(records), catalog)


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Write ``manifest`` in the ``image_name,tags`` format, tags in catalog order."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            ordered = [t for t in manifest.catalog.tags if t in r.tags]
            w.writerow([r.chip_id, " ".join(ordered)])


def split_train_val(manifest: DatasetManifest, val_fraction: float = 0.2, seed: int = 0):
    """Uniform random record-level split into (train, val).

    ``len(val) == round(val_fraction * N)`` with halves rounded up.
    """
    n = len(manifest)
    if n == 0:
        raise EmptyDatasetError("cannot split an empty manifest")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n_val = int(math.floor(val_fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return manifest.select(train_idx), manifest.select(val_idx)


def load_catalog_file(path, base: LabelCatalog | None = None) -> LabelCatalog:
    """Read a one-tag-per-line catalog file as a subset of ``base``."""
    base = base or default_catalog()
    tags = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    return base.subset(tags)
