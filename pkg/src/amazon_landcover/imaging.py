"""Chip loading, resizing to the network input size, batching, and a
synthetic chip generator for desk-scale runs.

Pixel values stay on the raw 0..255 scale. The classifier's input
batch-normalisation layer does the normalising.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .errors import ImageDecodeError, IoError
from .labels import DatasetManifest, LabelCatalog, SampleRecord, default_catalog, write_manifest

STANDARD_SIZE = 128


@dataclass(frozen=True)
class Batch:
    images: np.ndarray  # N x S x S x 3 float32
    targets: np.ndarray  # N x K uint8
    chip_ids: tuple[str, ...]

    def __len__(self):
        return self.images.shape[0]


def _to_rgb(img: Image.Image) -> Image.Image:
    if img.mode == "RGB":
        return img
    if img.mode in ("RGBA", "LA", "P", "PA", "CMYK", "YCbCr", "LAB", "HSV"):
        return img.convert("RGB")
    # single-band modes (L, I, F, 1, I;16): replicate the band
    band = np.asarray(img, dtype=np.float64)
    if img.mode in ("I", "I;16", "F") and band.max() > 255:
        band = band * (255.0 / band.max())
    band = np.clip(band, 0, 255).astype(np.uint8)
    return Image.fromarray(np.stack([band] * 3, axis=-1), "RGB")


def load_image(path) -> np.ndarray:
    """Decode an image file into an H x W x 3 float32 array in [0, 255].

    Grayscale is replicated across channels; alpha is dropped.
    """
    try:
        with Image.open(path) as img:
            img.load()
            rgb = _to_rgb(img)
            return np.asarray(rgb, dtype=np.float32)
    except (OSError, ValueError, SyntaxError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}", path=str(path)) from exc


def resize_to_standard(img: np.ndarray, size: int = STANDARD_SIZE) -> np.ndarray:
    """Bilinear resize to ``size x size x 3``.

    Uses PIL's bilinear filter on float32 planes, which widens its support
    when downsampling. The output is a convex combination of input pixels,
    so the value range is preserved. Inputs already at ``size`` are
    returned unchanged.
    """
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] == 4:
        arr = arr[:, :, :3]
    elif arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    if arr.shape[:2] == (size, size):
        return arr.copy()
    planes = [
        np.asarray(Image.fromarray(np.ascontiguousarray(arr[:, :, c]), "F").resize((size, size), Image.BILINEAR))
        for c in range(3)
    ]
    return np.clip(np.stack(planes, axis=-1), 0.0, 255.0).astype(np.float32)


def load_chip(record: SampleRecord, size: int = STANDARD_SIZE) -> np.ndarray:
    try:
        return resize_to_standard(load_image(record.image_path), size)
    except ImageDecodeError as exc:
        raise ImageDecodeError(f"chip {record.chip_id}: {exc}", path=exc.path, chip_id=record.chip_id) from exc


def batch_order(n: int, shuffle_seed=None) -> np.ndarray:
    if shuffle_seed is None:
        return np.arange(n)
    return np.random.default_rng(shuffle_seed).permutation(n)


def make_batches(
    manifest: DatasetManifest,
    batch_size: int = 128,
    shuffle_seed=None,
    size: int = STANDARD_SIZE,
    workers: int = 1,
) -> Iterator[Batch]:
    """Yield batches covering every record exactly once.

    ``shuffle_seed=None`` keeps manifest order. ``workers > 1`` decodes
    images in a thread pool; batch order does not depend on it.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = batch_order(len(manifest), shuffle_seed)
    targets = manifest.targets()
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            recs = [manifest.records[i] for i in idx]
            if pool is not None:
                images = list(pool.map(lambda r: load_chip(r, size), recs))
            else:
                images = [load_chip(r, size) for r in recs]
            yield Batch(np.stack(images), targets[idx], tuple(r.chip_id for r in recs))
    finally:
        if pool is not None:
            pool.shutdown()


# Distinct saturated colours; class k paints its grid cell with colour k.
_PALETTE = np.array([
    [230, 40, 40], [245, 220, 40], [40, 70, 235], [245, 245, 245],
    [240, 130, 20], [160, 40, 200], [20, 200, 220], [240, 90, 180],
    [120, 70, 20], [10, 10, 10], [150, 240, 90], [90, 90, 160],
    [200, 160, 120], [0, 130, 110], [250, 180, 180], [110, 0, 40],
    [180, 180, 0],
], dtype=np.float64)

_BACKGROUND = np.array([60, 100, 50], dtype=np.float64)


def signature_regions(num_classes: int, size: int = STANDARD_SIZE) -> list[tuple[slice, slice]]:
    """Pixel region painted by each class: one inset cell of a square grid."""
    side = math.ceil(math.sqrt(num_classes))
    cell = size // side
    inset = max(1, cell // 8)
    regions = []
    for k in range(num_classes):
        r, c = divmod(k, side)
        regions.append((slice(r * cell + inset, (r + 1) * cell - inset), slice(c * cell + inset, (c + 1) * cell - inset)))
    return regions


def render_chip(bits, rng: np.random.Generator, size: int = STANDARD_SIZE) -> np.ndarray:
    bits = np.asarray(bits)
    img = _BACKGROUND + rng.normal(0.0, 20.0, (size, size, 3))
    for k, (rs, cs) in enumerate(signature_regions(len(bits), size)):
        if bits[k]:
            patch = img[rs, cs]
            img[rs, cs] = _PALETTE[k] + rng.normal(0.0, 10.0, patch.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_synthetic_dataset(
    num_samples: int,
    num_classes: int,
    seed: int,
    out_dir,
    size: int = STANDARD_SIZE,
    catalog: LabelCatalog | None = None,
    presence: float = 0.3,
) -> DatasetManifest:
    """Write labelled synthetic JPG chips plus ``manifest.csv`` and ``catalog.txt``.

    Each class present in a chip paints a fixed grid cell with its own
    colour over a noisy green background. Class presence is Bernoulli
    with probability ``presence``; chips that draw no class get one class
    chosen uniformly. Tags are the first ``num_classes`` entries of
    ``catalog`` (default: the 17-tag catalog). Images land in
    ``out_dir/images``.
    """
    catalog = catalog or default_catalog()
    if not 1 <= num_classes <= len(catalog):
        raise ValueError(f"num_classes must be in [1, {len(catalog)}], got {num_classes}")
    if num_samples < max(num_classes, 1):
        raise ValueError(f"num_samples must be >= num_classes ({num_classes}), got {num_samples}")
    sub = catalog.subset(catalog.tags[:num_classes])
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    img_dir = out / "images"
    width = max(4, len(str(num_samples - 1)))
    records = []
    try:
        img_dir.mkdir(parents=True, exist_ok=True)
        for i in range(num_samples):
            bits = rng.random(num_classes) < presence
            if not bits.any():
                bits[rng.integers(num_classes)] = True
            chip = render_chip(bits, rng, size)
            chip_id = f"synth_{i:0{width}d}"
            path = img_dir / f"{chip_id}.jpg"
            Image.fromarray(chip, "RGB").save(path, format="JPEG", quality=95)
            records.append(SampleRecord(chip_id, str(path), frozenset(sub.tags[k] for k in np.flatnonzero(bits))))
        manifest = DatasetManifest(tuple(records), sub)
        write_manifest(manifest, out / "manifest.csv")
        (out / "catalog.txt").write_text("\n".join(sub.tags) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write synthetic dataset to {out}: {exc}") from exc
    return manifest

