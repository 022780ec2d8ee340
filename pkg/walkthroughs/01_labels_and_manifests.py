"""
Tags, multi-hot targets and manifests
=====================================

Every chip carries one or more of 17 tags. This walkthrough builds the
catalog, encodes a few tag sets and reads a small manifest in the Planet
``image_name,tags`` layout.
"""

# %%
import tempfile
from pathlib import Path

from amazon_landcover.labels import (
    ATMOSPHERIC,
    COMMON_LAND,
    RARE_LAND,
    decode_vector,
    default_catalog,
    encode_tags,
    load_manifest,
    split_train_val,
)

catalog = default_catalog()
print(len(catalog), "tags")
for group in (ATMOSPHERIC, COMMON_LAND, RARE_LAND):
    print(f"{group:>12}: {', '.join(catalog.group(group))}")

# %%
# Targets are multi-hot vectors in catalog (alphabetical) order.
v = encode_tags({"agriculture", "road", "primary"}, catalog)
print(v)
print(decode_vector(v, catalog))

# %%
# A manifest is a CSV; tags are space separated inside the second field.
tmp = Path(tempfile.mkdtemp())
(tmp / "train.csv").write_text(
    "image_name,tags\n"
    "train_0,haze primary\n"
    "train_1,agriculture clear primary water\n"
    "train_2,clear primary\n"
    "train_3,cloudy\n"
    "train_4,partly_cloudy primary road\n"
)
manifest = load_manifest(tmp / "train.csv", catalog, image_dir=tmp / "train-jpg")
print(manifest.records[1])
print(manifest.targets())

# %%
# 20% of the records are held out for validation.
train, val = split_train_val(manifest, 0.2, seed=0)
print("train:", train.chip_ids, "val:", val.chip_ids)
