"""
Label frequency and co-occurrence
=================================

Counts per tag and the tag-by-tag co-occurrence and phi-correlation
matrices. With the Planet training CSV, point ``MANIFEST`` at it; without
it a synthetic manifest with a Planet-like skew is used.
"""

# %%
import os
import tempfile

import numpy as np

from amazon_landcover.analysis import cooccurrence, emit_report, label_distribution
from amazon_landcover.labels import DatasetManifest, SampleRecord, default_catalog, load_manifest

catalog = default_catalog()
path = os.environ.get("MANIFEST")
if path:
    manifest = load_manifest(path, catalog)
else:
    rng = np.random.default_rng(0)
    weather = ["clear", "partly_cloudy", "haze", "cloudy"]
    land_rates = {"primary": 0.92, "agriculture": 0.3, "road": 0.2, "water": 0.18, "habitation": 0.09,
                  "cultivation": 0.11, "bare_ground": 0.02, "selective_logging": 0.008, "artisinal_mine": 0.008,
                  "blooming": 0.008, "slash_burn": 0.005, "blow_down": 0.002, "conventional_mine": 0.002}
    records = []
    for i in range(5000):
        w = weather[rng.choice(4, p=[0.7, 0.18, 0.07, 0.05])]
        tags = {w} if w == "cloudy" else {w, *(t for t, p in land_rates.items() if rng.random() < p)}
        records.append(SampleRecord(f"chip_{i}", "", tags))
    manifest = DatasetManifest(tuple(records), catalog)

# %%
dist = label_distribution(manifest)
for tag, count in dist.ranked():
    print(f"{tag:<20}{count:>7}")

# %%
# Raw pair counts and the phi correlation of the indicator columns.
cooc = cooccurrence(manifest)
p = cooc.labels.index("primary")
print("primary co-occurs with", np.count_nonzero(cooc.counts[p]), "of", len(cooc.labels), "tags")
a = cooc.labels.index("agriculture")
order = np.argsort(-cooc.correlation[a])
print("most correlated with agriculture:", [cooc.labels[i] for i in order[1:4]])

# %%
out = tempfile.mkdtemp()
for f in emit_report(dist, cooc, out):
    print(f)
