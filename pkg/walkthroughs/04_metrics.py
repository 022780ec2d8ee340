"""
Scoring multi-label predictions
===============================

Precision, recall, accuracy and F-beta per tag, pooled (micro), averaged
over tags (macro) and averaged over chips (per-sample).
"""

# %%
import numpy as np

from amazon_landcover.metrics import ConfusionCounts, evaluate, fbeta, precision, recall

c = ConfusionCounts(tp=30, fp=5, tn=60, fn=5)
print(precision(c), recall(c))

# %%
# Two F-beta forms. They agree at beta = 1 and differ otherwise.
for beta in (1, 2):
    print(beta, fbeta(0.5, 1.0, beta, "paper"), fbeta(0.5, 1.0, beta, "standard"))

# %%
rng = np.random.default_rng(0)
y = (rng.random((200, 17)) < 0.25).astype(int)
noisy = np.clip(y + rng.normal(0, 0.35, y.shape), 0.001, 0.999)
report = evaluate(y, noisy, threshold=0.5, beta=2.0, form="standard")
for agg, vals in report.aggregates.items():
    print(f"{agg:<16}", {k: round(v, 4) for k, v in vals.items()})
print("subset accuracy", report.subset_accuracy)

# %%
# Lower thresholds trade precision for recall.
for t in (0.2, 0.5, 0.8):
    r = evaluate(y, noisy, threshold=t).aggregates["micro"]
    print(t, round(r["precision"], 3), round(r["recall"], 3), round(r["fbeta"], 3))
