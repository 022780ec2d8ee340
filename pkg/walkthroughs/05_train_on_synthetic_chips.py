"""
Training on synthetic chips
===========================

Synthetic chips paint one coloured block per present tag, so a working
pipeline must reach near-perfect accuracy. This runs at 32 px for speed;
set ``SIZE = 128`` for the standard input (about 0.3 s per chip per
epoch on one CPU core).
"""

# %%
import tempfile
from pathlib import Path

from amazon_landcover.imaging import generate_synthetic_dataset
from amazon_landcover.labels import split_train_val
from amazon_landcover.metrics import evaluate
from amazon_landcover.model import Classifier, build_classifier, load_backbone_weights
from amazon_landcover.training import TrainConfig, predict_manifest, train

SIZE = 32
work = Path(tempfile.mkdtemp())
manifest = generate_synthetic_dataset(120, 4, seed=7, out_dir=work / "data", size=SIZE)
print(manifest.catalog.tags)

# %%
spec = build_classifier(SIZE, len(manifest.catalog))
weights = load_backbone_weights(spec, "vgg16-imagenet-notop", allow_random=True, seed=0)
config = TrainConfig(epochs=10, batch_size=16, seed=0)
history = train(spec, weights, manifest, config, work / "run")
for r in history.records:
    print(f"epoch {r.epoch:>2}  train {r.train_loss:.4f}  val {r.val_loss:.4f}  val acc {r.val_accuracy:.3f}")

# %%
net = Classifier(spec, history.final_weights)
_, val = split_train_val(manifest, config.val_fraction, config.seed)
probs, y, _ = predict_manifest(net, val)
report = evaluate(y, probs, labels=manifest.catalog.tags)
print("val elementwise accuracy", report.elementwise_accuracy)
print("files:", sorted(p.name for p in (work / "run").iterdir()))
