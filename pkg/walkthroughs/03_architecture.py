"""
The VGG16 transfer classifier
=============================

The network is described as a layer table before any tensors exist, so
shapes and parameter counts can be checked without building it.
"""

# %%
import numpy as np

from amazon_landcover.model import (
    Classifier,
    build_classifier,
    bundle_from_torchvision,
    forward,
    init_weights,
    param_count,
)

spec = build_classifier(input_size=128, num_classes=17)
print(spec.summary())

# %%
# Parameter accounting per layer kind.
print(param_count("batch_norm", (128, 128, 3), (128, 128, 3)))   # scale, shift, mean, variance per channel
print(param_count("dense", (8192,), (17,)))                       # 8192 * 17 + 17
print(param_count("conv_backbone", (128, 128, 3), (4, 4, 512)))   # 13 3x3 convolutions

# %%
# Other input sizes only change the backbone map and the head.
print(build_classifier(224, 17).summary())

# %%
# Inference on random weights: one probability per tag.
small = build_classifier(32, 17)
net = Classifier(small, init_weights(small, seed=0))
probs = forward(net, np.random.default_rng(0).uniform(0, 255, (2, 32, 32, 3)))
print(probs.shape, probs.min(), probs.max())

# %%
# Pretrained backbones: a torchvision VGG16 state dict converts to the
# bundle format; save it as $AMZ_WEIGHTS_DIR/vgg16-imagenet-notop.npz to
# make it the default training source.
try:
    import torchvision

    sd = torchvision.models.vgg16().state_dict()  # pass weights=... for ImageNet weights
    bundle = bundle_from_torchvision(sd)
    print(len(bundle.arrays), "backbone arrays, e.g.", bundle["vgg16/block5_conv3/kernel"].shape)
except ImportError:
    print("torchvision not installed")
