"""VGG16 transfer-learning classifier.

The architecture is described declaratively by :class:`ModelSpec`
(shapes and parameter counts per layer), weights travel as a
:class:`WeightBundle` of named float32 arrays, and :class:`Classifier` is
the torch network that binds the two.

Weight layout follows the Keras convention: conv kernels are
``(kh, kw, in, out)`` and dense kernels ``(in, out)``. Flattening happens
in height-width-channel order, so a dense kernel trained elsewhere on the
same layout drops in unchanged.
"""

from __future__ import annotations

import io
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ShapeError, WeightShapeError

log = logging.getLogger(__name__)

VGG16_BLOCKS = ((64, 64), (128, 128), (256, 256, 256), (512, 512, 512), (512, 512, 512))
KERNEL_SIZE = 3
BN_EPSILON = 1e-3
BN_MOMENTUM = 0.1
PROB_EPSILON = 1e-7

LAYER_KINDS = ("input", "batch_norm", "conv_backbone", "flatten", "dense")

REGISTRY = {"vgg16-imagenet-notop": "vgg16-imagenet-notop.npz"}
WEIGHTS_ENV = "AMZ_WEIGHTS_DIR"
BUNDLE_FORMAT = "amazon-landcover-weights/1"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    output_shape: tuple[int, ...]
    param_count: int
    trainable: bool = True


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    head_activation: str = "sigmoid"
    blocks: tuple[tuple[int, ...], ...] = VGG16_BLOCKS

    @property
    def total_params(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.layers[0].output_shape

    @property
    def input_size(self) -> int:
        return self.input_shape[0]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].output_shape[0]

    def layer(self, kind: str) -> LayerSpec:
        for layer in self.layers:
            if layer.kind == kind:
                return layer
        raise KeyError(kind)

    @property
    def backbone_trainable(self) -> bool:
        return self.layer("conv_backbone").trainable

    def with_frozen_backbone(self, frozen: bool = True) -> "ModelSpec":
        layers = tuple(replace(l, trainable=not frozen) if l.kind == "conv_backbone" else l for l in self.layers)
        return replace(self, layers=layers)

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        """Every named array the network needs, in binding order."""
        shapes = {}
        bn = self.layer("batch_norm")
        c = bn.output_shape[-1]
        for part in ("gamma", "beta", "moving_mean", "moving_variance"):
            shapes[f"{bn.name}/{part}"] = (c,)
        backbone = self.layer("conv_backbone")
        for name, shape in conv_weight_shapes(self.blocks, c).items():
            shapes[f"{backbone.name}/{name}"] = shape
        dense = self.layer("dense")
        flat = self.layer("flatten").output_shape[0]
        shapes[f"{dense.name}/kernel"] = (flat, dense.output_shape[0])
        shapes[f"{dense.name}/bias"] = (dense.output_shape[0],)
        return shapes

    def summary(self) -> str:
        lines = [f"{'Layer':<24}{'Output Shape':<24}{'Param #':>12}"]
        for l in self.layers:
            shape = "(None, " + ", ".join(map(str, l.output_shape)) + ")"
            lines.append(f"{l.name:<24}{shape:<24}{l.param_count:>12}")
        lines.append(f"Total params: {self.total_params:,}")
        return "\n".join(lines)


def conv_weight_shapes(blocks, in_channels: int = 3) -> dict[str, tuple[int, ...]]:
    shapes = {}
    c_in = in_channels
    for b, widths in enumerate(blocks, start=1):
        for i, c_out in enumerate(widths, start=1):
            shapes[f"block{b}_conv{i}/kernel"] = (KERNEL_SIZE, KERNEL_SIZE, c_in, c_out)
            shapes[f"block{b}_conv{i}/bias"] = (c_out,)
            c_in = c_out
    return shapes


def param_count(kind: str, in_shape, out_shape, blocks=VGG16_BLOCKS) -> int:
    """Parameter count of one layer from its kind and shapes.

    Batch norm counts four arrays per channel (scale, shift, moving mean,
    moving variance). The conv backbone counts ``(k*k*c_in + 1) * c_out``
    over every 3x3 convolution in ``blocks``.
    """
    if kind in ("input", "flatten"):
        return 0
    if kind == "batch_norm":
        return 4 * int(in_shape[-1])
    if kind == "dense":
        units = int(out_shape[-1])
        return int(in_shape[-1]) * units + units
    if kind == "conv_backbone":
        total = 0
        c_in = int(in_shape[-1])
        for widths in blocks:
            for c_out in widths:
                total += (KERNEL_SIZE * KERNEL_SIZE * c_in + 1) * c_out
                c_in = c_out
        return total
    raise ConfigError(f"unknown layer kind {kind!r}")


def build_classifier(
    input_size: int = 128,
    num_classes: int = 17,
    head_activation: str = "sigmoid",
    freeze_backbone: bool = False,
    blocks=VGG16_BLOCKS,
) -> ModelSpec:
    """Input -> batch norm -> VGG16 conv stack -> flatten -> dense.

    With the defaults this is the 14,853,981-parameter network whose
    backbone emits a 4 x 4 x 512 map.
    """
    reductions = 2 ** len(blocks)
    if not isinstance(input_size, int) or input_size < reductions or input_size % reductions:
        raise ConfigError(f"input_size must be a positive multiple of {reductions}, got {input_size!r}")
    if not isinstance(num_classes, int) or num_classes < 1:
        raise ConfigError(f"num_classes must be a positive integer, got {num_classes!r}")
    if head_activation not in ("sigmoid", "softmax"):
        raise ConfigError(f"head_activation must be 'sigmoid' or 'softmax', got {head_activation!r}")

    in_shape = (input_size, input_size, 3)
    side = input_size // reductions
    feat_shape = (side, side, blocks[-1][-1])
    flat = (math.prod(feat_shape),)
    out = (num_classes,)
    layers = (
        LayerSpec("input_1", "input", in_shape, param_count("input", in_shape, in_shape)),
        LayerSpec("batch_normalization_1", "batch_norm", in_shape, param_count("batch_norm", in_shape, in_shape)),
        LayerSpec("vgg16", "conv_backbone", feat_shape, param_count("conv_backbone", in_shape, feat_shape, blocks),
                  trainable=not freeze_backbone),
        LayerSpec("flatten_1", "flatten", flat, param_count("flatten", feat_shape, flat)),
        LayerSpec("dense_1", "dense", out, param_count("dense", flat, out)),
    )
    return ModelSpec(layers, head_activation, tuple(tuple(b) for b in blocks))


# ---------------------------------------------------------------------------
# weight bundles


@dataclass(frozen=True)
class WeightBundle:
    """Named float32 arrays plus which of them came from a pretrained source."""

    arrays: dict
    pretrained: frozenset = frozenset()
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    @property
    def fresh(self) -> frozenset:
        return frozenset(self.arrays) - self.pretrained

    def save(self, path) -> None:
        """Write an uncompressed ``.npz`` archive.

        Each array is stored little-endian float32 under its layer name;
        the ``__manifest__`` entry is UTF-8 JSON listing names, shapes,
        dtype, the pretrained set and free-form metadata.
        """
        manifest = {
            "format": BUNDLE_FORMAT,
            "layers": [{"name": n, "shape": list(a.shape), "dtype": "<f4"} for n, a in self.arrays.items()],
            "pretrained": sorted(self.pretrained),
            "metadata": self.metadata,
        }
        payload = {n: np.ascontiguousarray(a, dtype="<f4") for n, a in self.arrays.items()}
        payload["__manifest__"] = np.frombuffer(json.dumps(manifest).encode("utf-8"), dtype=np.uint8)
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "WeightBundle":
        with np.load(path, allow_pickle=False) as data:
            if "__manifest__" not in data.files:
                raise ValueError(f"{path} is not a weight bundle (no __manifest__)")
            manifest = json.loads(bytes(data["__manifest__"]).decode("utf-8"))
            arrays = {}
            for entry in manifest["layers"]:
                arr = data[entry["name"]].astype(np.float32, copy=False)
                if list(arr.shape) != list(entry["shape"]):
                    raise WeightShapeError(entry["name"], entry["shape"], arr.shape)
                arrays[entry["name"]] = arr
        return cls(arrays, frozenset(manifest.get("pretrained", ())), manifest.get("metadata", {}))


def init_weights(spec: ModelSpec, seed: int = 0) -> WeightBundle:
    """Seeded random weights for every layer.

    Batch norm starts as the identity with unit moving variance. Conv
    kernels are He-normal over fan-out with zero bias; the dense head is
    Glorot-uniform with zero bias.
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in spec.weight_shapes().items():
        part = name.rsplit("/", 1)[1]
        if part in ("gamma", "moving_variance"):
            arr = np.ones(shape)
        elif part in ("beta", "moving_mean", "bias"):
            arr = np.zeros(shape)
        elif len(shape) == 4:
            kh, kw, _, c_out = shape
            arr = rng.normal(0.0, math.sqrt(2.0 / (kh * kw * c_out)), shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, shape)
        arrays[name] = arr.astype(np.float32)
    return WeightBundle(arrays)


def resolve_weight_source(source) -> Path:
    if source in REGISTRY:
        root = os.environ.get(WEIGHTS_ENV) or Path.home() / ".cache" / "amazon_landcover"
        return Path(root) / REGISTRY[source]
    return Path(source)


def load_backbone_weights(spec: ModelSpec, source=None, *, allow_random: bool = False, seed: int = 0) -> WeightBundle:
    """Bind pretrained backbone arrays; everything else starts fresh.

    ``source`` is a bundle path or a registry key (``"vgg16-imagenet-notop"``
    resolves under ``$AMZ_WEIGHTS_DIR``). Only ``<backbone>/...`` arrays are
    taken from the source. When the source is missing and ``allow_random``
    is set, the whole network is randomly initialised with a warning.
    """
    weights = init_weights(spec, seed)
    path = resolve_weight_source(source) if source else None
    if path is None or not path.is_file():
        if not allow_random:
            raise FileNotFoundError(f"backbone weights not found: {path if path else '(no source)'}")
        warnings.warn(
            f"no pretrained backbone at {path if path else '(no source)'}; using random initialisation",
            stacklevel=2,
        )
        return weights

    source_bundle = WeightBundle.load(path)
    backbone = spec.layer("conv_backbone").name
    expected = {n: s for n, s in spec.weight_shapes().items() if n.startswith(backbone + "/")}
    arrays = dict(weights.arrays)
    for name, shape in expected.items():
        if name not in source_bundle:
            raise WeightShapeError(name, shape, ())
        arr = source_bundle[name]
        if tuple(arr.shape) != shape:
            raise WeightShapeError(name, shape, arr.shape)
        arrays[name] = arr
    log.info("bound %d pretrained backbone arrays from %s", len(expected), path)
    return WeightBundle(arrays, frozenset(expected), {"backbone_source": str(path)})


def check_bundle(spec: ModelSpec, bundle: WeightBundle) -> None:
    """Raise :class:`WeightShapeError` unless ``bundle`` fits ``spec`` exactly."""
    for name, shape in spec.weight_shapes().items():
        if name not in bundle:
            raise WeightShapeError(name, shape, ())
        if tuple(bundle[name].shape) != shape:
            raise WeightShapeError(name, shape, bundle[name].shape)


def bundle_from_torchvision(state_dict, spec: ModelSpec | None = None) -> WeightBundle:
    """Convert a torchvision ``vgg16`` state dict into a backbone bundle.

    Only ``features.*`` convolutions are used; kernels are transposed from
    ``(out, in, kh, kw)`` to ``(kh, kw, in, out)``.
    """
    spec = spec or build_classifier()
    backbone = spec.layer("conv_backbone").name
    conv_keys = sorted(
        {int(k.split(".")[1]) for k in state_dict if k.startswith("features.") and k.endswith(".weight")}
    )
    names = [n[: -len("/kernel")] for n in conv_weight_shapes(spec.blocks) if n.endswith("/kernel")]
    if len(conv_keys) != len(names):
        raise ValueError(f"expected {len(names)} conv layers, found {len(conv_keys)}")
    arrays = {}
    for idx, name in zip(conv_keys, names):
        w = np.asarray(state_dict[f"features.{idx}.weight"], dtype=np.float32)
        arrays[f"{backbone}/{name}/kernel"] = np.ascontiguousarray(w.transpose(2, 3, 1, 0))
        arrays[f"{backbone}/{name}/bias"] = np.asarray(state_dict[f"features.{idx}.bias"], dtype=np.float32)
    return WeightBundle(arrays, frozenset(arrays), {"converted_from": "torchvision.vgg16"})


# ---------------------------------------------------------------------------
# torch network


class Classifier(nn.Module):
    """Torch network for a :class:`ModelSpec`.

    Accepts NHWC float batches on the raw 0..255 pixel scale and returns
    logits. Use :func:`forward` for probabilities.
    """

    def __init__(self, spec: ModelSpec, bundle: WeightBundle | None = None):
        super().__init__()
        self.spec = spec
        c = spec.input_shape[-1]
        self.bn = nn.BatchNorm2d(c, eps=BN_EPSILON, momentum=BN_MOMENTUM)
        self.convs = nn.ModuleList()
        self._conv_names = []
        c_in = c
        for b, widths in enumerate(spec.blocks, start=1):
            for i, c_out in enumerate(widths, start=1):
                self.convs.append(nn.Conv2d(c_in, c_out, KERNEL_SIZE, padding=1))
                self._conv_names.append((b, f"block{b}_conv{i}", i == len(widths)))
                c_in = c_out
        flat = spec.layer("flatten").output_shape[0]
        self.dense = nn.Linear(flat, spec.num_classes)
        self.load_bundle(bundle if bundle is not None else init_weights(spec))
        for p in self.convs.parameters():
            p.requires_grad_(spec.backbone_trainable)

    def _slots(self):
        """(bundle name, tensor, to_torch, from_torch) for every array."""
        bn_name = self.spec.layer("batch_norm").name
        backbone = self.spec.layer("conv_backbone").name
        dense = self.spec.layer("dense").name
        ident = (lambda a: a, lambda a: a)
        yield f"{bn_name}/gamma", self.bn.weight, *ident
        yield f"{bn_name}/beta", self.bn.bias, *ident
        yield f"{bn_name}/moving_mean", self.bn.running_mean, *ident
        yield f"{bn_name}/moving_variance", self.bn.running_var, *ident
        for conv, (_, name, _) in zip(self.convs, self._conv_names):
            yield f"{backbone}/{name}/kernel", conv.weight, (lambda a: a.transpose(3, 2, 0, 1)), (lambda a: a.transpose(2, 3, 1, 0))
            yield f"{backbone}/{name}/bias", conv.bias, *ident
        yield f"{dense}/kernel", self.dense.weight, (lambda a: a.T), (lambda a: a.T)
        yield f"{dense}/bias", self.dense.bias, *ident

    def load_bundle(self, bundle: WeightBundle) -> None:
        check_bundle(self.spec, bundle)
        with torch.no_grad():
            for name, tensor, to_torch, _ in self._slots():
                tensor.copy_(torch.from_numpy(np.ascontiguousarray(to_torch(bundle[name]), dtype=np.float32)))

    def to_bundle(self, pretrained=frozenset(), metadata=None) -> WeightBundle:
        arrays = {}
        for name, tensor, _, from_torch in self._slots():
            arrays[name] = np.ascontiguousarray(from_torch(tensor.detach().cpu().numpy()), dtype=np.float32)
        return WeightBundle(arrays, frozenset(pretrained), dict(metadata or {}))

    def named_trainables(self) -> dict[str, torch.Tensor]:
        """Bundle name -> parameter tensor for every trainable parameter."""
        return {name: t for name, t, _, _ in self._slots() if isinstance(t, nn.Parameter) and t.requires_grad}

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Flattened backbone output, HWC order."""
        h = self.bn(x.permute(0, 3, 1, 2))
        for conv, (_, _, last) in zip(self.convs, self._conv_names):
            h = torch.relu(conv(h))
            if last:
                h = nn.functional.max_pool2d(h, 2)
        return h.permute(0, 2, 3, 1).flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.dense(self.features(x))

    def activate(self, logits: torch.Tensor) -> torch.Tensor:
        if self.spec.head_activation == "softmax":
            return torch.softmax(logits, dim=1)
        return torch.sigmoid(logits)


def check_batch_shape(spec: ModelSpec, images) -> None:
    shape = tuple(np.shape(images))
    if len(shape) != 4 or shape[1:] != spec.input_shape:
        raise ShapeError(f"expected batch of shape (N, {', '.join(map(str, spec.input_shape))}), got {shape}")


def forward(model: Classifier, images, chunk: int = 32) -> np.ndarray:
    """Inference-mode class probabilities, ``N x K`` float64.

    Probabilities are clipped to ``[1e-7, 1 - 1e-7]`` so every value is
    strictly inside (0, 1).
    """
    check_batch_shape(model.spec, images)
    was_training = model.training
    model.eval()
    out = []
    try:
        with torch.no_grad():
            for start in range(0, len(images), chunk):
                x = torch.as_tensor(np.asarray(images[start:start + chunk], dtype=np.float32))
                logits = model(x).double()
                out.append(model.activate(logits).numpy())
    finally:
        model.train(was_training)
    if not out:
        return np.zeros((0, model.spec.num_classes))
    return np.clip(np.concatenate(out), PROB_EPSILON, 1.0 - PROB_EPSILON)


def describe_bundle(bundle: WeightBundle) -> str:
    buf = io.StringIO()
    for name, arr in bundle.arrays.items():
        origin = "pretrained" if name in bundle.pretrained else "fresh"
        buf.write(f"{name:<40}{str(arr.shape):<24}{origin}\n")
    return buf.getvalue()
