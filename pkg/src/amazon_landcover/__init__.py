"""Multi-label land-cover tagging of Amazon satellite chips.

Pipeline pieces: tag catalog and manifests (:mod:`.labels`), label
statistics (:mod:`.analysis`), chip loading and synthetic data
(:mod:`.imaging`), the VGG16 classifier (:mod:`.model`), losses and the
Adam loop (:mod:`.losses`, :mod:`.training`) and scoring (:mod:`.metrics`).
"""

from .analysis import cooccurrence, emit_report, label_distribution
from .errors import (
    ConfigError,
    EmptyDatasetError,
    ImageDecodeError,
    IoError,
    MalformedRowError,
    ManifestNotFoundError,
    NumericalError,
    ShapeError,
    UnknownTagError,
    WeightShapeError,
)
from .imaging import generate_synthetic_dataset, load_image, make_batches, resize_to_standard
from .labels import (
    DatasetManifest,
    LabelCatalog,
    SampleRecord,
    decode_vector,
    default_catalog,
    encode_tags,
    load_manifest,
    split_train_val,
)
from .losses import binary_cross_entropy, categorical_cross_entropy
from .metrics import confusion_counts, evaluate, fbeta, threshold_predictions
from .model import Classifier, ModelSpec, WeightBundle, build_classifier, forward, load_backbone_weights, param_count
from .training import TrainConfig, TrainingHistory, adam_step, train

__version__ = "0.1.0"
