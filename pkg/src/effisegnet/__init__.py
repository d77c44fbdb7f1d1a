"""EfficientNet-backboned binary segmentation with full-scale additive fusion."""

from ._version import __version__
from .augment import AugmentationConfig, augment
from .data import (
    DatasetSplit,
    SampleIndex,
    SegmentationDataset,
    dataset_fingerprint,
    generate_split,
    index_dataset,
    load_split,
    preprocess,
    save_split,
)
from .encoder import Encoder, StagePyramid, build_encoder, export_backbone_weights
from .errors import (
    CheckpointError,
    ConfigurationError,
    ContractError,
    DataError,
    EffiSegNetError,
    NumericalError,
    ResourceError,
    ShapeError,
    WeightLoadError,
)
from .losses import bce_loss, combined_loss, dice_loss
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    confusion_counts,
    evaluate,
    per_image_overlap,
    precision_recall_f1,
)
from .model import (
    EffiSegNet,
    FullScaleFusion,
    FusionHeadConfig,
    GhostModule,
    ParamCount,
    StageProjection,
    build_model,
    count_parameters,
    upsample_to_input,
)
from .training import (
    TrainConfig,
    TrainingRun,
    find_max_batch_size,
    fit,
    load_checkpoint,
    load_model_from_checkpoint,
    lr_at_epoch,
    save_checkpoint,
)
from .variants import VARIANT_NAMES, VARIANTS, VariantConfig, get_variant

__all__ = [
    "__version__",
    "AugmentationConfig",
    "augment",
    "DatasetSplit",
    "SampleIndex",
    "SegmentationDataset",
    "dataset_fingerprint",
    "generate_split",
    "index_dataset",
    "load_split",
    "preprocess",
    "save_split",
    "Encoder",
    "StagePyramid",
    "build_encoder",
    "export_backbone_weights",
    "CheckpointError",
    "ConfigurationError",
    "ContractError",
    "DataError",
    "EffiSegNetError",
    "NumericalError",
    "ResourceError",
    "ShapeError",
    "WeightLoadError",
    "bce_loss",
    "combined_loss",
    "dice_loss",
    "ConfusionCounts",
    "MetricsReport",
    "confusion_counts",
    "evaluate",
    "per_image_overlap",
    "precision_recall_f1",
    "EffiSegNet",
    "FullScaleFusion",
    "FusionHeadConfig",
    "GhostModule",
    "ParamCount",
    "StageProjection",
    "build_model",
    "count_parameters",
    "upsample_to_input",
    "TrainConfig",
    "TrainingRun",
    "find_max_batch_size",
    "fit",
    "load_checkpoint",
    "load_model_from_checkpoint",
    "lr_at_epoch",
    "save_checkpoint",
    "VARIANT_NAMES",
    "VARIANTS",
    "VariantConfig",
    "get_variant",
]
