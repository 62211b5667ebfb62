"""Model architectures: spatial extractors, frequency encoders, fusion heads."""

from .attention import PatchAttention
from .bundle import (
    MODEL_NAMES,
    ModelBundle,
    ModelConfig,
    build_bundle,
    load_bundle,
    load_checkpoint,
    save_bundle,
    save_checkpoint,
)
from .encoders import (
    ConvFrequencyEncoder,
    FrequencyEncoder,
    MeanLogMagnitudeEncoder,
    encode_frequency,
)
from .extractors import (
    GlobalStatsExtractor,
    PatchProjectionExtractor,
    PatchStatsExtractor,
    SpatialExtractor,
    SwinExtractor,
    TinyConvExtractor,
    build_extractor,
    register_extractor,
)
from .models import (
    SCORE_EPS,
    BinaryClassifier,
    ClassificationHead,
    SFNet,
    SFPNet,
    SwinAttenNet,
    images_to_batch,
    spatial_features,
)

__all__ = [
    "MODEL_NAMES",
    "SCORE_EPS",
    "BinaryClassifier",
    "ClassificationHead",
    "ConvFrequencyEncoder",
    "FrequencyEncoder",
    "GlobalStatsExtractor",
    "MeanLogMagnitudeEncoder",
    "ModelBundle",
    "ModelConfig",
    "PatchAttention",
    "PatchProjectionExtractor",
    "PatchStatsExtractor",
    "SFNet",
    "SFPNet",
    "SpatialExtractor",
    "SwinAttenNet",
    "SwinExtractor",
    "TinyConvExtractor",
    "build_bundle",
    "build_extractor",
    "encode_frequency",
    "images_to_batch",
    "load_bundle",
    "load_checkpoint",
    "register_extractor",
    "save_bundle",
    "save_checkpoint",
    "spatial_features",
]
