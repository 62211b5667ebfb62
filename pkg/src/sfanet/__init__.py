"""Spatial-frequency deepfake detection framework.

Backbone-agnostic models fusing spatial features with 2-D DFT magnitude and
phase features (whole-image, per-patch, and attention-fused variants), a
part-gated ensemble router, cluster-sequential training, and a full
threshold/ROC/EER/DCF evaluation protocol. Runs end to end at desk scale
with stub backbones and synthetic corpora.
"""

from .core import (
    BALANCED_THRESHOLD,
    DEFAULT_THRESHOLD,
    Category,
    DecisionPolicy,
    ImageSample,
    Label,
    Score,
    decide,
)

__all__ = [
    "BALANCED_THRESHOLD",
    "DEFAULT_THRESHOLD",
    "Category",
    "DecisionPolicy",
    "ImageSample",
    "Label",
    "Score",
    "decide",
]

__version__ = "0.1.0"
