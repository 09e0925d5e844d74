"""Gram-regularized co-training engine for instance object detection.

The package automates most of the labeling work for instance detection
datasets: a small set of key samples is chosen for human annotation, two
loosely coupled detector heads label the rest of the pool for each other,
and a gram-matrix loss keeps the heads from collapsing onto the same view.
The deep detector itself is pluggable; a deterministic synthetic detector
is bundled so the whole loop can be exercised and verified at desk scale.
"""

__version__ = "0.1.0"

from .data_model import (
    BoundingBox,
    LabelSet,
    LabelStore,
    Manifest,
    ManifestEntry,
    Sample,
    load_manifest,
    write_manifest,
)
from .detector import write_predictions
from .gram import FeatureMap, gram, gram_loss, mean_gram_loss, total_loss
from .orchestrator import Engine, RunConfig, load_run_config, run, run_modes
from .self_labeling import ScoringConfig, score_sample

__all__ = [
    "BoundingBox",
    "Engine",
    "FeatureMap",
    "LabelSet",
    "LabelStore",
    "Manifest",
    "ManifestEntry",
    "RunConfig",
    "Sample",
    "ScoringConfig",
    "gram",
    "gram_loss",
    "load_manifest",
    "load_run_config",
    "mean_gram_loss",
    "run",
    "run_modes",
    "score_sample",
    "total_loss",
    "write_manifest",
    "write_predictions",
    "__version__",
]
