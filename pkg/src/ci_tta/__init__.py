"""Class-invariant test-time augmentation (CI-TTA) for image classifiers.

A test image is deformed into N class-preserving variants (elastic and
control-grid warps whose displacements are zero-mean Gaussian), every view is
classified, low-confidence predictions are filtered out, and the survivors'
softmax distributions are averaged — falling back to the original view's
distribution when nothing survives. The package also ships an ablation
harness (sweeps, confidence histograms, a synthetic two-domain dataset and a
tiny trainer), an HTTP service, and the ``ci-tta`` command line tool.
"""

from .deform import DeformationConfig, DisplacementField, SeededStream, make_variants, warp
from .ensemble import (
    EnsembleDecision,
    ScoredPrediction,
    aggregate,
    confidence,
    filter_by_confidence,
    softmax,
)
from .errors import (
    BackendFailure,
    CorruptImageError,
    CorruptModelError,
    FileFormatError,
    InvalidArgumentError,
    TrainingFailure,
)
from .inference import (
    Backend,
    BackendSpec,
    BuiltinBackend,
    ExternalBackend,
    Normalization,
    load_backend,
    load_builtin_model,
    save_builtin_model,
)
from .pipeline import ImageResult, PipelineConfig, infer_dataset, infer_one

__version__ = "0.1.0"

__all__ = [
    "DeformationConfig",
    "DisplacementField",
    "SeededStream",
    "make_variants",
    "warp",
    "EnsembleDecision",
    "ScoredPrediction",
    "aggregate",
    "confidence",
    "filter_by_confidence",
    "softmax",
    "BackendFailure",
    "CorruptImageError",
    "CorruptModelError",
    "FileFormatError",
    "InvalidArgumentError",
    "TrainingFailure",
    "Backend",
    "BackendSpec",
    "BuiltinBackend",
    "ExternalBackend",
    "Normalization",
    "load_backend",
    "load_builtin_model",
    "save_builtin_model",
    "ImageResult",
    "PipelineConfig",
    "infer_dataset",
    "infer_one",
    "__version__",
]
