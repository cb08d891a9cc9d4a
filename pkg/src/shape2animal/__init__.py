"""Shape2Animal: composite silhouette-conforming animals into photographs.

Pipeline stages: silhouette segmentation (detector + promptable segmenter),
shape-driven concept interpretation (multimodal LLM), depth-guided generation
(inpainting backend), and mask-weighted blending, plus an evaluation harness
for shape preservation and concept-study metrics.
"""

from .errors import (
    BackendError,
    BackendRateLimitError,
    BackendTimeoutError,
    BackendTransientError,
    BackendUnavailableError,
    ConceptParseError,
    ConfigError,
    DegenerateInputError,
    EmptyMaskError,
    MaskCoherenceError,
    NoDetectionError,
    NumericError,
    Shape2AnimalError,
    ShapeMismatchError,
    ValidationError,
)
from .imaging import (
    BoundingBox,
    DepthMap,
    Mask,
    Raster,
    binarize,
    blend_composite,
    feather_mask,
    iou,
    kernel_impl,
    normalize_depth,
    resize_to_working,
)

__version__ = "0.1.0"

__all__ = [
    "BackendError",
    "BackendRateLimitError",
    "BackendTimeoutError",
    "BackendTransientError",
    "BackendUnavailableError",
    "BoundingBox",
    "ConceptParseError",
    "ConfigError",
    "DegenerateInputError",
    "DepthMap",
    "EmptyMaskError",
    "Mask",
    "MaskCoherenceError",
    "NoDetectionError",
    "NumericError",
    "Raster",
    "Shape2AnimalError",
    "ShapeMismatchError",
    "ValidationError",
    "__version__",
    "binarize",
    "blend_composite",
    "feather_mask",
    "iou",
    "kernel_impl",
    "normalize_depth",
    "resize_to_working",
]
