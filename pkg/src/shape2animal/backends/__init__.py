"""Backend adapters: contracts, registry, retries, fakes, reference models."""

from .base import (
    CAPABILITIES,
    BackendDescriptor,
    RetryPolicy,
    RetryStats,
    all_descriptors,
    known_ids,
    register,
    resolve,
    with_retries,
)

# importing these modules registers their adapters
from . import fakes as _fakes  # noqa: E402,F401
from . import reference as _reference  # noqa: E402,F401

#: Backend ids used when the pipeline runs fully offline.
FAKE_BACKENDS = {
    "detect": "fake",
    "segment": "fake-ellipse",
    "interpret": "fake",
    "depth": "fake-luminance",
    "generate": "fake",
}

#: Backend ids mirroring the reference model stack.
REFERENCE_BACKENDS = {
    "detect": "grounding-dino",
    "segment": "sam",
    "interpret": "hosted-vlm",
    "depth": "midas",
    "generate": "sdxl-inpaint",
}

__all__ = [
    "CAPABILITIES",
    "FAKE_BACKENDS",
    "REFERENCE_BACKENDS",
    "BackendDescriptor",
    "RetryPolicy",
    "RetryStats",
    "all_descriptors",
    "known_ids",
    "register",
    "resolve",
    "with_retries",
]
