"""Silhouette extraction: open-vocabulary detection, box selection, masking.

The extraction runs detector -> argmax-by-confidence box selection ->
promptable segmenter, backend-agnostic on both ends. Selection is global
across all vocabulary terms: the single highest-confidence detection wins
regardless of which term produced it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import RetryPolicy, with_retries
from .errors import EmptyMaskError, MaskCoherenceError, NoDetectionError
from .imaging import BoundingBox, Mask, Raster


@dataclass(frozen=True)
class DetectionQuery:
    """Ordered open-vocabulary terms plus a minimum detection confidence."""

    vocabulary: tuple[str, ...] = ("stone", "cloud", "fire")
    confidence_floor: float = 0.3

    def __post_init__(self):
        terms = tuple(t.strip() for t in self.vocabulary)
        if not terms or any(not t for t in terms):
            raise ValueError("vocabulary must be a nonempty list of nonempty terms")
        if not 0.0 <= self.confidence_floor < 1.0:
            raise ValueError(
                f"confidence_floor must lie in [0, 1), got {self.confidence_floor}"
            )
        object.__setattr__(self, "vocabulary", terms)


@dataclass(frozen=True)
class SilhouetteResult:
    """Binary silhouette mask plus the detection that prompted it."""

    mask: Mask
    detection: BoundingBox
    query_term: str

    def __post_init__(self):
        if self.mask.is_empty:
            raise EmptyMaskError("silhouette mask has no foreground pixels")
        rows, cols = self.detection.pixel_slices(self.mask.height, self.mask.width)
        inside = int(np.count_nonzero(self.mask.data[rows, cols]))
        if inside < 0.5 * self.mask.foreground_count:
            raise MaskCoherenceError(
                f"detection box contains {inside} of {self.mask.foreground_count} "
                f"mask foreground pixels (< 50%)"
            )


def detect(image: Raster, query: DetectionQuery, detector,
           retry: RetryPolicy | None = None) -> list[BoundingBox]:
    """Query the detector and keep boxes at or above the confidence floor."""
    policy = retry or RetryPolicy()
    boxes = with_retries(lambda: detector.detect(image, query.vocabulary), policy)
    return [b for b in boxes if b.score >= query.confidence_floor]


def _selection_key(box: BoundingBox):
    # max score first; ties -> larger area, then smaller (y0, x0), then
    # smaller (y1, x1), then label, making the order total under permutation
    return (-box.score, -box.area, box.y0, box.x0, box.y1, box.x1, box.label)


def select_best(detections: list[BoundingBox]) -> BoundingBox:
    """The box with the highest detection confidence (deterministic ties)."""
    if not detections:
        raise NoDetectionError("no detections to select from")
    return min(detections, key=_selection_key)


def segment(image: Raster, box: BoundingBox, segmenter,
            retry: RetryPolicy | None = None) -> Mask:
    """Prompt the segmenter with a box; returns a nonempty binary mask."""
    if not box.within(image.height, image.width):
        raise ValueError(f"box {box} exceeds image bounds {image.size}")
    policy = retry or RetryPolicy()
    mask = with_retries(lambda: segmenter.segment(image, box), policy)
    if mask.size != image.size:
        raise MaskCoherenceError(
            f"segmenter returned mask of {mask.size} for image of {image.size}"
        )
    if mask.is_empty:
        raise EmptyMaskError("segmenter returned an empty mask")
    return mask


def extract_silhouette(image: Raster, query: DetectionQuery, detector, segmenter,
                       retry: RetryPolicy | None = None) -> SilhouetteResult:
    """detect -> select_best -> segment, packaged with the matched term."""
    boxes = detect(image, query, detector, retry)
    if not boxes:
        raise NoDetectionError(
            f"no detection at or above confidence {query.confidence_floor} "
            f"for terms {', '.join(query.vocabulary)}"
        )
    best = select_best(boxes)
    mask = segment(image, best, segmenter, retry)
    return SilhouetteResult(mask=mask, detection=best, query_term=best.label)
