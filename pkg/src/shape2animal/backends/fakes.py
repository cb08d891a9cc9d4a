"""Deterministic fake backends.

These are shipped code, not test stubs: the acceptance suite, the CLI's
offline mode, and the evaluation fixed-point checks all run on them. Every
fake is a pure function of its inputs (plus the explicit seed for the
generator), so repeated calls agree bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from ..errors import ConfigError
from ..imaging import BoundingBox, Mask, Raster
from .base import register

ANIMALS = ("turtle", "fox", "rabbit", "whale", "owl", "cat", "bear", "swan")


def _digest(*parts) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(p.tobytes())
        else:
            h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    return h.digest()


def _unit(digest: bytes) -> float:
    """Map a digest to [0, 1)."""
    return int.from_bytes(digest[:8], "big") / 2.0**64


def _seed64(digest: bytes) -> int:
    return int.from_bytes(digest[:8], "big")


@register("detect", "fake")
class SalientRegionDetector:
    """Boxes the brightest region; one box per vocabulary term.

    Foreground is luminance >= midpoint(min, max); the box is its bounding
    rectangle (whole image when the luminance is flat). Scores are derived
    from a hash of (image, term) and land in [0.5, 1), so different terms
    rank deterministically but non-trivially.
    """

    def detect(self, image: Raster, vocabulary):
        lum = image.luminance()
        lo, hi = float(lum.min()), float(lum.max())
        if hi - lo < 1e-12:
            box = (0.0, 0.0, float(image.width), float(image.height))
        else:
            fg = lum >= (lo + hi) / 2.0
            rows = np.flatnonzero(fg.any(axis=1))
            cols = np.flatnonzero(fg.any(axis=0))
            box = (float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))
        img_digest = _digest(image.data)
        out = []
        for term in vocabulary:
            score = 0.5 + 0.5 * _unit(_digest(img_digest, term))
            out.append(BoundingBox(*box, score=score, label=term))
        return out


@register("detect", "fake-fixed")
class FixedDetector:
    """Returns the configured boxes verbatim.

    Without configuration it returns one centered box covering the middle
    half of the image, score 0.9, labeled with the first vocabulary term.
    """

    def __init__(self, boxes=None):
        if boxes is not None:
            boxes = [b if isinstance(b, BoundingBox) else BoundingBox.from_dict(b) for b in boxes]
        self.boxes = boxes

    def detect(self, image: Raster, vocabulary):
        if self.boxes is not None:
            return list(self.boxes)
        w, h = image.width, image.height
        return [
            BoundingBox(w * 0.25, h * 0.25, w * 0.75, h * 0.75,
                        score=0.9, label=vocabulary[0])
        ]


@register("segment", "fake-boxfill")
class BoxFillSegmenter:
    """Fills the box interior; mask equals the box rectangle."""

    def segment(self, image: Raster, box: BoundingBox) -> Mask:
        fg = np.zeros((image.height, image.width), dtype=bool)
        rows, cols = box.pixel_slices(image.height, image.width)
        fg[rows, cols] = True
        return Mask.from_bool(fg)


@register("segment", "fake-ellipse")
class EllipseFillSegmenter:
    """Fills the ellipse inscribed in the box; silhouette-ish test masks."""

    def segment(self, image: Raster, box: BoundingBox) -> Mask:
        cy = (box.y0 + box.y1) / 2.0
        cx = (box.x0 + box.x1) / 2.0
        ry = (box.y1 - box.y0) / 2.0
        rx = (box.x1 - box.x0) / 2.0
        yy = (np.arange(image.height, dtype=np.float64) + 0.5 - cy)[:, None] / ry
        xx = (np.arange(image.width, dtype=np.float64) + 0.5 - cx)[None, :] / rx
        return Mask.from_bool(yy * yy + xx * xx <= 1.0)


@register("segment", "fake-empty")
class EmptySegmenter:
    """Always returns an all-background mask (error-path exercises)."""

    def segment(self, image: Raster, box: BoundingBox) -> Mask:
        return Mask.from_bool(np.zeros((image.height, image.width), dtype=bool))


@register("interpret", "fake")
class ShapeHashInterpreter:
    """Names an animal keyed by a hash of the silhouette rendering.

    Same mask, same answer. Honors the request's candidate count by walking
    the animal list from the hashed starting index.
    """

    def complete(self, request) -> str:
        digest = _digest(request.silhouette_image.data)
        start = _seed64(digest) % len(ANIMALS)
        n = getattr(request, "candidates", 1)
        entries = []
        for i in range(n):
            label = ANIMALS[(start + i) % len(ANIMALS)]
            entries.append({
                "label": label,
                "prompt": f"A detailed {label} filling the shape, its body matching "
                          f"the silhouette outline. No background.",
            })
        if n == 1:
            return json.dumps(entries[0])
        return json.dumps(entries)


@register("interpret", "fake-fixed")
class FixedInterpreter:
    """Returns a fixed response: either raw_text verbatim or a label/prompt pair."""

    def __init__(self, label="fox", prompt="A red fox curled to fill the shape. No background.",
                 raw_text=None):
        self.label = label
        self.prompt = prompt
        self.raw_text = raw_text

    def complete(self, request) -> str:
        if self.raw_text is not None:
            return self.raw_text
        n = getattr(request, "candidates", 1)
        entry = {"label": self.label, "prompt": self.prompt}
        return json.dumps(entry if n == 1 else [entry] * n)


@register("interpret", "fake-malformed")
class MalformedInterpreter:
    """Never produces parseable output (parse-retry exercises)."""

    def complete(self, request) -> str:
        return "Hmm, this could be almost anything. A bird, perhaps?"


@register("depth", "fake-luminance")
class LuminanceDepth:
    """Raw depth = channel-mean luminance of the input image."""

    def estimate(self, image: Raster) -> np.ndarray:
        return image.luminance()


@register("depth", "fake-constant")
class ConstantDepth:
    """Raw depth = constant plane (degenerate-normalization exercises)."""

    def __init__(self, value=1.0):
        if value < 0:
            raise ConfigError(f"depth value must be >= 0, got {value}")
        self.value = float(value)

    def estimate(self, image: Raster) -> np.ndarray:
        return np.full((image.height, image.width), self.value, dtype=np.float64)


@register("generate", "fake")
class SeededTextureGenerator:
    """Fills the mask with a seed-keyed texture; copies the input outside.

    Masked-region fill mixes the depth plane into seeded noise by the
    control strength a:

        fill = a * depth + (1 - a) * noise(seed, prompt)

    so a=0 is pure noise, a=1 is the (grayscale) depth plane, and any two
    strengths differ measurably inside the mask while unmasked pixels stay
    bit-identical to the input.
    """

    def generate(self, image: Raster, mask: Mask, depth, prompt: str, config) -> Raster:
        rng = np.random.default_rng([config.seed, _seed64(_digest(prompt))])
        noise = rng.random((image.height, image.width, 3))
        alpha = config.control_strength
        fill = alpha * depth.data[:, :, None] + (1.0 - alpha) * noise
        inside = (mask.data > 0.0)[:, :, None]
        return Raster(np.where(inside, fill, image.data))
