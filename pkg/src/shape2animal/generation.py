"""Depth-estimated, silhouette-guided image generation.

Depth always comes from the full original image (never a crop) and is
min-max normalized before conditioning. The generator backend fills the
masked region from the rendering prompt while the depth control at strength
``control_strength`` keeps the scene layout; the generated image is used
as-is afterwards; any softness from strong guidance is compensated in the
blend stage, nowhere else.
"""

from __future__ import annotations

from dataclasses import dataclass

from .backends import RetryPolicy, with_retries
from .errors import ShapeMismatchError
from .imaging import DepthMap, Mask, Raster, normalize_depth

MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class GenerationConfig:
    """Knobs recorded with every generated image."""

    control_strength: float = 1.0
    seed: int = 0
    steps: int = 30
    guidance: float = 7.5

    def __post_init__(self):
        if not 0.0 <= self.control_strength <= 1.0:
            raise ValueError(
                f"control_strength must lie in [0, 1], got {self.control_strength}"
            )
        if not 0 <= self.seed <= MAX_SEED:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.guidance < 0:
            raise ValueError(f"guidance must be >= 0, got {self.guidance}")

    def to_dict(self) -> dict:
        return {
            "control_strength": self.control_strength,
            "seed": self.seed,
            "steps": self.steps,
            "guidance": self.guidance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationConfig":
        return cls(
            control_strength=float(d.get("control_strength", 1.0)),
            seed=int(d.get("seed", 0)),
            steps=int(d.get("steps", 30)),
            guidance=float(d.get("guidance", 7.5)),
        )


def estimate_depth(image: Raster, depth_backend,
                   retry: RetryPolicy | None = None) -> DepthMap:
    """Backend raw depth, min-max normalized onto [0, 1]."""
    policy = retry or RetryPolicy()
    raw = with_retries(lambda: depth_backend.estimate(image), policy)
    depth = normalize_depth(raw)
    if depth.size != image.size:
        raise ShapeMismatchError(
            f"depth backend returned {depth.size} for image of {image.size}"
        )
    return depth


def generate(image: Raster, mask: Mask, depth: DepthMap, concept, config: GenerationConfig,
             generator, retry: RetryPolicy | None = None) -> Raster:
    """Produce the generated image for the concept's rendering prompt."""
    if mask.size != image.size:
        raise ShapeMismatchError(f"mask has dimensions {mask.size}, expected {image.size}")
    if depth.size != image.size:
        raise ShapeMismatchError(f"depth has dimensions {depth.size}, expected {image.size}")
    policy = retry or RetryPolicy()
    out = with_retries(
        lambda: generator.generate(image, mask, depth, concept.render_prompt, config),
        policy,
    )
    if out.size != image.size:
        raise ShapeMismatchError(
            f"generator returned {out.size} for image of {image.size}"
        )
    return out
