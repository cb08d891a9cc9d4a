"""Raster mathematics: image/mask/depth types, blending, IoU, resizing.

All operations are pure functions on immutable inputs (arrays are stored
read-only), so they are safe to call concurrently. The per-pixel kernels run
in a compiled Cython core when available and fall back to numpy otherwise;
set ``S2A_NO_EXT=1`` to force the numpy path.

The blend follows the three-term composite

    out = opacity*(M*gen) + (1-opacity)*(M*orig) + (1-M)*orig

so pixels with zero mask weight are copied from ``orig`` bit-for-bit.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import (
    ConfigError,
    DegenerateInputError,
    NumericError,
    ShapeMismatchError,
)

if os.environ.get("S2A_NO_EXT"):
    from . import _imaging_np as _kern
else:
    try:
        from . import _imaging_ext as _kern  # type: ignore[attr-defined]
    except ImportError:
        from . import _imaging_np as _kern


def kernel_impl() -> str:
    """Which kernel backend is active: "compiled" or "numpy"."""
    return _kern.IMPL


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _check_unit_range(arr: np.ndarray, what: str) -> None:
    if arr.size == 0:
        raise ValueError(f"{what} has zero pixels")
    lo = float(arr.min())
    hi = float(arr.max())
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError(f"{what} contains non-finite values")
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{what} values must lie in [0, 1], got [{lo}, {hi}]")


@dataclass(frozen=True)
class Raster:
    """H x W x 3 image with float64 channel intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"raster must be (H, W, 3), got {arr.shape}")
        _check_unit_range(arr, "raster")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def full(cls, height: int, width: int, value: float = 0.0) -> "Raster":
        return cls(np.full((height, width, 3), value, dtype=np.float64))

    def luminance(self) -> np.ndarray:
        """Plain channel mean, H x W in [0, 1]."""
        return self.data.mean(axis=2)


@dataclass(frozen=True)
class Mask:
    """H x W per-pixel weights in [0, 1]; binary masks hold only {0, 1}."""

    data: np.ndarray
    kind: str = "binary"

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"mask must be (H, W), got {arr.shape}")
        _check_unit_range(arr, "mask")
        if self.kind not in ("binary", "soft"):
            raise ValueError(f"mask kind must be binary or soft, got {self.kind!r}")
        if self.kind == "binary" and not np.all((arr == 0.0) | (arr == 1.0)):
            raise ValueError("binary mask contains values outside {0, 1}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.data))

    @property
    def is_empty(self) -> bool:
        return self.foreground_count == 0

    @classmethod
    def from_bool(cls, fg: np.ndarray) -> "Mask":
        return cls(np.asarray(fg, dtype=bool).astype(np.float64), kind="binary")


@dataclass(frozen=True)
class DepthMap:
    """H x W normalized depth in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"depth map must be (H, W), got {arr.shape}")
        _check_unit_range(arr, "depth map")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel box [x0, x1) x [y0, y1) with detection score and term."""

    x0: float
    y0: float
    x1: float
    y1: float
    score: float = 1.0
    label: str = ""

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"box corners must satisfy x0 < x1 and y0 < y1: {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"box corners must be non-negative: {self}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"box score must lie in [0, 1], got {self.score}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def pixel_slices(self, height: int, width: int) -> tuple[slice, slice]:
        """Integer row/col slices covering the box, clipped to the image."""
        r0 = max(0, int(math.floor(self.y0)))
        r1 = min(height, int(math.ceil(self.y1)))
        c0 = max(0, int(math.floor(self.x0)))
        c1 = min(width, int(math.ceil(self.x1)))
        return slice(r0, r1), slice(c0, c1)

    def within(self, height: int, width: int) -> bool:
        return self.x1 <= width and self.y1 <= height

    def to_dict(self) -> dict:
        return {
            "x0": self.x0,
            "y0": self.y0,
            "x1": self.x1,
            "y1": self.y1,
            "score": self.score,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoundingBox":
        return cls(
            x0=float(d["x0"]), y0=float(d["y0"]), x1=float(d["x1"]), y1=float(d["y1"]),
            score=float(d.get("score", 1.0)), label=str(d.get("label", "")),
        )


def _require_same_size(ref_size, operand, name: str) -> None:
    if operand.size != ref_size:
        raise ShapeMismatchError(
            f"{name} has dimensions {operand.size}, expected {ref_size}"
        )


def blend_composite(gen: Raster, orig: Raster, mask: Mask, opacity: float = 0.5) -> Raster:
    """Composite gen over orig inside the mask at the given opacity.

    Outside the mask (weight 0) the output copies ``orig`` exactly; inside,
    gen and orig are mixed opacity : (1 - opacity).
    """
    if not 0.0 <= opacity <= 1.0:
        raise ConfigError(f"opacity must lie in [0, 1], got {opacity}")
    _require_same_size(gen.size, orig, "orig")
    _require_same_size(gen.size, mask, "mask")
    out = _kern.blend(gen.data, orig.data, mask.data, float(opacity))
    return Raster(out)


def iou(a: Mask, b: Mask) -> float:
    """Intersection-over-union of two binary masks, counted over pixels."""
    if a.kind != "binary" or b.kind != "binary":
        raise DegenerateInputError("iou requires binary masks; binarize() them first")
    _require_same_size(a.size, b, "b")
    inter, union = _kern.overlap_counts(
        a.data.astype(np.uint8), b.data.astype(np.uint8)
    )
    if union == 0:
        raise DegenerateInputError("iou of two empty masks is undefined")
    return inter / union


def binarize(mask: Mask, threshold: float = 0.5) -> Mask:
    """Threshold a mask to binary; pixels >= threshold become foreground."""
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"binarize threshold must lie in (0, 1], got {threshold}")
    return Mask(_kern.threshold(mask.data, float(threshold)), kind="binary")


def resize_to_working(image: Raster, side: int = 1024) -> Raster:
    """Bilinear resample to side x side; non-square inputs are stretched."""
    if side <= 0:
        raise ConfigError(f"working side must be positive, got {side}")
    if image.size == (side, side):
        return image
    out = _kern.resize_bilinear(image.data, side, side)
    # bilinear interpolation of in-range samples stays in range up to rounding
    return Raster(np.clip(out, 0.0, 1.0))


def normalize_depth(raw: np.ndarray) -> DepthMap:
    """Affine-map raw depth values onto [0, 1]; constant input maps to 0.5."""
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DegenerateInputError(f"raw depth must be a non-empty H x W array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError("raw depth contains NaN or Inf")
    lo = float(arr.min())
    hi = float(arr.max())
    if lo == hi:
        return DepthMap(np.full(arr.shape, 0.5, dtype=np.float64))
    arr = np.ascontiguousarray(arr)
    return DepthMap(_kern.rescale01(arr, lo, hi))


def gaussian_kernel1d(radius: float) -> np.ndarray:
    """Normalized 1-D Gaussian with sigma = radius, truncated at 3 sigma."""
    half = int(math.ceil(3.0 * radius))
    t = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / radius) ** 2)
    return k / k.sum()


def feather_mask(mask: Mask, radius: float) -> Mask:
    """Gaussian-feather a mask's edges; radius 0 returns the mask unchanged."""
    if radius < 0:
        raise ConfigError(f"feather radius must be >= 0, got {radius}")
    if radius == 0:
        return mask
    k = gaussian_kernel1d(radius)
    out = _kern.convolve_separable(mask.data, k)
    return Mask(np.clip(out, 0.0, 1.0), kind="soft")


# --- PNG serialization -------------------------------------------------------
#
# 8-bit conversion happens only here; internal math stays float64 in [0, 1].
# Mask PNGs store 255 = foreground, 0 = background.


def quantize_to_u8(values: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8 with round-half-away-from-zero."""
    return np.floor(values * 255.0 + 0.5).astype(np.uint8)


def save_raster_png(raster: Raster, path) -> None:
    Image.fromarray(quantize_to_u8(raster.data), mode="RGB").save(path, format="PNG")


def load_raster(path) -> Raster:
    """Load any PIL-decodable image as an RGB raster (alpha is dropped)."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return Raster(arr)


def save_mask_png(mask: Mask, path) -> None:
    Image.fromarray(quantize_to_u8(mask.data), mode="L").save(path, format="PNG")


def load_mask(path) -> Mask:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    if np.all((arr == 0.0) | (arr == 1.0)):
        return Mask(arr, kind="binary")
    return Mask(arr, kind="soft")


def save_depth_png(depth: DepthMap, path) -> None:
    Image.fromarray(quantize_to_u8(depth.data), mode="L").save(path, format="PNG")


def load_depth(path) -> DepthMap:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    return DepthMap(arr)
