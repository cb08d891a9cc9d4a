import numpy as np
import pytest

from shape2animal.backends import register
from shape2animal.backends.fakes import SalientRegionDetector
from shape2animal.generation import GenerationConfig
from shape2animal.imaging import Mask, Raster, save_raster_png
from shape2animal.pipeline import PipelineConfig


def make_blob_image(side=64, seed=0):
    """Synthetic photo stand-in: a bright ellipse blob on a dark gradient."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    cy = side * rng.uniform(0.35, 0.65)
    cx = side * rng.uniform(0.35, 0.65)
    ry = side * rng.uniform(0.15, 0.3)
    rx = side * rng.uniform(0.15, 0.3)
    blob = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    background = 0.15 + 0.15 * (xx / side)
    base = np.where(blob, 0.85, background)
    img = np.stack([base] * 3, axis=2) + rng.normal(0.0, 0.01, (side, side, 3))
    return Raster(np.clip(img, 0.0, 1.0))


def make_random_mask(side=16, density=0.5, seed=0):
    rng = np.random.default_rng(seed)
    return Mask.from_bool(rng.random((side, side)) < density)


@register("detect", "test-brightness-gated")
class BrightnessGatedDetector:
    """Detects nothing on very bright images; engineered batch failures."""

    def __init__(self, cutoff=0.9):
        self.cutoff = cutoff
        self.inner = SalientRegionDetector()

    def detect(self, image, vocabulary):
        if float(image.data.mean()) > self.cutoff:
            return []
        return self.inner.detect(image, vocabulary)


@pytest.fixture
def blob_image():
    return make_blob_image(side=64, seed=3)


@pytest.fixture
def fake_config(tmp_path):
    def build(**overrides):
        kwargs = dict(
            generation=GenerationConfig(seed=1234),
            working_side=64,
            output_dir=tmp_path / "out",
        )
        kwargs.update(overrides)
        return PipelineConfig(**kwargs)

    return build


def write_dataset(directory, counts, side=24, declared=None):
    """Write tiny PNGs plus a manifest; returns the manifest path."""
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["path,category"]
    declared = counts if declared is None else declared
    expect = " ".join(f"{cat}={n}" for cat, n in declared.items())
    index = 0
    for category, n in counts.items():
        for _ in range(n):
            name = f"{category}_{index:03d}.png"
            save_raster_png(make_blob_image(side=side, seed=index), directory / name)
            lines.append(f"{name},{category}")
            index += 1
    manifest = directory / "manifest.csv"
    manifest.write_text(f"# expect: {expect}\n" + "\n".join(lines) + "\n", encoding="utf-8")
    return manifest
