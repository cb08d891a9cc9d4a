import hashlib

import numpy as np
import pytest

from shape2animal.backends import resolve
from shape2animal.concept import AnimalConcept
from shape2animal.errors import ShapeMismatchError
from shape2animal.generation import GenerationConfig, estimate_depth, generate
from shape2animal.imaging import Raster, normalize_depth

from .conftest import make_blob_image, make_random_mask


def checksum(arr):
    return hashlib.sha256(arr.tobytes()).hexdigest()


CONCEPT = AnimalConcept("fox", "A red fox filling the shape. No background.")


class TestGenerationConfig:
    def test_defaults_match_contract(self):
        config = GenerationConfig()
        assert config.control_strength == 1.0
        assert config.steps == 30
        assert config.guidance == 7.5

    def test_sanctioned_strengths_accepted(self):
        for alpha in (0.999, 1.0):
            GenerationConfig(control_strength=alpha)

    def test_validation(self):
        with pytest.raises(ValueError):
            GenerationConfig(control_strength=1.5)
        with pytest.raises(ValueError):
            GenerationConfig(steps=0)
        with pytest.raises(ValueError):
            GenerationConfig(guidance=-1.0)
        with pytest.raises(ValueError):
            GenerationConfig(seed=-1)


class TestEstimateDepth:
    def test_luminance_backend_gives_normalized_luminance(self, blob_image):
        backend = resolve("depth", "fake-luminance")
        depth = estimate_depth(blob_image, backend)
        expected = normalize_depth(blob_image.luminance())
        assert np.array_equal(depth.data, expected.data)

    def test_constant_image_maps_to_half(self):
        image = Raster(np.full((8, 8, 3), 0.3))
        depth = estimate_depth(image, resolve("depth", "fake-luminance"))
        assert (depth.data == 0.5).all()

    def test_dimensions_preserved(self):
        backend = resolve("depth", "fake-luminance")
        for side in (7, 16, 33):
            image = make_blob_image(side=side, seed=side)
            assert estimate_depth(image, backend).size == image.size


class TestGenerate:
    def setup_method(self):
        self.image = make_blob_image(side=32, seed=20)
        self.mask = make_random_mask(side=32, density=0.35, seed=21)
        self.depth = normalize_depth(self.image.luminance())
        self.backend = resolve("generate", "fake")

    def test_outside_mask_pixels_identical(self):
        out = generate(self.image, self.mask, self.depth, CONCEPT,
                       GenerationConfig(seed=5), self.backend)
        outside = self.mask.data == 0.0
        assert np.array_equal(out.data[outside], self.image.data[outside])

    def test_same_seed_bit_identical(self):
        config = GenerationConfig(seed=5)
        a = generate(self.image, self.mask, self.depth, CONCEPT, config, self.backend)
        b = generate(self.image, self.mask, self.depth, CONCEPT, config, self.backend)
        assert np.array_equal(a.data, b.data)

    def test_alpha_changes_masked_content_only(self):
        a0 = generate(self.image, self.mask, self.depth, CONCEPT,
                      GenerationConfig(seed=5, control_strength=0.0), self.backend)
        a1 = generate(self.image, self.mask, self.depth, CONCEPT,
                      GenerationConfig(seed=5, control_strength=1.0), self.backend)
        inside = self.mask.data > 0.0
        outside = ~inside
        assert not np.array_equal(a0.data[inside], a1.data[inside])
        assert np.array_equal(a0.data[outside], a1.data[outside])
        # alpha=1 fill is the depth plane inside the mask
        expected = np.repeat(self.depth.data[:, :, None], 3, axis=2)
        assert np.allclose(a1.data[inside], expected[inside], atol=1e-15)

    def test_inputs_never_mutated(self):
        before = {
            "image": checksum(self.image.data),
            "mask": checksum(self.mask.data),
            "depth": checksum(self.depth.data),
        }
        generate(self.image, self.mask, self.depth, CONCEPT,
                 GenerationConfig(seed=9), self.backend)
        assert checksum(self.image.data) == before["image"]
        assert checksum(self.mask.data) == before["mask"]
        assert checksum(self.depth.data) == before["depth"]

    def test_output_dimensions_match(self):
        out = generate(self.image, self.mask, self.depth, CONCEPT,
                       GenerationConfig(seed=5), self.backend)
        assert out.size == self.image.size

    def test_dimension_mismatch_rejected(self):
        bad_mask = make_random_mask(side=16, seed=1)
        with pytest.raises(ShapeMismatchError):
            generate(self.image, bad_mask, self.depth, CONCEPT,
                     GenerationConfig(seed=5), self.backend)
        bad_depth = normalize_depth(np.random.default_rng(0).random((16, 16)))
        with pytest.raises(ShapeMismatchError):
            generate(self.image, self.mask, bad_depth, CONCEPT,
                     GenerationConfig(seed=5), self.backend)
