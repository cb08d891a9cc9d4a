import hashlib
import json

import numpy as np
import pytest
import yaml

from shape2animal.dataset import load_manifest
from shape2animal.errors import ConfigError
from shape2animal.generation import GenerationConfig
from shape2animal.imaging import (
    Raster,
    binarize,
    load_mask,
    load_raster,
    quantize_to_u8,
    resize_to_working,
    save_raster_png,
)
from shape2animal.pipeline import (
    ARTIFACT_SUFFIXES,
    STAGES,
    PipelineConfig,
    PipelineRecord,
    derive_seed,
    run_batch,
    run_single,
    summarize,
)
from shape2animal.segmentation import DetectionQuery

from .conftest import make_blob_image


def file_hashes(record):
    return {
        name: hashlib.sha256(record.artifact_path(name).read_bytes()).hexdigest()
        for name in ARTIFACT_SUFFIXES
    }


def write_batch_dataset(directory, n=3, white_index=None, side=48):
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["path,category"]
    for i in range(n):
        name = f"img_{i:02d}.png"
        if i == white_index:
            image = Raster(np.full((side, side, 3), 0.97))
        else:
            image = make_blob_image(side=side, seed=100 + i)
        save_raster_png(image, directory / name)
        lines.append(f"{name},stone")
    manifest = directory / "manifest.csv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return load_manifest(manifest)


class TestDeriveSeed:
    def test_stable_and_distinct(self):
        assert derive_seed(42, "a") == derive_seed(42, "a")
        assert derive_seed(42, "a") != derive_seed(42, "b")
        assert derive_seed(41, "a") != derive_seed(42, "a")

    def test_64_bit_range(self):
        seed = derive_seed(7, "image")
        assert 0 <= seed < 2**64


class TestConfig:
    def test_yaml_roundtrip(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump({
            "query": {"vocabulary": ["cloud", "fire"], "confidence_floor": 0.4},
            "generation": {"seed": 7, "control_strength": 0.999},
            "opacity": 0.6,
            "working_side": 128,
            "backends": {"segment": "fake-boxfill"},
            "output_dir": "results",
        }), encoding="utf-8")
        config = PipelineConfig.from_file(path)
        assert config.query.vocabulary == ("cloud", "fire")
        assert config.generation.control_strength == 0.999
        assert config.opacity == 0.6
        assert config.backends["segment"] == "fake-boxfill"
        assert config.backends["detect"] == "fake"  # merged default
        assert config.output_dir == tmp_path / "results"

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("opacty: 0.5\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="opacty"):
            PipelineConfig.from_file(path)

    def test_validation(self):
        with pytest.raises(ConfigError):
            PipelineConfig(opacity=1.5)
        with pytest.raises(ConfigError):
            PipelineConfig(working_side=0)
        with pytest.raises(ConfigError):
            PipelineConfig(backends={"detect": "fake"})

    def test_fingerprint_tracks_output_relevant_fields(self, fake_config):
        a = fake_config()
        b = fake_config(opacity=0.6)
        assert a.fingerprint() != b.fingerprint()
        c = fake_config(output_dir=a.output_dir / "elsewhere")
        assert a.fingerprint() == c.fingerprint()


class TestRunSingle:
    def test_all_stages_ok(self, blob_image, fake_config):
        record = run_single(blob_image, fake_config(), image_id="img")
        assert record.outcome == "ok"
        assert [record.stage_status[s] for s in STAGES] == ["ok"] * 6
        for name in ARTIFACT_SUFFIXES:
            assert record.artifact_path(name).is_file(), name
        assert (record.directory / "record.json").is_file()

    def test_final_confined_to_silhouette(self, blob_image, fake_config):
        config = fake_config()
        record = run_single(blob_image, config, image_id="img")
        final = load_raster(record.artifact_path("final"))
        mask = binarize(load_mask(record.artifact_path("mask")))
        resized = resize_to_working(blob_image, config.working_side)
        outside = mask.data == 0.0
        assert np.array_equal(
            quantize_to_u8(final.data)[outside], quantize_to_u8(resized.data)[outside]
        )

    def test_no_detection_becomes_skip_record(self, blob_image, fake_config):
        config = fake_config(
            query=DetectionQuery(("stone",), 0.95),
            backends={"detect": "fake-fixed", "segment": "fake-ellipse",
                      "interpret": "fake", "depth": "fake-luminance", "generate": "fake"},
        )
        record = run_single(blob_image, config, image_id="img")
        assert record.stage_status["segment"] == "skipped:no-detection"
        assert record.outcome == "skipped:no-detection"
        for stage in ("concept", "depth", "generate", "blend"):
            assert record.stage_status[stage] == "skipped:upstream"
        for name in ("mask", "concept", "depth", "gen", "final"):
            assert name not in record.artifacts

    def test_empty_mask_becomes_error_record(self, blob_image, fake_config):
        config = fake_config(
            backends={"detect": "fake", "segment": "fake-empty", "interpret": "fake",
                      "depth": "fake-luminance", "generate": "fake"},
        )
        record = run_single(blob_image, config, image_id="img")
        assert record.stage_status["segment"].startswith("error:")
        assert record.outcome.startswith("error:")

    def test_unknown_backend_aborts(self, blob_image, fake_config):
        config = fake_config(
            backends={"detect": "nonexistent", "segment": "fake-ellipse",
                      "interpret": "fake", "depth": "fake-luminance", "generate": "fake"},
        )
        with pytest.raises(ConfigError):
            run_single(blob_image, config, image_id="img")

    def test_stage_order_invariant(self, blob_image, fake_config):
        config = fake_config(
            backends={"detect": "fake", "segment": "fake-empty", "interpret": "fake",
                      "depth": "fake-luminance", "generate": "fake"},
        )
        record = run_single(blob_image, config, image_id="img")
        seen_failure = False
        for stage in STAGES:
            status = record.stage_status[stage]
            if seen_failure:
                assert status != "ok"
            elif status != "ok":
                seen_failure = True

    def test_rerun_hits_cache_without_rewriting(self, blob_image, fake_config):
        config = fake_config()
        first = run_single(blob_image, config, image_id="img")
        mtimes = {n: first.artifact_path(n).stat().st_mtime_ns for n in ARTIFACT_SUFFIXES}
        second = run_single(blob_image, config, image_id="img")
        assert second.from_cache
        assert {n: second.artifact_path(n).stat().st_mtime_ns
                for n in ARTIFACT_SUFFIXES} == mtimes

    def test_force_recomputes(self, blob_image, fake_config):
        config = fake_config()
        first = run_single(blob_image, config, image_id="img")
        mtimes = {n: first.artifact_path(n).stat().st_mtime_ns for n in ARTIFACT_SUFFIXES}
        second = run_single(blob_image, config, image_id="img", force=True)
        assert not second.from_cache
        changed = {n: second.artifact_path(n).stat().st_mtime_ns for n in ARTIFACT_SUFFIXES}
        assert any(changed[n] != mtimes[n] for n in ARTIFACT_SUFFIXES)

    def test_config_change_invalidates_cache(self, blob_image, fake_config):
        config = fake_config()
        run_single(blob_image, config, image_id="img")
        other = fake_config(opacity=0.7)
        record = run_single(blob_image, other, image_id="img")
        assert not record.from_cache

    def test_deterministic_across_runs(self, blob_image, tmp_path):
        hashes = []
        for run_dir in ("a", "b"):
            config = PipelineConfig(
                generation=GenerationConfig(seed=99),
                working_side=64,
                output_dir=tmp_path / run_dir,
            )
            record = run_single(blob_image, config, image_id="img")
            hashes.append(file_hashes(record))
        assert hashes[0] == hashes[1]

    def test_record_json_roundtrip(self, blob_image, fake_config):
        record = run_single(blob_image, fake_config(), image_id="img")
        loaded = PipelineRecord.load(record.directory / "record.json")
        assert loaded.image_id == record.image_id
        assert loaded.seed == record.seed
        assert loaded.stage_status == record.stage_status
        assert loaded.config_snapshot == record.config_snapshot
        assert loaded.outcome == "ok"

    def test_bad_image_id_rejected(self, blob_image, fake_config):
        with pytest.raises(ConfigError):
            run_single(blob_image, fake_config(), image_id="a/b")

    def test_timings_recorded_per_stage(self, blob_image, fake_config):
        record = run_single(blob_image, fake_config(), image_id="img")
        assert set(record.timings) == set(STAGES)
        assert all(t >= 0.0 for t in record.timings.values())

    def test_candidates_recorded_as_alternates(self, blob_image, fake_config):
        record = run_single(blob_image, fake_config(candidates=3), image_id="img")
        payload = json.loads(record.artifact_path("concept").read_text())
        assert len(payload["alternates"]) == 2
        labels = {payload["label"]} | {a["label"] for a in payload["alternates"]}
        assert len(labels) == 3

    def test_category_vocab_mode_narrows_query(self, blob_image, fake_config):
        config = fake_config(vocab_mode="category")
        record = run_single(blob_image, config, image_id="img", category="fire")
        detection = json.loads(record.artifact_path("detection").read_text())
        assert detection["term"] == "fire"


class TestRunBatch:
    def test_all_ok_summary(self, tmp_path, fake_config):
        manifest = write_batch_dataset(tmp_path / "data", n=3)
        config = fake_config()
        records = run_batch(manifest, config, parallelism=2)
        assert len(records) == 3
        summary = summarize(records)
        assert (summary.ok, summary.skipped, summary.error) == (3, 0, 0)
        payload = json.loads((config.output_dir / "summary.json").read_text())
        assert payload["ok"] == 3 and payload["total"] == 3

    def test_engineered_failure_counted(self, tmp_path, fake_config):
        manifest = write_batch_dataset(tmp_path / "data", n=3, white_index=1)
        config = fake_config(
            backends={"detect": "test-brightness-gated", "segment": "fake-ellipse",
                      "interpret": "fake", "depth": "fake-luminance", "generate": "fake"},
        )
        records = run_batch(manifest, config)
        summary = summarize(records)
        assert (summary.ok, summary.skipped, summary.error) == (2, 1, 0)
        skipped = [r for r in records if not r.ok]
        assert skipped[0].image_id == "img_01"
        assert skipped[0].outcome == "skipped:no-detection"

    def test_resume_recomputes_only_deleted(self, tmp_path, fake_config):
        manifest = write_batch_dataset(tmp_path / "data", n=3)
        config = fake_config()
        first = run_batch(manifest, config)
        victim = first[1]
        for name in list(ARTIFACT_SUFFIXES):
            victim.artifact_path(name).unlink()
        (victim.directory / "record.json").unlink()
        second = run_batch(manifest, config)
        assert [r.from_cache for r in second] == [True, False, True]

    def test_results_independent_of_parallelism(self, tmp_path, blob_image):
        all_hashes = []
        for level, run_dir in ((1, "p1"), (3, "p3")):
            manifest = write_batch_dataset(tmp_path / f"data_{run_dir}", n=4)
            config = PipelineConfig(
                generation=GenerationConfig(seed=5),
                working_side=48,
                output_dir=tmp_path / run_dir,
            )
            records = run_batch(manifest, config, parallelism=level)
            all_hashes.append([file_hashes(r) for r in records])
        assert all_hashes[0] == all_hashes[1]

    def test_stop_event_skips_unstarted_images(self, tmp_path, fake_config):
        import threading

        manifest = write_batch_dataset(tmp_path / "data", n=3)
        config = fake_config()
        stop = threading.Event()
        stop.set()
        records = run_batch(manifest, config, stop_event=stop)
        assert records == []
        payload = json.loads((config.output_dir / "summary.json").read_text())
        assert payload["not_run"] == 3 and payload["ok"] == 0

    def test_duplicate_stems_rejected(self, tmp_path, fake_config):
        data = tmp_path / "data"
        data.mkdir()
        (data / "sub").mkdir()
        save_raster_png(make_blob_image(32, 0), data / "img.png")
        save_raster_png(make_blob_image(32, 1), data / "sub" / "img.png")
        manifest_path = data / "manifest.csv"
        manifest_path.write_text(
            "path,category\nimg.png,stone\nsub/img.png,cloud\n", encoding="utf-8"
        )
        with pytest.raises(ConfigError, match="duplicate"):
            run_batch(load_manifest(manifest_path), fake_config())
