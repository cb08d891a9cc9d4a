import math
import random

import numpy as np
import pytest

from shape2animal.concept import AnimalConcept
from shape2animal.dataset import load_manifest, validate_manifest
from shape2animal.errors import DegenerateInputError, ValidationError
from shape2animal.evaluation import (
    IoUReport,
    IoURow,
    StudyResponse,
    StudyResponses,
    eval_concept_agreement,
    eval_plausibility_rate,
    eval_shape_preservation,
    format_iou_table,
    identity_resegmenter,
    load_concepts,
    load_responses,
    load_synonyms,
    pipeline_resegmenter,
)
from shape2animal.imaging import Mask, load_mask
from shape2animal.pipeline import run_batch
from shape2animal.segmentation import DetectionQuery
from shape2animal.backends import resolve

from .conftest import write_dataset
from .test_pipeline import write_batch_dataset


@pytest.fixture(scope="module")
def batch_records(tmp_path_factory):
    base = tmp_path_factory.mktemp("evalbatch")
    manifest = write_batch_dataset(base / "data", n=3)
    from shape2animal.generation import GenerationConfig
    from shape2animal.pipeline import PipelineConfig

    config = PipelineConfig(
        generation=GenerationConfig(seed=11), working_side=48, output_dir=base / "out"
    )
    return run_batch(manifest, config)


class TestManifestValidation:
    def test_full_recipe_validates(self, tmp_path):
        manifest_path = write_dataset(tmp_path / "data",
                                      {"stone": 4, "cloud": 5, "fire": 3})
        manifest = load_manifest(manifest_path)
        report = validate_manifest(manifest)
        assert report.ok
        assert len(manifest) == 12

    def test_declared_count_mismatch_flagged(self, tmp_path):
        manifest_path = write_dataset(
            tmp_path / "data", {"stone": 4, "cloud": 5},
            declared={"stone": 5, "cloud": 5},
        )
        report = validate_manifest(load_manifest(manifest_path))
        assert not report.ok
        assert any("count-mismatch: stone" in f for f in report.findings)

    def test_missing_file_flagged(self, tmp_path):
        manifest_path = write_dataset(tmp_path / "data", {"stone": 2})
        (tmp_path / "data" / "stone_000.png").unlink()
        report = validate_manifest(load_manifest(manifest_path))
        assert any(f.startswith("missing-file") for f in report.findings)

    def test_undecodable_file_flagged(self, tmp_path):
        manifest_path = write_dataset(tmp_path / "data", {"stone": 2})
        (tmp_path / "data" / "stone_001.png").write_bytes(b"this is not a png")
        report = validate_manifest(load_manifest(manifest_path))
        assert any(f.startswith("undecodable") for f in report.findings)

    def test_unknown_category_rejected_with_line(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("path,category\na.png,granite\n", encoding="utf-8")
        with pytest.raises(ValidationError, match=":2"):
            load_manifest(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "manifest.csv"
        path.write_text("file,kind\na.png,stone\n", encoding="utf-8")
        with pytest.raises(ValidationError, match="header"):
            load_manifest(path)


class TestResponsesLoading:
    def test_well_formed(self, tmp_path):
        path = tmp_path / "responses.csv"
        path.write_text(
            "image_id,participant_id,task,answer\n"
            "img1,p1,match,fox\n"
            "img1,p2,plausibility,YES\n",
            encoding="utf-8",
        )
        responses = load_responses(path)
        assert len(responses) == 2
        assert responses.for_task("plausibility")[0].answer == "yes"

    def test_malformed_rows_rejected_with_line_numbers(self, tmp_path):
        path = tmp_path / "responses.csv"
        path.write_text(
            "image_id,participant_id,task,answer\n"
            "img1,p1,match,fox\n"
            "img1,p2,guessing,fox\n"
            "img1,p3,plausibility,maybe\n"
            "img1,p4\n",
            encoding="utf-8",
        )
        with pytest.raises(ValidationError) as excinfo:
            load_responses(path)
        message = str(excinfo.value)
        for lineno in ("line 3", "line 4", "line 5"):
            assert lineno in message

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "responses.csv"
        path.write_text("id,who,task,answer\n", encoding="utf-8")
        with pytest.raises(ValidationError, match="header"):
            load_responses(path)


def make_match_responses(concepts, n_match, n_total):
    rows = []
    ids = sorted(concepts)
    for i in range(n_total):
        image_id = ids[i % len(ids)]
        answer = concepts[image_id].label if i < n_match else "zzz-not-an-animal"
        rows.append(StudyResponse(image_id, f"p{i:04d}", "match", answer))
    random.Random(0).shuffle(rows)
    return StudyResponses(rows=tuple(rows))


class TestConceptAgreement:
    CONCEPTS = {
        "img_a": AnimalConcept("fox", "A fox. No background."),
        "img_b": AnimalConcept("turtle", "A turtle. No background."),
    }

    def test_constructed_fixture_rate(self):
        responses = make_match_responses(self.CONCEPTS, 226, 1000)
        assert eval_concept_agreement(responses, self.CONCEPTS) == 0.226

    def test_all_matching(self):
        responses = make_match_responses(self.CONCEPTS, 50, 50)
        assert eval_concept_agreement(responses, self.CONCEPTS) == 1.0

    def test_case_and_whitespace_insensitive(self):
        responses = StudyResponses(rows=(
            StudyResponse("img_a", "p1", "match", "  FOX "),
        ))
        assert eval_concept_agreement(responses, self.CONCEPTS) == 1.0

    def test_empty_match_set_degenerate(self):
        responses = StudyResponses(rows=(
            StudyResponse("img_a", "p1", "plausibility", "yes"),
        ))
        with pytest.raises(DegenerateInputError):
            eval_concept_agreement(responses, self.CONCEPTS)

    def test_unknown_image_id_rejected(self):
        responses = StudyResponses(rows=(
            StudyResponse("mystery", "p1", "match", "fox"),
        ))
        with pytest.raises(ValidationError):
            eval_concept_agreement(responses, self.CONCEPTS)

    def test_synonyms_applied_to_both_sides(self):
        concepts = {"img_a": AnimalConcept("sea turtle", "x. No background.")}
        responses = StudyResponses(rows=(
            StudyResponse("img_a", "p1", "match", "turtle"),
        ))
        assert eval_concept_agreement(responses, concepts) == 0.0
        synonyms = {"sea turtle": "turtle"}
        assert eval_concept_agreement(responses, concepts, synonyms) == 1.0

    def test_permutation_invariant(self):
        responses = make_match_responses(self.CONCEPTS, 7, 20)
        rate = eval_concept_agreement(responses, self.CONCEPTS)
        shuffled = list(responses.rows)
        random.Random(9).shuffle(shuffled)
        assert eval_concept_agreement(StudyResponses(tuple(shuffled)), self.CONCEPTS) == rate


class TestPlausibility:
    def test_constructed_fixture_rate(self):
        rows = tuple(
            StudyResponse("img", f"p{i}", "plausibility", "yes" if i < 149 else "no")
            for i in range(300)
        )
        rate = eval_plausibility_rate(StudyResponses(rows))
        assert rate == pytest.approx(149 / 300, abs=0)
        assert rate == pytest.approx(0.4967, abs=1e-4)

    def test_all_yes_and_all_no(self):
        yes_rows = tuple(StudyResponse("i", f"p{i}", "plausibility", "yes") for i in range(5))
        no_rows = tuple(StudyResponse("i", f"p{i}", "plausibility", "no") for i in range(5))
        assert eval_plausibility_rate(StudyResponses(yes_rows)) == 1.0
        assert eval_plausibility_rate(StudyResponses(no_rows)) == 0.0

    def test_empty_set_degenerate(self):
        with pytest.raises(DegenerateInputError):
            eval_plausibility_rate(StudyResponses(rows=()))


def welford(values):
    n = 0
    mean = 0.0
    m2 = 0.0
    for v in values:
        n += 1
        delta = v - mean
        mean += delta / n
        m2 += delta * (v - mean)
    return mean, math.sqrt(m2 / n)


class TestShapePreservation:
    def test_identity_resegmenter_is_fixed_point(self, batch_records):
        report = eval_shape_preservation(batch_records, identity_resegmenter)
        assert report.n == len(batch_records)
        assert report.mean == 1.0
        assert report.std == 0.0

    def test_disjoint_resegmenter_scores_zero(self, batch_records):
        def disjoint(record):
            source = load_mask(record.artifact_path("mask"))
            fg = source.data == 0.0
            # keep it nonempty but fully outside the source mask
            return Mask.from_bool(fg)

        report = eval_shape_preservation(batch_records, disjoint)
        assert report.mean == 0.0

    def test_constructed_one_half_zero_rows(self, batch_records):
        values = {"img_00": 1.0, "img_01": 0.5, "img_02": 0.0}

        def constructed(record):
            source = load_mask(record.artifact_path("mask"))
            fg = source.data != 0.0
            target = values[record.image_id]
            if target == 1.0:
                return Mask.from_bool(fg)
            if target == 0.0:
                return Mask.from_bool(~fg)
            # superset with as many extra pixels as the source: IoU = k/2k
            k = int(fg.sum())
            extra = np.flatnonzero(~fg.ravel())[:k]
            out = fg.ravel().copy()
            out[extra] = True
            return Mask.from_bool(out.reshape(fg.shape))

        report = eval_shape_preservation(batch_records, constructed)
        assert sorted(report.values) == [0.0, 0.5, 1.0]
        assert report.mean == pytest.approx(0.5, abs=0)
        assert report.std == pytest.approx(math.sqrt(1 / 6), abs=1e-12)
        assert report.std == pytest.approx(0.408, abs=1e-3)

    def test_two_pass_matches_welford(self, batch_records):
        rng = np.random.default_rng(3)
        rows = tuple(IoURow(f"r{i}", value=float(v)) for i, v in enumerate(rng.random(100)))
        report = IoUReport(rows=rows)
        w_mean, w_std = welford(report.values)
        assert abs(report.mean - w_mean) < 1e-12
        assert abs(report.std - w_std) < 1e-12

    def test_pipeline_resegmenter_runs_real_extraction(self, batch_records):
        resegmenter = pipeline_resegmenter(
            DetectionQuery(("an animal",), 0.3),
            resolve("detect", "fake"),
            resolve("segment", "fake-ellipse"),
        )
        report = eval_shape_preservation(batch_records, resegmenter)
        assert report.n == len(batch_records)
        for value in report.values:
            assert 0.0 <= value <= 1.0

    def test_failures_excluded_from_aggregates(self, batch_records):
        def sometimes_fails(record):
            if record.image_id == "img_01":
                raise DegenerateInputError("synthetic failure")
            return identity_resegmenter(record)

        report = eval_shape_preservation(batch_records, sometimes_fails)
        assert report.n == len(batch_records) - 1
        assert report.mean == 1.0
        failed = [r for r in report.rows if r.failure]
        assert len(failed) == 1 and failed[0].image_id == "img_01"

    def test_incomplete_records_reported_not_scored(self, batch_records):
        import dataclasses

        broken = dataclasses.replace(
            batch_records[0],
            stage_status=dict(batch_records[0].stage_status, blend="error:boom"),
        )
        report = eval_shape_preservation([broken, *batch_records[1:]], identity_resegmenter)
        assert report.n == len(batch_records) - 1
        assert any(r.failure and "pipeline-incomplete" in r.failure for r in report.rows)

    def test_parallel_matches_serial(self, batch_records):
        serial = eval_shape_preservation(batch_records, identity_resegmenter)
        parallel = eval_shape_preservation(batch_records, identity_resegmenter,
                                           parallelism=3)
        assert serial.rows == parallel.rows

    def test_table_formatting(self):
        report = IoUReport(rows=(IoURow("a", 1.0), IoURow("b", 0.5)), label="fakes")
        table = format_iou_table([report])
        assert "fakes" in table
        assert "0.750" in table

    def test_load_concepts(self, batch_records):
        directory = batch_records[0].directory.parent
        concepts = load_concepts(directory)
        assert set(concepts) == {r.image_id for r in batch_records}
        for concept in concepts.values():
            assert concept.has_background_clause


class TestSynonymLoading:
    def test_two_column_file(self, tmp_path):
        path = tmp_path / "synonyms.csv"
        path.write_text("# variant,canonical\nSea Turtle,turtle\nkitty,cat\n",
                        encoding="utf-8")
        table = load_synonyms(path)
        assert table == {"sea turtle": "turtle", "kitty": "cat"}

    def test_wrong_width_rejected(self, tmp_path):
        path = tmp_path / "synonyms.csv"
        path.write_text("a,b,c\n", encoding="utf-8")
        with pytest.raises(ValidationError):
            load_synonyms(path)
