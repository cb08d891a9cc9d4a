"""Quantitative harness: shape-preservation IoU and concept-study metrics.

Shape preservation re-extracts a silhouette from each final image (default
detection term: "an animal") and scores it against the source mask with
IoU, reported as mean +- population std over the successful rows. The
study metrics score recorded participant responses against the concepts the
pipeline produced: agreement rate for free-naming, yes-fraction for
plausibility.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .dataset import DatasetManifest, ManifestReport, load_manifest, validate_manifest  # noqa: F401
from .errors import DegenerateInputError, Shape2AnimalError, ValidationError
from .imaging import binarize, iou, load_mask, load_raster
from .pipeline import PipelineRecord, load_records  # noqa: F401
from .segmentation import DetectionQuery, extract_silhouette

TASKS = ("match", "plausibility")


@dataclass(frozen=True)
class StudyResponse:
    image_id: str
    participant_id: str
    task: str
    answer: str


@dataclass(frozen=True)
class StudyResponses:
    rows: tuple[StudyResponse, ...]

    def for_task(self, task: str) -> list[StudyResponse]:
        return [r for r in self.rows if r.task == task]

    def __len__(self) -> int:
        return len(self.rows)


def load_responses(path) -> StudyResponses:
    """Parse a study-response file; malformed rows raise with line numbers."""
    path = Path(path)
    rows: list[StudyResponse] = []
    bad: list[str] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, cells in enumerate(reader, start=1):
            if not cells or (len(cells) == 1 and not cells[0].strip()):
                continue
            if cells[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [c.strip().lower() for c in cells]
                if header != ["image_id", "participant_id", "task", "answer"]:
                    raise ValidationError(
                        f"{path}:{lineno}: expected header "
                        f"'image_id,participant_id,task,answer', got {','.join(header)!r}"
                    )
                continue
            if len(cells) != 4:
                bad.append(f"line {lineno}: expected 4 columns, got {len(cells)}")
                continue
            image_id, participant_id, task, answer = (c.strip() for c in cells)
            task = task.lower()
            if not image_id or not participant_id:
                bad.append(f"line {lineno}: empty image or participant id")
                continue
            if task not in TASKS:
                bad.append(f"line {lineno}: unknown task {task!r}")
                continue
            if task == "plausibility" and answer.lower() not in ("yes", "no"):
                bad.append(f"line {lineno}: plausibility answer must be yes/no, got {answer!r}")
                continue
            if task == "plausibility":
                answer = answer.lower()
            rows.append(StudyResponse(image_id, participant_id, task, answer))
    if header is None:
        raise ValidationError(f"{path}: responses file is empty")
    if bad:
        raise ValidationError(f"{path}: malformed rows rejected: " + "; ".join(bad))
    return StudyResponses(rows=tuple(rows))


def load_synonyms(path) -> dict:
    """Two-column variant,canonical file; both sides lowercased and trimmed."""
    table = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, cells in enumerate(csv.reader(fh), start=1):
            if not cells or cells[0].lstrip().startswith("#"):
                continue
            if len(cells) != 2:
                raise ValidationError(
                    f"{path}:{lineno}: expected 2 columns (variant,canonical)"
                )
            table[cells[0].strip().lower()] = cells[1].strip().lower()
    return table


@dataclass(frozen=True)
class IoURow:
    image_id: str
    value: float | None = None
    failure: str | None = None


@dataclass(frozen=True)
class IoUReport:
    rows: tuple[IoURow, ...]
    label: str = ""

    @property
    def values(self) -> list[float]:
        return [r.value for r in self.rows if r.value is not None]

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        values = self.values
        if not values:
            raise DegenerateInputError("IoU report has no successful rows")
        return sum(values) / len(values)

    @property
    def std(self) -> float:
        """Population standard deviation over the successful rows."""
        values = self.values
        if not values:
            raise DegenerateInputError("IoU report has no successful rows")
        mean = sum(values) / len(values)
        return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n": self.n,
            "mean": self.mean if self.n else None,
            "std": self.std if self.n else None,
            "rows": [
                {"image_id": r.image_id, "iou": r.value, "failure": r.failure}
                for r in self.rows
            ],
        }


def format_iou_table(reports: list[IoUReport]) -> str:
    """Console table, one row per report (model column when labeled)."""
    lines = [f"{'model':<20} {'mean':>7} {'std':>7} {'n':>5}"]
    for report in reports:
        name = report.label or "-"
        if report.n:
            lines.append(f"{name:<20} {report.mean:>7.3f} {report.std:>7.3f} {report.n:>5d}")
        else:
            lines.append(f"{name:<20} {'-':>7} {'-':>7} {0:>5d}")
    return "\n".join(lines)


def identity_resegmenter(record: PipelineRecord):
    """Returns the record's own source mask: the metric's fixed point."""
    return load_mask(record.artifact_path("mask"))


def pipeline_resegmenter(query: DetectionQuery, detector, segmenter):
    """Re-extract the silhouette from the final image via the backends."""

    def resegment(record: PipelineRecord):
        final = load_raster(record.artifact_path("final"))
        return extract_silhouette(final, query, detector, segmenter).mask

    return resegment


def eval_shape_preservation(records: list[PipelineRecord], resegmenter,
                            label: str = "", parallelism: int = 1) -> IoUReport:
    """IoU between each record's source mask and a re-extracted mask.

    Records that did not complete, and rows whose re-segmentation fails, are
    reported with a failure reason and excluded from the aggregates.
    """

    def score(record: PipelineRecord) -> IoURow:
        if not record.ok:
            return IoURow(record.image_id, failure=f"pipeline-incomplete: {record.outcome}")
        try:
            source = binarize(load_mask(record.artifact_path("mask")))
            extracted = binarize(resegmenter(record))
            return IoURow(record.image_id, value=iou(source, extracted))
        except Shape2AnimalError as err:
            return IoURow(record.image_id, failure=str(err))

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(score, records))
    else:
        rows = [score(r) for r in records]
    return IoUReport(rows=tuple(rows), label=label)


def load_concepts(output_dir) -> dict:
    """Map image id -> AnimalConcept from a batch output directory."""
    import json

    from .concept import AnimalConcept

    concepts = {}
    for record in load_records(output_dir):
        if "concept" not in record.artifacts:
            continue
        path = record.artifact_path("concept")
        if not path.is_file():
            continue
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        concepts[record.image_id] = AnimalConcept(
            label=payload["label"],
            render_prompt=payload["render_prompt"],
            raw_response=payload.get("raw_response", ""),
        )
    return concepts


def _normalize_term(text: str, synonyms: dict | None) -> str:
    term = text.strip().lower()
    if synonyms:
        term = synonyms.get(term, term)
    return term


def eval_concept_agreement(responses: StudyResponses, concepts: dict,
                           synonyms: dict | None = None) -> float:
    """Fraction of match-task answers equal to the concept label."""
    rows = responses.for_task("match")
    if not rows:
        raise DegenerateInputError("no match-task responses to score")
    matches = 0
    for row in rows:
        if row.image_id not in concepts:
            raise ValidationError(f"response references unknown image id {row.image_id!r}")
        label = _normalize_term(concepts[row.image_id].label, synonyms)
        answer = _normalize_term(row.answer, synonyms)
        if answer == label:
            matches += 1
    return matches / len(rows)


def eval_plausibility_rate(responses: StudyResponses) -> float:
    """Fraction of plausibility-task answers that are yes."""
    rows = responses.for_task("plausibility")
    if not rows:
        raise DegenerateInputError("no plausibility-task responses to score")
    yes = sum(1 for r in rows if r.answer == "yes")
    return yes / len(rows)
