"""Shape-driven concept interpretation.

Renders the silhouette white-on-black, asks a multimodal language-model
backend for the single most plausible animal plus a rendering prompt, and
validates the structured two-field response. Every produced prompt ends with
the background-suppression clause so the generator never paints outside the
subject (appended when the backend omits it).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .backends import RetryPolicy, with_retries
from .errors import ConceptParseError, DegenerateInputError
from .imaging import Mask, Raster

BACKGROUND_CLAUSE = "No background."

_INSTRUCTION_SINGLE = (
    "The image shows a white silhouette on a black background.\n"
    "1. Decide which single animal this silhouette most plausibly depicts.\n"
    "2. Write a rendering prompt describing that animal completely filling the "
    "silhouette shape, with no background or scenery.\n"
    'Respond with one JSON object of exactly two fields, like\n'
    '{"label": "<animal name>", "prompt": "<rendering prompt>"}\n'
    "and nothing else."
)

_INSTRUCTION_MULTI = (
    "The image shows a white silhouette on a black background.\n"
    "1. Decide which {n} animals this silhouette most plausibly depicts, most "
    "plausible first.\n"
    "2. For each, write a rendering prompt describing that animal completely "
    "filling the silhouette shape, with no background or scenery.\n"
    'Respond with a JSON array of {n} objects of exactly two fields each, like\n'
    '[{{"label": "<animal name>", "prompt": "<rendering prompt>"}}, ...]\n'
    "and nothing else."
)

_REPROMPT_SUFFIX = (
    "\nYour previous reply could not be parsed. Respond with ONLY the JSON, "
    "no prose, no code fences."
)


@dataclass(frozen=True)
class AnimalConcept:
    """Animal class label plus the rendering prompt that drives generation."""

    label: str
    render_prompt: str
    raw_response: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.label.strip():
            raise ValueError("concept label must be nonempty")
        if self.label != self.label.strip().lower():
            raise ValueError(f"concept label must be lowercase-normalized: {self.label!r}")
        if not self.render_prompt.strip():
            raise ValueError("render prompt must be nonempty")

    @property
    def has_background_clause(self) -> bool:
        return self.render_prompt.rstrip().lower().endswith(BACKGROUND_CLAUSE.lower())

    def with_background_clause(self) -> "AnimalConcept":
        if self.has_background_clause:
            return self
        return replace(self, render_prompt=self.render_prompt.rstrip() + " " + BACKGROUND_CLAUSE)

    def to_dict(self) -> dict:
        return {"label": self.label, "render_prompt": self.render_prompt,
                "raw_response": self.raw_response}

    @classmethod
    def from_dict(cls, d: dict) -> "AnimalConcept":
        return cls(label=d["label"], render_prompt=d["render_prompt"],
                   raw_response=d.get("raw_response", ""))


@dataclass(frozen=True)
class ConceptRequest:
    """Structured query for the interpreter backend."""

    silhouette_image: Raster
    instruction: str
    response_schema: tuple[str, ...] = ("label", "prompt")
    candidates: int = 1


def render_mask_for_query(mask: Mask) -> Raster:
    """White foreground on black background, same dimensions as the mask."""
    if mask.kind != "binary":
        raise DegenerateInputError("silhouette rendering requires a binary mask")
    if mask.is_empty:
        raise DegenerateInputError("cannot render an empty mask for interpretation")
    return Raster(np.repeat(mask.data[:, :, None], 3, axis=2))


def build_interpretation_request(mask: Mask, candidates: int = 1) -> ConceptRequest:
    """Deterministic instruction + silhouette rendering for the backend."""
    if candidates < 1:
        raise ValueError(f"candidates must be >= 1, got {candidates}")
    if candidates == 1:
        instruction = _INSTRUCTION_SINGLE
    else:
        instruction = _INSTRUCTION_MULTI.format(n=candidates)
    return ConceptRequest(
        silhouette_image=render_mask_for_query(mask),
        instruction=instruction,
        candidates=candidates,
    )


def _extract_json(raw: str):
    text = raw.strip()
    if text.startswith("```"):
        # tolerate fenced responses: drop the first and last fence lines
        lines = [ln for ln in text.splitlines() if not ln.strip().startswith("```")]
        text = "\n".join(lines).strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    for open_ch, close_ch in (("{", "}"), ("[", "]")):
        start = text.find(open_ch)
        end = text.rfind(close_ch)
        if start != -1 and end > start:
            try:
                return json.loads(text[start:end + 1])
            except json.JSONDecodeError:
                continue
    raise ConceptParseError("response is not parseable JSON", raw_response=raw)


def _concept_from_obj(obj, raw: str) -> AnimalConcept:
    if not isinstance(obj, dict):
        raise ConceptParseError(
            f"expected a JSON object with fields label/prompt, got {type(obj).__name__}",
            raw_response=raw,
        )
    missing = [k for k in ("label", "prompt") if k not in obj]
    if missing:
        raise ConceptParseError(
            f"response missing required field(s): {', '.join(missing)}", raw_response=raw
        )
    label = str(obj["label"]).strip().lower()
    prompt = str(obj["prompt"]).strip()
    if not label:
        raise ConceptParseError("label field is empty", raw_response=raw)
    if not prompt:
        raise ConceptParseError("prompt field is empty", raw_response=raw)
    return AnimalConcept(label=label, render_prompt=prompt, raw_response=raw)


def parse_concept_response(raw: str) -> AnimalConcept:
    """Parse one two-field response; label is trimmed + lowercased, the
    prompt is preserved verbatim apart from whitespace trimming."""
    obj = _extract_json(raw)
    if isinstance(obj, list):
        if not obj:
            raise ConceptParseError("response array is empty", raw_response=raw)
        obj = obj[0]
    return _concept_from_obj(obj, raw)


def parse_concept_candidates(raw: str) -> list[AnimalConcept]:
    """Parse a response holding one or more two-field concepts."""
    obj = _extract_json(raw)
    items = obj if isinstance(obj, list) else [obj]
    if not items:
        raise ConceptParseError("response array is empty", raw_response=raw)
    return [_concept_from_obj(item, raw) for item in items]


def serialize_concept(concept: AnimalConcept) -> str:
    """Canonical structured form; parse_concept_response inverts this."""
    return json.dumps({"label": concept.label, "prompt": concept.render_prompt})


def interpret_candidates(mask: Mask, interpreter, retry: RetryPolicy | None = None,
                         candidates: int = 1) -> list[AnimalConcept]:
    """Query the backend and return validated concepts, most plausible first.

    One automatic reprompt on parse failure, then a hard ConceptParseError
    carrying the raw response. Transport-level retryable errors follow the
    retry policy independently of the reprompt.
    """
    policy = retry or RetryPolicy()
    request = build_interpretation_request(mask, candidates)
    raw = with_retries(lambda: interpreter.complete(request), policy)
    try:
        parsed = parse_concept_candidates(raw)
    except ConceptParseError:
        stricter = replace(request, instruction=request.instruction + _REPROMPT_SUFFIX)
        raw = with_retries(lambda: interpreter.complete(stricter), policy)
        parsed = parse_concept_candidates(raw)
    return [c.with_background_clause() for c in parsed]


def interpret(mask: Mask, interpreter, retry: RetryPolicy | None = None) -> AnimalConcept:
    """The single most plausible animal concept for the silhouette."""
    return interpret_candidates(mask, interpreter, retry=retry, candidates=1)[0]
