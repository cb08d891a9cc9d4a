"""Command-line interface.

Exit codes: 0 = success, 1 = completed with per-image skips/errors,
2 = configuration or I/O abort. Per-image failures never abort a batch.
"""

from __future__ import annotations

import json
import secrets
import signal
import sys
import threading
from dataclasses import replace
from pathlib import Path

import click
import yaml

from . import __version__
from .backends import all_descriptors, resolve
from .concept import AnimalConcept, interpret_candidates
from .dataset import load_manifest, validate_manifest
from .errors import ConfigError, Shape2AnimalError, ValidationError
from .evaluation import (
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
from .generation import estimate_depth, generate
from .imaging import (
    binarize,
    blend_composite,
    feather_mask,
    kernel_impl,
    load_depth,
    load_mask,
    load_raster,
    resize_to_working,
    save_depth_png,
    save_mask_png,
    save_raster_png,
)
from .pipeline import (
    STAGES,
    PipelineConfig,
    derive_seed,
    load_records,
    resolve_backends,
    run_batch,
    run_single,
    summarize,
)
from .segmentation import DetectionQuery, extract_silhouette

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_ABORT = 2

_ABORTS = (ConfigError, ValidationError, OSError)


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_ABORT)


def _backend_overrides(pairs):
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--backend expects capability=id, got {pair!r}")
        capability, _, backend_id = pair.partition("=")
        out[capability.strip()] = backend_id.strip()
    return out


_CONFIG_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(path_type=Path),
                 default=None, help="YAML config file; flags override it."),
    click.option("--backend", "backend_pairs", multiple=True, metavar="CAP=ID",
                 help="Backend override, e.g. detect=fake (repeatable)."),
    click.option("--seed", type=int, default=None,
                 help="Run seed; omitted means a generated seed (printed)."),
    click.option("--opacity", type=float, default=None, help="Blend opacity."),
    click.option("--feather", "feather_radius", type=float, default=None,
                 help="Gaussian feather radius for the blend mask."),
    click.option("--side", "working_side", type=int, default=None,
                 help="Working resolution (square side)."),
    click.option("--vocab", "vocabulary", multiple=True,
                 help="Detection vocabulary term (repeatable)."),
    click.option("--confidence-floor", type=float, default=None,
                 help="Minimum detection confidence."),
    click.option("--candidates", type=int, default=None,
                 help="Number of animal concepts to request."),
    click.option("--vocab-mode", type=click.Choice(["full", "category"]), default=None,
                 help="Use the full vocabulary or the manifest category per image."),
    click.option("--out", "output_dir", type=click.Path(path_type=Path), default=None,
                 help="Output directory."),
]


def _with_config_options(fn):
    for option in reversed(_CONFIG_OPTIONS):
        fn = option(fn)
    return fn


def _build_config(config_path, backend_pairs, seed, opacity, feather_radius,
                  working_side, vocabulary, confidence_floor, candidates,
                  vocab_mode, output_dir) -> tuple[PipelineConfig, int]:
    """Config file first, then flag overrides. Returns (config, run_seed)."""
    seed_in_file = False
    if config_path is not None:
        config = PipelineConfig.from_file(config_path)
        with open(config_path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        seed_in_file = isinstance(raw.get("generation"), dict) and "seed" in raw["generation"]
    else:
        config = PipelineConfig()
    seed_given = seed is not None or seed_in_file
    if vocabulary or confidence_floor is not None:
        config = replace(config, query=DetectionQuery(
            vocabulary=tuple(vocabulary) or config.query.vocabulary,
            confidence_floor=(confidence_floor if confidence_floor is not None
                              else config.query.confidence_floor),
        ))
    if backend_pairs:
        merged = dict(config.backends)
        merged.update(_backend_overrides(backend_pairs))
        config = replace(config, backends=merged)
    for name, value in (("opacity", opacity), ("feather_radius", feather_radius),
                        ("working_side", working_side), ("candidates", candidates),
                        ("vocab_mode", vocab_mode), ("output_dir", output_dir)):
        if value is not None:
            config = replace(config, **{name: value})
    run_seed = seed if seed is not None else config.generation.seed
    if not seed_given:
        run_seed = secrets.randbits(63)
    config = replace(config, generation=replace(config.generation, seed=run_seed))
    return config, run_seed


@click.group()
@click.version_option(version=__version__, package_name="shape2animal")
def main():
    """Composite silhouette-conforming animals into photographs of natural objects."""


@main.command()
@click.argument("image_path", type=click.Path(path_type=Path))
@_with_config_options
@click.option("--force", is_flag=True, help="Recompute even when cached artifacts exist.")
def run(image_path, force, **config_flags):
    """Run the full pipeline on one image."""
    try:
        config, run_seed = _build_config(**config_flags)
        image = load_raster(image_path)
        click.echo(f"run seed: {run_seed}")
        record = run_single(image, config, image_id=image_path.stem,
                            force=force, source=str(image_path))
    except _ABORTS as err:
        _fail(str(err))
    for stage_name in STAGES:
        if stage_name in record.stage_status:
            click.echo(f"{stage_name}: {record.stage_status[stage_name]}")
    click.echo(f"record: {record.outcome}")
    if record.ok:
        click.echo(f"final: {record.artifact_path('final')}")
    sys.exit(EXIT_OK if record.ok else EXIT_PARTIAL)


@main.command()
@click.argument("manifest_path", type=click.Path(path_type=Path))
@_with_config_options
@click.option("--parallel", "parallelism", type=int, default=1, show_default=True,
              help="Images processed concurrently.")
@click.option("--force", is_flag=True, help="Recompute even when cached artifacts exist.")
def batch(manifest_path, parallelism, force, **config_flags):
    """Run the pipeline over every image in a manifest."""
    stop_event = threading.Event()

    def request_stop(_signum, _frame):
        click.echo("stop requested; finishing in-flight images", err=True)
        stop_event.set()

    try:
        config, run_seed = _build_config(**config_flags)
        manifest = load_manifest(manifest_path)
        report = validate_manifest(manifest)
        if not report.ok:
            raise ValidationError("manifest invalid: " + "; ".join(report.findings))
        click.echo(f"run seed: {run_seed}")
        previous = signal.signal(signal.SIGINT, request_stop)
        try:
            records = run_batch(manifest, config, parallelism=parallelism, force=force,
                                stop_event=stop_event,
                                progress=lambda r: click.echo(f"{r.image_id}: {r.outcome}"))
        finally:
            signal.signal(signal.SIGINT, previous)
    except _ABORTS as err:
        _fail(str(err))
    summary = summarize(records, not_run=len(manifest) - len(records))
    click.echo(
        f"summary: ok {summary.ok} skipped {summary.skipped} error {summary.error}"
        + (f" not-run {summary.not_run}" if summary.not_run else "")
    )
    click.echo(f"summary file: {config.output_dir / 'summary.json'}")
    all_ok = summary.ok == summary.total
    sys.exit(EXIT_OK if all_ok else EXIT_PARTIAL)


@main.group()
def stage():
    """Run a single pipeline stage (debugging aid)."""


def _require_artifact(path: Path | None, what: str, producer: str) -> Path:
    if path is None:
        _fail(f"missing {what} artifact; produce it with 'shape2animal stage {producer}'")
    path = Path(path)
    if not path.is_file():
        _fail(f"missing {what} artifact at {path}; produce it with "
              f"'shape2animal stage {producer}'")
    return path


@stage.command("segment")
@click.argument("image_path", type=click.Path(path_type=Path))
@_with_config_options
def stage_segment(image_path, **config_flags):
    """Extract the silhouette mask for one image."""
    try:
        config, _ = _build_config(**config_flags)
        image = load_raster(image_path)
        backends = resolve_backends(config)
        resized = resize_to_working(image, config.working_side)
        result = extract_silhouette(resized, config.query, backends["detect"],
                                    backends["segment"], config.retry)
        outdir = config.output_dir
        outdir.mkdir(parents=True, exist_ok=True)
        stem = image_path.stem
        mask_path = outdir / f"{stem}.mask.png"
        save_mask_png(result.mask, mask_path)
        detection_path = outdir / f"{stem}.detection.json"
        detection_path.write_text(json.dumps(
            dict(result.detection.to_dict(), term=result.query_term),
            indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except _ABORTS as err:
        _fail(str(err))
    except Shape2AnimalError as err:
        click.echo(f"segment failed: {err}", err=True)
        sys.exit(EXIT_PARTIAL)
    click.echo(f"mask: {mask_path}")
    click.echo(f"detection: {detection_path}")
    sys.exit(EXIT_OK)


@stage.command("interpret")
@click.option("--mask", "mask_path", type=click.Path(path_type=Path), required=True)
@_with_config_options
def stage_interpret(mask_path, **config_flags):
    """Interpret a silhouette mask as an animal concept."""
    try:
        config, _ = _build_config(**config_flags)
        mask_file = _require_artifact(mask_path, "mask", "segment")
        mask = binarize(load_mask(mask_file))
        backends = resolve_backends(config)
        concepts = interpret_candidates(mask, backends["interpret"], retry=config.retry,
                                        candidates=config.candidates)
        outdir = config.output_dir
        outdir.mkdir(parents=True, exist_ok=True)
        concept_path = outdir / f"{mask_file.stem.removesuffix('.mask')}.concept.json"
        payload = {
            "label": concepts[0].label,
            "render_prompt": concepts[0].render_prompt,
            "raw_response": concepts[0].raw_response,
            "backend": config.backends["interpret"],
        }
        if len(concepts) > 1:
            payload["alternates"] = [
                {"label": c.label, "render_prompt": c.render_prompt} for c in concepts[1:]
            ]
        concept_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                                encoding="utf-8")
    except _ABORTS as err:
        _fail(str(err))
    except Shape2AnimalError as err:
        click.echo(f"interpret failed: {err}", err=True)
        sys.exit(EXIT_PARTIAL)
    click.echo(f"label: {concepts[0].label}")
    click.echo(f"concept: {concept_path}")
    sys.exit(EXIT_OK)


@stage.command("depth")
@click.argument("image_path", type=click.Path(path_type=Path))
@_with_config_options
def stage_depth(image_path, **config_flags):
    """Estimate a normalized depth map for one image."""
    try:
        config, _ = _build_config(**config_flags)
        image = load_raster(image_path)
        backends = resolve_backends(config)
        depth = estimate_depth(image, backends["depth"], config.retry)
        config.output_dir.mkdir(parents=True, exist_ok=True)
        depth_path = config.output_dir / f"{image_path.stem}.depth.png"
        save_depth_png(depth, depth_path)
    except _ABORTS as err:
        _fail(str(err))
    except Shape2AnimalError as err:
        click.echo(f"depth failed: {err}", err=True)
        sys.exit(EXIT_PARTIAL)
    click.echo(f"depth: {depth_path}")
    sys.exit(EXIT_OK)


@stage.command("generate")
@click.argument("image_path", type=click.Path(path_type=Path))
@click.option("--mask", "mask_path", type=click.Path(path_type=Path), required=True)
@click.option("--depth", "depth_path", type=click.Path(path_type=Path), required=True)
@click.option("--concept", "concept_path", type=click.Path(path_type=Path), required=True)
@_with_config_options
def stage_generate(image_path, mask_path, depth_path, concept_path, **config_flags):
    """Generate the masked animal image from recorded stage artifacts."""
    try:
        config, _ = _build_config(**config_flags)
        image = load_raster(image_path)
        mask = binarize(load_mask(_require_artifact(mask_path, "mask", "segment")))
        depth = load_depth(_require_artifact(depth_path, "depth", "depth"))
        concept_file = _require_artifact(concept_path, "concept", "interpret")
        with open(concept_file, encoding="utf-8") as fh:
            payload = json.load(fh)
        concept = AnimalConcept(label=payload["label"],
                                render_prompt=payload["render_prompt"],
                                raw_response=payload.get("raw_response", ""))
        backends = resolve_backends(config)
        seed = derive_seed(config.generation.seed, image_path.stem)
        gen_config = replace(config.generation, seed=seed)
        gen = generate(image, mask, depth, concept, gen_config,
                       backends["generate"], config.retry)
        config.output_dir.mkdir(parents=True, exist_ok=True)
        gen_path = config.output_dir / f"{image_path.stem}.gen.png"
        save_raster_png(gen, gen_path)
        meta_path = config.output_dir / f"{image_path.stem}.genmeta.json"
        meta_path.write_text(json.dumps(
            dict(gen_config.to_dict(), backend=config.backends["generate"]),
            indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except _ABORTS as err:
        _fail(str(err))
    except Shape2AnimalError as err:
        click.echo(f"generate failed: {err}", err=True)
        sys.exit(EXIT_PARTIAL)
    click.echo(f"gen: {gen_path}")
    click.echo(f"genmeta: {meta_path}")
    sys.exit(EXIT_OK)


@stage.command("blend")
@click.option("--gen", "gen_path", type=click.Path(path_type=Path), required=True)
@click.option("--orig", "orig_path", type=click.Path(path_type=Path), required=True)
@click.option("--mask", "mask_path", type=click.Path(path_type=Path), required=True)
@_with_config_options
def stage_blend(gen_path, orig_path, mask_path, **config_flags):
    """Blend a generated image into the original through the mask."""
    try:
        config, _ = _build_config(**config_flags)
        gen = load_raster(_require_artifact(gen_path, "gen", "generate"))
        orig = load_raster(orig_path)
        mask = binarize(load_mask(_require_artifact(mask_path, "mask", "segment")))
        blend_mask = feather_mask(mask, config.feather_radius)
        final = blend_composite(gen, orig, blend_mask, config.opacity)
        config.output_dir.mkdir(parents=True, exist_ok=True)
        final_path = config.output_dir / f"{Path(orig_path).stem}.final.png"
        save_raster_png(final, final_path)
    except _ABORTS as err:
        _fail(str(err))
    except Shape2AnimalError as err:
        click.echo(f"blend failed: {err}", err=True)
        sys.exit(EXIT_PARTIAL)
    click.echo(f"final: {final_path}")
    sys.exit(EXIT_OK)


@main.group()
def eval():
    """Evaluation commands: manifest, iou, concept, plausibility."""


@eval.command("manifest")
@click.argument("manifest_path", type=click.Path(path_type=Path))
def eval_manifest(manifest_path):
    """Validate a dataset manifest."""
    try:
        manifest = load_manifest(manifest_path)
        report = validate_manifest(manifest)
    except _ABORTS as err:
        _fail(str(err))
    tally = manifest.tally()
    counts = " ".join(f"{cat} {tally.get(cat, 0)}" for cat in ("stone", "cloud", "fire", "other"))
    click.echo(f"entries: {len(manifest)} ({counts})")
    if report.ok:
        click.echo("manifest: ok")
        sys.exit(EXIT_OK)
    for finding in report.findings:
        click.echo(f"finding: {finding}")
    click.echo("manifest: invalid")
    sys.exit(EXIT_ABORT)


@eval.command("iou")
@click.option("--records", "record_dirs", multiple=True, required=True, metavar="[LABEL=]DIR",
              help="Batch output directory to score (repeatable).")
@click.option("--resegment", type=click.Choice(["pipeline", "identity"]), default="pipeline",
              show_default=True, help="How to re-extract the mask from final images.")
@click.option("--term", default="an animal", show_default=True,
              help="Detection term for pipeline re-segmentation.")
@click.option("--confidence-floor", type=float, default=0.3, show_default=True)
@click.option("--backend", "backend_pairs", multiple=True, metavar="CAP=ID",
              help="Backend override for pipeline re-segmentation.")
@click.option("--parallel", "parallelism", type=int, default=1, show_default=True)
@click.option("--report", "report_path", type=click.Path(path_type=Path), default=None,
              help="Write the full report as JSON.")
def eval_iou(record_dirs, resegment, term, confidence_floor, backend_pairs,
             parallelism, report_path):
    """Shape-preservation IoU over one or more batch output directories."""
    try:
        reports = []
        for spec_arg in record_dirs:
            label, _, rest = spec_arg.partition("=")
            if rest:
                directory = Path(rest)
            else:
                label, directory = spec_arg, Path(spec_arg)
            records = load_records(directory)
            if not records:
                raise ValidationError(f"no records found under {directory}")
            if resegment == "identity":
                resegmenter = identity_resegmenter
            else:
                ids = {"detect": "fake", "segment": "fake-ellipse"}
                ids.update(_backend_overrides(backend_pairs))
                query = DetectionQuery((term,), confidence_floor)
                resegmenter = pipeline_resegmenter(
                    query, resolve("detect", ids["detect"]), resolve("segment", ids["segment"]))
            reports.append(eval_shape_preservation(
                records, resegmenter, label=label, parallelism=parallelism))
    except _ABORTS as err:
        _fail(str(err))
    click.echo(format_iou_table(reports))
    if report_path is not None:
        report_path.write_text(
            json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        click.echo(f"report: {report_path}")
    sys.exit(EXIT_OK)


@eval.command("concept")
@click.option("--responses", "responses_path", type=click.Path(path_type=Path), required=True)
@click.option("--records", "records_dir", type=click.Path(path_type=Path), required=True,
              help="Batch output directory holding concept artifacts.")
@click.option("--synonyms", "synonyms_path", type=click.Path(path_type=Path), default=None,
              help="Two-column variant,canonical synonym file.")
def eval_concept(responses_path, records_dir, synonyms_path):
    """Concept-matching agreement rate from recorded study responses."""
    try:
        responses = load_responses(responses_path)
        concepts = load_concepts(records_dir)
        synonyms = load_synonyms(synonyms_path) if synonyms_path else None
        rate = eval_concept_agreement(responses, concepts, synonyms)
    except _ABORTS as err:
        _fail(str(err))
    except Shape2AnimalError as err:
        _fail(str(err))
    click.echo(f"agreement rate: {rate:.4f} ({len(responses.for_task('match'))} responses)")
    sys.exit(EXIT_OK)


@eval.command("plausibility")
@click.option("--responses", "responses_path", type=click.Path(path_type=Path), required=True)
def eval_plausibility(responses_path):
    """Plausibility yes-rate from recorded study responses."""
    try:
        responses = load_responses(responses_path)
        rate = eval_plausibility_rate(responses)
    except _ABORTS as err:
        _fail(str(err))
    except Shape2AnimalError as err:
        _fail(str(err))
    click.echo(
        f"plausibility rate: {rate:.4f} ({len(responses.for_task('plausibility'))} responses)"
    )
    sys.exit(EXIT_OK)


@main.group()
def backends():
    """Backend registry commands."""


@backends.command("list")
def backends_list():
    """List registered backends per capability."""
    click.echo(f"{'capability':<12} {'id':<16} {'determinism':<22} thread-safe")
    for descriptor in all_descriptors():
        click.echo(
            f"{descriptor.capability:<12} {descriptor.id:<16} "
            f"{descriptor.determinism:<22} {'yes' if descriptor.thread_safe else 'no'}"
        )
    click.echo(f"imaging kernels: {kernel_impl()}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
