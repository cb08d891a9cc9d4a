"""End-to-end orchestration: resize -> segment -> concept -> depth ->
generate -> blend, with per-stage persistence, caching, and batch execution.

Stage failures are data, not exceptions: they land in the record's
per-stage status so a batch always completes and reports. Only
configuration, credential/dependency, and I/O problems abort a run.

Reruns with an identical config fingerprint and seed reuse complete cached
results untouched; anything incomplete is recomputed from the source image
(never from the 8-bit intermediate PNGs), which keeps reruns byte-identical
with fresh runs.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import yaml

from .backends import FAKE_BACKENDS, RetryPolicy, resolve
from .concept import interpret_candidates
from .dataset import DatasetManifest
from .errors import (
    BackendUnavailableError,
    ConfigError,
    NoDetectionError,
    Shape2AnimalError,
)
from .generation import GenerationConfig, estimate_depth, generate
from .imaging import (
    Raster,
    binarize,
    blend_composite,
    feather_mask,
    load_raster,
    resize_to_working,
    save_depth_png,
    save_mask_png,
    save_raster_png,
)
from .segmentation import DetectionQuery, extract_silhouette

STAGES = ("resize", "segment", "concept", "depth", "generate", "blend")

ARTIFACT_SUFFIXES = {
    "mask": "mask.png",
    "detection": "detection.json",
    "concept": "concept.json",
    "depth": "depth.png",
    "gen": "gen.png",
    "genmeta": "genmeta.json",
    "final": "final.png",
}

#: Stage failures that abort the whole run instead of landing in the record.
_ABORT_ERRORS = (ConfigError, BackendUnavailableError, OSError)


def derive_seed(run_seed: int, image_id: str) -> int:
    """Stable per-image seed; adding images never shifts existing ones."""
    digest = hashlib.sha256(f"{run_seed}:{image_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs; the snapshot of this goes into each record."""

    query: DetectionQuery = field(default_factory=DetectionQuery)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    opacity: float = 0.5
    feather_radius: float = 0.0
    working_side: int = 1024
    candidates: int = 1
    vocab_mode: str = "full"  # full | category
    backends: dict = field(default_factory=lambda: dict(FAKE_BACKENDS))
    backend_options: dict = field(default_factory=dict)
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    output_dir: Path = Path("out")

    def __post_init__(self):
        if not 0.0 <= self.opacity <= 1.0:
            raise ConfigError(f"opacity must lie in [0, 1], got {self.opacity}")
        if self.working_side <= 0:
            raise ConfigError(f"working_side must be positive, got {self.working_side}")
        if self.feather_radius < 0:
            raise ConfigError(f"feather_radius must be >= 0, got {self.feather_radius}")
        if self.candidates < 1:
            raise ConfigError(f"candidates must be >= 1, got {self.candidates}")
        if self.vocab_mode not in ("full", "category"):
            raise ConfigError(f"vocab_mode must be 'full' or 'category', got {self.vocab_mode!r}")
        missing = [c for c in ("detect", "segment", "interpret", "depth", "generate")
                   if c not in self.backends]
        if missing:
            raise ConfigError(f"backends missing capability id(s): {', '.join(missing)}")
        object.__setattr__(self, "output_dir", Path(self.output_dir))

    def effective_query(self, category: str | None) -> DetectionQuery:
        if self.vocab_mode == "category" and category and category != "other":
            return DetectionQuery((category,), self.query.confidence_floor)
        return self.query

    def snapshot(self) -> dict:
        return {
            "query": {
                "vocabulary": list(self.query.vocabulary),
                "confidence_floor": self.query.confidence_floor,
            },
            "generation": self.generation.to_dict(),
            "opacity": self.opacity,
            "feather_radius": self.feather_radius,
            "working_side": self.working_side,
            "candidates": self.candidates,
            "vocab_mode": self.vocab_mode,
            "backends": dict(self.backends),
            "backend_options": {k: dict(v) for k, v in self.backend_options.items()},
            "retry": {
                "max_attempts": self.retry.max_attempts,
                "backoff_base": self.retry.backoff_base,
                "backoff_cap": self.retry.backoff_cap,
            },
            "output_dir": str(self.output_dir),
        }

    def fingerprint(self) -> str:
        """Hash of every output-affecting field (retry/output_dir excluded)."""
        snap = self.snapshot()
        snap.pop("retry")
        snap.pop("output_dir")
        return hashlib.sha256(
            json.dumps(snap, sort_keys=True).encode("utf-8")
        ).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "PipelineConfig":
        raw = dict(raw or {})
        kwargs = {}
        if "query" in raw:
            q = raw.pop("query")
            kwargs["query"] = DetectionQuery(
                vocabulary=tuple(q.get("vocabulary", ("stone", "cloud", "fire"))),
                confidence_floor=float(q.get("confidence_floor", 0.3)),
            )
        if "generation" in raw:
            kwargs["generation"] = GenerationConfig.from_dict(raw.pop("generation"))
        if "retry" in raw:
            r = raw.pop("retry")
            kwargs["retry"] = RetryPolicy(
                max_attempts=int(r.get("max_attempts", 3)),
                backoff_base=float(r.get("backoff_base", 0.5)),
                backoff_cap=float(r.get("backoff_cap", 8.0)),
            )
        if "backends" in raw:
            merged = dict(FAKE_BACKENDS)
            merged.update(raw.pop("backends") or {})
            kwargs["backends"] = merged
        if "output_dir" in raw:
            out = Path(raw.pop("output_dir"))
            if base_dir is not None and not out.is_absolute():
                out = base_dir / out
            kwargs["output_dir"] = out
        for key in ("opacity", "feather_radius", "working_side", "candidates",
                    "vocab_mode", "backend_options"):
            if key in raw:
                kwargs[key] = raw.pop(key)
        if raw:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(raw))}")
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except yaml.YAMLError as err:
            raise ConfigError(f"could not parse config file {path}: {err}") from err
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        return cls.from_dict(raw, base_dir=path.parent)


@dataclass
class PipelineRecord:
    """Per-image run bundle: statuses, artifact paths, config, seed, timings."""

    image_id: str
    source: str
    seed: int
    fingerprint: str
    config_snapshot: dict
    stage_status: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)  # name -> filename (within directory)
    timings: dict = field(default_factory=dict)
    cache_keys: dict = field(default_factory=dict)
    created_at: str = ""
    directory: Path | None = None
    from_cache: bool = False

    @property
    def outcome(self) -> str:
        for stage in STAGES:
            status = self.stage_status.get(stage, "skipped:not-run")
            if status != "ok":
                return status
        return "ok"

    @property
    def ok(self) -> bool:
        return self.outcome == "ok"

    def artifact_path(self, name: str) -> Path:
        if self.directory is None:
            raise ValueError("record has no directory")
        return Path(self.directory) / self.artifacts[name]

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "source": self.source,
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "config": self.config_snapshot,
            "stages": dict(self.stage_status),
            "outcome": self.outcome,
            "artifacts": dict(self.artifacts),
            "timings": dict(self.timings),
            "cache_keys": dict(self.cache_keys),
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict, directory: Path | None = None) -> "PipelineRecord":
        return cls(
            image_id=d["image_id"],
            source=d.get("source", ""),
            seed=int(d["seed"]),
            fingerprint=d.get("fingerprint", ""),
            config_snapshot=d.get("config", {}),
            stage_status=dict(d.get("stages", {})),
            artifacts=dict(d.get("artifacts", {})),
            timings=dict(d.get("timings", {})),
            cache_keys=dict(d.get("cache_keys", {})),
            created_at=d.get("created_at", ""),
            directory=directory,
        )

    def save(self) -> Path:
        path = Path(self.directory) / "record.json"
        _write_json(path, self.to_dict())
        return path

    @classmethod
    def load(cls, record_path) -> "PipelineRecord":
        record_path = Path(record_path)
        with open(record_path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), directory=record_path.parent)


def _write_json(path: Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def _content_key(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if hasattr(p, "tobytes"):
            h.update(p.tobytes())
        else:
            h.update(json.dumps(p, sort_keys=True, default=str).encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def resolve_backends(config: PipelineConfig) -> dict:
    """Instantiate the five capability backends named by the config."""
    out = {}
    for capability, backend_id in config.backends.items():
        options = config.backend_options.get(capability, {})
        out[capability] = resolve(capability, backend_id, **options)
    return out


def _load_cached(outdir: Path, fingerprint: str, seed: int) -> PipelineRecord | None:
    record_path = outdir / "record.json"
    if not record_path.is_file():
        return None
    try:
        record = PipelineRecord.load(record_path)
    except (json.JSONDecodeError, KeyError, ValueError):
        return None
    if record.fingerprint != fingerprint or record.seed != seed or not record.ok:
        return None
    for name in ARTIFACT_SUFFIXES:
        if name not in record.artifacts or not record.artifact_path(name).is_file():
            return None
    record.from_cache = True
    return record


def run_single(image: Raster, config: PipelineConfig, image_id: str = "image",
               category: str | None = None, force: bool = False,
               source: str = "<memory>", backends: dict | None = None) -> PipelineRecord:
    """Run every stage for one image, persisting artifacts and the record.

    Stage errors are captured in the record; config, backend-availability,
    and I/O errors raise. The final image is written only when all stages
    succeed.
    """
    if not image_id or "/" in image_id:
        raise ConfigError(f"image_id must be a nonempty path-free name, got {image_id!r}")
    outdir = config.output_dir / image_id
    seed = derive_seed(config.generation.seed, image_id)
    fingerprint = config.fingerprint()

    if not force:
        cached = _load_cached(outdir, fingerprint, seed)
        if cached is not None:
            return cached

    if backends is None:
        backends = resolve_backends(config)
    outdir.mkdir(parents=True, exist_ok=True)
    # drop leftovers from earlier configs so the record stays authoritative
    for suffix in ARTIFACT_SUFFIXES.values():
        stale = outdir / f"{image_id}.{suffix}"
        if stale.exists():
            stale.unlink()
    record = PipelineRecord(
        image_id=image_id,
        source=source,
        seed=seed,
        fingerprint=fingerprint,
        config_snapshot=config.snapshot(),
        created_at=datetime.now(timezone.utc).isoformat(),
        directory=outdir,
    )
    gen_config = replace(config.generation, seed=seed)
    query = config.effective_query(category)
    retry = config.retry
    halted = False

    def run_stage(name, fn):
        nonlocal halted
        if halted:
            record.stage_status[name] = "skipped:upstream"
            return None
        start = time.perf_counter()
        try:
            result = fn()
        except NoDetectionError:
            record.stage_status[name] = "skipped:no-detection"
            record.timings[name] = time.perf_counter() - start
            halted = True
            return None
        except _ABORT_ERRORS:
            raise
        except Shape2AnimalError as err:
            record.stage_status[name] = f"error:{err}"
            record.timings[name] = time.perf_counter() - start
            halted = True
            return None
        record.stage_status[name] = "ok"
        record.timings[name] = time.perf_counter() - start
        return result

    def artifact(name: str) -> Path:
        filename = f"{image_id}.{ARTIFACT_SUFFIXES[name]}"
        record.artifacts[name] = filename
        return outdir / filename

    # resize
    resized = run_stage("resize", lambda: resize_to_working(image, config.working_side))
    if resized is not None:
        record.cache_keys["resize"] = _content_key("resize", image.data, config.working_side)

    # segment
    def do_segment():
        sil = extract_silhouette(resized, query, backends["detect"], backends["segment"], retry)
        save_mask_png(sil.mask, artifact("mask"))
        detection = dict(sil.detection.to_dict(), term=sil.query_term)
        _write_json(artifact("detection"), detection)
        return sil

    silhouette = run_stage("segment", do_segment)
    if silhouette is not None:
        record.cache_keys["segment"] = _content_key(
            "segment", resized.data, list(query.vocabulary), query.confidence_floor,
            config.backends["segment"], config.backends["detect"],
        )

    # concept
    def do_concept():
        concepts = interpret_candidates(
            silhouette.mask, backends["interpret"], retry=retry,
            candidates=config.candidates,
        )
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
        _write_json(artifact("concept"), payload)
        return concepts[0]

    concept = run_stage("concept", do_concept)
    if concept is not None:
        record.cache_keys["concept"] = _content_key(
            "concept", silhouette.mask.data, config.candidates, config.backends["interpret"],
        )

    # depth (independent of concept; still recorded in canonical stage order)
    def do_depth():
        depth = estimate_depth(resized, backends["depth"], retry)
        save_depth_png(depth, artifact("depth"))
        return depth

    depth = run_stage("depth", do_depth)
    if depth is not None:
        record.cache_keys["depth"] = _content_key(
            "depth", resized.data, config.backends["depth"],
        )

    # generate
    def do_generate():
        gen = generate(resized, silhouette.mask, depth, concept, gen_config,
                       backends["generate"], retry)
        save_raster_png(gen, artifact("gen"))
        _write_json(artifact("genmeta"),
                    dict(gen_config.to_dict(), backend=config.backends["generate"]))
        return gen

    gen = run_stage("generate", do_generate)
    if gen is not None:
        record.cache_keys["generate"] = _content_key(
            "generate", resized.data, silhouette.mask.data, depth.data,
            concept.render_prompt, gen_config.to_dict(), config.backends["generate"],
        )

    # blend
    def do_blend():
        blend_mask = feather_mask(binarize(silhouette.mask), config.feather_radius)
        final = blend_composite(gen, resized, blend_mask, config.opacity)
        save_raster_png(final, artifact("final"))
        return final

    final = run_stage("blend", do_blend)
    if final is not None:
        record.cache_keys["blend"] = _content_key(
            "blend", gen.data, resized.data, silhouette.mask.data,
            config.opacity, config.feather_radius,
        )

    record.save()
    return record


@dataclass
class BatchSummary:
    ok: int = 0
    skipped: int = 0
    error: int = 0
    not_run: int = 0

    @property
    def total(self) -> int:
        return self.ok + self.skipped + self.error + self.not_run

    def to_dict(self) -> dict:
        return {"ok": self.ok, "skipped": self.skipped, "error": self.error,
                "not_run": self.not_run, "total": self.total}


def summarize(records: list[PipelineRecord], not_run: int = 0) -> BatchSummary:
    summary = BatchSummary(not_run=not_run)
    for record in records:
        outcome = record.outcome
        if outcome == "ok":
            summary.ok += 1
        elif outcome.startswith("skipped"):
            summary.skipped += 1
        else:
            summary.error += 1
    return summary


def run_batch(manifest: DatasetManifest, config: PipelineConfig, parallelism: int = 1,
              force: bool = False, stop_event: threading.Event | None = None,
              progress=None) -> list[PipelineRecord]:
    """Run the pipeline over every manifest entry, up to ``parallelism`` at
    a time; one record per image, results independent of the parallelism
    level. Writes ``summary.json`` in the output directory (partial if a
    graceful stop was requested)."""
    if parallelism < 1:
        raise ConfigError(f"parallelism must be >= 1, got {parallelism}")
    ids = [e.image_id for e in manifest.entries]
    dupes = {i for i in ids if ids.count(i) > 1}
    if dupes:
        raise ConfigError(f"duplicate image stem(s) in manifest: {', '.join(sorted(dupes))}")

    backends = resolve_backends(config)
    lock = threading.Lock()

    def run_entry(entry):
        image = load_raster(entry.path)
        record = run_single(
            image, config, image_id=entry.image_id, category=entry.category,
            force=force, source=str(entry.path), backends=backends,
        )
        if progress is not None:
            with lock:
                progress(record)
        return record

    results: dict[str, PipelineRecord] = {}
    pending = list(manifest.entries)
    not_run = 0
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = {}
        while pending or futures:
            while pending and len(futures) < parallelism:
                if stop_event is not None and stop_event.is_set():
                    not_run += len(pending)
                    pending.clear()
                    break
                entry = pending.pop(0)
                futures[pool.submit(run_entry, entry)] = entry
            if not futures:
                break
            done, _ = wait(futures, return_when=FIRST_COMPLETED)
            for fut in done:
                entry = futures.pop(fut)
                results[entry.image_id] = fut.result()

    records = [results[e.image_id] for e in manifest.entries if e.image_id in results]
    summary = summarize(records, not_run=not_run)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(config.output_dir / "summary.json", {
        **summary.to_dict(),
        "records": [{"image_id": r.image_id, "outcome": r.outcome,
                     "from_cache": r.from_cache} for r in records],
    })
    return records


def load_records(output_dir) -> list[PipelineRecord]:
    """Load every per-image record under a batch output directory."""
    output_dir = Path(output_dir)
    records = []
    for record_path in sorted(output_dir.glob("*/record.json")):
        records.append(PipelineRecord.load(record_path))
    return records
