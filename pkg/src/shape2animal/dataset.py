"""Dataset manifest ingestion and validation.

Manifest files are delimited text with a ``path,category`` header. Lines
starting with ``#`` are comments, except ``# expect: stone=21 cloud=24``
directives, which declare the expected per-category counts that
``validate_manifest`` checks against the actual tallies. Image paths are
resolved relative to the manifest file.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .errors import ValidationError

CATEGORIES = ("stone", "cloud", "fire", "other")

_EXPECT_RE = re.compile(r"^#\s*expect:\s*(.+)$", re.IGNORECASE)


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    category: str

    @property
    def image_id(self) -> str:
        return self.path.stem


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    declared_counts: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def tally(self) -> Counter:
        return Counter(e.category for e in self.entries)


@dataclass(frozen=True)
class ManifestReport:
    findings: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.findings


def load_manifest(path) -> DatasetManifest:
    """Parse a manifest file; malformed rows raise with their line numbers."""
    path = Path(path)
    base = path.parent
    declared: dict[str, int] = {}
    rows: list[tuple[int, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            m = _EXPECT_RE.match(stripped)
            if m:
                for token in m.group(1).replace(",", " ").split():
                    if "=" not in token:
                        raise ValidationError(
                            f"{path}:{lineno}: malformed expect directive token {token!r}"
                        )
                    cat, _, count = token.partition("=")
                    cat = cat.strip().lower()
                    if cat not in CATEGORIES:
                        raise ValidationError(
                            f"{path}:{lineno}: unknown category {cat!r} in expect directive"
                        )
                    declared[cat] = int(count)
                continue
            if stripped.startswith("#"):
                continue
            rows.append((lineno, line))

    if not rows:
        raise ValidationError(f"{path}: manifest has no data rows")

    header_lineno, header_line = rows[0]
    header = [c.strip().lower() for c in next(csv.reader([header_line]))]
    if header != ["path", "category"]:
        raise ValidationError(
            f"{path}:{header_lineno}: expected header 'path,category', got {','.join(header)!r}"
        )

    entries = []
    for lineno, line in rows[1:]:
        cells = next(csv.reader([line]))
        if len(cells) != 2:
            raise ValidationError(
                f"{path}:{lineno}: expected 2 columns (path,category), got {len(cells)}"
            )
        rel, category = cells[0].strip(), cells[1].strip().lower()
        if not rel:
            raise ValidationError(f"{path}:{lineno}: empty image path")
        if category not in CATEGORIES:
            raise ValidationError(
                f"{path}:{lineno}: unknown category {category!r} "
                f"(expected one of {', '.join(CATEGORIES)})"
            )
        entries.append(ManifestEntry(path=(base / rel).resolve(), category=category))

    return DatasetManifest(entries=tuple(entries), declared_counts=declared)


def validate_manifest(manifest: DatasetManifest) -> ManifestReport:
    """Check files exist and decode, and tallies match declared counts."""
    findings: list[str] = []
    for entry in manifest.entries:
        if not entry.path.is_file():
            findings.append(f"missing-file: {entry.path}")
            continue
        try:
            with Image.open(entry.path) as img:
                img.verify()
        except (UnidentifiedImageError, OSError, SyntaxError) as err:
            findings.append(f"undecodable: {entry.path} ({err})")
    tally = manifest.tally()
    for category, expected in sorted(manifest.declared_counts.items()):
        actual = tally.get(category, 0)
        if actual != expected:
            findings.append(
                f"count-mismatch: {category} declared {expected}, counted {actual}"
            )
    return ManifestReport(findings=tuple(findings))
