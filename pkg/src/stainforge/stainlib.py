"""Curated stain-vector library: build, persist (JSONL), and query records.

One record per whole slide: the estimated H&E stain matrix plus the lab,
scanner and indication it came from. The scanner index supports the
scanner-stratified target sampling used during augmentation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .color import RgbPatch, rgb_to_od
from .errors import DuplicateSlide, InsufficientTissue, SchemaViolation
from .stain import EstimationParams, StainMatrix, estimate_stain_vectors

UNIT_NORM_TOLERANCE = 1e-6
_FIELDS = ("slide_id", "lab", "scanner", "indication", "pixel_count",
           "h", "e", "created_at")


@dataclass(frozen=True)
class StainVectorRecord:
    stains: StainMatrix
    slide_id: str
    lab: str
    scanner: str
    indication: str
    pixel_count: int
    created_at: str  # ISO 8601

    def __post_init__(self):
        if self.pixel_count < 100:
            raise ValueError(f"pixel_count {self.pixel_count} below estimation minimum")


@dataclass
class StainVectorLibrary:
    records: list[StainVectorRecord] = field(default_factory=list)
    _by_scanner: dict[str, list[int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        existing = self.records
        self.records = []
        self._by_scanner = {}
        for record in existing:
            self.add(record)

    def add(self, record: StainVectorRecord) -> None:
        if any(r.slide_id == record.slide_id for r in self.records):
            raise DuplicateSlide(f"slide_id {record.slide_id!r} already in library")
        self._by_scanner.setdefault(record.scanner, []).append(len(self.records))
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def scanners(self) -> list[str]:
        """Distinct scanner names in deterministic (sorted) order."""
        return sorted(self._by_scanner)

    def records_for_scanner(self, scanner: str) -> list[StainVectorRecord]:
        return [self.records[i] for i in self._by_scanner.get(scanner, [])]


def build_record(patches: list[RgbPatch], slide_id: str, lab: str, scanner: str,
                 indication: str, params: EstimationParams,
                 rng: np.random.Generator,
                 created_at: str | None = None) -> StainVectorRecord:
    """Estimate one slide's stain vectors by pooling tissue OD across patches.

    Tissue means any channel's OD above beta; pools are subsampled to
    params.max_pixels with the caller's generator before estimation.
    """
    if not patches:
        raise ValueError("at least one patch is required")
    pools = []
    for patch in patches:
        od = rgb_to_od(patch).data.reshape(-1, 3)
        pools.append(od[np.any(od > params.beta, axis=1)])
    pixels = np.concatenate(pools, axis=0)
    if pixels.shape[0] > params.max_pixels:
        chosen = rng.choice(pixels.shape[0], size=params.max_pixels, replace=False)
        pixels = pixels[np.sort(chosen)]
    if pixels.shape[0] < 100:
        raise InsufficientTissue(
            f"{pixels.shape[0]} pooled tissue pixels; need at least 100")

    stains = estimate_stain_vectors(pixels, params)
    if created_at is None:
        created_at = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return StainVectorRecord(stains=stains, slide_id=slide_id, lab=lab,
                             scanner=scanner, indication=indication,
                             pixel_count=int(pixels.shape[0]),
                             created_at=created_at)


def _format_triple(vector: np.ndarray) -> str:
    return "[" + ",".join(format(float(v), ".17g") for v in vector) + "]"


def _record_line(record: StainVectorRecord) -> str:
    # Hand-assembled so float formatting (17 significant digits) and key
    # order are byte-stable across runs and platforms.
    return ("{" + ",".join([
        f'"slide_id":{json.dumps(record.slide_id)}',
        f'"lab":{json.dumps(record.lab)}',
        f'"scanner":{json.dumps(record.scanner)}',
        f'"indication":{json.dumps(record.indication)}',
        f'"pixel_count":{record.pixel_count}',
        f'"h":{_format_triple(record.stains.hematoxylin)}',
        f'"e":{_format_triple(record.stains.eosin)}',
        f'"created_at":{json.dumps(record.created_at)}',
    ]) + "}")


def save(library: StainVectorLibrary, path: str | Path) -> None:
    lines = [_record_line(record) for record in library.records]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _parse_record(obj: dict, line_number: int) -> StainVectorRecord:
    missing = [key for key in _FIELDS if key not in obj]
    if missing:
        raise SchemaViolation(f"line {line_number}: missing fields {missing}")
    for key in ("h", "e"):
        triple = obj[key]
        if not (isinstance(triple, list) and len(triple) == 3):
            raise SchemaViolation(f"line {line_number}: {key} must be a 3-vector")
        norm = float(np.linalg.norm(np.asarray(triple, dtype=np.float64)))
        if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
            raise SchemaViolation(
                f"line {line_number}: {key} norm {norm:.6f} is not unit length")
    if not isinstance(obj["pixel_count"], int):
        raise SchemaViolation(f"line {line_number}: pixel_count must be an integer")
    columns = np.column_stack([np.asarray(obj["h"], dtype=np.float64),
                               np.asarray(obj["e"], dtype=np.float64)])
    norms = np.linalg.norm(columns, axis=0)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        # Within schema tolerance but rounded (hand-authored file): restore
        # the unit-norm invariant. Library-written files carry 17 significant
        # digits, skip this branch, and round-trip bit-identically.
        columns = columns / norms
    try:
        stains = StainMatrix(columns=columns)
        return StainVectorRecord(
            stains=stains, slide_id=obj["slide_id"], lab=obj["lab"],
            scanner=obj["scanner"], indication=obj["indication"],
            pixel_count=obj["pixel_count"], created_at=obj["created_at"])
    except (ValueError, TypeError) as exc:
        raise SchemaViolation(f"line {line_number}: {exc}") from exc


def load(path: str | Path) -> StainVectorLibrary:
    library = StainVectorLibrary()
    text = Path(path).read_text(encoding="utf-8")
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"line {line_number}: invalid JSON: {exc}") from exc
        library.add(_parse_record(obj, line_number))
    return library


def stats(library: StainVectorLibrary) -> dict:
    """Record counts per scanner, lab, and indication, plus the total."""
    by_scanner: dict[str, int] = {}
    by_lab: dict[str, int] = {}
    by_indication: dict[str, int] = {}
    for record in library.records:
        by_scanner[record.scanner] = by_scanner.get(record.scanner, 0) + 1
        by_lab[record.lab] = by_lab.get(record.lab, 0) + 1
        by_indication[record.indication] = by_indication.get(record.indication, 0) + 1
    return {
        "total": len(library.records),
        "by_scanner": by_scanner,
        "by_lab": by_lab,
        "by_indication": by_indication,
    }
