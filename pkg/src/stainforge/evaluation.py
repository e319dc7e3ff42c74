"""Method comparison harness: bootstrapped macro-F1 and paired-scanner ICC.

Scores are macro-averaged F1 over annotation records; uncertainty comes from
resampling the annotations with replacement and reporting the 5th, 50th and
95th percentiles of the per-round scores (values reported x 100). Paired
scanner consistency uses the two-way mixed, absolute-agreement, single
measure intraclass correlation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInput, InsufficientPairs, SchemaViolation, ZeroVariance

DEFAULT_ROUNDS = 10
DEFAULT_PERCENTILES = (5.0, 50.0, 95.0)

MANIFEST_COLUMNS = ("method", "annotation_id", "slide_id", "lab", "scanner",
                    "label", "prediction")


@dataclass(frozen=True)
class EvalRecord:
    annotation_id: str
    slide_id: str
    lab: str
    scanner: str
    label: int
    prediction: int


@dataclass(frozen=True)
class BootstrapSummary:
    """Macro-F1 x 100 percentiles over bootstrap rounds."""

    p05: float
    p50: float
    p95: float
    rounds: int
    seed: int

    def __post_init__(self):
        if not self.p05 <= self.p50 <= self.p95:
            raise ValueError("percentiles must be non-decreasing")
        if self.rounds < 1:
            raise ValueError("at least one bootstrap round is required")


def _validate_classes(records: list[EvalRecord], n_classes: int) -> None:
    for record in records:
        if not (0 <= record.label < n_classes and 0 <= record.prediction < n_classes):
            raise ValueError(
                f"annotation {record.annotation_id}: label/prediction outside "
                f"[0, {n_classes})")


def macro_f1(records: list[EvalRecord], n_classes: int) -> float:
    """Unweighted mean of per-class F1.

    Classes absent from both labels and predictions are excluded from the
    mean; a class that is predicted but never labeled contributes F1 = 0.
    """
    if not records:
        raise EmptyInput("macro_f1 needs at least one record")
    _validate_classes(records, n_classes)
    labels = np.array([r.label for r in records])
    predictions = np.array([r.prediction for r in records])
    return _macro_f1_arrays(labels, predictions, n_classes)


def _macro_f1_arrays(labels: np.ndarray, predictions: np.ndarray,
                     n_classes: int) -> float:
    tp = np.bincount(labels[labels == predictions], minlength=n_classes)
    label_counts = np.bincount(labels, minlength=n_classes)
    pred_counts = np.bincount(predictions, minlength=n_classes)
    fp = pred_counts - tp
    fn = label_counts - tp
    present = (label_counts + pred_counts) > 0
    denominator = 2 * tp + fp + fn
    f1 = np.zeros(n_classes)
    nonzero = denominator > 0
    f1[nonzero] = 2 * tp[nonzero] / denominator[nonzero]
    return float(f1[present].mean())


def bootstrap(records: list[EvalRecord], n_classes: int,
              rounds: int = DEFAULT_ROUNDS,
              percentiles: tuple[float, ...] = DEFAULT_PERCENTILES,
              seed: int = 0) -> BootstrapSummary:
    """Resample annotations with replacement; summarize round scores.

    Each round's generator derives from (seed, round index) so rounds can
    run in any order or in parallel with identical results.
    """
    if not records:
        raise EmptyInput("bootstrap needs at least one record")
    _validate_classes(records, n_classes)
    labels = np.array([r.label for r in records])
    predictions = np.array([r.prediction for r in records])
    n = len(records)

    scores = np.empty(rounds)
    for round_index in range(rounds):
        rng = np.random.default_rng(np.random.SeedSequence([seed, round_index]))
        idx = rng.integers(0, n, size=n)
        scores[round_index] = _macro_f1_arrays(labels[idx], predictions[idx],
                                               n_classes)
    p05, p50, p95 = (float(np.percentile(np.sort(scores), p)) * 100.0
                     for p in percentiles)
    return BootstrapSummary(p05=p05, p50=p50, p95=p95, rounds=rounds, seed=seed)


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    lab: str
    scanner: str
    n_records: int
    summary: BootstrapSummary
    best: bool = False


def parse_manifest(path: str | Path) -> list[tuple[str, EvalRecord]]:
    """Read (method, record) rows from the evaluation manifest CSV."""
    rows: list[tuple[str, EvalRecord]] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise SchemaViolation(
                f"manifest columns must be {','.join(MANIFEST_COLUMNS)}, "
                f"got {reader.fieldnames}")
        for line_number, row in enumerate(reader, start=2):
            try:
                record = EvalRecord(
                    annotation_id=row["annotation_id"], slide_id=row["slide_id"],
                    lab=row["lab"], scanner=row["scanner"],
                    label=int(row["label"]), prediction=int(row["prediction"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaViolation(f"manifest line {line_number}: {exc}") from exc
            rows.append((row["method"], record))
    return rows


def compare(manifest_rows: list[tuple[str, EvalRecord]], n_classes: int,
            rounds: int = DEFAULT_ROUNDS, seed: int = 0) -> list[ComparisonRow]:
    """One bootstrap summary per (method, lab/scanner partition).

    Partitions are ordered deterministically; within each partition the
    method with the highest median is flagged as best.
    """
    if not manifest_rows:
        raise EmptyInput("comparison needs at least one manifest row")
    grouped: dict[tuple[str, str, str], list[EvalRecord]] = {}
    for method, record in manifest_rows:
        grouped.setdefault((method, record.lab, record.scanner), []).append(record)

    results = []
    for (method, lab, scanner), records in sorted(grouped.items()):
        summary = bootstrap(records, n_classes, rounds=rounds, seed=seed)
        results.append(ComparisonRow(method=method, lab=lab, scanner=scanner,
                                     n_records=len(records), summary=summary))

    best: dict[tuple[str, str], float] = {}
    for row in results:
        key = (row.lab, row.scanner)
        best[key] = max(best.get(key, -np.inf), row.summary.p50)
    return [
        ComparisonRow(method=r.method, lab=r.lab, scanner=r.scanner,
                      n_records=r.n_records, summary=r.summary,
                      best=(r.summary.p50 == best[(r.lab, r.scanner)]))
        for r in results
    ]


REPORT_COLUMNS = ("method", "lab", "scanner", "n_records",
                  "p50", "p05", "p95", "best")


def report_csv(rows: list[ComparisonRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow([
            row.method, row.lab, row.scanner, row.n_records,
            f"{row.summary.p50:.2f}", f"{row.summary.p05:.2f}",
            f"{row.summary.p95:.2f}", int(row.best)])
    return buffer.getvalue()


def report_markdown(rows: list[ComparisonRow]) -> str:
    lines = [
        "| Method | Lab | Scanner | Records | 50% [5%, 95%] |",
        "|---|---|---|---|---|",
    ]
    for row in rows:
        cell = f"{row.summary.p50:.2f} [{row.summary.p05:.2f}, {row.summary.p95:.2f}]"
        if row.best:
            cell = f"**{cell}**"
        lines.append(f"| {row.method} | {row.lab} | {row.scanner} "
                     f"| {row.n_records} | {cell} |")
    return "\n".join(lines) + "\n"


def icc_consistency(pairs: list[tuple[float, float]]) -> float:
    """ICC(A,1) over paired per-slide values from two scanners."""
    if len(pairs) < 2:
        raise InsufficientPairs("intraclass correlation needs >= 2 pairs")
    values = np.asarray(pairs, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != 2:
        raise ValueError("pairs must be (n, 2)")
    n, k = values.shape

    grand = values.mean()
    row_means = values.mean(axis=1)
    col_means = values.mean(axis=0)
    ss_rows = k * np.sum((row_means - grand) ** 2)
    ss_cols = n * np.sum((col_means - grand) ** 2)
    ss_total = np.sum((values - grand) ** 2)
    ss_error = ss_total - ss_rows - ss_cols

    ms_rows = ss_rows / (n - 1)
    ms_cols = ss_cols / (k - 1)
    ms_error = ss_error / ((n - 1) * (k - 1))
    denominator = ms_rows + (k - 1) * ms_error + (k / n) * (ms_cols - ms_error)
    if abs(denominator) < 1e-300:
        raise ZeroVariance("no variance in the paired measurements")
    return float((ms_rows - ms_error) / denominator)
