"""Comparison report figure: per-method median bars with percentile whiskers."""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import SchemaViolation
from .evaluation import REPORT_COLUMNS


def read_report_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or tuple(reader.fieldnames) != REPORT_COLUMNS:
            raise SchemaViolation(
                f"report columns must be {','.join(REPORT_COLUMNS)}, "
                f"got {reader.fieldnames}")
        for row in reader:
            try:
                rows.append({
                    "method": row["method"], "lab": row["lab"],
                    "scanner": row["scanner"],
                    "p50": float(row["p50"]), "p05": float(row["p05"]),
                    "p95": float(row["p95"]), "best": row["best"] == "1",
                })
            except (KeyError, ValueError) as exc:
                raise SchemaViolation(f"bad report row {row}: {exc}") from exc
    return rows


def render_report_chart(rows: list[dict], out_path: str | Path) -> None:
    """Grouped bar chart (SVG): p50 per method with p05-p95 whiskers."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # Deterministic SVG output: fixed hash salt, no embedded date.
    matplotlib.rcParams["svg.hashsalt"] = "stainforge"

    partitions = sorted({(r["lab"], r["scanner"]) for r in rows})
    methods = sorted({r["method"] for r in rows})
    index = {(r["method"], r["lab"], r["scanner"]): r for r in rows}

    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * len(partitions)), 4.0))
    for m_pos, method in enumerate(methods):
        centers, heights, err_lo, err_hi = [], [], [], []
        for p_pos, (lab, scanner) in enumerate(partitions):
            row = index.get((method, lab, scanner))
            if row is None:
                continue
            centers.append(p_pos + (m_pos - (len(methods) - 1) / 2) * width)
            heights.append(row["p50"])
            err_lo.append(row["p50"] - row["p05"])
            err_hi.append(row["p95"] - row["p50"])
        ax.bar(centers, heights, width=width * 0.9, label=method,
               yerr=[err_lo, err_hi], capsize=3)

    ax.set_xticks(range(len(partitions)))
    ax.set_xticklabels([f"{lab}\n{scanner}" for lab, scanner in partitions])
    ax.set_ylabel("macro F1 x 100 (p50, whiskers p05-p95)")
    ax.set_ylim(0, 105)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
