"""Markdown tables, CSV, and figures summarizing an evaluation run."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_PNG_META = {"Software": "hybridctc"}


@dataclass(frozen=True)
class ModeSummary:
    mode: str
    wer: float
    substitutions: int
    insertions: int
    deletions: int
    reference_words: int


def wer_table_markdown(rows: Sequence[ModeSummary]) -> str:
    lines = [
        "| Mode | WER (%) | Sub | Ins | Del | Ref words |",
        "| --- | ---: | ---: | ---: | ---: | ---: |",
    ]
    for r in rows:
        lines.append(
            f"| {r.mode} | {100 * r.wer:.2f} | {r.substitutions} | {r.insertions} "
            f"| {r.deletions} | {r.reference_words} |"
        )
    return "\n".join(lines) + "\n"


def modes_csv(rows: Sequence[ModeSummary]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["mode", "wer", "substitutions", "insertions", "deletions",
                     "reference_words"])
    for r in rows:
        writer.writerow([r.mode, repr(r.wer), r.substitutions, r.insertions,
                         r.deletions, r.reference_words])
    return buf.getvalue()


def summary_csv(items: Mapping[str, float | None]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["metric", "value"])
    for key, value in items.items():
        writer.writerow([key, "n/a" if value is None else repr(float(value))])
    return buf.getvalue()


def plot_wer_by_mode(rows: Sequence[ModeSummary], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    modes = [r.mode for r in rows]
    ax.bar(modes, [100 * r.wer for r in rows], color="#4878b0")
    ax.set_ylabel("WER (%)")
    ax.set_title("Word error rate by decoding mode")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_loss_curves(curves: Mapping[str, Sequence[tuple[int, float]]], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, curve in curves.items():
        if curve:
            steps, losses = zip(*curve)
            ax.plot(steps, losses, label=label, linewidth=0.9)
    ax.set_xlabel("step")
    ax.set_ylabel("CTC loss (nats)")
    ax.set_title("Training loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def render_report(
    out_dir: str | Path,
    rows: Sequence[ModeSummary],
    summary: Mapping[str, float | None],
    curves: Mapping[str, Sequence[tuple[int, float]]] | None = None,
) -> list[Path]:
    """Write report.md, report.csv, summary.csv, and figures; returns paths."""
    out_dir = Path(out_dir)
    figures = out_dir / "figures"
    figures.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    md = ["# Decoding evaluation", "", "## Word error rate by mode", ""]
    md.append(wer_table_markdown(rows))
    md.append("## OOV accounting")
    md.append("")
    for key, value in summary.items():
        shown = "n/a" if value is None else f"{value:.4f}"
        md.append(f"- {key}: {shown}")
    md.append("")
    md.append("![WER by mode](figures/wer_by_mode.png)")
    if curves:
        md.append("")
        md.append("![Training loss](figures/loss_curves.png)")
    md.append("")

    report_md = out_dir / "report.md"
    report_md.write_text("\n".join(md), encoding="utf-8")
    written.append(report_md)

    report_csv = out_dir / "report.csv"
    report_csv.write_text(modes_csv(rows), encoding="utf-8")
    written.append(report_csv)

    sum_csv = out_dir / "summary.csv"
    sum_csv.write_text(summary_csv(summary), encoding="utf-8")
    written.append(sum_csv)

    wer_png = figures / "wer_by_mode.png"
    plot_wer_by_mode(rows, wer_png)
    written.append(wer_png)
    if curves:
        loss_png = figures / "loss_curves.png"
        plot_loss_curves(curves, loss_png)
        written.append(loss_png)
    return written
