"""Delimited run outputs and their figures.

Covers the trace file (accepted-iteration log), the affine text form, metrics
text/CSV writers and the two Agg-rendered figures (score convergence, per-class
overlap bars). Floats are written with repr so files parse back bit-exactly.
"""

from __future__ import annotations

import csv
from typing import Iterable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError
from .metrics import MetricsReport
from .registration import TraceRecord
from .transforms import AffineParams

_TRACE_COLUMNS = "level,iteration,cc_score,step_size"


def write_trace(path, trace: list[TraceRecord], header_lines: Iterable[str] = ()) -> None:
    """Write the accepted-iteration trace: '#' comments plus CSV records.

    Records are grouped under '# stage k' comment lines; the CSV columns are
    level, iteration, cc_score, step_size.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# registration trace\n")
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(f"# columns: {_TRACE_COLUMNS}\n")
        stage = None
        for rec in trace:
            if rec.stage != stage:
                stage = rec.stage
                fh.write(f"# stage {stage}\n")
            fh.write(f"{rec.level},{rec.iteration},{rec.cc_score!r},{rec.step_size!r}\n")


def read_trace(path) -> list[TraceRecord]:
    records: list[TraceRecord] = []
    stage = 0
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.startswith("stage "):
                    try:
                        stage = int(body.split()[1])
                    except (IndexError, ValueError) as exc:
                        raise ConfigError(f"bad stage comment {line!r}") from exc
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ConfigError(f"trace row needs 4 fields, got {line!r}")
            try:
                records.append(
                    TraceRecord(stage, int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]))
                )
            except ValueError as exc:
                raise ConfigError(f"bad trace row {line!r}") from exc
    return records


def write_affine(path, params: AffineParams) -> None:
    """Write the pull-back transform: 3x3 matrix rows, translation, center."""
    m = params.matrix33
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# pull-back map: p -> (p - center) @ matrix.T + center + translation\n")
        fh.write("# three matrix rows, then translation, then center (mm)\n")
        for row in m:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write(" ".join(repr(float(v)) for v in params.t) + "\n")
        fh.write(" ".join(repr(float(v)) for v in params.center) + "\n")


def read_affine(path) -> AffineParams:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append(tuple(float(tok) for tok in line.split()))
            except ValueError as exc:
                raise ConfigError(f"bad affine row {line!r}") from exc
    if len(rows) != 5 or any(len(r) != 3 for r in rows):
        raise ConfigError(f"affine file needs 5 rows of 3 numbers, got {len(rows)} rows")
    matrix = rows[0] + rows[1] + rows[2]
    return AffineParams(matrix, rows[3], rows[4])


def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.6f}"


def write_metrics_text(path, report: MetricsReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# hd95 variant: symmetric (max of the two directed percentiles)\n")
        for cm in report.per_class:
            fh.write(
                f"class {cm.class_id}: dsc={cm.dsc:.6f} iou={cm.iou:.6f} "
                f"hd95={cm.hd95_mm:.6f} mm\n"
            )
        fh.write(f"mdsc={_fmt(report.mdsc)}\n")
        fh.write(f"adsc={_fmt(report.adsc)}\n")
        fh.write(f"miou={_fmt(report.miou)}\n")
        fh.write(f"aiou={_fmt(report.aiou)}\n")


def write_metrics_csv(path, report: MetricsReport) -> None:
    """Flat name,value rows: per-class dsc_k/iou_k/hd95_k then the aggregates."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "value"])
        writer.writerow(["hd95_variant", "symmetric"])
        for cm in report.per_class:
            writer.writerow([f"dsc_{cm.class_id}", repr(cm.dsc)])
            writer.writerow([f"iou_{cm.class_id}", repr(cm.iou)])
            writer.writerow([f"hd95_{cm.class_id}", repr(cm.hd95_mm)])
        for name, value in (
            ("mdsc", report.mdsc),
            ("adsc", report.adsc),
            ("miou", report.miou),
            ("aiou", report.aiou),
        ):
            writer.writerow([name, "" if value is None else repr(value)])


def plot_trace(trace: list[TraceRecord], out_path) -> None:
    """Score-versus-accepted-iteration figure, one segment per stage/level."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    if trace:
        xs = np.arange(len(trace))
        keys = []
        for rec in trace:
            if (rec.stage, rec.level) not in keys:
                keys.append((rec.stage, rec.level))
        for stage, level in keys:
            sel = [k for k, r in enumerate(trace) if (r.stage, r.level) == (stage, level)]
            ax.plot(
                xs[sel],
                [trace[k].cc_score for k in sel],
                marker=".",
                label=f"stage {stage} level {level}",
            )
        ax.legend(fontsize=8)
    ax.set_xlabel("accepted iteration")
    ax.set_ylabel("local correlation score")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_metrics(report: MetricsReport, out_path) -> None:
    """Per-class bars: overlap ratios on top, surface distance below."""
    classes = [cm.class_id for cm in report.per_class]
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7.0, 5.5), sharex=True)
    if classes:
        pos = np.arange(len(classes))
        dsc = [cm.dsc for cm in report.per_class]
        iou = [cm.iou for cm in report.per_class]
        hd = [cm.hd95_mm for cm in report.per_class]
        ax0.bar(pos - 0.18, dsc, width=0.36, label="dsc")
        ax0.bar(pos + 0.18, iou, width=0.36, label="iou")
        ax0.set_ylim(0.0, 1.05)
        ax0.legend(fontsize=8)
        ax1.bar(pos, hd, width=0.5, color="tab:red")
        ax1.set_xticks(pos, [str(c) for c in classes])
    ax0.set_ylabel("overlap")
    ax1.set_ylabel("hd95 (mm)")
    ax1.set_xlabel("class")
    for ax in (ax0, ax1):
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
