"""Merge metrics files and render SVG bar charts (no plotting dependency)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

PALETTE = ("#4878cf", "#ee854a", "#6acc65", "#d65f5f", "#956cb4", "#8c613c")


@dataclass
class MetricsRow:
    label: str
    oa: float
    kappa: float
    f1: float
    pa: list[float]


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "oa" not in reader.fieldnames:
            raise ValueError(f"{path}: not a metrics file (missing 'oa' column)")
        pa_cols = sorted(
            (c for c in reader.fieldnames if c.startswith("pa_")),
            key=lambda c: int(c.split("_")[1]),
        )
        for rec in reader:
            row = MetricsRow(
                label=rec.get("label", Path(path).stem),
                oa=float(rec["oa"]),
                kappa=float(rec["kappa"]),
                f1=float(rec["f1"]),
                pa=[float(rec[c]) for c in pa_cols],
            )
            for name, value in [("oa", row.oa), ("kappa", row.kappa), ("f1", row.f1)] + [
                (c, v) for c, v in zip(pa_cols, row.pa)
            ]:
                if name == "kappa":
                    if not -1.0 <= value <= 1.0:
                        raise ValueError(f"{path}: {name}={value} outside [-1, 1]")
                elif not 0.0 <= value <= 1.0:
                    raise ValueError(f"{path}: {name}={value} outside [0, 1]")
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: metrics file has no rows")
    return rows


def merge_metrics(paths: list[str | Path]) -> list[MetricsRow]:
    if not paths:
        raise ValueError("need at least one metrics file")
    merged = []
    for p in paths:
        merged.extend(read_metrics_csv(p))
    return merged


def write_merged_csv(rows: list[MetricsRow], path: str | Path) -> None:
    n_pa = len(rows[0].pa)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "oa", "kappa", "f1"] + [f"pa_{k}" for k in range(n_pa)])
        for r in rows:
            writer.writerow([r.label, repr(r.oa), repr(r.kappa), repr(r.f1)] + [repr(v) for v in r.pa])


def _bar(x: float, y: float, w: float, h: float, color: str, title: str) -> str:
    return (
        f'<rect x="{x:.1f}" y="{y:.1f}" width="{w:.1f}" height="{h:.1f}" '
        f'fill="{color}"><title>{title}</title></rect>'
    )


def _text(x: float, y: float, s: str, size: int = 11, anchor: str = "middle") -> str:
    return (
        f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" font-family="sans-serif" '
        f'text-anchor="{anchor}">{s}</text>'
    )


def producer_accuracy_svg(rows: list[MetricsRow]) -> str:
    """Grouped bars, one group per class index, one bar per row/model."""
    n_classes = len(rows[0].pa)
    left, top, plot_h = 50, 30, 220
    group_w = max(18 * len(rows) + 14, 40)
    width = left + n_classes * group_w + 20
    height = top + plot_h + 60
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        _text(left + n_classes * group_w / 2, 18, "Producer accuracy per class", 13),
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = top + plot_h * (1 - frac)
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{left + n_classes * group_w}" y2="{y:.1f}" '
            f'stroke="#dddddd"/>'
        )
        parts.append(_text(left - 8, y + 4, f"{frac:.2f}", 10, "end"))
    for k in range(n_classes):
        gx = left + k * group_w
        for i, row in enumerate(rows):
            v = row.pa[k]
            bh = plot_h * v
            parts.append(
                _bar(gx + 7 + i * 18, top + plot_h - bh, 14, bh,
                     PALETTE[i % len(PALETTE)], f"{row.label} pa_{k}={v:.3f}")
            )
        parts.append(_text(gx + group_w / 2, top + plot_h + 16, f"pa_{k}", 10))
    for i, row in enumerate(rows):
        lx = left + i * 130
        c = PALETTE[i % len(PALETTE)]
        parts.append(f'<rect x="{lx}" y="{height - 22}" width="12" height="12" fill="{c}"/>')
        parts.append(_text(lx + 18, height - 12, row.label, 11, "start"))
    parts.append("</svg>")
    return "\n".join(parts)


def overall_accuracy_svg(rows: list[MetricsRow]) -> str:
    left, top, plot_h, bar_w = 50, 30, 220, 60
    width = left + len(rows) * (bar_w + 30) + 20
    height = top + plot_h + 50
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        _text(width / 2, 18, "Overall accuracy", 13),
    ]
    for frac in (0.0, 0.5, 1.0):
        y = top + plot_h * (1 - frac)
        parts.append(
            f'<line x1="{left}" y1="{y:.1f}" x2="{width - 20}" y2="{y:.1f}" stroke="#dddddd"/>'
        )
        parts.append(_text(left - 8, y + 4, f"{frac:.1f}", 10, "end"))
    for i, row in enumerate(rows):
        x = left + 15 + i * (bar_w + 30)
        bh = plot_h * row.oa
        parts.append(_bar(x, top + plot_h - bh, bar_w, bh, PALETTE[i % len(PALETTE)],
                          f"{row.label} OA={row.oa:.3f}"))
        parts.append(_text(x + bar_w / 2, top + plot_h + 16, row.label, 10))
        parts.append(_text(x + bar_w / 2, top + plot_h - bh - 5, f"{row.oa:.3f}", 10))
    parts.append("</svg>")
    return "\n".join(parts)


def write_report(metrics_paths: list[str | Path], out_dir: str | Path) -> list[Path]:
    """Emit pa_chart.svg, oa_chart.svg and metrics_merged.csv; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = merge_metrics(metrics_paths)
    written = []
    for name, content in (
        ("pa_chart.svg", producer_accuracy_svg(rows)),
        ("oa_chart.svg", overall_accuracy_svg(rows)),
    ):
        path = out / name
        path.write_text(content + "\n")
        written.append(path)
    merged = out / "metrics_merged.csv"
    write_merged_csv(rows, merged)
    written.append(merged)
    return written
