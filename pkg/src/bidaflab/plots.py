"""Metric-curve SVG emission from run logs.

Output is pure text SVG with fixed float formatting, so identical inputs
produce byte-identical files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

from .train import METRIC_HEADER, MetricRecord

METRICS = ("f1", "em", "avna", "loss")

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
            "#e377c2", "#7f7f7f")

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 24, 36, 48


class PlotError(ValueError):
    pass


@dataclass
class PlotSpec:
    metric: str
    logs: list[tuple[str, str]]  # (label, csv path)
    out_path: str
    title: str = ""
    split: str = "dev"
    smooth: int = 0


def read_metric_log(path: str) -> list[MetricRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRIC_HEADER:
            raise PlotError(
                f"{path}: expected header {','.join(METRIC_HEADER)}, "
                f"got {','.join(header or [])}")
        records = []
        for row in reader:
            records.append(MetricRecord(int(row[0]), row[1], float(row[2]),
                                        float(row[3]), float(row[4]),
                                        float(row[5])))
    return records


def _series(records: list[MetricRecord], metric: str,
            split: str) -> list[tuple[int, float]]:
    picked = [(r.step, getattr(r, metric)) for r in records if r.split == split]
    if not picked:
        raise PlotError(f"no '{split}' rows in log")
    return picked


def _smooth(points: list[tuple[int, float]], window: int) -> list[tuple[int, float]]:
    if window <= 1:
        return points
    out = []
    for i in range(len(points)):
        lo = max(0, i - window + 1)
        vals = [v for _, v in points[lo:i + 1]]
        out.append((points[i][0], sum(vals) / len(vals)))
    return out


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def emit_plot(spec: PlotSpec) -> None:
    """Write one polyline per labeled log, with axes and a legend."""
    if spec.metric not in METRICS:
        raise PlotError(f"metric must be one of {METRICS}, got {spec.metric!r}")
    labels = [label for label, _ in spec.logs]
    if len(set(labels)) != len(labels):
        raise PlotError(f"duplicate labels: {labels}")
    series = []
    for label, path in spec.logs:
        points = _series(read_metric_log(path), spec.metric, spec.split)
        series.append((label, _smooth(points, spec.smooth)))

    xs = [s for _, pts in series for s, _ in pts]
    ys = [v for _, pts in series for _, v in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_lo == x_hi:
        x_hi = x_lo + 1
    if y_lo == y_hi:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    inner_w = WIDTH - MARGIN_L - MARGIN_R
    inner_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x: float) -> float:
        return MARGIN_L + inner_w * (x - x_lo) / (x_hi - x_lo)

    def sy(y: float) -> float:
        return MARGIN_T + inner_h * (1.0 - (y - y_lo) / (y_hi - y_lo))

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if spec.title:
        lines.append(f'<text x="{WIDTH // 2}" y="20" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="14">{spec.title}</text>')
    # axes
    x0, y0 = MARGIN_L, HEIGHT - MARGIN_B
    lines.append(f'<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}" '
                 f'stroke="black"/>')
    lines.append(f'<line x1="{x0}" y1="{y0}" x2="{WIDTH - MARGIN_R}" y2="{y0}" '
                 f'stroke="black"/>')
    for i in range(5):
        fx = x_lo + (x_hi - x_lo) * i / 4
        fy = y_lo + (y_hi - y_lo) * i / 4
        px, py = sx(fx), sy(fy)
        lines.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" '
                     f'y2="{y0 + 5}" stroke="black"/>')
        lines.append(f'<text x="{_fmt(px)}" y="{y0 + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{_fmt(fx)}</text>')
        lines.append(f'<line x1="{x0 - 5}" y1="{_fmt(py)}" x2="{x0}" '
                     f'y2="{_fmt(py)}" stroke="black"/>')
        lines.append(f'<text x="{x0 - 8}" y="{_fmt(py + 3)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{_fmt(fy)}</text>')
    lines.append(f'<text x="{MARGIN_L + inner_w // 2}" y="{HEIGHT - 12}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">step</text>')
    lines.append(f'<text x="16" y="{MARGIN_T + inner_h // 2}" '
                 f'text-anchor="middle" font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 16 {MARGIN_T + inner_h // 2})">'
                 f'{spec.split}/{spec.metric.upper()}</text>')
    # curves
    for idx, (label, points) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        coords = " ".join(f"{_fmt(sx(s))},{_fmt(sy(v))}" for s, v in points)
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{coords}"/>')
    # legend, input order
    for idx, (label, _) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        ly = MARGIN_T + 14 + 16 * idx
        lx = WIDTH - MARGIN_R - 150
        lines.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        lines.append(f'<text x="{lx + 28}" y="{ly}" font-family="sans-serif" '
                     f'font-size="11">{label}</text>')
    lines.append("</svg>")
    with open(spec.out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
