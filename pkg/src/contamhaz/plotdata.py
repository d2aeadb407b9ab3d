"""Step-function plot data for the cumulative-effect curves.

The CSV is the authoritative artifact; the SVG is a convenience render
of the same rows (one stepped polyline per estimator plus a shaded 95%
band).  Output is fully deterministic: no timestamps, fixed colours,
fixed float formatting.
"""

from __future__ import annotations

import csv
from typing import Mapping

import numpy as np

from .hazards import CoefficientCurve, _Z95

PLOT_COLUMNS = ["estimator", "time_days", "cum_effect_pct", "ci_low_pct", "ci_high_pct"]

_PALETTE = ("#1f6fb4", "#d95f02", "#4daf4a", "#984ea3")


def curve_plot_rows(name: str, curve: CoefficientCurve) -> list[tuple]:
    rows = [(name, 0.0, 0.0, 0.0, 0.0)]
    for k in range(len(curve)):
        est = 100.0 * float(curve.cum_coeff[k, 1])
        sd = 100.0 * float(np.sqrt(max(curve.robust_var[k, 1, 1], 0.0)))
        rows.append((name, float(curve.event_times[k]), est,
                     est - _Z95 * sd, est + _Z95 * sd))
    return rows


def write_plot_csv(curves: Mapping[str, CoefficientCurve], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PLOT_COLUMNS)
        for name in sorted(curves):
            for row in curve_plot_rows(name, curves[name]):
                writer.writerow([row[0]] + [repr(v) for v in row[1:]])


def _step_points(times, values) -> list[tuple[float, float]]:
    pts = [(times[0], values[0])]
    for i in range(1, len(times)):
        pts.append((times[i], values[i - 1]))
        pts.append((times[i], values[i]))
    return pts


def write_plot_svg(curves: Mapping[str, CoefficientCurve], path,
                   width: int = 720, height: int = 480) -> None:
    """Minimal static SVG: one stepped polyline per estimator with its
    shaded confidence band."""
    series = {}
    xs_all, ys_all = [0.0], [0.0]
    for name in sorted(curves):
        rows = curve_plot_rows(name, curves[name])
        t = [r[1] for r in rows]
        est = [r[2] for r in rows]
        low = [r[3] for r in rows]
        high = [r[4] for r in rows]
        series[name] = (t, est, low, high)
        xs_all.extend(t)
        ys_all.extend(low)
        ys_all.extend(high)

    margin = 48.0
    x0, x1 = 0.0, max(max(xs_all), 1e-9)
    y0, y1 = min(ys_all), max(ys_all)
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(x: float) -> float:
        return margin + (x - x0) / (x1 - x0) * (width - 2 * margin)

    def sy(y: float) -> float:
        return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin)

    def fmt(v: float) -> str:
        return f"{v:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    zero_y = sy(0.0)
    parts.append(f'<line x1="{fmt(sx(x0))}" y1="{fmt(zero_y)}" x2="{fmt(sx(x1))}" '
                 f'y2="{fmt(zero_y)}" stroke="#999999" stroke-dasharray="4 3"/>')
    for i, (name, (t, est, low, high)) in enumerate(sorted(series.items())):
        colour = _PALETTE[i % len(_PALETTE)]
        band_upper = _step_points(t, high)
        band_lower = _step_points(t, low)[::-1]
        band = " ".join(f"{fmt(sx(x))},{fmt(sy(y))}" for x, y in band_upper + band_lower)
        parts.append(f'<polygon points="{band}" fill="{colour}" fill-opacity="0.15" '
                     'stroke="none"/>')
        line = " ".join(f"{fmt(sx(x))},{fmt(sy(y))}"
                        for x, y in _step_points(t, est))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{colour}" '
                     'stroke-width="1.5"/>')
        parts.append(f'<text x="{fmt(width - margin - 150)}" y="{fmt(margin + 16 * i)}" '
                     f'font-family="sans-serif" font-size="12" fill="{colour}">'
                     f'{name}</text>')
    parts.append(f'<line x1="{fmt(margin)}" y1="{fmt(height - margin)}" '
                 f'x2="{fmt(width - margin)}" y2="{fmt(height - margin)}" stroke="black"/>')
    parts.append(f'<line x1="{fmt(margin)}" y1="{fmt(margin)}" x2="{fmt(margin)}" '
                 f'y2="{fmt(height - margin)}" stroke="black"/>')
    parts.append(f'<text x="{fmt(width / 2)}" y="{fmt(height - 12)}" '
                 'font-family="sans-serif" font-size="12" text-anchor="middle">'
                 'days since start of follow-up</text>')
    parts.append(f'<text x="14" y="{fmt(height / 2)}" font-family="sans-serif" '
                 f'font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 14 {fmt(height / 2)})">'
                 'cumulative effect (percentage points)</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
