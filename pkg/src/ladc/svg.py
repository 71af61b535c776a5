"""Standalone SVG scatter writer (no plotting dependency).

One colour per class, one marker shape per point origin.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)
MARKERS = {"real": "circle", "synthetic": "triangle", "test": "square"}


def class_color(label: int) -> str:
    return PALETTE[int(label) % len(PALETTE)]


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _marker(kind: str, cx: float, cy: float, r: float, color: str) -> str:
    style = f'fill="{color}" fill-opacity="0.7" stroke="none"'
    if kind == "circle":
        return f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" {style}/>'
    if kind == "square":
        return (f'<rect x="{_fmt(cx - r)}" y="{_fmt(cy - r)}" width="{_fmt(2 * r)}" '
                f'height="{_fmt(2 * r)}" {style}/>')
    pts = [(cx, cy - r * 1.2), (cx - r * 1.1, cy + r * 0.8), (cx + r * 1.1, cy + r * 0.8)]
    return f'<polygon points="{" ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)}" {style}/>'


def scatter_svg(export, width: int = 640, height: int = 480, margin: int = 40,
                radius: float = 3.0, title: str | None = None) -> str:
    """Render a :class:`~ladc.evaluation.ScatterExport` as an SVG document string."""
    xs = np.asarray(export.x, dtype=np.float64)
    ys = np.asarray(export.y, dtype=np.float64)
    if xs.size:
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
    else:
        x0 = y0 = 0.0
        x1 = y1 = 1.0
    if x1 - x0 < 1e-12:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - 2 * margin, height - 2 * margin

    def sx(v):
        return margin + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return height - margin - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2}" y="{margin / 2}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="14">{escape(title)}</text>')
    for x, y, lab, org in zip(xs, ys, export.labels, export.origins):
        out.append(_marker(MARKERS[org], sx(x), sy(y), radius, class_color(lab)))
    # legend: marker shapes per origin present
    ly = margin + 12
    for org in [o for o in MARKERS if o in set(export.origins)]:
        out.append(_marker(MARKERS[org], width - margin - 70, ly - 4, radius + 1, "#333"))
        out.append(f'<text x="{width - margin - 60}" y="{ly}" font-family="sans-serif" '
                   f'font-size="11">{org}</text>')
        ly += 16
    out.append("</svg>")
    return "\n".join(out) + "\n"
