"""Static SVG rendering of survival and incidence curves (no external assets)."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, MARGIN = 640, 400, 50
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


def _scale(grid, values, t_max):
    x = MARGIN + (np.asarray(grid, dtype=float) / t_max) * (WIDTH - 2 * MARGIN)
    y = HEIGHT - MARGIN - np.clip(np.asarray(values, dtype=float), 0, 1) * (HEIGHT - 2 * MARGIN)
    return x, y


def _points(x, y) -> str:
    return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))


def _step_points(x, y) -> str:
    xs, ys = [x[0]], [y[0]]
    for i in range(1, len(x)):
        xs += [x[i], x[i]]
        ys += [ys[-1], y[i]]
    return _points(xs, ys)


def render_curves(grid, lines, bands=(), steps=(), title: str = "", ylabel: str = "probability") -> str:
    """SVG document with line series, shaded bands and step functions.

    ``lines``: ``(label, values)``; ``bands``: ``(label, lower, upper)``;
    ``steps``: ``(label, values)`` drawn as right-continuous steps. All
    series share ``grid`` and the vertical range [0, 1].
    """
    grid = np.asarray(grid, dtype=float)
    t_max = float(grid[-1]) if grid[-1] > 0 else 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = HEIGHT - MARGIN - frac * (HEIGHT - 2 * MARGIN)
        x = MARGIN + frac * (WIDTH - 2 * MARGIN)
        parts.append(f'<text x="{MARGIN - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{frac:.2f}</text>')
        parts.append(
            f'<text x="{x:.2f}" y="{HEIGHT - MARGIN + 16}" font-size="11" text-anchor="middle">{frac * t_max:.3g}</text>'
        )
    parts.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" font-size="12" text-anchor="middle">time</text>')
    parts.append(
        f'<text x="14" y="{HEIGHT / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>'
    )
    if title:
        parts.append(f'<text x="{WIDTH / 2}" y="24" font-size="14" text-anchor="middle">{escape(title)}</text>')
    for i, (label, lo, hi) in enumerate(bands):
        x, ylo = _scale(grid, lo, t_max)
        _, yhi = _scale(grid, hi, t_max)
        poly = _points(np.concatenate([x, x[::-1]]), np.concatenate([yhi, ylo[::-1]]))
        color = COLORS[i % len(COLORS)]
        parts.append(f'<polygon points="{poly}" fill="{color}" fill-opacity="0.2" stroke="none"><title>{escape(label)}</title></polygon>')
    legend = []
    for i, (label, values) in enumerate(lines):
        color = COLORS[i % len(COLORS)]
        x, y = _scale(grid, values, t_max)
        parts.append(f'<polyline points="{_points(x, y)}" fill="none" stroke="{color}" stroke-width="2"/>')
        legend.append((label, color, ""))
    for i, (label, values) in enumerate(steps):
        x, y = _scale(grid, values, t_max)
        parts.append(f'<polyline points="{_step_points(x, y)}" fill="none" stroke="black" stroke-dasharray="5,3"/>')
        legend.append((label, "black", ' stroke-dasharray="5,3"'))
    for j, (label, color, dash) in enumerate(legend):
        y = MARGIN + 14 * j
        x = WIDTH - MARGIN - 150
        parts.append(f'<line x1="{x}" y1="{y}" x2="{x + 20}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>')
        parts.append(f'<text x="{x + 26}" y="{y + 4}" font-size="11">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
