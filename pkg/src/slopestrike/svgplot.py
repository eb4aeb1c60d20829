"""Minimal static SVG line charts (no plotting dependency).

Deterministic output: fixed palette, fixed float formatting, no timestamps.
"""

from __future__ import annotations

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
MARGIN = 60


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_chart(path, series, title: str = "", width: int = 900, height: int = 420,
               x_label: str = "", y_label: str = "") -> None:
    """Write an SVG polyline chart.

    ``series`` is a list of (label, ys) or (label, xs, ys) tuples.
    """
    norm = []
    for item in series:
        if len(item) == 2:
            label, ys = item
            xs = np.arange(len(ys), dtype=float)
        else:
            label, xs, ys = item
            xs = np.asarray(xs, dtype=float)
        norm.append((str(label), xs, np.asarray(ys, dtype=float)))
    if not norm:
        raise ValueError("no series to plot")
    x_lo = min(float(xs.min()) for _, xs, _ in norm)
    x_hi = max(float(xs.max()) for _, xs, _ in norm)
    y_lo = min(float(ys.min()) for _, _, ys in norm)
    y_hi = max(float(ys.max()) for _, _, ys in norm)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad
    iw, ih = width - 2 * MARGIN, height - 2 * MARGIN

    def px(x: float) -> float:
        return MARGIN + (x - x_lo) / (x_hi - x_lo) * iw

    def py(y: float) -> float:
        return height - MARGIN - (y - y_lo) / (y_hi - y_lo) * ih

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="15">{title}</text>')
    # axes
    out.append(f'<line x1="{MARGIN}" y1="{height - MARGIN}" x2="{width - MARGIN}" '
               f'y2="{height - MARGIN}" stroke="black" stroke-width="1"/>')
    out.append(f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" '
               f'y2="{height - MARGIN}" stroke="black" stroke-width="1"/>')
    for tx in _ticks(x_lo, x_hi):
        out.append(f'<text x="{px(tx):.1f}" y="{height - MARGIN + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{_fmt(tx)}</text>')
    for ty in _ticks(y_lo, y_hi):
        out.append(f'<text x="{MARGIN - 6}" y="{py(ty) + 4:.1f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{_fmt(ty)}</text>')
    if x_label:
        out.append(f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="12">{x_label}</text>')
    if y_label:
        out.append(f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="12" '
                   f'transform="rotate(-90 16 {height / 2:.1f})">{y_label}</text>')
    # polylines and legend
    for i, (label, xs, ys) in enumerate(norm):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(float(x)):.2f},{py(float(y)):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN + 16 * i
        out.append(f'<line x1="{width - MARGIN - 150}" y1="{ly}" x2="{width - MARGIN - 126}" '
                   f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - MARGIN - 120}" y="{ly + 4}" font-family="sans-serif" '
                   f'font-size="11">{label}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


def histogram_chart(path, samples, labels, title: str = "", bins: int = 40) -> None:
    """Overlayed step histograms of 1-D samples (density-normalised)."""
    arrays = [np.asarray(s, dtype=float).reshape(-1) for s in samples]
    lo = min(a.min() for a in arrays)
    hi = max(a.max() for a in arrays)
    edges = np.linspace(lo, hi, bins + 1)
    series = []
    for label, a in zip(labels, arrays):
        counts, _ = np.histogram(a, bins=edges, density=True)
        xs = np.repeat(edges, 2)[1:-1]
        ys = np.repeat(counts, 2)
        series.append((label, xs, ys))
    line_chart(path, series, title=title, x_label="value", y_label="density")
