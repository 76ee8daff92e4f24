"""Minimal self-contained SVG line charts (no external assets)."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_MAX_POINTS = 4000


def _nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    if not math.isfinite(lo) or not math.isfinite(hi):
        return [0.0]
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if raw <= step:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


def _decimate(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Keep the drawn envelope faithful on long traces: one (min, max) pair
    # per bucket instead of naive striding.
    n = len(x)
    if n <= _MAX_POINTS:
        return x, y
    buckets = _MAX_POINTS // 2
    edges = np.linspace(0, n, buckets + 1, dtype=int)
    xs, ys = [], []
    for b in range(buckets):
        i0, i1 = edges[b], max(edges[b] + 1, edges[b + 1])
        seg = y[i0:i1]
        jmin, jmax = int(np.argmin(seg)), int(np.argmax(seg))
        for j in sorted({jmin, jmax}):
            xs.append(x[i0 + j])
            ys.append(seg[j])
    return np.asarray(xs), np.asarray(ys)


def line_chart(path, series, title: str = "", xlabel: str = "", ylabel: str = "",
               width: int = 900, height: int = 420) -> None:
    """Write a line chart to ``path``.

    ``series`` is a list of (label, x, y) triples drawn in order with a
    shared axis range.
    """
    ml, mr, mt, mb = 64, 16, 34, 46
    pw, ph = width - ml - mr, height - mt - mb
    finite = [(np.asarray(x, float), np.asarray(y, float)) for _, x, y in series]
    x_lo = min(float(np.min(x)) for x, _ in finite)
    x_hi = max(float(np.max(x)) for x, _ in finite)
    y_lo = min(float(np.min(y)) for _, y in finite)
    y_hi = max(float(np.max(y)) for _, y in finite)
    if y_hi - y_lo < 1e-12:
        y_lo -= 0.5
        y_hi += 0.5
    pad = 0.04 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    def sx(v):
        return ml + (v - x_lo) / (x_hi - x_lo) * pw if x_hi > x_lo else ml

    def sy(v):
        return mt + ph - (v - y_lo) / (y_hi - y_lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    font = 'font-family="sans-serif" font-size="12"'
    for tv in _nice_ticks(x_lo, x_hi):
        if tv < x_lo - 1e-12 or tv > x_hi + 1e-12:
            continue
        px = sx(tv)
        parts.append(f'<line x1="{px:.2f}" y1="{mt}" x2="{px:.2f}" y2="{mt + ph}" '
                     'stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{px:.2f}" y="{mt + ph + 16}" text-anchor="middle" '
                     f'{font}>{tv:g}</text>')
    for tv in _nice_ticks(y_lo, y_hi):
        py = sy(tv)
        parts.append(f'<line x1="{ml}" y1="{py:.2f}" x2="{ml + pw}" y2="{py:.2f}" '
                     'stroke="#dddddd" stroke-width="1"/>')
        parts.append(f'<text x="{ml - 6}" y="{py + 4:.2f}" text-anchor="end" '
                     f'{font}>{tv:g}</text>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" '
                 'stroke="#333333"/>')

    for i, (label, x, y) in enumerate(series):
        xd, yd = _decimate(np.asarray(x, float), np.asarray(y, float))
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xd, yd))
        color = _COLORS[i % len(_COLORS)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     'stroke-width="1.3"/>')
        lx, ly = ml + 10, mt + 16 + 16 * i
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 24}" y="{ly}" {font}>{escape(str(label))}</text>')

    if title:
        parts.append(f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="14">{escape(title)}</text>')
    if xlabel:
        parts.append(f'<text x="{ml + pw / 2:.0f}" y="{height - 10}" text-anchor="middle" '
                     f'{font}>{escape(xlabel)}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{mt + ph / 2:.0f}" text-anchor="middle" {font} '
                     f'transform="rotate(-90 16 {mt + ph / 2:.0f})">{escape(ylabel)}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
