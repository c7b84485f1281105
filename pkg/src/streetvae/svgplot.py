"""Direct SVG writers for the pipeline's artifacts: bar charts,
overlaid histograms, line charts, polar orientation roses, and a
straight-line street graph renderer. No timestamps, so output bytes are
reproducible.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .graph import StreetGraph

_COLORS = ["#4878a8", "#d8854f", "#6aa66a", "#b05c5c", "#8a6fae", "#a0a04f", "#5ca8a8"]


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


def _doc(width: float, height: float, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">'
    )
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>'] + body + ["</svg>"]) + "\n"


def _text(x: float, y: float, s: str, size: int = 11, anchor: str = "start") -> str:
    return (
        f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="sans-serif" '
        f'font-size="{size}" text-anchor="{anchor}">{s}</text>'
    )


def bar_chart(path, labels: Sequence[str], values: Sequence[float], title: str = "") -> None:
    w, h, pad = 480.0, 300.0, 44.0
    top = max(max(values), 1e-12) if values else 1.0
    body = [_text(w / 2, 18, title, 13, "middle")]
    n = max(len(values), 1)
    slot = (w - 2 * pad) / n
    for i, (label, value) in enumerate(zip(labels, values)):
        bh = (h - 2 * pad) * value / top
        x = pad + i * slot
        body.append(
            f'<rect x="{_fmt(x + slot * 0.1)}" y="{_fmt(h - pad - bh)}" '
            f'width="{_fmt(slot * 0.8)}" height="{_fmt(bh)}" fill="{_COLORS[0]}"/>'
        )
        body.append(_text(x + slot / 2, h - pad + 14, str(label), 10, "middle"))
        body.append(_text(x + slot / 2, h - pad - bh - 4, _fmt(float(value)), 9, "middle"))
    body.append(f'<line x1="{_fmt(pad)}" y1="{_fmt(h - pad)}" x2="{_fmt(w - pad)}" y2="{_fmt(h - pad)}" stroke="black"/>')
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_doc(w, h, body))


def histogram(path, series: dict[str, Sequence[float]], bins: int = 20, title: str = "") -> None:
    """Overlaid histograms of several samples on a shared binning."""
    allvals = np.concatenate([np.asarray(v, dtype=float) for v in series.values() if len(v)])
    if allvals.size == 0:
        allvals = np.zeros(1)
    lo, hi = float(allvals.min()), float(allvals.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    counts = {name: np.histogram(np.asarray(v, dtype=float), bins=edges)[0] for name, v in series.items()}
    top = max(int(c.max()) for c in counts.values()) or 1

    w, h, pad = 480.0, 300.0, 44.0
    body = [_text(w / 2, 18, title, 13, "middle")]
    slot = (w - 2 * pad) / bins
    for s, (name, c) in enumerate(counts.items()):
        color = _COLORS[s % len(_COLORS)]
        for i, value in enumerate(c):
            bh = (h - 2 * pad) * value / top
            body.append(
                f'<rect x="{_fmt(pad + i * slot)}" y="{_fmt(h - pad - bh)}" width="{_fmt(slot)}" '
                f'height="{_fmt(bh)}" fill="{color}" fill-opacity="0.45"/>'
            )
        body.append(_text(pad + 4, 34 + 14 * s, name, 11))
        body.append(
            f'<rect x="{_fmt(pad - 14)}" y="{_fmt(26 + 14 * s)}" width="10" height="10" '
            f'fill="{color}" fill-opacity="0.45"/>'
        )
    body.append(_text(pad, h - pad + 16, _fmt(lo), 10, "middle"))
    body.append(_text(w - pad, h - pad + 16, _fmt(hi), 10, "middle"))
    body.append(f'<line x1="{_fmt(pad)}" y1="{_fmt(h - pad)}" x2="{_fmt(w - pad)}" y2="{_fmt(h - pad)}" stroke="black"/>')
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_doc(w, h, body))


def line_chart(path, series: dict[str, Sequence[tuple[float, float]]], title: str = "") -> None:
    w, h, pad = 480.0, 300.0, 44.0
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0

    def sx(x):
        return pad + (w - 2 * pad) * (x - x0) / (x1 - x0)

    def sy(y):
        return h - pad - (h - 2 * pad) * (y - y0) / (y1 - y0)

    body = [_text(w / 2, 18, title, 13, "middle")]
    for s, (name, pts) in enumerate(series.items()):
        color = _COLORS[s % len(_COLORS)]
        d = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        body.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        body.append(_text(pad + 4, 34 + 14 * s, name, 11))
        body.append(f'<rect x="{_fmt(pad - 14)}" y="{_fmt(26 + 14 * s)}" width="10" height="10" fill="{color}"/>')
    for label, x, anchor in ((_fmt(x0), pad, "middle"), (_fmt(x1), w - pad, "middle")):
        body.append(_text(x, h - pad + 16, label, 10, anchor))
    body.append(_text(pad - 6, sy(y0) + 4, _fmt(y0), 10, "end"))
    body.append(_text(pad - 6, sy(y1) + 4, _fmt(y1), 10, "end"))
    body.append(f'<line x1="{_fmt(pad)}" y1="{_fmt(h - pad)}" x2="{_fmt(w - pad)}" y2="{_fmt(h - pad)}" stroke="black"/>')
    body.append(f'<line x1="{_fmt(pad)}" y1="{_fmt(pad)}" x2="{_fmt(pad)}" y2="{_fmt(h - pad)}" stroke="black"/>')
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_doc(w, h, body))


def polar_rose(path, weights: Sequence[float], title: str = "") -> None:
    """Orientation rose: 36 wedges, bin 0 pointing north (up)."""
    size, cx, cy = 320.0, 160.0, 172.0
    radius = 120.0
    w = np.asarray(weights, dtype=float)
    top = float(w.max()) if w.size and w.max() > 0 else 1.0
    body = [_text(size / 2, 18, title, 13, "middle")]
    nbins = len(w)
    for i, value in enumerate(w):
        if value <= 0:
            continue
        r = radius * value / top
        a0 = math.radians(i * 360.0 / nbins - 180.0 / nbins - 90.0)
        a1 = math.radians(i * 360.0 / nbins + 180.0 / nbins - 90.0)
        x0, y0 = cx + r * math.cos(a0), cy + r * math.sin(a0)
        x1, y1 = cx + r * math.cos(a1), cy + r * math.sin(a1)
        body.append(
            f'<path d="M {_fmt(cx)} {_fmt(cy)} L {_fmt(x0)} {_fmt(y0)} '
            f'A {_fmt(r)} {_fmt(r)} 0 0 1 {_fmt(x1)} {_fmt(y1)} Z" '
            f'fill="{_COLORS[0]}" fill-opacity="0.8" stroke="white" stroke-width="0.5"/>'
        )
    body.append(f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(radius)}" fill="none" stroke="#999"/>')
    body.append(_text(cx, cy - radius - 6, "N", 11, "middle"))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_doc(size, 340.0, body))


def render_graph(path, g: StreetGraph, title: str = "") -> None:
    """Straight-line drawing of a street graph (polylines when present)."""
    size, pad = 400.0, 24.0
    xs = [x for _, x, _ in g.nodes]
    ys = [y for _, _, y in g.nodes]
    if not xs:
        xs, ys = [0.0], [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    span = max(x1 - x0, y1 - y0, 1e-9)

    def sx(x):
        return pad + (size - 2 * pad) * (x - x0) / span

    def sy(y):
        return size - pad - (size - 2 * pad) * (y - y0) / span

    xy = g.coords()
    body = []
    if title:
        body.append(_text(size / 2, 16, title, 12, "middle"))
    for e in g.edges:
        pts = e.geometry if e.geometry is not None else [xy[e.u], xy[e.v]]
        d = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        body.append(f'<polyline points="{d}" fill="none" stroke="#333" stroke-width="1.2"/>')
    for _, x, y in g.nodes:
        body.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="1.6" fill="{_COLORS[1]}"/>')
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_doc(size, size, body))
