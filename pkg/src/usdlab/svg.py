"""Minimal deterministic SVG line charts (polyline, line and text only)."""

from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _tick(v: float) -> str:
    return f"{v:.4g}"


def emit_svg(
    series: Mapping[str, tuple[Sequence[float], Sequence[float]]],
    *,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 800,
    height: int = 480,
) -> str:
    """Render named ``(xs, ys)`` series as one SVG 1.1 document.

    Output depends only on the arguments, so equal inputs give equal bytes.

    Raises:
        ValueError: if there is no series, a series has fewer than two
            points, or ``xs`` and ``ys`` differ in length.
    """
    if not series:
        raise ValueError("no series to plot")
    for name, (xs, ys) in series.items():
        if len(xs) != len(ys):
            raise ValueError(f"series {name!r}: x and y lengths differ")
        if len(xs) < 2:
            raise ValueError(f"series {name!r} needs at least two points")

    left, right, top, bottom = 70, 170, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs_all = [float(x) for xs, _ in series.values() for x in xs]
    ys_all = [float(y) for _, ys in series.values() for y in ys]
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(min(ys_all), 0.0), max(ys_all)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(x):
        return left + (float(x) - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (float(y) - y0) / (y1 - y0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        out.append(f'<line x1="{_fmt(px(xv))}" y1="{top + ph}" x2="{_fmt(px(xv))}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_fmt(px(xv))}" y="{top + ph + 18}" text-anchor="middle">{_tick(xv)}</text>')
        out.append(f'<line x1="{left - 5}" y1="{_fmt(py(yv))}" x2="{left}" y2="{_fmt(py(yv))}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{_fmt(py(yv) + 4)}" text-anchor="end">{_tick(yv)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="15" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 15 {top + ph / 2})">{escape(ylabel)}</text>'
    )
    for i, (name, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 10 + 18 * i
        out.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 35}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 40}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
