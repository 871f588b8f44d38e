"""Minimal SVG line charts: polylines, axes, ticks, and a legend.

Deliberately small: these files are for quick inspection of run logs, not
publication.  Deterministic output (fixed formatting, palette, and layout).
"""

from __future__ import annotations

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]

_W, _H = 720, 420
_ML, _MR, _MT, _MB = 64, 16, 36, 48


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def line_chart(series: dict[str, tuple[list[float], list[float]]], title: str,
               xlabel: str, ylabel: str) -> str:
    """SVG text for labelled (xs, ys) polyline series sharing one axis pair."""
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    if not xs_all:
        raise ValueError("nothing to plot")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(x: float) -> float:
        return _ML + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y: float) -> float:
        return _MT + (y_hi - y) / (y_hi - y_lo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>']
    ax = f'stroke="#444" stroke-width="1"'
    out.append(f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" {ax}/>')
    out.append(f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" {ax}/>')
    for tx in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{_fmt(px(tx))}" y1="{_H - _MB}" x2="{_fmt(px(tx))}" '
                   f'y2="{_H - _MB + 4}" {ax}/>')
        out.append(f'<text x="{_fmt(px(tx))}" y="{_H - _MB + 18}" '
                   f'text-anchor="middle">{_fmt(tx)}</text>')
    for ty in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{_ML - 4}" y1="{_fmt(py(ty))}" x2="{_ML}" '
                   f'y2="{_fmt(py(ty))}" {ax}/>')
        out.append(f'<text x="{_ML - 8}" y="{_fmt(py(ty) + 4)}" '
                   f'text-anchor="end">{_fmt(ty)}</text>')
    out.append(f'<text x="{_W / 2}" y="{_H - 10}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{_H / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_H / 2})">{ylabel}</text>')
    for n, (label, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[n % len(PALETTE)]
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        lx, ly = _W - _MR - 150, _MT + 16 * n + 4
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
