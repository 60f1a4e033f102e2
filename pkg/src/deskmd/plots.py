"""Static SVG line charts for scaling results.

Each series is one ``<polyline>``; its ``data-points`` attribute carries
the unscaled (x, y) values so files can be checked without rendering.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape


KINDS = {
    # kind: (title, x label, y label)
    "walltime": ("Wall-clock time by stage", "workers p", "median wall time T(p) [s]"),
    "efficiency": ("Parallel efficiency by stage", "workers p", "efficiency E(p) = S(p)/p"),
    "speedup": ("Parallel speedup", "workers p", "speedup S(p) = T(1)/T(p)"),
    "docking-time": ("Docking time vs conformers", "conformers n", "wall time [s]"),
}

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 72, 150, 40, 56


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    return f"{v:g}"


def series_for(kind: str, rows) -> dict[str, list[tuple[float, float]]]:
    """Turn scaling rows into named point lists for ``kind``.

    ``rows`` is a list of :class:`ScalingRow` or a mapping of labels to
    such lists. For ``docking-time`` the rows span several workloads and
    become a sequential (p = 1) and a parallel (largest p) series.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {sorted(KINDS)}")
    if isinstance(rows, Mapping):
        groups = {str(k): list(v) for k, v in rows.items()}
    else:
        groups = {"": list(rows)}
    if not any(groups.values()):
        raise ValueError("nothing to plot")

    if kind == "docking-time":
        flat = [r for g in groups.values() for r in g]
        p_max = max(r.workers for r in flat)
        out = {"sequential (p=1)": sorted((r.workload, r.median_seconds) for r in flat if r.workers == 1)}
        if p_max > 1:
            out[f"parallel (p={p_max})"] = sorted(
                (r.workload, r.median_seconds) for r in flat if r.workers == p_max)
        return {k: v for k, v in out.items() if v}

    attr = {"walltime": "median_seconds", "efficiency": "efficiency", "speedup": "speedup"}[kind]
    return {label: sorted((r.workers, getattr(r, attr)) for r in g) for label, g in groups.items() if g}


def render_svg(kind: str, series: Mapping[str, Sequence[tuple[float, float]]]) -> str:
    title, xlabel, ylabel = KINDS[kind]
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        raise ValueError("nothing to plot")
    xticks = _nice_ticks(min(0.0, min(xs)), max(xs))
    yticks = _nice_ticks(min(0.0, min(ys)), max(ys) * 1.05 if max(ys) > 0 else 1.0)
    x0, x1, y0, y1 = xticks[0], xticks[-1], yticks[0], yticks[-1]
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def sx(x):
        return LEFT + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return TOP + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-kind="{kind}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{escape(title)}</text>',
        f'<g class="axes" stroke="black" stroke-width="1">'
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}"/>'
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}"/></g>',
    ]
    tick_style = 'font-family="sans-serif" font-size="11"'
    for t in xticks:
        out.append(f'<line x1="{sx(t):.2f}" y1="{TOP + ph}" x2="{sx(t):.2f}" y2="{TOP + ph + 5}" stroke="black"/>'
                   f'<text x="{sx(t):.2f}" y="{TOP + ph + 18}" text-anchor="middle" {tick_style}>{_fmt(t)}</text>')
    for t in yticks:
        out.append(f'<line x1="{LEFT - 5}" y1="{sy(t):.2f}" x2="{LEFT}" y2="{sy(t):.2f}" stroke="black"/>'
                   f'<line x1="{LEFT}" y1="{sy(t):.2f}" x2="{LEFT + pw}" y2="{sy(t):.2f}" stroke="#ddd"/>'
                   f'<text x="{LEFT - 8}" y="{sy(t) + 4:.2f}" text-anchor="end" {tick_style}>{_fmt(t)}</text>')
    out.append(f'<text class="xlabel" x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 14}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13">{escape(xlabel)}</text>')
    out.append(f'<text class="ylabel" x="18" y="{TOP + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2:.1f})" font-family="sans-serif" '
               f'font-size="13">{escape(ylabel)}</text>')
    for n, (label, pts) in enumerate(series.items()):
        color = PALETTE[n % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        data = " ".join(f"{x!r},{y!r}" for x, y in pts)
        out.append(f'<polyline class="series" data-label="{escape(label)}" data-points="{data}" '
                   f'points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{color}"/>')
        if label:
            ly = TOP + 14 + 18 * n
            out.append(f'<line x1="{LEFT + pw + 12}" y1="{ly - 4}" x2="{LEFT + pw + 32}" y2="{ly - 4}" '
                       f'stroke="{color}" stroke-width="2"/>'
                       f'<text x="{LEFT + pw + 36}" y="{ly}" {tick_style}>{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(rows, kind: str, path) -> Path:
    """Write one SVG chart of ``kind`` to ``path`` and return the path."""
    path = Path(path)
    path.write_text(render_svg(kind, series_for(kind, rows)))
    return path
