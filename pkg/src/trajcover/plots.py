"""Hand-emitted SVG plots; a plot is a pure function of its data.

No plotting dependency: sweep reports and set previews only need simple
line charts, and emitting them directly keeps outputs byte-deterministic.
"""

from __future__ import annotations

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def _ticks(lo: float, hi: float, count: int = 5):
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def line_plot_svg(series: dict, title: str, xlabel: str, ylabel: str,
                  width: int = 640, height: int = 440) -> str:
    """Render named (x, y) series as an SVG line chart.

    series maps a legend label to a list of (x, y) pairs; insertion order
    fixes colors and legend order.
    """
    if not series:
        raise ValueError("need at least one series")
    left, right, top, bottom = 70, 170, 50, 60
    plot_w, plot_h = width - left - right, height - top - bottom
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    if not xs:
        raise ValueError("series contain no points")
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi - x_lo < 1e-12:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad_x, pad_y = 0.05 * (x_hi - x_lo), 0.05 * (y_hi - y_lo)
    x_lo, x_hi = x_lo - pad_x, x_hi + pad_x
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return top + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15" font-weight="bold">{title}</text>',
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>',
    ]
    for tx in _ticks(x_lo + pad_x, x_hi - pad_x):
        out.append(f'<line x1="{px(tx):.2f}" y1="{top + plot_h}" x2="{px(tx):.2f}" '
                   f'y2="{top + plot_h + 5}" stroke="#333"/>')
        out.append(f'<text x="{px(tx):.2f}" y="{top + plot_h + 20}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{_fmt(tx)}</text>')
    for ty in _ticks(y_lo + pad_y, y_hi - pad_y):
        out.append(f'<line x1="{left - 5}" y1="{py(ty):.2f}" x2="{left}" y2="{py(ty):.2f}" stroke="#333"/>')
        out.append(f'<text x="{left - 9}" y="{py(ty) + 4:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{_fmt(ty)}</text>')
    out.append(f'<text x="{left + plot_w / 2:.1f}" y="{height - 14}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13">{xlabel}</text>')
    out.append(f'<text x="20" y="{top + plot_h / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="13" transform="rotate(-90 20 {top + plot_h / 2:.1f})">{ylabel}</text>')

    for i, (label, pts) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = sorted(pts)
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        if len(pts) > 1:
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3.5" fill="{color}"/>')
        ly = top + 16 + 18 * i
        lx = left + plot_w + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 28}" y="{ly}" font-family="sans-serif" font-size="12">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def trajectory_set_svg(tset, width: int = 520, height: int = 520) -> str:
    """Top-down preview of every set member in the agent frame (heading up)."""
    pts = tset.points
    margin = 30.0
    # agent frame x (forward) is drawn up, y (left) to the left
    us = -pts[..., 0]
    vs = -pts[..., 1]
    u_lo, u_hi = float(us.min()), float(us.max())
    v_lo, v_hi = float(vs.min()), float(vs.max())
    span = max(u_hi - u_lo, v_hi - v_lo, 1.0)
    scale = (min(width, height) - 2 * margin) / span
    u_mid, v_mid = (u_lo + u_hi) / 2, (v_lo + v_hi) / 2

    def to_xy(u, v):
        return (width / 2 + (v - v_mid) * scale, height / 2 + (u - u_mid) * scale)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="13">'
        f'{len(tset)} trajectories, epsilon={_fmt(tset.epsilon)} m ({tset.coverage_metric})</text>',
    ]
    for k in range(len(tset)):
        color = _COLORS[k % len(_COLORS)]
        coords = " ".join(
            f"{to_xy(us[k, i], vs[k, i])[0]:.2f},{to_xy(us[k, i], vs[k, i])[1]:.2f}"
            for i in range(pts.shape[1])
        )
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                   f'stroke-width="1.2" stroke-opacity="0.7"/>')
    ox, oy = to_xy(0.0, 0.0)
    out.append(f'<circle cx="{ox:.2f}" cy="{oy:.2f}" r="4" fill="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_svg(svg_text: str, path) -> None:
    from pathlib import Path

    Path(path).write_text(svg_text, encoding="utf-8")


def mean_over_seeds(rows, key_fields, value_field):
    """Group dict rows by key_fields and average value_field; returns
    {key_tuple: mean} with None values skipped."""
    groups: dict = {}
    for row in rows:
        value = row.get(value_field)
        if value is None:
            continue
        key = tuple(row[f] for f in key_fields)
        groups.setdefault(key, []).append(float(value))
    return {k: float(np.mean(v)) for k, v in groups.items()}
