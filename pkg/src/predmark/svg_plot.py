"""Minimal SVG rendering of risk curves: per-arm lines, CI bands, and
threshold markers.  No plotting dependency; everything in the figure is also
reconstructible from the curves CSV."""

from __future__ import annotations

import numpy as np

from .marginal_risk import RiskCurves

WIDTH, HEIGHT = 720, 480
MARGIN = 60
COLOR0 = "#1f77b4"  # control
COLOR1 = "#d62728"  # treatment


def _scale(vals, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return out_lo + (np.asarray(vals) - lo) / span * (out_hi - out_lo)


def _polyline(xs, ys, color, width=2.0, dash=None):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="{width}"'
        f'{dash_attr} points="{pts}"/>'
    )


def _band(xs, lo_ys, hi_ys, color):
    fwd = [f"{x:.2f},{y:.2f}" for x, y in zip(xs, lo_ys)]
    back = [f"{x:.2f},{y:.2f}" for x, y in zip(xs[::-1], hi_ys[::-1])]
    return (
        f'<polygon fill="{color}" fill-opacity="0.15" stroke="none" '
        f'points="{" ".join(fwd + back)}"/>'
    )


def render_curves_svg(
    curves: RiskCurves,
    path,
    cutoff: float | None = None,
    positive_threshold: float | None = None,
    negative_threshold: float | None = None,
    title: str = "Marginalized risk by treatment arm",
) -> None:
    """Write an SVG of both arms' risk curves with 95% bands."""
    z = curves.grid
    y_all = np.concatenate([curves.lo0, curves.hi0, curves.lo1, curves.hi1])
    y_lo, y_hi = float(np.min(y_all)), float(np.max(y_all))
    pad = 0.05 * (y_hi - y_lo or 1.0)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(v):
        return _scale(v, z.min(), z.max(), MARGIN, WIDTH - MARGIN)

    def sy(v):
        return _scale(v, y_lo, y_hi, HEIGHT - MARGIN, MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{title}</text>',
        _band(sx(z), sy(curves.lo0), sy(curves.hi0), COLOR0),
        _band(sx(z), sy(curves.lo1), sy(curves.hi1), COLOR1),
        _polyline(sx(z), sy(curves.risk0), COLOR0),
        _polyline(sx(z), sy(curves.risk1), COLOR1),
    ]
    for value, color, label in (
        (cutoff, "#444444", "cut-off"),
        (positive_threshold, COLOR0, "positive"),
        (negative_threshold, COLOR1, "negative"),
    ):
        if value is not None and z.min() <= value <= z.max():
            x = sx(value)
            parts.append(_polyline([x, x], [sy(y_lo), sy(y_hi)], color, 1.0, "5,4"))
            parts.append(
                f'<text x="{x + 4:.2f}" y="{MARGIN + 14}" font-family="sans-serif" '
                f'font-size="11" fill="{color}">{label} {value:.3g}</text>'
            )
    # axes
    parts.append(_polyline(
        [MARGIN, MARGIN, WIDTH - MARGIN],
        [MARGIN, HEIGHT - MARGIN, HEIGHT - MARGIN], "#000000", 1.0,
    ))
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        zv = z.min() + frac * (z.max() - z.min())
        yv = y_lo + frac * (y_hi - y_lo)
        parts.append(
            f'<text x="{sx(zv):.2f}" y="{HEIGHT - MARGIN + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{zv:.3g}</text>'
        )
        parts.append(
            f'<text x="{MARGIN - 8}" y="{sy(yv):.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{yv:.3g}</text>'
        )
    parts.append(
        f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">biomarker</text>'
    )
    legend_y = MARGIN + 30
    parts.append(_polyline([WIDTH - 190, WIDTH - 160], [legend_y, legend_y], COLOR0))
    parts.append(
        f'<text x="{WIDTH - 152}" y="{legend_y + 4}" font-family="sans-serif" '
        f'font-size="12">control (A=0)</text>'
    )
    parts.append(_polyline([WIDTH - 190, WIDTH - 160], [legend_y + 20, legend_y + 20], COLOR1))
    parts.append(
        f'<text x="{WIDTH - 152}" y="{legend_y + 24}" font-family="sans-serif" '
        f'font-size="12">treatment (A=1)</text>'
    )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
