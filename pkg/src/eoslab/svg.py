"""Minimal SVG line charts for the CSV artifacts this package emits.

One function, one picture: read named columns out of a CSV, auto-scale,
and write an 800x600 standalone SVG with a polyline per series, a
legend, and optionally a dashed horizontal reference line (handy for
the 2/eta stability threshold) or a log-scaled y axis.  The output is
a pure function of the input bytes, so re-rendering is byte-identical.

Rendering failures (missing column, non-numeric cell, no data rows)
raise :class:`~eoslab.errors.ChartDataError` before the output file is
opened, so a failed render never leaves a partial artifact behind.
"""

from __future__ import annotations

import csv
import math

from .errors import ChartDataError

__all__ = ["PALETTE", "render_svg"]

WIDTH = 800
HEIGHT = 600
MARGIN_LEFT = 72
MARGIN_RIGHT = 170
MARGIN_TOP = 46
MARGIN_BOTTOM = 54

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)


def _read_columns(csv_path, names):
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for name in names:
            if name not in fields:
                raise ChartDataError(
                    f"{csv_path}: no column {name!r} (have {', '.join(fields)})"
                )
        columns = {name: [] for name in names}
        for row in reader:
            for name in names:
                cell = row[name]
                try:
                    columns[name].append(float(cell))
                except (TypeError, ValueError):
                    raise ChartDataError(
                        f"{csv_path}: non-numeric cell {cell!r} in column {name!r}"
                    ) from None
    if not columns[names[0]]:
        raise ChartDataError(f"{csv_path}: no data rows")
    return columns


def _padded(lo: float, hi: float):
    if lo == hi:
        pad = max(1.0, 0.5 * abs(lo))
        return lo - pad, hi + pad
    return lo, hi


def _tick_label(v: float) -> str:
    return format(v, ".6g")


def render_svg(
    csv_path,
    x_column: str,
    y_columns,
    out_path,
    *,
    title: str = "",
    ref_y: float | None = None,
    log_y: bool = False,
):
    """Plot y_columns against x_column from csv_path into out_path.

    ref_y draws a dashed horizontal reference line; the y range is
    widened to keep it visible.  log_y plots the y axis in log10 and
    requires every y value (and ref_y) to be strictly positive.
    Returns out_path.
    """
    y_columns = list(y_columns)
    if not y_columns:
        raise ChartDataError("need at least one y column")
    data = _read_columns(csv_path, [x_column] + y_columns)

    xs = data[x_column]
    if log_y:
        for name in y_columns:
            low = min(data[name])
            if low <= 0.0:
                raise ChartDataError(
                    f"log scale needs positive values; column {name!r} "
                    f"reaches {low!r}"
                )
        if ref_y is not None and ref_y <= 0.0:
            raise ChartDataError(f"log scale needs a positive ref_y, got {ref_y!r}")
        ty = {n: [math.log10(v) for v in data[n]] for n in y_columns}
        t_ref = math.log10(ref_y) if ref_y is not None else None
    else:
        ty = {n: data[n] for n in y_columns}
        t_ref = ref_y

    x_lo, x_hi = _padded(min(xs), max(xs))
    y_lo = min(min(col) for col in ty.values())
    y_hi = max(max(col) for col in ty.values())
    if t_ref is not None:
        y_lo = min(y_lo, t_ref)
        y_hi = max(y_hi, t_ref)
    y_lo, y_hi = _padded(y_lo, y_hi)

    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def px(v: float) -> float:
        return MARGIN_LEFT + (v - x_lo) / (x_hi - x_lo) * plot_w

    def py(v: float) -> float:
        return MARGIN_TOP + (y_hi - v) / (y_hi - y_lo) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" '
        f'height="{plot_h}" fill="none" stroke="#333333"/>',
    ]
    if title:
        parts.append(
            f'<text x="{WIDTH // 2}" y="26" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{_escape(title)}</text>'
        )

    for i in range(5):
        frac = i / 4.0
        vx = x_lo + frac * (x_hi - x_lo)
        gx = px(vx)
        parts.append(
            f'<line x1="{gx:.2f}" y1="{MARGIN_TOP + plot_h}" x2="{gx:.2f}" '
            f'y2="{MARGIN_TOP + plot_h + 5}" stroke="#333333"/>'
        )
        parts.append(
            f'<text x="{gx:.2f}" y="{MARGIN_TOP + plot_h + 20}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="11">'
            f"{_tick_label(vx)}</text>"
        )
        tv = y_lo + frac * (y_hi - y_lo)
        gy = py(tv)
        label = 10.0**tv if log_y else tv
        parts.append(
            f'<line x1="{MARGIN_LEFT - 5}" y1="{gy:.2f}" x2="{MARGIN_LEFT}" '
            f'y2="{gy:.2f}" stroke="#333333"/>'
        )
        parts.append(
            f'<text x="{MARGIN_LEFT - 8}" y="{gy + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{_tick_label(label)}</text>'
        )
    parts.append(
        f'<text x="{MARGIN_LEFT + plot_w / 2:.0f}" y="{HEIGHT - 14}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="12">'
        f"{_escape(x_column)}</text>"
    )

    if t_ref is not None:
        gy = py(t_ref)
        parts.append(
            f'<line class="refline" x1="{MARGIN_LEFT}" y1="{gy:.2f}" '
            f'x2="{MARGIN_LEFT + plot_w}" y2="{gy:.2f}" stroke="#555555" '
            f'stroke-dasharray="6,4"/>'
        )

    for k, name in enumerate(y_columns):
        color = PALETTE[k % len(PALETTE)]
        points = " ".join(
            f"{px(x):.2f},{py(v):.2f}" for x, v in zip(xs, ty[name])
        )
        parts.append(
            f'<polyline class="series" fill="none" stroke="{color}" '
            f'stroke-width="1.5" points="{points}"/>'
        )
        ly = MARGIN_TOP + 14 + 18 * k
        lx = MARGIN_LEFT + plot_w + 12
        parts.append(
            f'<line class="legend" x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text class="legend" x="{lx + 28}" y="{ly}" '
            f'font-family="sans-serif" font-size="12">{_escape(name)}</text>'
        )

    parts.append("</svg>")
    with open(out_path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return out_path


def _escape(text: str) -> str:
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
    )
