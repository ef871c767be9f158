"""Dependency-free SVG output: trajectory top view and coverage curves.

Hand-rolled on purpose: deterministic byte output, no raster toolchain.
"""

from __future__ import annotations

import math


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _color_at(frac: float) -> str:
    """Blue-to-red ramp over [0, 1]."""
    frac = min(max(frac, 0.0), 1.0)
    r = int(round(40 + 215 * frac))
    g = int(round(60 + 40 * math.sin(math.pi * frac)))
    b = int(round(255 - 215 * frac))
    return f"#{r:02x}{g:02x}{b:02x}"


def trajectory_svg(path_rows: list[list[float]], dims_m, out_path) -> None:
    """Top-down flight path coloured by time.

    path_rows: (t, x, y, z, yaw) samples; dims_m: world extents.
    """
    width, height = 720.0, 720.0 * float(dims_m[1]) / float(dims_m[0])
    sx = width / float(dims_m[0])
    sy = height / float(dims_m[1])
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
        f'height="{_fmt(height + 30)}" viewBox="0 0 {_fmt(width)} {_fmt(height + 30)}">',
        f'<rect x="0" y="0" width="{_fmt(width)}" height="{_fmt(height)}" '
        'fill="#fafafa" stroke="#333" stroke-width="1"/>',
    ]
    if path_rows:
        t_end = max(path_rows[-1][0], 1e-9)
        for a, b in zip(path_rows, path_rows[1:]):
            x1, y1 = a[1] * sx, height - a[2] * sy
            x2, y2 = b[1] * sx, height - b[2] * sy
            color = _color_at(a[0] / t_end)
            lines.append(
                f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
                f'y2="{_fmt(y2)}" stroke="{color}" stroke-width="1.5"/>')
        x0, y0 = path_rows[0][1] * sx, height - path_rows[0][2] * sy
        lines.append(f'<circle cx="{_fmt(x0)}" cy="{_fmt(y0)}" r="4" fill="#0a0"/>')
        lines.append(
            f'<text x="5" y="{_fmt(height + 20)}" font-size="12" '
            f'font-family="monospace">top view, {_fmt(float(dims_m[0]))}x'
            f'{_fmt(float(dims_m[1]))} m, colour = time (blue start, red end)</text>')
    lines.append("</svg>")
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _panel(title, x_label, points_by_label, width, height):
    """One coverage panel: curves share the axes, labels in the legend."""
    pad = 42.0
    x_max = max((max((p[0] for p in pts), default=0.0)
                 for pts in points_by_label.values()), default=0.0)
    x_max = max(x_max, 1e-9)
    y_max = 1.0
    colors = ["#c22", "#26c", "#2a2", "#b80", "#808"]
    lines = [
        f'<rect x="{_fmt(pad)}" y="{_fmt(pad / 2)}" width="{_fmt(width - 1.5 * pad)}" '
        f'height="{_fmt(height - 1.5 * pad)}" fill="#fff" stroke="#333" stroke-width="1"/>'
    ]
    for i, (label, pts) in enumerate(points_by_label.items()):
        color = colors[i % len(colors)]
        shifted = [(x, y) for x, y in pts]
        # map into the padded box
        parts = []
        for x, y in shifted:
            px = pad + (x / x_max) * (width - 2.5 * pad) + 0.5 * pad
            py = (pad / 2) + (height - 1.5 * pad) * (1.0 - y / y_max)
            parts.append(f"{_fmt(px)},{_fmt(py)}")
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{" ".join(parts)}"/>')
        lines.append(f'<text x="{_fmt(width - 150)}" y="{_fmt(pad + 14 * i)}" '
                     f'font-size="11" font-family="monospace" fill="{color}">{label}</text>')
    lines.append(f'<text x="{_fmt(pad)}" y="{_fmt(height - 6)}" font-size="12" '
                 f'font-family="monospace">{title} — x: {x_label} (max {_fmt(x_max)}), '
                 'y: coverage 0..1</text>')
    return lines


def coverage_svg(reports: dict[str, list], out_path) -> None:
    """Coverage against time (left) and flown distance (right).

    reports: label -> tick metric list with .time_s / .distance_m / .coverage.
    """
    width, height = 560.0, 360.0
    by_time = {label: [(m.time_s, m.coverage) for m in ticks]
               for label, ticks in reports.items()}
    by_dist = {label: [(m.distance_m, m.coverage) for m in ticks]
               for label, ticks in reports.items()}
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(2 * width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(2 * width)} {_fmt(height)}">'
    ]
    lines.append('<g>')
    lines.extend(_panel("progress", "time (s)", by_time, width, height))
    lines.append('</g>')
    lines.append(f'<g transform="translate({_fmt(width)},0)">')
    lines.extend(_panel("progress", "distance (m)", by_dist, width, height))
    lines.append('</g>')
    lines.append("</svg>")
    with open(out_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
