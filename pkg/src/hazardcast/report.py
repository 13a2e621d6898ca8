"""Metric tables, SVG heatmaps, and Poisson warning probabilities.

All file outputs are deterministic byte-for-byte for identical inputs and
end with a trailing newline. Heatmaps are plain SVG so tests can diff them
without a raster dependency.
"""

from __future__ import annotations

import io
from typing import Sequence

import numpy as np

_HEAT_DARK = (8, 48, 107)        # darkest cell color; white at zero
_CELL = 26
_LEGEND_STEPS = 5


def _metric_pair(metrics) -> tuple[float, float]:
    if hasattr(metrics, "mae"):
        return float(metrics.mae), float(metrics.rmse)
    mae, rmse = metrics
    return float(mae), float(rmse)


def report_metrics(entries: Sequence[tuple[str, str, object]]) -> tuple[str, str]:
    """Pivot (region, architecture, metrics) rows into a comparison table.

    Returns (csv_text, aligned_text). Regions and architectures keep first
    appearance order; the per-row minimum of each metric is flagged with '*'
    (ties flag the earliest column and are footnoted). Values are printed to
    4 decimals and never re-rounded beyond that.
    """
    if not entries:
        raise ValueError("report_metrics needs at least one entry")
    regions: list[str] = []
    arches: list[str] = []
    cells: dict[tuple[str, str], tuple[float, float]] = {}
    for region, arch, metrics in entries:
        if region not in regions:
            regions.append(region)
        if arch not in arches:
            arches.append(arch)
        if (region, arch) in cells:
            raise ValueError(f"duplicate entry for ({region}, {arch})")
        cells[(region, arch)] = _metric_pair(metrics)

    flagged: dict[tuple[str, str, int], bool] = {}
    footnotes: list[str] = []
    for region in regions:
        for metric_idx, metric_name in enumerate(("MAE", "RMSE")):
            present = [(arch, cells[(region, arch)][metric_idx])
                       for arch in arches if (region, arch) in cells]
            if not present:
                continue
            best = min(v for _, v in present)
            winners = [arch for arch, v in present if v == best]
            flagged[(region, winners[0], metric_idx)] = True
            if len(winners) > 1:
                footnotes.append(f"tie: {region} {metric_name} "
                                 + " = ".join(winners))

    def fmt(region, arch, metric_idx):
        if (region, arch) not in cells:
            return ""
        text = f"{cells[(region, arch)][metric_idx]:.4f}"
        if flagged.get((region, arch, metric_idx)):
            text += "*"
        return text

    csv_out = io.StringIO()
    header = ["region"]
    for arch in arches:
        header += [f"{arch}_MAE", f"{arch}_RMSE"]
    csv_out.write(",".join(header) + "\n")
    for region in regions:
        row = [region]
        for arch in arches:
            row += [fmt(region, arch, 0), fmt(region, arch, 1)]
        csv_out.write(",".join(row) + "\n")

    widths = [max(len("region"), *(len(r) for r in regions))]
    columns = []
    for arch in arches:
        for metric_idx, metric_name in enumerate(("MAE", "RMSE")):
            title = f"{arch} {metric_name}"
            body = [fmt(region, arch, metric_idx) for region in regions]
            columns.append((title, body))
            widths.append(max(len(title), *(len(b) for b in body)))

    lines = []
    head_cells = ["region".ljust(widths[0])]
    head_cells += [t.rjust(w) for (t, _), w in zip(columns, widths[1:])]
    lines.append("  ".join(head_cells))
    lines.append("-" * len(lines[0]))
    for i, region in enumerate(regions):
        row_cells = [region.ljust(widths[0])]
        row_cells += [c[1][i].rjust(w) for c, w in zip(columns, widths[1:])]
        lines.append("  ".join(row_cells))
    for note in footnotes:
        lines.append(note)
    return csv_out.getvalue(), "\n".join(lines) + "\n"


def _heat_color(t: float) -> str:
    r = round(255 + (_HEAT_DARK[0] - 255) * t)
    g = round(255 + (_HEAT_DARK[1] - 255) * t)
    b = round(255 + (_HEAT_DARK[2] - 255) * t)
    return f"rgb({r},{g},{b})"


def render_heatmap(matrix, row_labels: Sequence[str], col_labels: Sequence[str],
                   scale: str = "linear", title: str | None = None) -> str:
    """A white-to-dark grid SVG of a nonnegative matrix.

    ``scale`` is 'linear' or 'log1p'; the mapping from value to color is
    monotone either way, and an all-zero matrix renders all white. Output is
    a deterministic string ending in a newline.
    """
    rows = [list(map(float, row)) for row in matrix]
    if not rows:
        raise ValueError("heatmap needs at least one row")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("heatmap matrix has ragged rows")
    values = np.asarray(rows, dtype=np.float64)
    if (values < 0).any():
        raise ValueError("heatmap values must be nonnegative; take magnitudes first")
    if scale not in ("linear", "log1p"):
        raise ValueError(f"scale must be 'linear' or 'log1p', got {scale!r}")
    if len(row_labels) != values.shape[0] or len(col_labels) != values.shape[1]:
        raise ValueError("label counts must match the matrix shape")

    scaled = np.log1p(values) if scale == "log1p" else values
    vmax = scaled.max()
    norm = scaled / vmax if vmax > 0 else np.zeros_like(scaled)

    left = 8 + 7 * max((len(str(l)) for l in row_labels), default=1)
    top = 16 + 7 * max((len(str(l)) for l in col_labels), default=1)
    if title:
        top += 18
    n_rows, n_cols = values.shape
    legend_h = 40
    svg_w = left + n_cols * _CELL + 10
    svg_h = top + n_rows * _CELL + legend_h

    out = io.StringIO()
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{svg_w}" '
              f'height="{svg_h}" font-family="monospace" font-size="11">\n')
    if title:
        out.write(f'<text x="{left}" y="14" font-size="13">{_esc(title)}</text>\n')
    for j, label in enumerate(col_labels):
        x = left + j * _CELL + _CELL // 2
        out.write(f'<text x="{x}" y="{top - 4}" text-anchor="start" '
                  f'transform="rotate(-60 {x} {top - 4})">{_esc(label)}</text>\n')
    for i, label in enumerate(row_labels):
        y = top + i * _CELL + _CELL // 2 + 4
        out.write(f'<text x="{left - 6}" y="{y}" text-anchor="end">{_esc(label)}</text>\n')
    for i in range(n_rows):
        for j in range(n_cols):
            x = left + j * _CELL
            y = top + i * _CELL
            out.write(f'<rect x="{x}" y="{y}" width="{_CELL}" height="{_CELL}" '
                      f'fill="{_heat_color(norm[i, j])}" stroke="#cccccc"/>\n')
    ly = top + n_rows * _CELL + 12
    out.write(f'<text x="{left}" y="{ly + 10}" text-anchor="end"> </text>\n')
    for s in range(_LEGEND_STEPS):
        t = s / (_LEGEND_STEPS - 1)
        x = left + s * 56
        raw = vmax * t if scale == "linear" else float(np.expm1(vmax * t))
        out.write(f'<rect x="{x}" y="{ly}" width="14" height="14" '
                  f'fill="{_heat_color(t)}" stroke="#cccccc"/>\n')
        out.write(f'<text x="{x + 17}" y="{ly + 11}">{raw:.4g}</text>\n')
    out.write(f'<text x="{left}" y="{ly + 30}">scale: {scale}</text>\n')
    out.write("</svg>\n")
    return out.getvalue()


def _esc(text) -> str:
    return (str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def warning_probability(rates):
    """P(at least one event in the window) = 1 - exp(-rate), per hazard."""
    arr = np.asarray(rates, dtype=np.float64)
    if (arr < 0).any():
        raise ValueError("rates must be nonnegative")
    probs = 1.0 - np.exp(-arr)
    return float(probs) if arr.ndim == 0 else probs
