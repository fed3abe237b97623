"""Write grid results as CSV, JSON and an SVG heatmap."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from xml.sax.saxutils import escape

from galilai.harness import GridResult, dumps

FORMATS = ("csv", "json", "svg")
FILENAMES = {"csv": "grid.csv", "json": "grid.json", "svg": "grid.svg"}

CELL = 48
MARGIN_LEFT = 90
MARGIN_TOP = 40
MARGIN_BOTTOM = 60


class ReportError(ValueError):
    pass


def _check(result: GridResult):
    if not result.unseen_values or not result.seen_values or result.detections.size == 0:
        raise ReportError("no cells")


def to_csv(result: GridResult) -> str:
    _check(result)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["unseen_value", "seen_value", "detections", "seeds"])
    for i, u in enumerate(result.unseen_values):
        for j, v in enumerate(result.seen_values):
            writer.writerow([repr(float(u)), repr(float(v)), int(result.detections[i, j]),
                             int(result.completed[i, j])])
    return buf.getvalue()


def to_json(result: GridResult) -> str:
    _check(result)
    return dumps(result.to_dict()) + "\n"


def cell_color(count: int, scale: int) -> str:
    """White at 0 detections through to saturated red at ``scale``."""
    frac = 0.0 if scale <= 0 else min(max(count / scale, 0.0), 1.0)
    g = b = round(255 * (1.0 - frac))
    return f"#ff{g:02x}{b:02x}"


def to_svg(result: GridResult) -> str:
    _check(result)
    n_x, n_y = len(result.unseen_values), len(result.seen_values)
    width = MARGIN_LEFT + n_x * CELL + 20
    height = MARGIN_TOP + n_y * CELL + MARGIN_BOTTOM
    spec = result.spec
    unseen_name = spec.get("unseen_factor", {}).get("name", "unseen")
    seen_name = spec.get("seen_factor", {}).get("name", "seen")
    method = spec.get("method", "")

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">'
        f'{escape(method)}: detections per {result.seeds_per_cell} seeds</text>',
    ]
    # rows: seen values, largest at the top
    for row, j in enumerate(reversed(range(n_y))):
        y = MARGIN_TOP + row * CELL
        out.append(f'<text x="{MARGIN_LEFT - 6}" y="{y + CELL / 2 + 4}" text-anchor="end">'
                   f'{result.seen_values[j]:g}</text>')
        for i in range(n_x):
            x = MARGIN_LEFT + i * CELL
            count = int(result.detections[i, j])
            missing = int(result.seeds_per_cell - result.completed[i, j])
            label = str(count) if not missing else f"{count}*"
            out.append(f'<rect class="cell" data-unseen="{result.unseen_values[i]!r}" '
                       f'data-seen="{result.seen_values[j]!r}" data-count="{count}" '
                       f'x="{x}" y="{y}" width="{CELL}" height="{CELL}" '
                       f'fill="{cell_color(count, result.seeds_per_cell)}" stroke="#888"/>')
            out.append(f'<text x="{x + CELL / 2}" y="{y + CELL / 2 + 4}" text-anchor="middle">{label}</text>')
    base = MARGIN_TOP + n_y * CELL
    for i, u in enumerate(result.unseen_values):
        out.append(f'<text x="{MARGIN_LEFT + i * CELL + CELL / 2}" y="{base + 16}" '
                   f'text-anchor="middle">{u:g}</text>')
    out.append(f'<text x="{MARGIN_LEFT + n_x * CELL / 2}" y="{base + 40}" text-anchor="middle">'
               f'{escape(unseen_name)} (unseen)</text>')
    out.append(f'<text x="14" y="{MARGIN_TOP + n_y * CELL / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {MARGIN_TOP + n_y * CELL / 2})">{escape(seen_name)} (seen)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


RENDERERS = {"csv": to_csv, "json": to_json, "svg": to_svg}


def write(result: GridResult, out_dir, formats=FORMATS) -> list[Path]:
    _check(result)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt not in RENDERERS:
            raise ReportError(f"unknown format {fmt!r}")
        path = out_dir / FILENAMES[fmt]
        path.write_text(RENDERERS[fmt](result))
        paths.append(path)
    return paths


def load(in_dir) -> GridResult:
    path = Path(in_dir) / FILENAMES["json"]
    with open(path) as fh:
        return GridResult.from_dict(json.load(fh))
