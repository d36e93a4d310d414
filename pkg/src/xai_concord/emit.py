"""Write report bundles as JSON, long-format CSV and SVG heatmaps."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from xml.sax.saxutils import escape

from xai_concord.errors import XaiConcordError

FORMATS = ("json", "csv", "svg")

# Fixed 0 -> 1 ramp endpoints (white to dark blue).
RAMP_LOW = (255, 255, 255)
RAMP_HIGH = (8, 48, 107)

_CELL_W, _CELL_H = 64, 40
_LEFT, _TOP = 56, 48


class EmitError(XaiConcordError, OSError):
    pass


def ramp_color(value: float) -> str:
    t = min(max(float(value), 0.0), 1.0)
    rgb = [round(lo + (hi - lo) * t) for lo, hi in zip(RAMP_LOW, RAMP_HIGH)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def heatmap_svg(report, metric: str, title: str = "") -> str:
    """Pairs x n grid for ``metric`` ("FA" or "RA"), value printed in each cell to 2 decimals."""
    if metric not in ("FA", "RA"):
        raise ValueError(f"unknown metric {metric!r}")
    pairs = list(dict.fromkeys(p.pair for p in report.pairs))
    ns = list(dict.fromkeys(p.n for p in report.pairs))
    cell = {(p.pair, p.n): (p.fa if metric == "FA" else p.ra) for p in report.pairs}
    width = _LEFT + _CELL_W * len(ns) + 16
    height = _TOP + _CELL_H * len(pairs) + 16
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<title>{escape(title or metric)}</title>',
        f'<text x="{_LEFT}" y="16" font-size="14">{escape(title or metric)}</text>',
    ]
    for c, n in enumerate(ns):
        x = _LEFT + c * _CELL_W + _CELL_W / 2
        out.append(f'<text class="col-label" x="{x}" y="{_TOP - 8}" text-anchor="middle">n={n}</text>')
    for r, pair in enumerate(pairs):
        y = _TOP + r * _CELL_H
        out.append(f'<text class="row-label" x="{_LEFT - 8}" y="{y + _CELL_H / 2 + 4}" text-anchor="end">'
                   f'{escape(pair)}</text>')
        for c, n in enumerate(ns):
            v = cell[(pair, n)]
            x = _LEFT + c * _CELL_W
            ink = "#ffffff" if v > 0.5 else "#000000"
            out.append(f'<rect class="cell" x="{x}" y="{y}" width="{_CELL_W}" height="{_CELL_H}" '
                       f'fill="{ramp_color(v)}" stroke="#cccccc" data-pair="{escape(pair)}" data-n="{n}"/>')
            out.append(f'<text class="cell-value" x="{x + _CELL_W / 2}" y="{y + _CELL_H / 2 + 4}" '
                       f'text-anchor="middle" fill="{ink}" data-pair="{escape(pair)}" data-n="{n}">{v:.2f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit(bundle, formats, out_dir=None) -> list:
    """Write the requested formats and return the created paths.

    json -> ``report.json``; csv -> ``report.csv``; svg -> ``heatmap_fa.svg``
    and ``heatmap_ra.svg``. An empty ``formats`` writes nothing.
    """
    formats = list(formats)
    unknown = [f for f in formats if f not in FORMATS]
    if unknown:
        raise EmitError(f"unknown output format(s) {unknown}; choose from {list(FORMATS)}")
    if not formats:
        return []
    out = Path(out_dir) if out_dir is not None else bundle.output_dir
    if out is None:
        raise EmitError("no output directory given")
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        if "json" in formats:
            p = out / "report.json"
            p.write_text(bundle.to_json(), encoding="utf-8")
            paths.append(p)
        if "csv" in formats:
            p = out / "report.csv"
            p.write_text(bundle.agreement.to_csv_text(), encoding="utf-8")
            paths.append(p)
        if "svg" in formats:
            for metric in ("FA", "RA"):
                p = out / f"heatmap_{metric.lower()}.svg"
                p.write_text(heatmap_svg(bundle.agreement, metric, f"{metric} by explainer pair and n"),
                             encoding="utf-8")
                paths.append(p)
    except OSError as exc:
        raise EmitError(f"cannot write to {out}: {exc}") from exc
    return paths


def write_delta_table(rows: list, out_dir) -> list:
    """``delta.csv`` and ``delta.json`` for the correlation scenario."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "delta.csv", out / "delta.json"
    cols = ["pair", "n", "FA_identity", "FA_correlated", "FA_delta", "RA_identity", "RA_correlated", "RA_delta"]
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    json_path.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    return [csv_path, json_path]
