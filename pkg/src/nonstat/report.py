"""CSV, JSON and SVG emitters for indices, fused-lasso maps and partitions."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .geometry import Rect

# viridis sampled at nine evenly spaced points
_RAMP = np.array([
    (68, 1, 84), (71, 44, 122), (59, 81, 139), (44, 113, 142), (33, 144, 141),
    (39, 173, 129), (92, 200, 99), (170, 220, 50), (253, 231, 37),
], dtype=float)


def ramp_color(t: float) -> str:
    """Hex color for ``t`` in [0, 1] on the fixed viridis-like ramp."""
    t = min(max(float(t), 0.0), 1.0) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    c = _RAMP[i] + (t - i) * (_RAMP[i + 1] - _RAMP[i])
    return "#{:02x}{:02x}{:02x}".format(*np.rint(c).astype(int))


def write_rows(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_indices_csv(path, field) -> None:
    write_rows(
        path,
        ["site", "site_x", "site_y", "xi", "n_neighbors"],
        ([int(i), repr(float(x)), repr(float(y)), repr(float(v)), int(k)]
         for i, (x, y), v, k in zip(field.active, field.sites, field.xi, field.n_neighbors)),
    )


def write_fusion_csv(path, sites_idx, sol) -> None:
    write_rows(
        path,
        ["site", "beta", "component_label"],
        ([int(i), repr(float(b)), int(c)] for i, b, c in zip(sites_idx, sol.beta, sol.labels)),
    )


def write_partition_csv(path, sites_idx, xy, labels) -> None:
    write_rows(
        path,
        ["site", "x", "y", "subregion_label"],
        ([int(i), repr(float(x)), repr(float(y)), int(k)] for i, (x, y), k in zip(sites_idx, xy, labels)),
    )


def write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, default=_jsonable)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def cells_svg(cells, values, domain: Rect, *, width: int = 600, title: str | None = None, points=None) -> str:
    """SVG of polygons filled by ``values`` on the ramp over [min, max]."""
    values = np.asarray(values, dtype=float)
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo if hi > lo else 1.0
    w_dom = domain.xmax - domain.xmin
    h_dom = domain.ymax - domain.ymin
    height = int(round(width * h_dom / w_dom))
    sx = width / w_dom
    sy = height / h_dom

    def tx(p):
        return (p[:, 0] - domain.xmin) * sx, (domain.ymax - p[:, 1]) * sy

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + 30}" '
           f'viewBox="0 0 {width} {height + 30}">']
    if title:
        out.append(f'<title>{title}</title>')
    for poly, v in zip(cells, values):
        if len(poly) < 3:
            continue
        xs, ys = tx(np.asarray(poly))
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        out.append(f'<polygon points="{pts}" fill="{ramp_color((v - lo) / span)}" stroke="#ffffff" stroke-width="0.3"/>')
    if points is not None:
        xs, ys = tx(np.asarray(points))
        out.extend(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.2" fill="#000000"/>' for x, y in zip(xs, ys))
    # color bar
    for i in range(100):
        out.append(f'<rect x="{i * width / 100:.2f}" y="{height + 8}" width="{width / 100 + 0.5:.2f}" height="10" '
                   f'fill="{ramp_color(i / 99)}"/>')
    out.append(f'<text x="2" y="{height + 29}" font-size="9">{lo:.4g}</text>')
    out.append(f'<text x="{width - 2}" y="{height + 29}" font-size="9" text-anchor="end">{hi:.4g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
