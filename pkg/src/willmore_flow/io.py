"""Output writers: time series CSV, OBJ snapshots and JSON reports."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .energy import EnergyReport
from .grid import GridAtlas

SERIES_COLUMNS = ("t", "dt", "W", "area", "rho_sup", "el_residual_sup", "gb_defect")
REPORT_KEYS = ("terminal", "t_final", "steps", "W_initial", "W_final", "area_final", "el_residual_sup",
               "config_echo")


def format_float(x: float) -> str:
    return "%.17g" % x


class SeriesWriter:
    """Appends one CSV row per output step and flushes at every row."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8", newline="")
        self._fh.write(",".join(SERIES_COLUMNS) + "\n")
        self._fh.flush()

    def write(self, dt: float, report: EnergyReport) -> None:
        row = (report.t, dt, report.W, report.area, report.rho_sup, report.el_residual_sup, report.gb_defect)
        self._fh.write(",".join(format_float(v) for v in row) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_series(path) -> dict:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    cols = {h: [] for h in header}
    for line in lines[1:]:
        for h, v in zip(header, line.split(",")):
            cols[h].append(float(v))
    return {h: np.array(v) for h, v in cols.items()}


def graph_positions(atlas: GridAtlas, rho: np.ndarray) -> np.ndarray:
    """Psi_rho = p + rho nu at owned nodes."""
    geom = atlas.geometry
    return geom.position + np.asarray(rho, dtype=float)[:, None] * geom.normal


def mesh_faces(atlas: GridAtlas) -> list[tuple[int, int, int]]:
    """Triangulated grid quads, keeping a quad only in the chart that dominates at its centre.

    Vertex indices are 0-based into the owned-node ordering.
    """
    faces = []
    n = atlas.n
    surf = atlas.surface
    for c, chart in enumerate(surf.charts):
        base = atlas.chart_slice(c).start
        U, V = atlas.owned_coords(c)
        wrap = chart.periodic
        iu = range(n if wrap[0] else n - 1)
        iv = range(n if wrap[1] else n - 1)
        quads = [(i, j) for i in iu for j in iv]
        if not quads:
            continue
        qi = np.array([q[0] for q in quads])
        qj = np.array([q[1] for q in quads])
        uc = U[qi, 0] + 0.5 * atlas.h[c, 0]
        vc = V[0, qj] + 0.5 * atlas.h[c, 1]
        keep = _dominant(atlas, c, uc, vc)
        for i, j, k in zip(qi, qj, keep):
            if not k:
                continue
            i1, j1 = (i + 1) % n, (j + 1) % n
            a, b = base + i * n + j, base + i1 * n + j
            cc, d = base + i1 * n + j1, base + i * n + j1
            faces.append((a, b, cc))
            faces.append((a, cc, d))
    return faces


def _dominant(atlas: GridAtlas, c: int, u, v) -> np.ndarray:
    surf = atlas.surface
    own = surf.pou(c, u, v)
    xyz = surf.charts[c].position(u, v)
    best = np.ones_like(own, dtype=bool)
    for k, other in enumerate(surf.charts):
        if k == c:
            continue
        ou, ov = other.coordinates(xyz)
        ou = np.asarray(ou, dtype=float)
        ov = np.asarray(ov, dtype=float)
        ok = np.isfinite(ou) & np.isfinite(ov)
        w = np.zeros_like(own)
        w[ok] = surf.pou(k, ou[ok], ov[ok])
        # ties go to the lower chart id
        best &= (own > w) | ((own == w) & (c < k))
    return best & (own > 0)


def write_obj(path, atlas: GridAtlas, rho: np.ndarray) -> None:
    pts = graph_positions(atlas, rho)
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in pts:
            fh.write(f"v {format_float(x)} {format_float(y)} {format_float(z)}\n")
        for a, b, c in mesh_faces(atlas):
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def read_obj(path):
    verts, faces = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
    return np.array(verts), faces


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.generic):
        return _json_safe(x.item())
    return x


def write_json(path, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(data), fh, indent=2, sort_keys=False)
        fh.write("\n")


def run_report(trajectory, config_echo: dict) -> dict:
    reports = trajectory.reports
    first = reports[0] if reports else None
    last = reports[-1] if reports else None
    term = trajectory.terminal
    return {
        "terminal": term.kind if term else None,
        "t_final": last.t if last else 0.0,
        "steps": max(len(trajectory.times) - 1, 0),
        "W_initial": first.W if first else None,
        "W_final": last.W if last else None,
        "area_final": last.area if last else None,
        "el_residual_sup": last.el_residual_sup if last else None,
        "config_echo": config_echo,
    }
