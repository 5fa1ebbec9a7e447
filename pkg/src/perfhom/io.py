"""Plain-text exports: legacy VTK meshes and fields, CSV tables, run manifests."""

from __future__ import annotations

import json
import os
import platform
from pathlib import Path

import numpy as np

from .geometry import EdgeTag, TriangulatedDomain

TAG_NAMES = {
    EdgeTag.INTERIOR: "interior",
    EdgeTag.HOLE_BOUNDARY: "hole_boundary",
    EdgeTag.OUTER_BOUNDARY: "outer_boundary",
    EdgeTag.PERIODIC_MASTER: "periodic_master",
    EdgeTag.PERIODIC_SLAVE: "periodic_slave",
}


def fmt(x) -> str:
    return f"{float(x):.17g}"


def write_vtk(path, mesh: TriangulatedDomain, point_data: dict | None = None,
              cell_data: dict | None = None, tags: bool = True) -> None:
    """Legacy ASCII VTK unstructured grid (triangles, cell type 5)."""
    path = Path(path)
    lines = [
        "# vtk DataFile Version 3.0",
        path.stem,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{fmt(x)} {fmt(y)} 0" for x, y in mesh.vertices]
    nt = len(mesh.triangles)
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    cell_data = dict(cell_data or {})
    if mesh.cell_index is not None:
        cell_data.setdefault("cell_index", mesh.cell_index)
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, vals in point_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [fmt(v) for v in np.asarray(vals)]
    if cell_data:
        lines.append(f"CELL_DATA {nt}")
        for name, vals in cell_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [fmt(v) for v in np.asarray(vals)]
    path.write_text("\n".join(lines) + "\n")
    if tags:
        write_tags(path.with_suffix(".tags"), mesh)


def write_tags(path, mesh: TriangulatedDomain) -> None:
    lines = [f"edge {a} {b} {TAG_NAMES[EdgeTag(int(t))]}"
             for (a, b), t in zip(mesh.edges, mesh.edge_tag)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_points(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back vertices and triangles of a file written by :func:`write_vtk`."""
    tokens = Path(path).read_text().split("\n")
    i = next(k for k, t in enumerate(tokens) if t.startswith("POINTS"))
    nv = int(tokens[i].split()[1])
    pts = np.array([[float(v) for v in tokens[i + 1 + k].split()[:2]] for k in range(nv)])
    j = next(k for k, t in enumerate(tokens) if t.startswith("CELLS"))
    nt = int(tokens[j].split()[1])
    tris = np.array([[int(v) for v in tokens[j + 1 + k].split()[1:]] for k in range(nt)])
    return pts, tris


def write_csv(path, header: list[str], rows, comments=()) -> None:
    """Space-free comma-separated values with 17 significant digits for floats.

    ``comments`` become leading ``# `` lines.
    """
    out = [f"# {c}" for c in comments] + [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (bool, np.bool_)):
                cells.append("1" if v else "0")
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            elif isinstance(v, (float, np.floating)):
                cells.append(fmt(v))
            else:
                cells.append(str(v))
        out.append(",".join(cells))
    Path(path).write_text("\n".join(out) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def write_newton_log(path, history) -> None:
    write_csv(path, ["iter", "residual", "damping"],
              [(int(i), float(r), float(d)) for i, r, d in history])


def versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {
        "perfhom": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(out_dir, config: dict, runtimes: dict, checks: list, files: list) -> None:
    data = {
        "config": config,
        "versions": versions(),
        "runtimes_s": runtimes,
        "checks": checks,
        "files": sorted(files),
    }
    Path(out_dir, "manifest.json").write_text(json.dumps(data, indent=2, default=str) + "\n")


def ensure_dir(path) -> Path:
    os.makedirs(path, exist_ok=True)
    return Path(path)
