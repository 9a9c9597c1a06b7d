"""VTK legacy ASCII export of per-subdomain fields plus a JSON manifest."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .solver import Solution

VTK_CELL_TYPE = {0: 1, 1: 3, 2: 5, 3: 10}


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _points3(nodes: np.ndarray) -> np.ndarray:
    out = np.zeros((len(nodes), 3))
    out[:, : nodes.shape[1]] = nodes
    return out


def vtk_unstructured(title: str, nodes: np.ndarray, cells: np.ndarray, dim: int,
                     scalars: dict[str, np.ndarray], vectors: dict[str, np.ndarray] | None = None) -> str:
    """Legacy ASCII unstructured grid with cell data, floats written with 17 significant digits."""
    pts = _points3(nodes)
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(pts)} double")
    lines.extend(" ".join(_fmt(c) for c in row) for row in pts)
    k = cells.shape[1]
    lines.append(f"CELLS {len(cells)} {len(cells) * (k + 1)}")
    lines.extend(f"{k} " + " ".join(str(int(i)) for i in row) for row in cells)
    lines.append(f"CELL_TYPES {len(cells)}")
    lines.extend([str(VTK_CELL_TYPE[dim])] * len(cells))
    lines.append(f"CELL_DATA {len(cells)}")
    for name, vals in scalars.items():
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines.extend(_fmt(v) for v in vals)
    for name, vals in (vectors or {}).items():
        lines.append(f"VECTORS {name} double")
        lines.extend(" ".join(_fmt(c) for c in row) for row in _points3(vals))
    return "\n".join(lines) + "\n"


def write_solution_vtk(sol: Solution, out: str | Path, prefix: str = "") -> dict:
    """Write one file per subdomain and per interface mortar grid; return the manifest.

    Subdomain files carry the cell pressure and the cell-averaged flux vector;
    interface files live on the mortar grid (the lower-dimensional cells the
    interface covers) and carry the mortar flux.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    mesh = sol.system.layout.mesh
    manifest = {"subdomains": [], "interfaces": []}
    for s in mesh:
        name = f"{prefix}subdomain_d{s.dim}_{s.id}.vtk"
        body = vtk_unstructured(
            f"subdomain dim={s.dim} id={s.id}", s.nodes, s.cells, s.dim,
            {"pressure": sol.pressure(s.key)}, {"flux": sol.cell_velocity(s.key)},
        )
        (out / name).write_text(body)
        manifest["subdomains"].append({"dim": s.dim, "id": s.id, "file": name, "cells": s.num_cells})
    for k, f in enumerate(mesh.interfaces):
        lo = mesh[f.lower_key]
        cells = lo.cells[mesh.trace[k].mortar_cells]
        name = f"{prefix}interface_d{f.dim}_{f.lower_id}_{f.side}.vtk"
        body = vtk_unstructured(
            f"interface dim={f.dim} lower={f.lower_id} side={f.side} upper={f.upper_id}",
            lo.nodes, cells, lo.dim, {"mortar_flux": sol.mortar(k)},
        )
        (out / name).write_text(body)
        manifest["interfaces"].append({
            "dim": f.dim, "lower_id": f.lower_id, "side": f.side, "upper_id": f.upper_id,
            "file": name, "cells": len(cells),
        })
    (out / f"{prefix}manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def read_vtk_cell_scalars(path: str | Path, name: str) -> np.ndarray:
    """Read back one cell scalar field from a file written by :func:`vtk_unstructured`."""
    lines = Path(path).read_text().splitlines()
    n = next(int(line.split()[1]) for line in lines if line.startswith("CELL_DATA"))
    i = lines.index(f"SCALARS {name} double 1")
    return np.array([float(v) for v in lines[i + 2: i + 2 + n]])
