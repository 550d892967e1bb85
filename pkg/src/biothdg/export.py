"""File exporters: legacy ASCII VTK for discontinuous fields and line samples.

Each cell is written with its own copy of the ``P_k`` lattice points and a
sub-triangulation of that lattice, so the element-wise polynomials are
shown without averaging across facets.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .refbasis import TriangleBasis
from .spaces import DofLayout
from .system import SolutionState

VTK_TRIANGLE = 5


def lattice(m: int):
    """Reference lattice points of order ``m`` and its sub-triangles."""
    m = max(m, 1)
    index = {}
    pts = []
    for j in range(m + 1):
        for i in range(m + 1 - j):
            index[i, j] = len(pts)
            pts.append((i / m, j / m))
    tris = []
    for j in range(m):
        for i in range(m - j):
            tris.append((index[i, j], index[i + 1, j], index[i, j + 1]))
            if i + j < m - 1:
                tris.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    return np.array(pts), np.array(tris, dtype=np.int64)


def evaluate_fields(layout: DofLayout, state: SolutionState, ref_points) -> dict:
    """Values of ``u, z`` (vector) and ``p, pT`` (scalar) at reference points of every cell.

    Vector fields have shape ``(nc, npts, 2)``, scalars ``(nc, npts)``.
    """
    phi = TriangleBasis(layout.k).tabulate(ref_points)          # (npts, nk)
    nc, nk, nk1 = layout.mesh.num_cells, layout.nk, layout.nk1

    def vec(c):
        return np.einsum("cmi,qi->cqm", c.reshape(nc, 2, nk), phi)

    def scal(c):
        return c.reshape(nc, nk1) @ phi[:, :nk1].T

    return {"u": vec(state.u), "z": vec(state.z), "p": scal(state.p), "pT": scal(state.pT)}


def physical_points(layout: DofLayout, ref_points) -> np.ndarray:
    v = layout.mesh.cell_coords
    J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=-1)
    return v[:, None, 0, :] + np.einsum("cab,qb->cqa", J, ref_points)


def write_vtk(path, layout: DofLayout, state: SolutionState, title: str = "biot") -> Path:
    """Write one legacy ASCII unstructured-grid file for a state."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ref, tris = lattice(layout.k)
    xy = physical_points(layout, ref).reshape(-1, 2)
    vals = evaluate_fields(layout, state, ref)
    nc, npts = layout.mesh.num_cells, len(ref)
    conn = (tris[None, :, :] + npts * np.arange(nc)[:, None, None]).reshape(-1, 3)
    lines = ["# vtk DataFile Version 3.0", f"{title} t={state.time:.12g}", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {len(xy)} double"]
    lines += [f"{x:.12e} {y:.12e} 0" for x, y in xy]
    lines.append(f"CELLS {len(conn)} {4 * len(conn)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in conn]
    lines.append(f"CELL_TYPES {len(conn)}")
    lines += [str(VTK_TRIANGLE)] * len(conn)
    lines.append(f"POINT_DATA {len(xy)}")
    for name in ("u", "z"):
        lines.append(f"VECTORS {name} double")
        lines += [f"{a:.12e} {b:.12e} 0" for a, b in vals[name].reshape(-1, 2)]
    for name in ("p", "pT"):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.12e}" for v in vals[name].reshape(-1)]
    path.write_text("\n".join(lines) + "\n")
    return path


def sample_lines(layout: DofLayout, state: SolutionState, xs, n_points: int = 101) -> list:
    """Sample ``p`` and ``pT`` along vertical lines ``x1 = const`` of the unit square.

    Returns rows ``(x1, x2, p, pT)``; points on shared facets take the value
    of the cell returned by point location.
    """
    rows = []
    ys = np.linspace(0.0, 1.0, n_points)
    basis = TriangleBasis(layout.k)
    nk1 = layout.nk1
    for x in xs:
        pts = np.column_stack([np.full_like(ys, x), ys])
        cells, ref = layout.mesh.locate(pts)
        phi = basis.tabulate(ref)[:, :nk1]
        p = np.einsum("ni,ni->n", state.p.reshape(-1, nk1)[cells], phi)
        pT = np.einsum("ni,ni->n", state.pT.reshape(-1, nk1)[cells], phi)
        rows += [(float(x), float(y), float(a), float(b)) for y, a, b in zip(ys, p, pT)]
    return rows


def write_line_samples(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "p", "pT"])
        for r in rows:
            w.writerow([f"{r[0]:.6f}", f"{r[1]:.6f}", f"{r[2]:.12e}", f"{r[3]:.12e}"])
    return path
