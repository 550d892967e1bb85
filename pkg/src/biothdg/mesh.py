"""Straight-sided triangulations with facet topology and boundary tags.

Every boundary facet carries two independent tags: a displacement tag
(``"D"`` essential, ``"T"`` traction) and a flow tag (``"P"`` essential
pressure, ``"F"`` prescribed flux).
"""
from __future__ import annotations

import hashlib
import io
import os
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Mapping

import numpy as np

DISPLACEMENT_TAGS = ("D", "T")
FLOW_TAGS = ("P", "F")

Predicate = Callable[[float, float], bool]


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray          # (nv, 2)
    cells: np.ndarray             # (nc, 3), counter-clockwise
    facets: np.ndarray            # (nf, 2), sorted vertex pairs
    cell_facets: np.ndarray       # (nc, 3), facet of local edge e = (e, e+1)
    facet_cells: np.ndarray       # (nf, 2), lower cell first, -1 if boundary
    facet_local: np.ndarray       # (nf, 2), local edge index in each cell
    disp_tag: np.ndarray          # (nf,), "" on interior or untagged facets
    flow_tag: np.ndarray          # (nf,)

    @classmethod
    def from_cells(cls, vertices, cells) -> "Mesh":
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.ascontiguousarray(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise MeshError("cells must have shape (nc, 3)")
        p = vertices[cells]
        area2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                 - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        if np.any(area2 == 0.0):
            raise MeshError(f"cell {int(np.argmin(np.abs(area2)))} is degenerate")
        flip = area2 < 0
        if np.any(flip):
            cells = cells.copy()
            cells[flip] = cells[flip][:, [0, 2, 1]]

        nc = len(cells)
        a = cells
        b = np.roll(cells, -1, axis=1)
        lo = np.minimum(a, b).ravel()
        hi = np.maximum(a, b).ravel()
        keys = np.stack([lo, hi], axis=1)
        facets, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        cell_facets = inverse.reshape(nc, 3)

        nf = len(facets)
        facet_cells = np.full((nf, 2), -1, dtype=np.int64)
        facet_local = np.full((nf, 2), -1, dtype=np.int64)
        count = np.zeros(nf, dtype=np.int64)
        # cells visited in increasing order, so slot 0 holds the lower index
        for flat, f in enumerate(inverse):
            c, e = divmod(flat, 3)
            slot = count[f]
            if slot > 1:
                raise MeshError(f"facet {tuple(facets[f])} shared by more than two cells")
            facet_cells[f, slot] = c
            facet_local[f, slot] = e
            count[f] += 1
        empty = np.full(nf, "", dtype="<U1")
        return cls(vertices, cells, facets, cell_facets, facet_cells, facet_local,
                   empty, empty.copy())

    # sizes -----------------------------------------------------------------
    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_facets(self) -> int:
        return len(self.facets)

    # geometry --------------------------------------------------------------
    @cached_property
    def boundary(self) -> np.ndarray:
        return self.facet_cells[:, 1] < 0

    @cached_property
    def cell_coords(self) -> np.ndarray:
        return self.vertices[self.cells]

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.cell_coords
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    @cached_property
    def facet_lengths(self) -> np.ndarray:
        d = self.vertices[self.facets[:, 1]] - self.vertices[self.facets[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def facet_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.facets[:, 0]] + self.vertices[self.facets[:, 1]])

    @cached_property
    def diameters(self) -> np.ndarray:
        """Cell diameters ``h_K`` (longest edge)."""
        return self.facet_lengths[self.cell_facets].max(axis=1)

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def local_normals(self) -> np.ndarray:
        """Outward unit normals per cell and local edge, shape ``(nc, 3, 2)``."""
        p = self.cell_coords
        d = np.roll(p, -1, axis=1) - p
        length = np.hypot(d[..., 0], d[..., 1])[..., None]
        return np.stack([d[..., 1], -d[..., 0]], axis=-1) / length

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Global facet normals: outward of the lower-index cell (outward on the boundary)."""
        c0 = self.facet_cells[:, 0]
        return self.local_normals[c0, self.facet_local[:, 0]]

    @cached_property
    def normal_signs(self) -> np.ndarray:
        """``+1``/``-1`` per cell and local edge relating local to global normals."""
        sign = np.ones((self.num_cells, 3))
        inner = ~self.boundary
        sign[self.facet_cells[inner, 1], self.facet_local[inner, 1]] = -1.0
        return sign

    @cached_property
    def edge_reversed(self) -> np.ndarray:
        """True where local edge ``e`` runs from the higher to the lower vertex index."""
        a = self.cells
        b = np.roll(self.cells, -1, axis=1)
        return a > b

    # tags ------------------------------------------------------------------
    def facets_tagged(self, tag: str) -> np.ndarray:
        if tag in DISPLACEMENT_TAGS:
            return np.flatnonzero(self.disp_tag == tag)
        if tag in FLOW_TAGS:
            return np.flatnonzero(self.flow_tag == tag)
        raise KeyError(tag)

    def tag_measure(self, tag: str) -> float:
        return float(self.facet_lengths[self.facets_tagged(tag)].sum())

    @property
    def is_tagged(self) -> bool:
        b = self.boundary
        return bool(np.all(self.disp_tag[b] != "") and np.all(self.flow_tag[b] != ""))

    def validate(self) -> None:
        """Raise :class:`MeshError` when a structural invariant fails."""
        if np.any(self.areas <= 0):
            raise MeshError("nonpositive cell area")
        nb = self.boundary
        if np.any(self.facet_cells[~nb, 1] < 0) or np.any(self.facet_cells[:, 0] < 0):
            raise MeshError("inconsistent facet-cell adjacency")
        if self.is_tagged and self.tag_measure("D") <= 0:
            raise MeshError("|Gamma_D| must be positive")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.cells.tobytes())
        h.update("".join(self.disp_tag).encode())
        h.update("".join(self.flow_tag).encode())
        return h.hexdigest()

    # point location ---------------------------------------------------------
    def locate(self, points, tol: float = 1e-12):
        """Return ``(cell, reference_coords)`` for each point; raises if outside."""
        from .refbasis import affine_maps

        pts = np.atleast_2d(np.asarray(points, dtype=float))
        _, inv, _ = affine_maps(self.cell_coords)
        origin = self.cell_coords[:, 0]
        cells = np.empty(len(pts), dtype=np.int64)
        ref = np.empty((len(pts), 2))
        for i, x in enumerate(pts):
            xi = np.einsum("cab,cb->ca", inv, x - origin)
            margin = np.minimum(np.minimum(xi[:, 0], xi[:, 1]), 1.0 - xi[:, 0] - xi[:, 1])
            c = int(np.argmax(margin))
            if margin[c] < -tol:
                raise MeshError(f"point {tuple(x)} lies outside the mesh")
            cells[i] = c
            ref[i] = xi[c]
        return cells, ref


# construction ----------------------------------------------------------------

def build_rectangle(x_range, y_range, nx: int, ny: int) -> Mesh:
    """Structured triangulation of a rectangle, each box cut along its main diagonal."""
    x0, x1 = map(float, x_range)
    y0, y1 = map(float, y_range)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate rectangle {x_range} x {y_range}")
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be >= 1")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return Mesh.from_cells(vertices, cells)


def build_structured_square(n: int, diagonal_pattern: str = "right") -> Mesh:
    """Triangulation of the unit square with ``n`` boxes per side."""
    if n < 1:
        raise MeshError("n must be >= 1")
    if diagonal_pattern == "right":
        return build_rectangle((0.0, 1.0), (0.0, 1.0), n, n)
    if diagonal_pattern != "crisscross":
        raise MeshError(f"unknown diagonal pattern {diagonal_pattern!r}")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    corners = np.column_stack([X.ravel(), Y.ravel()])
    h = 1.0 / n
    cx, cy = np.meshgrid(xs[:-1] + 0.5 * h, xs[:-1] + 0.5 * h)
    centres = np.column_stack([cx.ravel(), cy.ravel()])
    vertices = np.vstack([corners, centres])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10, v01 = v00 + 1, v00 + n + 1
    v11 = v01 + 1
    m = len(corners) + (j * n + i).ravel()
    cells = np.stack([np.column_stack([v00, v10, m]), np.column_stack([v10, v11, m]),
                      np.column_stack([v11, v01, m]), np.column_stack([v01, v00, m])],
                     axis=1).reshape(-1, 3)
    return Mesh.from_cells(vertices, cells)


def _match(rule: Mapping[str, Predicate], allowed, midpoints, partition):
    tags = np.full(len(midpoints), "", dtype="<U1")
    for tag in rule:
        if tag not in allowed:
            raise MeshError(f"unknown {partition} tag {tag!r}; expected one of {allowed}")
    for i, (x, y) in enumerate(midpoints):
        hits = [tag for tag, pred in rule.items() if pred(x, y)]
        if len(hits) != 1:
            what = "unmatched" if not hits else f"matched by {hits}"
            raise MeshError(f"boundary facet with midpoint ({x:.6g}, {y:.6g}) is "
                            f"{what} in the {partition} partition")
        tags[i] = hits[0]
    return tags


def tag_boundary(mesh: Mesh, displacement_rule: Mapping[str, Predicate],
                 flow_rule: Mapping[str, Predicate]) -> Mesh:
    """Tag every boundary facet by predicates on its midpoint.

    ``displacement_rule`` maps ``"D"``/``"T"`` and ``flow_rule`` maps
    ``"P"``/``"F"`` to predicates ``(x, y) -> bool``.  Each boundary facet
    must satisfy exactly one predicate of each rule.
    """
    b = np.flatnonzero(mesh.boundary)
    mids = mesh.facet_midpoints[b]
    disp = np.full(mesh.num_facets, "", dtype="<U1")
    flow = np.full(mesh.num_facets, "", dtype="<U1")
    disp[b] = _match(displacement_rule, DISPLACEMENT_TAGS, mids, "displacement")
    flow[b] = _match(flow_rule, FLOW_TAGS, mids, "flow")
    return replace(mesh, disp_tag=disp, flow_tag=flow)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle into four similar children; tags inherited."""
    nv = mesh.num_vertices
    vertices = np.vstack([mesh.vertices, mesh.facet_midpoints])
    c = mesh.cells
    m = nv + mesh.cell_facets  # midpoint of local edge e = (e, e+1)
    children = np.stack([
        np.column_stack([c[:, 0], m[:, 0], m[:, 2]]),
        np.column_stack([m[:, 0], c[:, 1], m[:, 1]]),
        np.column_stack([m[:, 2], m[:, 1], c[:, 2]]),
        np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
    ], axis=1).reshape(-1, 3)
    fine = Mesh.from_cells(vertices, children)
    if not np.any(mesh.disp_tag != "") and not np.any(mesh.flow_tag != ""):
        return fine
    lookup = {}
    for f in np.flatnonzero(mesh.boundary):
        lo, hi = mesh.facets[f]
        mid = nv + f
        tags = (mesh.disp_tag[f], mesh.flow_tag[f])
        lookup[(min(lo, mid), max(lo, mid))] = tags
        lookup[(min(hi, mid), max(hi, mid))] = tags
    disp = fine.disp_tag.copy()
    flow = fine.flow_tag.copy()
    for f in np.flatnonzero(fine.boundary):
        disp[f], flow[f] = lookup[tuple(int(v) for v in fine.facets[f])]
    return replace(fine, disp_tag=disp, flow_tag=flow)


def refine(mesh: Mesh, times: int) -> Mesh:
    for _ in range(times):
        mesh = uniform_refine(mesh)
    return mesh


# ASCII file format -----------------------------------------------------------

MESH_HEADER = "poromesh 2d"


def write_mesh(mesh: Mesh, target) -> None:
    """Write ``mesh`` to a path or text stream in the ``poromesh 2d`` format."""
    lines = [MESH_HEADER, f"vertices {mesh.num_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"cells {mesh.num_cells}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.cells.tolist()]
    bnd = np.flatnonzero(mesh.boundary)
    lines.append(f"facets {len(bnd)}")
    for f in bnd:
        v0, v1 = mesh.facets[f]
        lines.append(f"facet {v0} {v1} {mesh.disp_tag[f] or '-'} {mesh.flow_tag[f] or '-'}")
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w") as fh:
            fh.write(text)
    else:
        target.write(text)


def read_mesh(source) -> Mesh:
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source.read()
    it = iter(io.StringIO(text).read().splitlines())
    if next(it).strip() != MESH_HEADER:
        raise MeshError("not a poromesh 2d file")
    nv = int(next(it).split()[1])
    vertices = np.array([[float(s) for s in next(it).split()] for _ in range(nv)])
    nc = int(next(it).split()[1])
    cells = np.array([[int(s) for s in next(it).split()] for _ in range(nc)], dtype=np.int64)
    mesh = Mesh.from_cells(vertices.reshape(nv, 2), cells.reshape(nc, 3))
    nb = int(next(it).split()[1])
    index = {tuple(f): i for i, f in enumerate(mesh.facets.tolist())}
    disp = mesh.disp_tag.copy()
    flow = mesh.flow_tag.copy()
    for _ in range(nb):
        _, v0, v1, dt, ft = next(it).split()
        v0, v1 = int(v0), int(v1)
        f = index[(min(v0, v1), max(v0, v1))]
        disp[f] = "" if dt == "-" else dt
        flow[f] = "" if ft == "-" else ft
    return replace(mesh, disp_tag=disp, flow_tag=flow)
