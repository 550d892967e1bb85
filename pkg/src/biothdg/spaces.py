"""Degree-of-freedom layouts for the element and facet spaces.

Element unknowns of cell ``c`` are stored contiguously as
``[u (2*nk), p_T (nk1), z (2*nk), p (nk1)]`` with ``nk = dim P_k`` and
``nk1 = dim P_{k-1}``; vector fields are component-major.

Facet unknowns form one global vector ``[u_bar, p_T_bar, p_bar]``.  The
displacement trace is either facet-wise modal (HDG) or continuous on the
skeleton with Lobatto nodes shared at vertices (EDG-HDG); pressure traces
are always facet-wise modal.  Trace bases are parametrised from the lower
to the higher vertex index of each facet.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh
from .refbasis import EdgeBasis, LagrangeEdgeBasis, edge_quadrature, triangle_dim


class Variant(enum.Enum):
    HDG = "hdg"
    EDG_HDG = "edg-hdg"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-")
        for v in cls:
            if v.value == key:
                return v
        raise ValueError(f"unknown variant {value!r}; expected 'hdg' or 'edg-hdg'")


@dataclass(frozen=True, eq=False)
class DofLayout:
    mesh: Mesh
    k: int
    variant: Variant

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("polynomial degree k must be >= 1 (Q_h uses P_{k-1})")

    # element spaces -----------------------------------------------------------
    @property
    def nk(self) -> int:
        return triangle_dim(self.k)

    @property
    def nk1(self) -> int:
        return triangle_dim(self.k - 1)

    @cached_property
    def local_slices(self) -> dict:
        nk, nk1 = self.nk, self.nk1
        bounds = np.cumsum([0, 2 * nk, nk1, 2 * nk, nk1])
        names = ("u", "pT", "z", "p")
        return {n: slice(int(a), int(b)) for n, a, b in zip(names, bounds[:-1], bounds[1:])}

    @property
    def n_interior(self) -> int:
        return 4 * self.nk + 2 * self.nk1

    # facet spaces -------------------------------------------------------------
    @property
    def nt(self) -> int:
        """Trace functions per facet and scalar component."""
        return self.k + 1

    @cached_property
    def trace_basis(self):
        """Displacement-trace basis on ``[0, 1]``."""
        if self.variant is Variant.EDG_HDG:
            return LagrangeEdgeBasis(self.k)
        return EdgeBasis(self.k)

    @cached_property
    def pressure_trace_basis(self) -> EdgeBasis:
        return EdgeBasis(self.k)

    @cached_property
    def ubar_nodes(self) -> np.ndarray:
        """Scalar displacement-trace node of ``(facet, local function)``, shape ``(nf, k+1)``."""
        nf, k = self.mesh.num_facets, self.k
        if self.variant is Variant.HDG:
            return np.arange(nf * (k + 1)).reshape(nf, k + 1)
        nv = self.mesh.num_vertices
        nodes = np.empty((nf, k + 1), dtype=np.int64)
        nodes[:, 0] = self.mesh.facets[:, 0]
        nodes[:, k] = self.mesh.facets[:, 1]
        if k > 1:
            nodes[:, 1:k] = nv + np.arange(nf * (k - 1)).reshape(nf, k - 1)
        return nodes

    @property
    def n_ubar_nodes(self) -> int:
        if self.variant is Variant.HDG:
            return self.mesh.num_facets * (self.k + 1)
        return self.mesh.num_vertices + (self.k - 1) * self.mesh.num_facets

    @property
    def n_ubar(self) -> int:
        return 2 * self.n_ubar_nodes

    @property
    def n_ptbar(self) -> int:
        return self.mesh.num_facets * self.nt

    @property
    def n_facet(self) -> int:
        return self.n_ubar + 2 * self.n_ptbar

    @cached_property
    def facet_slices(self) -> dict:
        a, b = self.n_ubar, self.n_ubar + self.n_ptbar
        return {"ubar": slice(0, a), "pTbar": slice(a, b), "pbar": slice(b, self.n_facet)}

    def ubar_index(self, facets, comp):
        """Global facet-vector indices of component ``comp`` on ``facets``, shape ``(n, k+1)``."""
        return 2 * self.ubar_nodes[facets] + comp

    def ptbar_index(self, facets):
        f = np.asarray(facets)[..., None]
        return self.n_ubar + f * self.nt + np.arange(self.nt)

    def pbar_index(self, facets):
        return self.ptbar_index(facets) + self.n_ptbar

    @property
    def n_local_facet(self) -> int:
        return 12 * self.nt

    @cached_property
    def local_facet_slices(self) -> dict:
        nt = self.nt
        return {"ubar": slice(0, 6 * nt), "pTbar": slice(6 * nt, 9 * nt),
                "pbar": slice(9 * nt, 12 * nt)}

    @cached_property
    def cell_facet_dofs(self) -> np.ndarray:
        """Global facet index of each local facet unknown, shape ``(nc, 12*(k+1))``.

        Local order: ``u_bar[e, comp, l]``, then ``p_T_bar[e, l]``, then ``p_bar[e, l]``.
        """
        cf = self.mesh.cell_facets
        nc = self.mesh.num_cells
        ub = np.stack([self.ubar_index(cf, 0), self.ubar_index(cf, 1)], axis=2)
        return np.concatenate([ub.reshape(nc, -1), self.ptbar_index(cf).reshape(nc, -1),
                               self.pbar_index(cf).reshape(nc, -1)], axis=1)

    # constraints -------------------------------------------------------------
    @cached_property
    def constrained(self) -> np.ndarray:
        """Sorted global facet indices fixed by essential conditions."""
        d = self.mesh.facets_tagged("D")
        p = self.mesh.facets_tagged("P")
        parts = [self.ubar_index(d, 0).ravel(), self.ubar_index(d, 1).ravel(),
                 self.pbar_index(p).ravel()]
        return np.unique(np.concatenate(parts).astype(np.int64))

    @cached_property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n_facet, dtype=bool)
        mask[self.constrained] = False
        return np.flatnonzero(mask)

    # bookkeeping ---------------------------------------------------------------
    @cached_property
    def dims(self) -> dict:
        nc = self.mesh.num_cells
        return {"V_h": 2 * self.nk * nc, "Q_h": self.nk1 * nc, "Z_h": 2 * self.nk * nc,
                "Vbar_h": self.n_ubar, "Qbar_h": self.n_ptbar}

    @property
    def total_dofs(self) -> int:
        """Element plus facet unknowns, constrained ones included."""
        return self.mesh.num_cells * self.n_interior + self.n_facet

    @property
    def n_global(self) -> int:
        """Unknowns of the condensed (facet-only) system after constraints."""
        return len(self.free)

    def digest(self) -> str:
        h = hashlib.sha256(self.mesh.digest().encode())
        h.update(f"{self.k}:{self.variant.value}".encode())
        return h.hexdigest()


def build_layout(mesh: Mesh, k: int, variant=Variant.HDG) -> DofLayout:
    if k < 1:
        raise ValueError("polynomial degree k must be >= 1 (Q_h uses P_{k-1})")
    return DofLayout(mesh, k, Variant.parse(variant))


def _facet_points(mesh: Mesh, facets, t):
    a = mesh.vertices[mesh.facets[facets, 0]]
    b = mesh.vertices[mesh.facets[facets, 1]]
    return a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]


def project_trace(layout: DofLayout, func, facets, target: str = "ubar"):
    """Project ``func`` onto a trace space on the given facets.

    ``target`` is ``"ubar"`` (vector ``func``), ``"pTbar"`` or ``"pbar"``
    (scalar ``func``).  Returns ``(indices, values)`` in the global facet
    vector.  Modal traces use the facet-wise L2 projection; the continuous
    EDG displacement trace uses the skeleton L2 best approximation on the
    union of the facets.
    """
    mesh = layout.mesh
    facets = np.asarray(facets, dtype=np.int64)
    if len(facets) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    quad = edge_quadrature(2 * layout.k + 4)
    pts = _facet_points(mesh, facets, quad.points)
    vals = np.asarray(func(pts.reshape(-1, 2)), dtype=float)
    L = mesh.facet_lengths[facets]

    if target in ("pTbar", "pbar"):
        chi = layout.pressure_trace_basis.tabulate(quad.points)
        vals = vals.reshape(len(facets), -1)
        coef = np.einsum("fq,q,ql->fl", vals, quad.weights, chi)
        idx = layout.ptbar_index(facets) if target == "pTbar" else layout.pbar_index(facets)
        return idx.ravel(), coef.ravel()
    if target != "ubar":
        raise ValueError(f"unknown trace target {target!r}")

    vals = vals.reshape(len(facets), len(quad), 2)
    xi = layout.trace_basis.tabulate(quad.points)
    if layout.variant is Variant.HDG:
        coef = np.einsum("fqa,q,ql->fal", vals, quad.weights, xi)
        idx = np.stack([layout.ubar_index(facets, 0), layout.ubar_index(facets, 1)], axis=1)
        return idx.ravel(), coef.ravel()

    nodes = layout.ubar_nodes[facets]
    used, local = np.unique(nodes, return_inverse=True)
    local = local.reshape(nodes.shape)
    mloc = np.einsum("f,q,ql,qm->flm", L, quad.weights, xi, xi)
    rows = np.broadcast_to(local[:, :, None], mloc.shape).ravel()
    cols = np.broadcast_to(local[:, None, :], mloc.shape).ravel()
    M = sp.csc_matrix((mloc.ravel(), (rows, cols)), shape=(len(used), len(used)))
    lu = spla.splu(M)
    idx, out = [], []
    for a in range(2):
        rhs = np.zeros(len(used))
        np.add.at(rhs, local, np.einsum("f,q,fq,ql->fl", L, quad.weights, vals[:, :, a], xi))
        out.append(lu.solve(rhs))
        idx.append(2 * used + a)
    return np.concatenate(idx), np.concatenate(out)


def evaluate_trace(layout: DofLayout, coeffs: np.ndarray, facets, t, target: str = "ubar"):
    """Evaluate a facet-vector field at facet parameters ``t``.

    Returns ``(n_facets, len(t), 2)`` for ``"ubar"`` and ``(n_facets, len(t))``
    for the pressure traces.
    """
    facets = np.asarray(facets, dtype=np.int64)
    t = np.asarray(t, dtype=float)
    if target == "ubar":
        xi = layout.trace_basis.tabulate(t)
        c = np.stack([coeffs[layout.ubar_index(facets, a)] for a in range(2)], axis=1)
        return np.einsum("fal,ql->fqa", c, xi)
    chi = layout.pressure_trace_basis.tabulate(t)
    idx = layout.ptbar_index(facets) if target == "pTbar" else layout.pbar_index(facets)
    return coeffs[idx] @ chi.T
