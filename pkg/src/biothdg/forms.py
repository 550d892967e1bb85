"""Element-local bilinear forms, mass couplings and mesh-dependent norms.

All routines are vectorised over cells.  Local facet unknowns follow the
ordering of :attr:`DofLayout.cell_facet_dofs`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .refbasis import (TriangleBasis, affine_maps, edge_quadrature, reference_edge_points,
                       triangle_quadrature)
from .spaces import DofLayout


#: Default penalty is ``DEFAULT_PENALTY_FACTOR * k**2``.
DEFAULT_PENALTY_FACTOR = 8.0


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Physical coefficients (constant in space) plus discretisation choices."""

    E: float
    nu: float
    alpha: float
    kappa: float
    c0: float
    k: int = 1
    beta: float | None = None

    def __post_init__(self):
        if not self.E > 0:
            raise ParameterError(f"Young's modulus must be positive, got {self.E}")
        if not 0.0 < self.nu < 0.5:
            raise ParameterError(f"Poisson ratio must lie in (0, 0.5), got {self.nu}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"Biot-Willis constant must lie in (0, 1), got {self.alpha}")
        if not self.kappa > 0:
            raise ParameterError(f"permeability must be positive, got {self.kappa}")
        if not self.c0 >= 0:
            raise ParameterError(f"storage coefficient must be nonnegative, got {self.c0}")
        if self.k < 1:
            raise ParameterError("polynomial degree must be >= 1")
        if self.beta is not None and not self.beta > 0:
            raise ParameterError("penalty beta must be positive")

    @property
    def mu(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lam(self) -> float:
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def penalty(self) -> float:
        """Penalty ``beta``; the default ``8 k^2`` keeps ``a_h`` coercive on the
        structured meshes used here (``4 k^2`` is not, for ``k = 1``)."""
        return DEFAULT_PENALTY_FACTOR * self.k ** 2 if self.beta is None else float(self.beta)


class ElementTables:
    """Quadrature-level geometry and basis data for every cell of a layout."""

    def __init__(self, layout: DofLayout, volume_degree: int | None = None,
                 edge_degree: int | None = None):
        self.layout = layout
        mesh = layout.mesh
        k = layout.k
        self.basis = TriangleBasis(k)
        self.vquad = triangle_quadrature(2 * k + 2 if volume_degree is None else volume_degree)
        self.equad = edge_quadrature(2 * k + 2 if edge_degree is None else edge_degree)

        coords = mesh.cell_coords
        J, invJ, det = affine_maps(coords)
        self.det = det
        self.h = mesh.diameters
        vq = self.vquad
        self.phi = self.basis.tabulate(vq.points)                        # (nq, nk)
        dref = self.basis.tabulate_grad(vq.points)                       # (nq, nk, 2)
        self.G = np.einsum("qib,cba->cqia", dref, invJ)                  # (nc, nq, nk, 2)
        self.wq = det[:, None] * vq.weights[None, :]
        self.xq = coords[:, :1, :] + np.einsum("cab,qb->cqa", J, vq.points)

        t = self.equad.points
        rp = reference_edge_points(t)                                    # (3, ne, 2)
        self.phiE = np.stack([self.basis.tabulate(rp[e]) for e in range(3)])
        drefE = np.stack([self.basis.tabulate_grad(rp[e]) for e in range(3)])
        self.GE = np.einsum("erib,cba->ceria", drefE, invJ)              # (nc, 3, ne, nk, 2)
        self.xE = coords[:, None, None, 0, :] + np.einsum("cab,erb->cera", J, rp)
        L = mesh.facet_lengths[mesh.cell_facets]                         # (nc, 3)
        self.wE = L[:, :, None] * self.equad.weights[None, None, :]
        self.normals = mesh.local_normals                                # (nc, 3, 2)
        rev = mesh.edge_reversed[:, :, None]
        self.s_global = np.where(rev, 1.0 - t[None, None, :], t[None, None, :])
        self.xi = layout.trace_basis.tabulate(self.s_global)             # (nc, 3, ne, nt)
        self.chi = layout.pressure_trace_basis.tabulate(self.s_global)

    @property
    def nk(self):
        return self.layout.nk

    @property
    def nk1(self):
        return self.layout.nk1

    @cached_property
    def mass(self) -> np.ndarray:
        return np.einsum("cq,qi,qj->cij", self.wq, self.phi, self.phi)

    @cached_property
    def mass_q(self) -> np.ndarray:
        n = self.nk1
        return self.mass[:, :n, :n]

    @cached_property
    def dn(self) -> np.ndarray:
        return np.einsum("ceria,cea->ceri", self.GE, self.normals)

    def vector_block(self, m):
        """Block-diagonal two-component copy of a scalar block ``(nc, n, m)``."""
        nc, a, b = m.shape
        out = np.zeros((nc, 2, a, 2, b))
        out[:, 0, :, 0, :] = m
        out[:, 1, :, 1, :] = m
        return out.reshape(nc, 2 * a, 2 * b)


def _elastic_blocks(T: ElementTables, mu, tau, consistency: bool):
    """Blocks of ``mu*(2 eps, eps) + <tau (u-ubar), v-vbar> [- consistency terms]``.

    ``tau`` is per cell.  Returns ``(A_uu, A_ub, A_bb)`` with local trace order ``[e, a, l]``.
    """
    nc, nk, nt = T.G.shape[0], T.nk, T.layout.nt
    K = np.einsum("cq,cqia,cqjb->cabij", T.wq, T.G, T.G)
    tr = K[:, 0, 0] + K[:, 1, 1]
    Auu = np.zeros((nc, 2, nk, 2, nk))
    for a in range(2):
        for b in range(2):
            Auu[:, a, :, b, :] = mu * ((a == b) * tr + K[:, b, a])

    Mb = np.einsum("cer,eri,erj->cij", T.wE, T.phiE, T.phiE)
    Q1 = np.einsum("cer,eri,cerl->ceil", T.wE, T.phiE, T.xi)
    R = np.einsum("cer,cerl,cerm->celm", T.wE, T.xi, T.xi)
    tau = np.asarray(tau, dtype=float).reshape(-1, 1, 1)
    for a in range(2):
        Auu[:, a, :, a, :] += tau * Mb

    Aub = np.zeros((nc, 2, nk, 3, 2, nt))
    for a in range(2):
        Aub[:, a, :, :, a, :] -= tau[:, :, :, None] * Q1.transpose(0, 2, 1, 3)

    if consistency:
        P1 = np.einsum("cer,eri,cerj->cij", T.wE, T.phiE, T.dn)
        P2 = np.einsum("cer,eri,cerja,ceb->cabij", T.wE, T.phiE, T.GE, T.normals)
        T1 = np.zeros_like(Auu)
        for a in range(2):
            for b in range(2):
                T1[:, a, :, b, :] = mu * ((a == b) * P1 + P2[:, a, b])
        T1 = T1.reshape(nc, 2 * nk, 2 * nk)
        Auu = Auu.reshape(nc, 2 * nk, 2 * nk) - T1 - T1.transpose(0, 2, 1)

        Q2 = np.einsum("cer,ceri,cerl->ceil", T.wE, T.dn, T.xi)
        Q3 = np.einsum("cer,cerib,cea,cerl->caibel", T.wE, T.GE, T.normals, T.xi)
        for a in range(2):
            Aub[:, a, :, :, a, :] += mu * Q2.transpose(0, 2, 1, 3)
        Aub += mu * Q3.transpose(0, 1, 2, 4, 3, 5)
    Auu = Auu.reshape(nc, 2 * nk, 2 * nk)
    Aub = Aub.reshape(nc, 2 * nk, 6 * nt)

    Abb = np.zeros((nc, 3, 2, nt, 3, 2, nt))
    for e in range(3):
        for a in range(2):
            Abb[:, e, a, :, e, a, :] = tau[:, :, :] * R[:, e]
    return Auu, Aub, Abb.reshape(nc, 6 * nt, 6 * nt)


def assemble_ah_local(T: ElementTables, params: ModelParams):
    """Local blocks of ``a_h``: ``(A_uu, A_u_ubar, A_ubar_ubar)``."""
    tau = 2.0 * params.penalty * params.mu / T.h
    return _elastic_blocks(T, params.mu, tau, consistency=True)


def assemble_bh_local(T: ElementTables, role: str = "displacement"):
    """Local blocks of ``b_h``.

    Returns ``(B_vol, B_surf, B_surf_trace)`` so that for one cell
    ``b_h((v, vbar), (q, qbar)) = q.B_vol.v + qbar.B_surf.v + qbar.B_surf_trace.vbar``.
    For the ``"velocity"`` role the trace argument is zero and
    ``B_surf_trace`` is returned as ``None``.
    """
    nc, nk, nk1, nt = T.G.shape[0], T.nk, T.nk1, T.layout.nt
    Bvol = -np.einsum("cq,qm,cqia->cmai", T.wq, T.phi[:, :nk1], T.G).reshape(nc, nk1, 2 * nk)
    Bs = np.einsum("cer,cerl,eri,cea->celai", T.wE, T.chi, T.phiE, T.normals)
    Bs = Bs.reshape(nc, 3 * nt, 2 * nk)
    if role == "velocity":
        return Bvol, Bs, None
    if role != "displacement":
        raise ValueError(f"unknown role {role!r}")
    Bt_e = -np.einsum("cer,cerl,cerm,cea->celam", T.wE, T.chi, T.xi, T.normals)
    Bt = np.zeros((nc, 3, nt, 3, 2, nt))
    for e in range(3):
        Bt[:, e, :, e] = Bt_e[:, e]
    return Bvol, Bs, Bt.reshape(nc, 3 * nt, 6 * nt)


def norm_v_blocks(T: ElementTables):
    """Gram blocks of ``|||(v, vbar)|||_v^2``."""
    return _elastic_blocks(T, 0.5, 1.0 / T.h, consistency=False)


def norm_q_blocks(T: ElementTables):
    """Gram blocks ``(N_qq, N_qbar_qbar)`` of ``|||(q, qbar)|||_q^2``."""
    nc, nt = T.G.shape[0], T.layout.nt
    R = np.einsum("c,cer,cerl,cerm->celm", T.h, T.wE, T.chi, T.chi)
    Nbb = np.zeros((nc, 3, nt, 3, nt))
    for e in range(3):
        Nbb[:, e, :, e, :] = R[:, e]
    return T.mass_q, Nbb.reshape(nc, 3 * nt, 3 * nt)


def _local_ubar(layout: DofLayout, ubar):
    return ubar[layout.cell_facet_dofs[:, layout.local_facet_slices["ubar"]]]


def _local_ptrace(layout: DofLayout, qbar, which="pTbar"):
    return qbar[layout.cell_facet_dofs[:, layout.local_facet_slices[which]]]


def norm_v(T: ElementTables, u: np.ndarray, facet_vector: np.ndarray) -> float:
    """``|||(u, ubar)|||_v`` for element coefficients ``(nc, 2nk)`` and a facet vector."""
    Nuu, Nub, Nbb = norm_v_blocks(T)
    ub = _local_ubar(T.layout, facet_vector)
    val = (np.einsum("ci,cij,cj->", u, Nuu, u) + 2 * np.einsum("ci,cij,cj->", u, Nub, ub)
           + np.einsum("ci,cij,cj->", ub, Nbb, ub))
    return float(np.sqrt(max(val, 0.0)))


def norm_q(T: ElementTables, q: np.ndarray, facet_vector: np.ndarray,
           which: str = "pTbar") -> float:
    """``|||(q, qbar)|||_q`` with ``q`` of shape ``(nc, nk1)``."""
    Nqq, Nbb = norm_q_blocks(T)
    qb = _local_ptrace(T.layout, facet_vector, which)
    val = np.einsum("ci,cij,cj->", q, Nqq, q) + np.einsum("ci,cij,cj->", qb, Nbb, qb)
    return float(np.sqrt(max(val, 0.0)))


def ah_consistency_load(T: ElementTables, params: ModelParams, grad_u):
    """``a_h((u, u), (v, vbar))`` for a smooth ``u`` given by its gradient.

    ``grad_u(x)`` returns ``(..., 2, 2)`` with entry ``[a, b] = d u_a / d x_b``.
    Returns the interior load ``(nc, 2nk)`` and local trace load ``(nc, 6nt)``.
    """
    nc, nk, nt = T.G.shape[0], T.nk, T.layout.nt
    mu = params.mu
    Gq = np.asarray(grad_u(T.xq.reshape(-1, 2))).reshape(nc, -1, 2, 2)
    eps = 0.5 * (Gq + Gq.swapaxes(-1, -2))
    vol = 2 * mu * np.einsum("cq,cqal,cqil->cai", T.wq, eps, T.G)
    Ge = np.asarray(grad_u(T.xE.reshape(-1, 2))).reshape(T.xE.shape[:3] + (2, 2))
    epsn = np.einsum("cerab,ceb->cera", 0.5 * (Ge + Ge.swapaxes(-1, -2)), T.normals)
    vol -= 2 * mu * np.einsum("cer,cera,eri->cai", T.wE, epsn, T.phiE)
    trace = 2 * mu * np.einsum("cer,cera,cerl->ceal", T.wE, epsn, T.xi)
    return vol.reshape(nc, 2 * nk), trace.reshape(nc, 6 * nt)


def scatter_matrix(layout: DofLayout, Auu, Aub, Abb, constrain: bool = True):
    """Dense global matrix over ``[u (all cells), ubar]`` (small meshes only).

    With ``constrain`` the Gamma_D trace rows and columns are removed.
    """
    nc = layout.mesh.num_cells
    nu = Auu.shape[1]
    ub = layout.cell_facet_dofs[:, layout.local_facet_slices["ubar"]]
    n = nc * nu + layout.n_ubar
    A = np.zeros((n, n))
    for c in range(nc):
        iu = np.arange(c * nu, (c + 1) * nu)
        ib = nc * nu + ub[c]
        A[np.ix_(iu, iu)] += Auu[c]
        A[np.ix_(iu, ib)] += Aub[c]
        A[np.ix_(ib, iu)] += Aub[c].T
        A[np.ix_(ib, ib)] += Abb[c]
    keep = np.ones(n, dtype=bool)
    if constrain:
        fixed = layout.constrained
        fixed = fixed[fixed < layout.n_ubar]
        keep[nc * nu + fixed] = False
    return A[np.ix_(keep, keep)], keep


def coercivity_check(layout: DofLayout, params: ModelParams, n_samples: int = 0,
                     constrain: bool = True, seed: int = 0) -> float:
    """Estimate ``min a_h(v, v) / (mu |||v|||_v^2)`` over the discrete space.

    ``n_samples == 0`` uses the smallest generalised eigenvalue on the space
    with Gamma_D traces removed (or on the complement of the norm's kernel
    when ``constrain`` is False); otherwise the minimum over random samples.
    A nonpositive value signals a penalty below the coercivity threshold.
    """
    T = ElementTables(layout)
    A, _ = scatter_matrix(layout, *assemble_ah_local(T, params), constrain=constrain)
    N, _ = scatter_matrix(layout, *norm_v_blocks(T), constrain=constrain)
    N = params.mu * N
    if n_samples:
        rng = np.random.default_rng(seed)
        V = rng.standard_normal((A.shape[0], n_samples))
        den = np.einsum("ij,ik,kj->j", V, N, V)
        num = np.einsum("ij,ik,kj->j", V, A, V)
        ok = den > 1e-24 * max(1.0, np.abs(N).max())
        return float(np.min(num[ok] / den[ok]))
    if not constrain:
        w, Q = np.linalg.eigh(N)
        Q = Q[:, w > 1e-10 * w.max()]
        A, N = Q.T @ A @ Q, Q.T @ N @ Q
    return float(sla.eigh(A, N, eigvals_only=True, subset_by_index=[0, 0])[0])


def local_coercivity(T: ElementTables, params: ModelParams) -> np.ndarray:
    """Per-cell lower bound of ``a_h(v, v) / (mu |||v|||_v^2)`` with the trace free.

    Each cell's contribution is tested on its own, with ``vbar`` unrestricted;
    positivity on every cell is sufficient for global coercivity on any mesh
    assembled from them.  Returns one value per cell.
    """
    Auu, Aub, Abb = assemble_ah_local(T, params)
    Nuu, Nub, Nbb = norm_v_blocks(T)
    A = np.concatenate([np.concatenate([Auu, Aub], axis=2),
                        np.concatenate([Aub.transpose(0, 2, 1), Abb], axis=2)], axis=1)
    N = params.mu * np.concatenate([np.concatenate([Nuu, Nub], axis=2),
                                    np.concatenate([Nub.transpose(0, 2, 1), Nbb], axis=2)], axis=1)
    w, Q = np.linalg.eigh(N)
    # the local norm vanishes on the 3 rigid motions (with matching trace)
    w, Q = w[:, 3:], Q[:, :, 3:]
    s = 1.0 / np.sqrt(w)
    Ar = np.einsum("cia,cij,cjb->cab", Q, A, Q) * s[:, :, None] * s[:, None, :]
    return np.linalg.eigvalsh(Ar)[:, 0]
