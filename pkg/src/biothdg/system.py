"""Fully discrete Biot operator, static condensation and step solves.

One linear system per time level couples the element unknowns
``(u, p_T, z, p)`` and the facet unknowns ``(u_bar, p_T_bar, p_bar)``.
Element unknowns are eliminated cell by cell; the remaining facet
system is factorised once and reused for every step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import (ElementTables, ModelParams, assemble_ah_local, assemble_bh_local,
                    local_coercivity)
from .refbasis import LOCAL_EDGES, REFERENCE_VERTICES, edge_quadrature
from .spaces import DofLayout, evaluate_trace, project_trace

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


# time schemes ------------------------------------------------------------------

@dataclass(frozen=True)
class TimeScheme:
    """Weights of the discrete time derivative of the storage term.

    The step equation uses ``lead * S(x^{n+1}) - sum_j history[j] * S(x^{n-j})``
    where ``S(p, p_T) = c0 p + lam^-1 alpha (alpha p - p_T)``.
    """

    name: str
    lead: float
    history: tuple = ()

    @property
    def levels(self) -> int:
        return len(self.history)


def backward_euler(dt: float) -> TimeScheme:
    if not dt > 0:
        raise ValueError("time step must be positive")
    return TimeScheme("BE", 1.0 / dt, (1.0 / dt,))


def bdf2(dt: float) -> TimeScheme:
    if not dt > 0:
        raise ValueError("time step must be positive")
    return TimeScheme("BDF2", 1.5 / dt, (2.0 / dt, -0.5 / dt))


def static_scheme() -> TimeScheme:
    """Undifferentiated storage term with no history (the static problem)."""
    return TimeScheme("static", 1.0, ())


def make_scheme(name: str, dt: float | None = None) -> TimeScheme:
    key = name.lower()
    if key in ("be", "backward-euler", "euler"):
        return backward_euler(dt)
    if key == "bdf2":
        return bdf2(dt)
    if key == "static":
        return static_scheme()
    raise ValueError(f"unknown time scheme {name!r}")


# state and data ------------------------------------------------------------------

@dataclass
class SolutionState:
    """Coefficients of all unknowns at one time level."""

    time: float
    u: np.ndarray        # (nc, 2*nk)
    pT: np.ndarray       # (nc, nk1)
    z: np.ndarray        # (nc, 2*nk)
    p: np.ndarray        # (nc, nk1)
    facet: np.ndarray    # (n_facet,) = [u_bar, p_T_bar, p_bar]

    @classmethod
    def zeros(cls, layout: DofLayout, time: float = 0.0) -> "SolutionState":
        nc = layout.mesh.num_cells
        return cls(time, np.zeros((nc, 2 * layout.nk)), np.zeros((nc, layout.nk1)),
                   np.zeros((nc, 2 * layout.nk)), np.zeros((nc, layout.nk1)),
                   np.zeros(layout.n_facet))

    @classmethod
    def from_interior(cls, layout: DofLayout, interior, facet, time) -> "SolutionState":
        s = layout.local_slices
        return cls(time, interior[:, s["u"]].copy(), interior[:, s["pT"]].copy(),
                   interior[:, s["z"]].copy(), interior[:, s["p"]].copy(),
                   np.asarray(facet, dtype=float).copy())

    def interior(self) -> np.ndarray:
        return np.concatenate([self.u, self.pT, self.z, self.p], axis=1)

    def ubar(self, layout):
        return self.facet[layout.facet_slices["ubar"]]

    def pTbar(self, layout):
        return self.facet[layout.facet_slices["pTbar"]]

    def pbar(self, layout):
        return self.facet[layout.facet_slices["pbar"]]

    def copy(self) -> "SolutionState":
        return SolutionState(self.time, self.u.copy(), self.pT.copy(), self.z.copy(),
                             self.p.copy(), self.facet.copy())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.u, self.pT, self.z, self.p, self.facet))


@dataclass
class ProblemData:
    """Loads and boundary data; any entry left ``None`` is zero.

    ``body_force(x, t) -> (N, 2)``, ``source(x, t) -> (N,)``,
    ``traction(x, n, t) -> (N, 2)`` on Gamma_T, ``flux(x, n, t) -> (N,)``
    (prescribed ``z.n``) on Gamma_F, ``displacement(x, t) -> (N, 2)`` on
    Gamma_D and ``pressure(x, t) -> (N,)`` on Gamma_P.
    """

    body_force: Optional[Callable] = None
    source: Optional[Callable] = None
    traction: Optional[Callable] = None
    flux: Optional[Callable] = None
    displacement: Optional[Callable] = None
    pressure: Optional[Callable] = None


# static condensation ----------------------------------------------------------------

def _equilibrate(M):
    """Row/column scalings ``r, c`` so that ``diag(r) M diag(c)`` has unit max entries."""
    r = 1.0 / np.maximum(np.abs(M).max(axis=-1), np.finfo(float).tiny)
    Mr = M * r[..., :, None]
    c = 1.0 / np.maximum(np.abs(Mr).max(axis=-2), np.finfo(float).tiny)
    return r, c


class StaticCondensation:
    """Eliminate element unknowns and factorise the facet Schur complement.

    ``K`` holds one dense local matrix per cell ordered ``[interior, facet]``
    with ``ni`` interior unknowns; ``facet_dofs`` maps local facet slots to
    the global facet vector of length ``n_facet``.  ``constrained`` facet
    unknowns are prescribed and eliminated from the global system.
    """

    def __init__(self, K, ni, facet_dofs, n_facet, constrained, permc_spec="MMD_AT_PLUS_A"):
        self.K = K
        self.ni = ni
        self.facet_dofs = facet_dofs
        self.n_facet = n_facet
        mask = np.zeros(n_facet, dtype=bool)
        mask[constrained] = True
        self.constrained = np.flatnonzero(mask)
        self.free = np.flatnonzero(~mask)

        Kii = K[:, :ni, :ni]
        Kif = K[:, :ni, ni:]
        Kfi = K[:, ni:, :ni]
        Kff = K[:, ni:, ni:]
        r, c = _equilibrate(Kii)
        scaled = Kii * r[:, :, None] * c[:, None, :]
        try:
            inv = np.linalg.inv(scaled)
        except np.linalg.LinAlgError:
            inv = None
        if inv is None or not np.all(np.isfinite(inv)):
            for e in range(len(Kii)):
                if np.linalg.matrix_rank(scaled[e]) < ni:
                    raise SolverError(f"local interior block of element {e} is singular")
            raise SolverError("local interior blocks could not be inverted")
        rcond = 1.0 / (np.abs(scaled).sum(axis=2).max(axis=1) * np.abs(inv).sum(axis=2).max(axis=1))
        worst = int(np.argmin(rcond))
        if rcond[worst] < 1e-15:
            raise SolverError(f"local interior block of element {worst} is numerically "
                              f"singular (rcond={rcond[worst]:.2e})")
        self.Kii_inv = c[:, :, None] * inv * r[:, None, :]
        self.W = self.Kii_inv @ Kif                  # (nc, ni, nf)
        self.Kfi = Kfi
        S_local = Kff - Kfi @ self.W

        rows = np.broadcast_to(facet_dofs[:, :, None], S_local.shape).ravel()
        cols = np.broadcast_to(facet_dofs[:, None, :], S_local.shape).ravel()
        S = sp.coo_matrix((S_local.ravel(), (rows, cols)), shape=(n_facet, n_facet)).tocsr()
        S.sum_duplicates()
        self.S = S
        self.S_ff = S[self.free][:, self.free].tocsc()
        self.S_fc = S[self.free][:, self.constrained].tocsr()
        if len(self.free):
            self._factor(permc_spec)

    def _factor(self, permc_spec):
        A = self.S_ff
        row = np.asarray(abs(A).max(axis=1).todense()).ravel()
        row = 1.0 / np.where(row > 0, row, 1.0)
        A = sp.diags(row) @ A
        col = np.asarray(abs(A).max(axis=0).todense()).ravel()
        col = 1.0 / np.where(col > 0, col, 1.0)
        A = (A @ sp.diags(col)).tocsc()
        self.row_scale, self.col_scale = row, col
        self.S_scaled = A
        # a small pivot threshold keeps the symmetric fill-reducing ordering;
        # accuracy is recovered by iterative refinement in solve_facets
        try:
            self.lu = spla.splu(A, permc_spec=permc_spec, diag_pivot_thresh=1e-3,
                                options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverError(f"facet system factorisation failed: {exc}") from exc

    def solve_facets(self, rhs_f, max_refine: int = 3, tol: float = 1e-15):
        """Solve the free facet system with iterative refinement."""
        A, b = self.S_scaled, self.row_scale * rhs_f
        y = self.lu.solve(b)
        bnorm = np.linalg.norm(b)
        for _ in range(max_refine):
            r = b - A @ y
            scale = np.linalg.norm(abs(A) @ np.abs(y)) + bnorm
            if scale == 0 or np.linalg.norm(r) <= tol * scale:
                break
            y = y + self.lu.solve(r)
        return self.col_scale * y

    def solve(self, r_i, r_f, x_c=None):
        """Solve with interior load ``(nc, ni)``, facet load ``(n_facet,)`` and
        prescribed values of the constrained facet unknowns."""
        g = np.array(r_f, dtype=float, copy=True)
        np.add.at(g, self.facet_dofs, -np.einsum("cfi,ci->cf", self.Kfi,
                                                 np.einsum("cij,cj->ci", self.Kii_inv, r_i)))
        x = np.zeros(self.n_facet)
        if len(self.constrained):
            x[self.constrained] = 0.0 if x_c is None else x_c
        if len(self.free):
            rhs = g[self.free] - self.S_fc @ x[self.constrained]
            x[self.free] = self.solve_facets(rhs)
            if not np.all(np.isfinite(x)):
                raise SolverError("facet solve produced non-finite values")
        xl = x[self.facet_dofs]
        xi = np.einsum("cij,cj->ci", self.Kii_inv, r_i) - np.einsum("cij,cj->ci", self.W, xl)
        return xi, x

    def residual(self, xi, x, r_i, r_f):
        """Relative residual ``|K x - r| / (| |K| |x| | + |r|)`` over the non-prescribed rows."""
        xl = np.concatenate([xi, x[self.facet_dofs]], axis=1)
        Kx = np.einsum("cij,cj->ci", self.K, xl)
        aKx = np.einsum("cij,cj->ci", np.abs(self.K), np.abs(xl))
        res_i = Kx[:, :self.ni] - r_i
        res_f = np.zeros(self.n_facet)
        mag_f = np.zeros(self.n_facet)
        np.add.at(res_f, self.facet_dofs, Kx[:, self.ni:])
        np.add.at(mag_f, self.facet_dofs, aKx[:, self.ni:])
        res_f = (res_f - r_f)[self.free]
        mag_f = mag_f[self.free] + np.abs(r_f[self.free])
        num = np.sqrt(np.sum(res_i ** 2) + np.sum(res_f ** 2))
        den = np.sqrt(np.sum((aKx[:, :self.ni] + np.abs(r_i)) ** 2) + np.sum(mag_f ** 2))
        return float(num / den) if den > 0 else float(num)

    def monolithic(self):
        """Sparse uncondensed matrix over ``[interior of all cells, facet vector]``."""
        nc, n, _ = self.K.shape
        ni = self.ni
        glob = np.concatenate([np.arange(nc * ni).reshape(nc, ni),
                               nc * ni + self.facet_dofs], axis=1)
        rows = np.broadcast_to(glob[:, :, None], self.K.shape).ravel()
        cols = np.broadcast_to(glob[:, None, :], self.K.shape).ravel()
        size = nc * ni + self.n_facet
        return sp.coo_matrix((self.K.ravel(), (rows, cols)), shape=(size, size)).tocsr()

    def solve_monolithic(self, r_i, r_f, x_c=None):
        """Reference solve of the uncondensed system (oracle for the condensation)."""
        nc = self.K.shape[0]
        ni = self.ni
        A = self.monolithic()
        size = A.shape[0]
        fixed = nc * ni + self.constrained
        keep = np.ones(size, dtype=bool)
        keep[fixed] = False
        x = np.zeros(size)
        if len(fixed):
            x[fixed] = 0.0 if x_c is None else x_c
        b = np.concatenate([np.ravel(r_i), r_f]) - A @ x
        x[keep] = spla.spsolve(A[keep][:, keep].tocsc(), b[keep])
        return x[:nc * ni].reshape(nc, ni), x[nc * ni:]


# the Biot operator -----------------------------------------------------------------

class BiotSystem:
    """Fully discrete operator for one ``(mesh, params, scheme)`` triple."""

    def __init__(self, layout: DofLayout, params: ModelParams, scheme: TimeScheme,
                 tables: ElementTables | None = None):
        if params.k != layout.k:
            raise ValueError(f"params.k={params.k} does not match layout.k={layout.k}")
        self.layout = layout
        self.params = params
        self.scheme = scheme
        self.tables = ElementTables(layout) if tables is None else tables
        self.K = self.assemble_local()
        self.coercivity = float(local_coercivity(self.tables, params).min())
        if self.coercivity <= 0:
            logger.warning("penalty beta=%g is below the local coercivity threshold "
                           "(ratio %.3g); results may be unreliable", params.penalty,
                           self.coercivity)
        self.condensation = StaticCondensation(self.K, layout.n_interior, layout.cell_facet_dofs,
                                               layout.n_facet, layout.constrained)
        self.last_residual = None

    # local matrices
    def assemble_local(self):
        L, T, prm = self.layout, self.tables, self.params
        nc = L.mesh.num_cells
        ni = L.n_interior
        n = ni + L.n_local_facet
        s = L.local_slices
        fs = {key: slice(v.start + ni, v.stop + ni) for key, v in L.local_facet_slices.items()}
        Auu, Aub, Abb = assemble_ah_local(T, prm)
        Bvol, Bs, Bt = assemble_bh_local(T)
        M1 = T.mass_q
        Mv = T.vector_block(T.mass)
        inv_lam = 1.0 / prm.lam
        a, w = prm.alpha, self.scheme.lead
        tr = lambda X: X.transpose(0, 2, 1)  # noqa: E731

        K = np.zeros((nc, n, n))
        u, pT, z, p = s["u"], s["pT"], s["z"], s["p"]
        ub, ptb, pb = fs["ubar"], fs["pTbar"], fs["pbar"]
        K[:, u, u] = Auu
        K[:, u, ub] = Aub
        K[:, ub, u] = tr(Aub)
        K[:, ub, ub] = Abb
        K[:, u, pT] = tr(Bvol)
        K[:, u, ptb] = tr(Bs)
        K[:, ub, ptb] = tr(Bt)
        K[:, pT, u] = Bvol
        K[:, ptb, u] = Bs
        K[:, ptb, ub] = Bt
        K[:, pT, pT] = -inv_lam * M1
        K[:, pT, p] = inv_lam * a * M1
        K[:, z, z] = Mv / prm.kappa
        K[:, z, p] = tr(Bvol)
        K[:, z, pb] = tr(Bs)
        K[:, p, z] = -Bvol
        K[:, pb, z] = -Bs
        K[:, p, p] = w * (prm.c0 + inv_lam * a * a) * M1
        K[:, p, pT] = -w * inv_lam * a * M1
        self._ah = (Auu, Aub, Abb)
        return K

    # data assembly
    def storage(self, state: SolutionState) -> np.ndarray:
        """``(c0 p + lam^-1 alpha (alpha p - p_T), q)`` per cell, shape ``(nc, nk1)``."""
        prm = self.params
        M1 = self.tables.mass_q
        inv_lam = 1.0 / prm.lam
        comb = (prm.c0 + inv_lam * prm.alpha ** 2) * state.p - inv_lam * prm.alpha * state.pT
        return np.einsum("cij,cj->ci", M1, comb)

    def interior_load(self, data: ProblemData, t: float, history=()):
        L, T = self.layout, self.tables
        nc, nq = T.wq.shape
        r = np.zeros((nc, L.n_interior))
        s = L.local_slices
        if data.body_force is not None:
            f = np.asarray(data.body_force(T.xq.reshape(-1, 2), t)).reshape(nc, nq, 2)
            r[:, s["u"]] = np.einsum("cq,cqa,qi->cai", T.wq, f, T.phi).reshape(nc, -1)
        if data.source is not None:
            g = np.asarray(data.source(T.xq.reshape(-1, 2), t)).reshape(nc, nq)
            r[:, s["p"]] = np.einsum("cq,cq,qm->cm", T.wq, g, T.phi[:, :L.nk1])
        for weight, past in zip(self.scheme.history, history):
            r[:, s["p"]] += weight * self.storage(past)
        return r

    def facet_load(self, data: ProblemData, t: float):
        L, T, mesh = self.layout, self.tables, self.layout.mesh
        nt = L.nt
        local = np.zeros((mesh.num_cells, L.n_local_facet))
        for tag, fn in (("T", data.traction), ("F", data.flux)):
            facets = mesh.facets_tagged(tag)
            if fn is None or len(facets) == 0:
                continue
            c = mesh.facet_cells[facets, 0]
            e = mesh.facet_local[facets, 0]
            x = T.xE[c, e]
            nrm = np.broadcast_to(T.normals[c, e][:, None, :], x.shape)
            vals = np.asarray(fn(x.reshape(-1, 2), nrm.reshape(-1, 2), t))
            w = T.wE[c, e]
            if tag == "T":
                vals = vals.reshape(len(facets), -1, 2)
                load = np.einsum("fr,fra,frl->fal", w, vals, T.xi[c, e])
                for a in range(2):
                    cols = L.local_facet_slices["ubar"].start + (e * 2 + a) * nt
                    idx = cols[:, None] + np.arange(nt)
                    local[c[:, None], idx] += load[:, a]
            else:
                vals = vals.reshape(len(facets), -1)
                load = -np.einsum("fr,fr,frl->fl", w, vals, T.chi[c, e])
                idx = L.local_facet_slices["pbar"].start + e[:, None] * nt + np.arange(nt)
                local[c[:, None], idx] += load
        r = np.zeros(L.n_facet)
        np.add.at(r, L.cell_facet_dofs, local)
        return r

    def prescribed(self, data: ProblemData, t: float):
        """Values of the constrained facet unknowns at time ``t``."""
        L, mesh = self.layout, self.layout.mesh
        x = np.zeros(L.n_facet)
        if data.displacement is not None:
            idx, val = project_trace(L, lambda pts: data.displacement(pts, t),
                                     mesh.facets_tagged("D"), "ubar")
            x[idx] = val
        if data.pressure is not None:
            idx, val = project_trace(L, lambda pts: data.pressure(pts, t),
                                     mesh.facets_tagged("P"), "pbar")
            x[idx] = val
        return x[self.condensation.constrained]

    # solves
    def solve_step(self, history, data: ProblemData, t: float, check_residual: bool = True,
                   residual_tol: float = 1e-11) -> SolutionState:
        """Advance to time ``t``; ``history`` lists past states, newest first."""
        if len(history) < self.scheme.levels:
            raise ValueError(f"{self.scheme.name} needs {self.scheme.levels} past states")
        r_i = self.interior_load(data, t, history)
        r_f = self.facet_load(data, t)
        x_c = self.prescribed(data, t)
        xi, xf = self.condensation.solve(r_i, r_f, x_c)
        if check_residual:
            res = self.condensation.residual(xi, xf, r_i, r_f)
            self.last_residual = res
            if not np.isfinite(res) or res > residual_tol:
                raise SolverError(f"linear solve residual {res:.3e} exceeds {residual_tol:.1e}")
        return SolutionState.from_interior(self.layout, xi, xf, t)

    # energies
    def energy(self, state: SolutionState):
        """``(X, Y)`` with ``X^2 = a_h(u,u) + lam^-1|p_T - alpha p|^2 + c0|p|^2`` and
        ``Y^2 = kappa^-1 |z|^2``."""
        L, T, prm = self.layout, self.tables, self.params
        Auu, Aub, Abb = self._ah
        ub = state.facet[L.cell_facet_dofs[:, L.local_facet_slices["ubar"]]]
        u = state.u
        ah = (np.einsum("ci,cij,cj->", u, Auu, u) + 2 * np.einsum("ci,cij,cj->", u, Aub, ub)
              + np.einsum("ci,cij,cj->", ub, Abb, ub))
        d = state.pT - prm.alpha * state.p
        M1 = T.mass_q
        X2 = (ah + np.einsum("ci,cij,cj->", d, M1, d) / prm.lam
              + prm.c0 * np.einsum("ci,cij,cj->", state.p, M1, state.p))
        Mv = T.vector_block(T.mass)
        Y2 = np.einsum("ci,cij,cj->", state.z, Mv, state.z) / prm.kappa
        return float(np.sqrt(max(X2, 0.0))), float(np.sqrt(max(Y2, 0.0)))


def assemble_step_system(layout: DofLayout, params: ModelParams, scheme: TimeScheme) -> BiotSystem:
    return BiotSystem(layout, params, scheme)


def solve_step(system: BiotSystem, history, data: ProblemData, t: float) -> SolutionState:
    return system.solve_step(history, data, t)


# evaluation helpers ---------------------------------------------------------------------

def edge_values(layout: DofLayout, coeffs, cells, local_edges, t_global, ncomp: int = 2):
    """Evaluate element fields on cell edges at global facet parameters.

    ``coeffs`` is ``(nc, ncomp*nb)`` in the hierarchical element basis;
    returns ``(n, len(t), ncomp)``.
    """
    from .refbasis import TriangleBasis

    cells = np.asarray(cells)
    local_edges = np.asarray(local_edges)
    t = np.asarray(t_global, dtype=float)
    basis = TriangleBasis(layout.k)
    rev = layout.mesh.edge_reversed[cells, local_edges]
    out = np.zeros((len(cells), len(t), ncomp))
    for e, (a, b) in enumerate(LOCAL_EDGES):
        for flag in (False, True):
            sel = np.flatnonzero((local_edges == e) & (rev == flag))
            if len(sel) == 0:
                continue
            s = 1.0 - t if flag else t
            ref = REFERENCE_VERTICES[a] + s[:, None] * (REFERENCE_VERTICES[b] - REFERENCE_VERTICES[a])
            phi = basis.tabulate(ref)
            c = coeffs[cells[sel]]
            nb = c.shape[1] // ncomp
            out[sel] = np.einsum("smi,qi->sqm", c.reshape(len(sel), ncomp, nb), phi[:, :nb])
    return out


def divergence_conformity_report(layout: DofLayout, state: SolutionState) -> dict:
    """Normal-continuity defects of ``u_h`` and ``z_h``.

    ``u_jump`` and ``z_jump`` are maxima of ``|[[v.n]]|`` over interior
    facets; ``u_trace_T`` is ``max |u_h.n - ubar_h.n|`` over Gamma_T
    facets.  ``u_scale``/``z_scale`` are the maxima of ``|u_h|``/``|z_h|``
    at the same points.
    """
    mesh = layout.mesh
    t = edge_quadrature(2 * layout.k + 2).points
    inner = np.flatnonzero(~mesh.boundary)
    c0, c1 = mesh.facet_cells[inner, 0], mesh.facet_cells[inner, 1]
    e0, e1 = mesh.facet_local[inner, 0], mesh.facet_local[inner, 1]
    n = mesh.facet_normals[inner][:, None, :]
    report = {}
    for name, coeffs in (("u", state.u), ("z", state.z)):
        if len(inner):
            v0 = edge_values(layout, coeffs, c0, e0, t)
            v1 = edge_values(layout, coeffs, c1, e1, t)
            jump = np.sum((v0 - v1) * n, axis=-1)
            report[f"{name}_jump"] = float(np.abs(jump).max())
            report[f"{name}_scale"] = float(max(np.abs(v0).max(), np.abs(v1).max()))
        else:
            report[f"{name}_jump"] = 0.0
            report[f"{name}_scale"] = 0.0
    tf = mesh.facets_tagged("T")
    if len(tf):
        c, e = mesh.facet_cells[tf, 0], mesh.facet_local[tf, 0]
        v = edge_values(layout, state.u, c, e, t)
        vb = evaluate_trace(layout, state.facet, tf, t, "ubar")
        nn = mesh.facet_normals[tf][:, None, :]
        report["u_trace_T"] = float(np.abs(np.sum((v - vb) * nn, axis=-1)).max())
    else:
        report["u_trace_T"] = 0.0
    return report


# inf-sup estimates ----------------------------------------------------------------------

def _gram_sqrt_inv(G):
    import scipy.linalg as sla

    L = sla.cholesky(G, lower=True)
    return L


def _smallest_singular_value(B, Gq, Gv):
    """Smallest generalised singular value ``min_q max_v q.B.v / (|q|_Gq |v|_Gv)``."""
    import scipy.linalg as sla

    Lq = _gram_sqrt_inv(Gq)
    Lv = _gram_sqrt_inv(Gv)
    M = sla.solve_triangular(Lq, B, lower=True)
    M = sla.solve_triangular(Lv, M.T, lower=True).T
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def infsup_values(layout: DofLayout, constrain_pbar: bool = True) -> dict:
    """Dense inf-sup estimates of ``b_h`` on one (small) mesh.

    ``"a"``: inf over ``(q, qbar) in Q_h`` of sup over ``(v, vbar) in V_h``
    in the ``|||.|||_v`` and ``|||.|||_q`` norms.  ``"b"``: inf over
    ``Q_h^0`` of sup over element velocities in the L2 norm; with
    ``constrain_pbar=False`` the trace is left free on Gamma_P as well.
    """
    from .forms import norm_q_blocks, norm_v_blocks, scatter_matrix

    T = ElementTables(layout)
    mesh = layout.mesh
    nc, nk, nk1, nt = mesh.num_cells, layout.nk, layout.nk1, layout.nt
    Bvol, Bs, Bt = assemble_bh_local(T)
    Nqq, Nbb = norm_q_blocks(T)
    n_q = nc * nk1 + mesh.num_facets * nt
    qb = nc * nk1 + (mesh.cell_facets[:, :, None] * nt + np.arange(nt)).reshape(nc, -1)
    qi = np.arange(nc * nk1).reshape(nc, nk1)
    nu = 2 * nk
    ui = np.arange(nc * nu).reshape(nc, nu)
    ub = nc * nu + layout.cell_facet_dofs[:, layout.local_facet_slices["ubar"]]

    Gq = np.zeros((n_q, n_q))
    Ba = np.zeros((n_q, nc * nu + layout.n_ubar))
    Gv_el = np.zeros((nc * nu, nc * nu))
    Mv = T.vector_block(T.mass)
    for c in range(nc):
        Gq[np.ix_(qi[c], qi[c])] += Nqq[c]
        Gq[np.ix_(qb[c], qb[c])] += Nbb[c]
        Ba[np.ix_(qi[c], ui[c])] += Bvol[c]
        Ba[np.ix_(qb[c], ui[c])] += Bs[c]
        Ba[np.ix_(qb[c], ub[c])] += Bt[c]
        Gv_el[np.ix_(ui[c], ui[c])] += Mv[c]
    Gv, keep = scatter_matrix(layout, *norm_v_blocks(T), constrain=True)
    out = {"cells": nc, "a": _smallest_singular_value(Ba[:, keep], Gq, Gv)}

    qkeep = np.ones(n_q, dtype=bool)
    if constrain_pbar:
        p_facets = mesh.facets_tagged("P")
        qkeep[nc * nk1 + (p_facets[:, None] * nt + np.arange(nt)).ravel()] = False
    Bb = Ba[:, :nc * nu][qkeep]
    out["b"] = _smallest_singular_value(Bb, Gq[np.ix_(qkeep, qkeep)], Gv_el)
    return out


def infsup_estimate(meshes, k: int, variant, constrain_pbar: bool = True) -> list:
    """:func:`infsup_values` for each mesh of a (refinement) sequence."""
    from .spaces import build_layout

    return [infsup_values(build_layout(m, k, variant), constrain_pbar) for m in meshes]
