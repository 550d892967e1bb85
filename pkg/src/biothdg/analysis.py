"""Errors against exact solutions, convergence tables and energy tracking."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .forms import ElementTables, ModelParams
from .mms import BenchmarkCase, ExactSolution
from .spaces import DofLayout, Variant, build_layout
from .system import BiotSystem, SolutionState, static_scheme
from .timeloop import Stepper, TimeGrid, initialize, run

logger = logging.getLogger(__name__)

FIELDS = ("u", "pT", "z", "p")
#: Rates are not formed when both errors fall below this fraction of the exact field norm.
RATE_GUARD = 1e-10


@dataclass
class ErrorRecord:
    cells: int
    dofs: int
    facet_dofs: int
    h: float
    time: float
    e_u: float
    e_pT: float
    e_z: float
    e_p: float
    tn_u: float
    tn_pT: float
    composite: float
    norms: dict = field(default_factory=dict)

    def error(self, name: str) -> float:
        return getattr(self, f"e_{name}")


class ErrorEvaluator:
    """Quadrature at exactness ``2k+4`` on cells and facets for one layout."""

    def __init__(self, layout: DofLayout):
        self.layout = layout
        d = 2 * layout.k + 4
        self.tables = ElementTables(layout, volume_degree=d, edge_degree=d)

    def _cell_values(self, coeffs, ncomp):
        T = self.tables
        nc = coeffs.shape[0]
        nb = coeffs.shape[1] // ncomp
        return np.einsum("cmi,qi->cqm", coeffs.reshape(nc, ncomp, nb), T.phi[:, :nb])

    def l2(self, coeffs, exact_fn, t, ncomp):
        """``(||f - f_h||, ||f||)`` over the domain."""
        T = self.tables
        ex = np.asarray(exact_fn(T.xq.reshape(-1, 2), t)).reshape(T.wq.shape + (ncomp,))
        diff = ex - self._cell_values(coeffs, ncomp)
        return (math.sqrt(float(np.einsum("cq,cqm->", T.wq, diff ** 2))),
                math.sqrt(float(np.einsum("cq,cqm->", T.wq, ex ** 2))))

    def darcy_l2(self, state: SolutionState, exact: ExactSolution, t):
        return self.l2(state.z, exact.z, t, 2)[0]

    def triple_u(self, state: SolutionState, exact: ExactSolution, t) -> float:
        """``|||(u, u) - (u_h, ubar_h)|||_v``."""
        L, T = self.layout, self.tables
        nc, nk, nt = L.mesh.num_cells, L.nk, L.nt
        gu = np.asarray(exact.grad_u(T.xq.reshape(-1, 2), t)).reshape(T.wq.shape + (2, 2))
        guh = np.einsum("cai,cqib->cqab", state.u.reshape(nc, 2, nk), T.G)
        de = gu - guh
        eps = 0.5 * (de + de.swapaxes(-1, -2))
        vol = float(np.einsum("cq,cqab->", T.wq, eps ** 2))
        uh = np.einsum("cai,eri->cera", state.u.reshape(nc, 2, nk), T.phiE)
        ub_loc = state.facet[L.cell_facet_dofs[:, L.local_facet_slices["ubar"]]]
        ubh = np.einsum("ceal,cerl->cera", ub_loc.reshape(nc, 3, 2, nt), T.xi)
        jump = float(np.einsum("c,cer,cera->", 1.0 / T.h, T.wE, (ubh - uh) ** 2))
        return math.sqrt(vol + jump)

    def triple_pT(self, state: SolutionState, exact: ExactSolution, t) -> float:
        """``|||(p_T, p_T) - (p_Th, pbar_Th)|||_q``."""
        L, T = self.layout, self.tables
        nc, nt = L.mesh.num_cells, L.nt
        e = self.l2(state.pT, exact.pT, t, 1)[0]
        ex = np.asarray(exact.pT(T.xE.reshape(-1, 2), t)).reshape(T.wE.shape)
        pb = state.facet[L.cell_facet_dofs[:, L.local_facet_slices["pTbar"]]].reshape(nc, 3, nt)
        trace = np.einsum("cel,cerl->cer", pb, T.chi)
        return math.sqrt(e ** 2 + float(np.einsum("c,cer,cer->", T.h, T.wE, (ex - trace) ** 2)))

    def record(self, state: SolutionState, exact: ExactSolution, params: ModelParams,
               t: float, darcy_accumulated: float | None = None) -> ErrorRecord:
        L = self.layout
        e_u, n_u = self.l2(state.u, exact.u, t, 2)
        e_pT, n_pT = self.l2(state.pT, exact.pT, t, 1)
        e_z, n_z = self.l2(state.z, exact.z, t, 2)
        e_p, n_p = self.l2(state.p, exact.p, t, 1)
        tn_u = self.triple_u(state, exact, t)
        tn_pT = self.triple_pT(state, exact, t)
        mix = self.l2(params.alpha * state.p - state.pT,
                      lambda x, s: params.alpha * exact.p(x, s) - exact.pT(x, s), t, 1)[0]
        z_part = darcy_accumulated if darcy_accumulated is not None else e_z ** 2
        composite = (math.sqrt(params.c0) * e_p + mix / math.sqrt(params.lam)
                     + math.sqrt(params.mu) * tn_u + math.sqrt(z_part / params.kappa))
        return ErrorRecord(cells=L.mesh.num_cells, dofs=L.total_dofs, facet_dofs=L.n_global,
                           h=L.mesh.h_max, time=t, e_u=e_u, e_pT=e_pT, e_z=e_z, e_p=e_p,
                           tn_u=tn_u, tn_pT=tn_pT, composite=composite,
                           norms={"u": n_u, "pT": n_pT, "z": n_z, "p": n_p})


def compute_errors(layout: DofLayout, state: SolutionState, exact: ExactSolution,
                   params: ModelParams, t: float, darcy_accumulated: float | None = None):
    """Errors of ``state`` against ``exact`` at time ``t``.

    ``darcy_accumulated`` is ``sum_i dt ||z^i - z_h^i||^2`` when a step
    history was observed; otherwise the composite uses ``||z - z_h||^2``.
    """
    return ErrorEvaluator(layout).record(state, exact, params, t, darcy_accumulated)


# rate tables ---------------------------------------------------------------------

def rate(e_coarse: float, e_fine: float, norm: float = 1.0, guard: float = RATE_GUARD):
    """``log2(e_coarse / e_fine)``; ``None`` when both errors are at rounding level."""
    if e_coarse < guard * norm and e_fine < guard * norm:
        return None
    if e_fine <= 0 or e_coarse <= 0:
        return None
    return math.log2(e_coarse / e_fine)


@dataclass
class RateTable:
    title: str
    records: list

    def __post_init__(self):
        cells = [r.cells for r in self.records]
        if cells != sorted(cells):
            raise ValueError("records must be ordered by increasing cell count")

    def rates(self, name: str) -> list:
        """Rates per row; the first row has ``None``."""
        out = [None]
        for a, b in zip(self.records[:-1], self.records[1:]):
            out.append(rate(a.error(name), b.error(name), b.norms.get(name, 1.0)))
        return out

    def final_rates(self) -> dict:
        return {name: self.rates(name)[-1] for name in FIELDS}

    def rows(self):
        rates = {n: self.rates(n) for n in FIELDS}
        for i, r in enumerate(self.records):
            yield r, {n: rates[n][i] for n in FIELDS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cells", "dofs", "h", "e_u", "r_u", "e_pT", "r_pT", "e_z", "r_z", "e_p", "r_p"])
        for i, (r, rt) in enumerate(self.rows()):
            row = [r.cells, r.dofs, f"{r.h:.6e}"]
            for n in FIELDS:
                row.append(f"{r.error(n):.6e}")
                row.append("" if i == 0 else ("exact" if rt[n] is None else f"{rt[n]:.3f}"))
            w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def to_text(self) -> str:
        head = ["Cells", "Dofs", "|u_h-u|", "r", "|pT_h-pT|", "r", "|z_h-z|", "r", "|p_h-p|", "r"]
        lines = [self.title, "  ".join(f"{h:>10}" for h in head)]
        for i, (r, rt) in enumerate(self.rows()):
            cols = [f"{r.cells:>10d}", f"{r.dofs:>10d}"]
            for n in FIELDS:
                cols.append(f"{r.error(n):>10.1e}")
                cols.append(f"{'-' if i == 0 else ('exact' if rt[n] is None else f'{rt[n]:.1f}'):>10}")
            lines.append("  ".join(cols))
        return "\n".join(lines)


# studies -----------------------------------------------------------------------------

def solve_case(case: BenchmarkCase, variant, n: int, k: int | None = None,
               scheme: str | None = None, dt: float | None = None, T_final: float | None = None):
    """Run a manufactured case on one mesh; returns ``(layout, state, record)``."""
    if k is not None:
        case = case.with_degree(k)
    exact = case.exact
    if exact is None:
        raise ValueError(f"case {case.name!r} has no exact solution")
    params = case.params
    scheme = (scheme or case.scheme).lower()
    exact.self_check(t_max=T_final or case.T_final or 1.0)
    mesh = case.mesh(n)
    layout = build_layout(mesh, params.k, variant)
    evaluator = ErrorEvaluator(layout)
    if scheme == "static":
        system = BiotSystem(layout, params, static_scheme())
        state = system.solve_step([], case.data, 0.0)
        return layout, state, evaluator.record(state, exact, params, 0.0)
    grid = TimeGrid.from_dt(T_final or case.T_final, dt or case.dt)
    initial = initialize(layout, params, exact, 0.0)
    acc = [0.0]

    def darcy(step, state, system):
        acc[0] += grid.dt * evaluator.darcy_l2(state, exact, state.time) ** 2

    result = run(layout, params, grid, scheme, case.data, initial, observers=[darcy])
    rec = evaluator.record(result.final, exact, params, grid.T_final, acc[0])
    return layout, result.final, rec


def convergence_study(case: BenchmarkCase, variant, k: int, levels: Sequence[int] | int,
                      scheme: str | None = None, dt: float | None = None,
                      T_final: float | None = None, start: int = 2) -> RateTable:
    """Errors on a refinement sequence of structured meshes.

    ``levels`` is either an explicit list of subdivision counts ``n`` or a
    number of levels starting from ``n = start`` and doubling.
    """
    if isinstance(levels, int):
        if levels < 2:
            raise ValueError("a convergence study needs at least 2 levels")
        levels = [start * 2 ** i for i in range(levels)]
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least 2 levels")
    records = []
    for n in levels:
        t0 = time.perf_counter()
        _, _, rec = solve_case(case, variant, n, k, scheme, dt, T_final)
        logger.info("%s n=%d cells=%d done in %.1fs", case.name, n, rec.cells,
                    time.perf_counter() - t0)
        records.append(rec)
    title = f"{case.name} {Variant.parse(variant).value} k={k}"
    return RateTable(title, records)


def robustness_compare(case_factory: Callable[..., BenchmarkCase], grid: Iterable[tuple],
                       variant, k: int, n: int) -> dict:
    """Errors over an ``(E, nu)`` grid on one mesh, with max/min ratios per field."""
    records = {}
    for E, nu in grid:
        case = case_factory(E=E, nu=nu)
        records[(E, nu)] = solve_case(case, variant, n, k)[2]
    ratios = {}
    for name in FIELDS:
        errs = [r.error(name) for r in records.values()]
        ratios[name] = max(errs) / min(errs) if min(errs) > 0 else math.inf
    return {"records": records, "ratios": ratios}


# energies ----------------------------------------------------------------------------

def energy_trace(system: BiotSystem, states: Iterable[SolutionState]) -> list:
    """``[(X_n, Y_n)]`` for a sequence of states."""
    return [system.energy(s) for s in states]


class EnergyObserver:
    """Collects ``(t, X, Y)`` after every step."""

    def __init__(self):
        self.values = []

    def __call__(self, step, state, system):
        self.values.append((state.time,) + system.energy(state))

    def nonincreasing(self, rel_tol: float = 1e-12) -> bool:
        X = [v[1] for v in self.values]
        return all(b <= a * (1 + rel_tol) + 1e-300 for a, b in zip(X[:-1], X[1:]))
