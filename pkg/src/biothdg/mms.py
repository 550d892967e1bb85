"""Manufactured solutions and the benchmark problem definitions.

Exact solutions are given by closed forms for ``u`` and ``p``; every
derived field and load is obtained symbolically and then verified against
high-precision numerical differentiation of ``u`` and ``p`` alone.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import mpmath
import numpy as np
import sympy as sp

from .forms import ModelParams
from .mesh import Mesh, build_rectangle, build_structured_square, tag_boundary
from .system import ProblemData

logger = logging.getLogger(__name__)

X1, X2, TIME = sp.symbols("x1 x2 t", real=True)
_EPS = 1e-9


class ManufacturedSolutionError(ValueError):
    pass


def _vectorize(expr):
    fn = sp.lambdify((X1, X2, TIME), expr, modules="numpy")

    def call(x, t=0.0):
        x = np.asarray(x, dtype=float)
        val = fn(x[..., 0], x[..., 1], t)
        return np.broadcast_to(np.asarray(val, dtype=float), x.shape[:-1]).copy()
    return call


def _stack(*fns):
    def call(x, t=0.0):
        return np.stack([f(x, t) for f in fns], axis=-1)
    return call


def _matrix(fns):
    def call(x, t=0.0):
        return np.stack([np.stack([f(x, t) for f in row], axis=-1) for row in fns], axis=-2)
    return call


class ExactSolution:
    """Closed-form ``u(x, t)``, ``p(x, t)`` with derived fields and loads.

    With ``static=True`` the storage equation has no time derivative
    (``c0 p + lam^-1 alpha (alpha p - p_T) + div z = g``).
    """

    def __init__(self, name: str, u_expr, p_expr, params: ModelParams, static: bool = False):
        self.name = name
        self.params = params
        self.static = static
        lam, mu = sp.Float(params.lam), sp.Float(params.mu)
        alpha, kappa, c0 = sp.Float(params.alpha), sp.Float(params.kappa), sp.Float(params.c0)
        u = [sp.sympify(e) for e in u_expr]
        p = sp.sympify(p_expr)
        X = (X1, X2)
        grad_u = [[sp.diff(u[a], X[b]) for b in range(2)] for a in range(2)]
        div_u = grad_u[0][0] + grad_u[1][1]
        pT = -lam * div_u + alpha * p
        z = [-kappa * sp.diff(p, X[b]) for b in range(2)]
        sigma = [[mu * (grad_u[a][b] + grad_u[b][a]) - (pT if a == b else 0) for b in range(2)]
                 for a in range(2)]
        f = [-sum(sp.diff(sigma[a][b], X[b]) for b in range(2)) for a in range(2)]
        storage = c0 * p + alpha / lam * (alpha * p - pT)
        div_z = sum(sp.diff(z[b], X[b]) for b in range(2))
        g = (storage if static else sp.diff(storage, TIME)) + div_z
        self.exprs = {"u": u, "p": p, "pT": pT, "z": z, "sigma": sigma, "f": f, "g": g,
                      "grad_u": grad_u}

        self.u = _stack(*[_vectorize(e) for e in u])
        self.grad_u = _matrix([[_vectorize(e) for e in row] for row in grad_u])
        self.p = _vectorize(p)
        self.pT = _vectorize(pT)
        self.z = _stack(*[_vectorize(e) for e in z])
        self.sigma = _matrix([[_vectorize(e) for e in row] for row in sigma])
        self.f = _stack(*[_vectorize(e) for e in f])
        self.g = _vectorize(g)
        self._mp_u = [sp.lambdify((X1, X2, TIME), e, modules="mpmath") for e in u]
        self._mp_p = sp.lambdify((X1, X2, TIME), p, modules="mpmath")
        self._checked = None

    # boundary data
    def traction(self, x, n, t=0.0):
        return np.einsum("...ab,...b->...a", self.sigma(x, t), n)

    def flux(self, x, n, t=0.0):
        return np.einsum("...a,...a->...", self.z(x, t), n)

    def problem_data(self) -> ProblemData:
        return ProblemData(body_force=self.f, source=self.g, traction=self.traction,
                           flux=self.flux, displacement=self.u, pressure=self.p)

    # verification
    def residuals(self, points, times):
        """Relative residuals of the four field equations at sample points.

        Derivatives of ``u`` and ``p`` are taken numerically in extended
        precision; each residual is divided by the sum of the magnitudes
        of the terms of its equation.  Returns ``(n_points, 4)``.
        """
        prm = self.params
        lam, mu, a, kap, c0 = prm.lam, prm.mu, prm.alpha, prm.kappa, prm.c0
        out = np.zeros((len(points), 4))
        with mpmath.workdps(40):
            for i, ((x, y), t) in enumerate(zip(points, times)):
                pt = (mpmath.mpf(x), mpmath.mpf(y), mpmath.mpf(t))
                d = lambda fn, order: mpmath.diff(fn, pt, order)  # noqa: E731
                U = self._mp_u
                du = [[d(U[c], (int(b == 0), int(b == 1), 0)) for b in range(2)] for c in range(2)]
                ddu = [[[d(U[c], (int(b == 0) + int(e == 0), int(b == 1) + int(e == 1), 0))
                         for e in range(2)] for b in range(2)] for c in range(2)]
                dp = [d(self._mp_p, (1, 0, 0)), d(self._mp_p, (0, 1, 0))]
                lap_p = d(self._mp_p, (2, 0, 0)) + d(self._mp_p, (0, 2, 0))
                pval = self._mp_p(*pt)
                div_u = du[0][0] + du[1][1]
                xy = np.array([[x, y]])
                # momentum: div sigma + f = 0
                f = self.f(xy, t)[0]
                res_a, mag_a = 0.0, 0.0
                for c in range(2):
                    lap = ddu[c][0][0] + ddu[c][1][1]
                    grad_div = ddu[0][0][c] + ddu[1][1][c]
                    terms = [mu * lap, mu * grad_div, lam * grad_div, -a * dp[c], f[c]]
                    res_a = max(res_a, abs(float(sum(terms))))
                    mag_a = max(mag_a, float(sum(abs(v) for v in terms)))
                # total pressure: p_T + lam div u - alpha p = 0
                terms_b = [self.pT(xy, t)[0], lam * div_u, -a * pval]
                # Darcy: z + kappa grad p = 0
                z = self.z(xy, t)[0]
                res_c = max(abs(float(z[c] + kap * dp[c])) for c in range(2))
                mag_c = max(abs(float(z[c])) + abs(float(kap * dp[c])) for c in range(2))
                # storage: (d/dt)(c0 p + alpha div u) - kappa lap p - g = 0
                if self.static:
                    st = [c0 * pval, a * div_u]
                else:
                    dtp = d(self._mp_p, (0, 0, 1))
                    dt_div = d(U[0], (1, 0, 1)) + d(U[1], (0, 1, 1))
                    st = [c0 * dtp, a * dt_div]
                terms_d = st + [-kap * lap_p, -self.g(xy, t)[0]]
                for j, (res, mag) in enumerate([
                        (res_a, mag_a),
                        (abs(float(sum(terms_b))), float(sum(abs(v) for v in terms_b))),
                        (res_c, mag_c),
                        (abs(float(sum(terms_d))), float(sum(abs(v) for v in terms_d)))]):
                    out[i, j] = res / mag if mag > 0 else res
        return out

    def self_check(self, n_points: int = 100, seed: int = 0, t_max: float = 1.0,
                   tol: float = 1e-8) -> float:
        """Maximum relative PDE residual over random points; raises above ``tol``."""
        if self._checked is not None and self._checked[0] >= n_points:
            return self._checked[1]
        rng = np.random.default_rng(seed)
        pts = rng.random((n_points, 2))
        times = np.zeros(n_points) if self.static else rng.random(n_points) * t_max
        worst = float(self.residuals(pts, times).max())
        if not worst <= tol:
            raise ManufacturedSolutionError(
                f"exact solution {self.name!r} fails the PDE self-check ({worst:.2e} > {tol:.0e})")
        self._checked = (n_points, worst)
        return worst


# benchmark cases ----------------------------------------------------------------

def _near(v, target):
    return abs(v - target) < _EPS


def unit_square_mms_tags(mesh: Mesh) -> Mesh:
    """Gamma_D = {x2=0, x2=1, x1=0}, Gamma_T = {x1=1}; Gamma_P = {x2=0, x1=1}, Gamma_F = rest."""
    return tag_boundary(
        mesh,
        {"D": lambda x, y: _near(y, 0) or _near(y, 1) or _near(x, 0), "T": lambda x, y: _near(x, 1)},
        {"P": lambda x, y: _near(y, 0) or _near(x, 1), "F": lambda x, y: _near(y, 1) or _near(x, 0)})


@dataclass
class BenchmarkCase:
    """A named problem: mesh family, coefficients, data and run defaults."""

    name: str
    params: ModelParams
    mesh_factory: Callable[..., Mesh]
    data: ProblemData
    exact: Optional[ExactSolution] = None
    scheme: str = "bdf2"
    dt: Optional[float] = None
    T_final: Optional[float] = None
    variant: str = "hdg"
    default_n: int = 8
    line_samples: tuple = ()
    notes: dict = field(default_factory=dict)

    def mesh(self, n: int | None = None, nx: int | None = None, ny: int | None = None) -> Mesh:
        return self.mesh_factory(n or self.default_n, nx, ny)

    def with_degree(self, k: int) -> "BenchmarkCase":
        return replace(self, params=replace(self.params, k=k))


def _square_factory(tagger, diagonal: str = "right"):
    def make(n, nx=None, ny=None):
        if nx is not None or ny is not None:
            mesh = build_rectangle((0.0, 1.0), (0.0, 1.0), nx or n, ny or n)
        else:
            mesh = build_structured_square(n, diagonal)
        return tagger(mesh)
    return make


def static_case(E: float = 1e4, nu: float = 0.4, k: int = 1,
                diagonal: str = "right") -> BenchmarkCase:
    """Steady manufactured problem on the unit square (undeformed boundary).

    ``diagonal`` selects the structured mesh family (``"right"`` or ``"crisscross"``).
    """
    a, b = sp.Float(1e-4), sp.pi
    params = ModelParams(E=E, nu=nu, alpha=0.1, kappa=1e-7, c0=1e-5, k=k)
    lam = sp.Float(params.lam)
    u = [a * (sp.sin(sp.pi * X1) * sp.cos(sp.pi * X2) + X1 ** 2 / (2 * lam)),
         a * (-sp.cos(sp.pi * X1) * sp.sin(sp.pi * X2) + X2 ** 2 / (2 * lam))]
    p = b * sp.sin(sp.pi * X1) * sp.sin(sp.pi * X2)
    exact = ExactSolution(f"static(E={E:g}, nu={nu:g})", u, p, params, static=True)
    return BenchmarkCase("static_mms", params, _square_factory(unit_square_mms_tags, diagonal),
                         exact.problem_data(), exact, scheme="static", default_n=8)


def quasistatic_case(k: int = 1, diagonal: str = "right") -> BenchmarkCase:
    """Time-dependent manufactured problem on the unit square, BDF2 to ``T = 0.1``."""
    params = ModelParams(E=1e4, nu=0.2, alpha=0.1, kappa=1e-2, c0=0.1, k=k)
    s = sp.sin(sp.pi * TIME)
    u = [s * sp.sin(sp.pi * X1) * sp.sin(sp.pi * X2), s * sp.sin(sp.pi * X1) * sp.cos(sp.pi * X2)]
    p = sp.sin(sp.pi * (X1 - X2 - TIME))
    exact = ExactSolution("quasistatic", u, p, params)
    return BenchmarkCase("quasistatic_mms", params, _square_factory(unit_square_mms_tags, diagonal),
                         exact.problem_data(), exact, scheme="bdf2", dt=1e-3, T_final=0.1,
                         default_n=8)


FOOTING_LOAD = 1e4
FOOTING_HALF_WIDTH = 50.0 / 3.0


def _footing_mesh(n, nx=None, ny=None):
    mesh = build_rectangle((-50.0, 50.0), (0.0, 75.0), nx or n, ny or n)
    top = lambda x, y: _near(y, 75.0)  # noqa: E731
    return tag_boundary(mesh, {"T": top, "D": lambda x, y: not top(x, y)},
                        {"P": lambda x, y: True})


def _footing_traction(x, n, t=0.0):
    x = np.asarray(x)
    out = np.zeros(x.shape)
    out[..., 1] = np.where(np.abs(x[..., 0]) <= FOOTING_HALF_WIDTH + _EPS, -FOOTING_LOAD, 0.0)
    return out


def footing_loaded_length(mesh: Mesh) -> float:
    """Measure of the top-boundary part ``|x1| <= 50/3`` carrying the strip load.

    Facets are clipped against the load interval, so the value does not
    depend on whether the interval ends coincide with mesh vertices.
    """
    total = 0.0
    for f in mesh.facets_tagged("T"):
        a, b = mesh.vertices[mesh.facets[f]]
        if not (_near(a[1], 75.0) and _near(b[1], 75.0)):
            continue
        lo, hi = sorted((a[0], b[0]))
        total += max(0.0, min(hi, FOOTING_HALF_WIDTH) - max(lo, -FOOTING_HALF_WIDTH))
    return total


def footing_case(k: int = 2) -> BenchmarkCase:
    """Strip load on a poroelastic block; zero initial state, p = 0 on the boundary."""
    params = ModelParams(E=3e4, nu=0.4995, alpha=0.1, kappa=1e-4, c0=1e-3, k=k)
    return BenchmarkCase("footing", params, _footing_mesh, ProblemData(traction=_footing_traction),
                         scheme="bdf2", dt=1.0, T_final=50.0, variant="hdg", default_n=64)


def _cantilever_mesh(n, nx=None, ny=None):
    mesh = (build_rectangle((0.0, 1.0), (0.0, 1.0), nx or n, ny or n)
            if nx is not None or ny is not None else build_structured_square(n))
    return tag_boundary(mesh, {"D": lambda x, y: _near(x, 0), "T": lambda x, y: not _near(x, 0)},
                        {"F": lambda x, y: True})


def _cantilever_traction(x, n, t=0.0):
    x = np.asarray(x)
    out = np.zeros(x.shape)
    out[..., 1] = np.where(np.abs(x[..., 1] - 1.0) < _EPS, -1.0, 0.0)
    return out


CANTILEVER_LINES = (0.26, 0.33, 0.40, 0.46)


def cantilever_case(k: int = 2) -> BenchmarkCase:
    """Clamped bracket with a unit downward top traction, impermeable boundary, c0 = 0."""
    params = ModelParams(E=1e5, nu=0.4, alpha=0.93, kappa=1e-7, c0=0.0, k=k)
    return BenchmarkCase("cantilever", params, _cantilever_mesh,
                         ProblemData(traction=_cantilever_traction),
                         scheme="bdf2", dt=1e-3, T_final=0.005, variant="edg-hdg", default_n=8,
                         line_samples=CANTILEVER_LINES)


CASES = {"static": static_case, "static_mms": static_case, "quasistatic": quasistatic_case,
         "quasistatic_mms": quasistatic_case, "footing": footing_case,
         "cantilever": cantilever_case}


def get_case(name: str, **kwargs) -> BenchmarkCase:
    try:
        factory = CASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown case {name!r}; choose from {sorted(set(CASES))}") from None
    return factory(**kwargs)
