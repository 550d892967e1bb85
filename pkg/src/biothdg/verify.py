"""Property checks on small meshes: each returns a :class:`CheckResult`.

These are the structural guarantees of the discretisation (condensation
exactness, uniqueness, normal continuity, coercivity, inf-sup stability,
energy dissipation) evaluated numerically.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .forms import ModelParams, coercivity_check
from .mesh import build_structured_square
from .mms import quasistatic_case, unit_square_mms_tags
from .spaces import build_layout
from .system import (BiotSystem, ProblemData, SolutionState, _equilibrate, backward_euler,
                     divergence_conformity_report, infsup_values)
from .timeloop import Stepper, TimeGrid, initialize, run

#: Relative agreement required between condensed and monolithic solves.
CONDENSATION_TOL = 1e-10
#: Zero-data solution bound relative to the matrix scale.
ZERO_DATA_TOL = 1e-12
#: Normal-jump bound relative to the field magnitude.
CONFORMITY_TOL = 1e-10
#: Relative per-step slack in the energy monotonicity check.
ENERGY_TOL = 1e-12
#: Required ratio of the inf-sup values on the finest and coarsest mesh.
INFSUP_RATIO = 0.5
#: Values at or below this are treated as zero (rounding level of the dense solvers).
POSITIVE_FLOOR = 1e-8
#: Smallest singular value of the equilibrated system matrix, relative to the largest.
NONSINGULAR_FLOOR = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def square(n: int):
    """Tagged unit square with ``2 n^2`` right-diagonal cells."""
    return unit_square_mms_tags(build_structured_square(n))


def _default_params(k: int, beta=None) -> ModelParams:
    return ModelParams(E=1e4, nu=0.2, alpha=0.1, kappa=1e-2, c0=0.1, k=k, beta=beta)


def condensation_oracle(n: int = 1, k: int = 1, variant="hdg", seed: int = 0,
                        dt: float = 0.1) -> CheckResult:
    """Condensed solve vs. the uncondensed sparse solve for random loads and boundary values."""
    layout = build_layout(square(n), k, variant)
    system = BiotSystem(layout, _default_params(k), backward_euler(dt))
    cond = system.condensation
    rng = np.random.default_rng(seed)
    r_i = rng.standard_normal((layout.mesh.num_cells, cond.ni))
    r_f = rng.standard_normal(cond.n_facet)
    x_c = rng.standard_normal(len(cond.constrained))
    xi, x = cond.solve(r_i, r_f, x_c)
    xi_m, x_m = cond.solve_monolithic(r_i, r_f, x_c)
    scale = max(np.abs(xi_m).max(), np.abs(x_m).max())
    diff = max(np.abs(xi - xi_m).max(), np.abs(x - x_m).max()) / scale
    return CheckResult(f"condensation[{layout.mesh.num_cells} cells,k={k},{variant}]",
                       bool(diff <= CONDENSATION_TOL), float(diff), CONDENSATION_TOL)


def zero_data(n: int = 2, k: int = 1, variant="hdg", steps: int = 3,
              dt: float = 0.1) -> CheckResult:
    """Zero loads, boundary values and history give the zero state.

    Also checks that the row/column-equilibrated monolithic matrix is
    nonsingular (smallest singular value relative to the largest), which
    is the discrete uniqueness statement itself.
    """
    layout = build_layout(square(n), k, variant)
    params = _default_params(k)
    stepper = Stepper(layout, params, "be", dt)
    res = run(layout, params, TimeGrid(steps * dt, steps), "be", ProblemData(),
              SolutionState.zeros(layout), stepper=stepper)
    system = stepper.system_for(1)
    cond = system.condensation
    A = cond.monolithic().toarray()
    keep = np.ones(A.shape[0], dtype=bool)
    keep[A.shape[0] - cond.n_facet + cond.constrained] = False
    A = A[np.ix_(keep, keep)]
    r, c = _equilibrate(A)
    sv = np.linalg.svd(A * r[:, None] * c[None, :], compute_uv=False)
    scale = float(np.abs(A).max())
    vmax = max(float(np.abs(np.concatenate([res.final.interior().ravel(),
                                            res.final.facet])).max()), 0.0)
    value = vmax / scale
    passed = value <= ZERO_DATA_TOL and sv[-1] > NONSINGULAR_FLOOR * sv[0]
    return CheckResult(f"zero_data[{layout.mesh.num_cells} cells,k={k},{variant}]",
                       bool(passed), value, ZERO_DATA_TOL,
                       {"sigma_min_over_max": float(sv[-1] / sv[0])})


def conformity(n: int = 4, k: int = 1, variant="hdg", dt: float = 1e-3,
               steps: int = 2) -> CheckResult:
    """Normal jumps of ``u_h`` and ``z_h`` across interior facets on a manufactured run."""
    case = quasistatic_case(k)
    layout = build_layout(case.mesh(n), k, variant)
    reports = []
    run(layout, case.params, TimeGrid(steps * dt, steps), "bdf2", case.data,
        initialize(layout, case.params, case.exact),
        observers=[lambda s, st, sy: reports.append(divergence_conformity_report(layout, st))])
    worst = max(max(r["u_jump"] / r["u_scale"], r["z_jump"] / r["z_scale"]) for r in reports)
    return CheckResult(f"conformity[{layout.mesh.num_cells} cells,k={k},{variant}]",
                       bool(worst <= CONFORMITY_TOL), float(worst), CONFORMITY_TOL,
                       {"last": reports[-1]})


def coercivity(levels=(2, 4, 8), k: int = 1, variant="hdg", beta=None) -> CheckResult:
    """Smallest ratio ``a_h(v,v) / (mu |||v|||^2)`` on each mesh; must stay positive."""
    values = [coercivity_check(build_layout(square(n), k, variant), _default_params(k, beta))
              for n in levels]
    worst = float(min(values))
    return CheckResult(f"coercivity[k={k},{variant}]", bool(worst > POSITIVE_FLOOR), worst,
                       POSITIVE_FLOOR, {"values": values})


def infsup(levels=(2, 4, 8), k: int = 1, variant="hdg") -> CheckResult:
    """Both inf-sup values positive on every mesh and not decaying under refinement."""
    vals = [infsup_values(build_layout(square(n), k, variant)) for n in levels]
    a = [v["a"] for v in vals]
    b = [v["b"] for v in vals]
    ratio = min(a[-1] / a[0], b[-1] / b[0])
    passed = min(a) > POSITIVE_FLOOR and min(b) > POSITIVE_FLOOR and ratio >= INFSUP_RATIO
    return CheckResult(f"infsup[k={k},{variant}]", bool(passed), float(ratio), INFSUP_RATIO,
                       {"a": a, "b": b})


def energy_decay(n: int = 4, k: int = 1, variant="hdg", steps: int = 20,
                 dt: float = 1e-2) -> CheckResult:
    """Backward Euler with zero data from a nonzero solved state: ``X_n`` nonincreasing."""
    case = quasistatic_case(k)
    layout = build_layout(case.mesh(n), k, variant)
    stepper = Stepper(layout, case.params, "be", dt)
    system = stepper.system_for(1)
    start = system.solve_step([SolutionState.zeros(layout)], case.data, 0.5)
    values = [system.energy(start)]
    run(layout, case.params, TimeGrid(steps * dt, steps), "be", ProblemData(), start,
        observers=[lambda s, st, sy: values.append(sy.energy(st))], stepper=stepper)
    X = np.array([v[0] for v in values])
    growth = float(np.max(X[1:] / X[:-1] - 1.0))
    return CheckResult(f"energy_decay[{layout.mesh.num_cells} cells,k={k},{variant}]",
                       bool(growth <= ENERGY_TOL and X[0] > 0), growth, ENERGY_TOL,
                       {"X": X.tolist()})


def run_suite(variants=("hdg", "edg-hdg"), degrees=(1, 2)) -> list:
    """The default property suite used by the ``verify`` command."""
    out = []
    for variant in variants:
        for k in degrees:
            for n in (1, 2):
                out.append(condensation_oracle(n, k, variant))
            out.append(zero_data(2, k, variant))
            out.append(conformity(4, k, variant))
            out.append(coercivity((2, 4, 8), k, variant))
            out.append(infsup((2, 4, 8), k, variant))
            out.append(energy_decay(4, k, variant))
    return out
