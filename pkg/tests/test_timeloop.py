import numpy as np
import pytest

from biothdg.analysis import ErrorEvaluator
from biothdg.forms import ModelParams
from biothdg.mms import cantilever_case, footing_case, quasistatic_case
from biothdg.spaces import build_layout
from biothdg.system import BiotSystem, SolutionState, backward_euler
from biothdg.timeloop import (Stepper, TimeGrid, elliptic_projection, initialize, l2_projection,
                              load_checkpoint, run, save_checkpoint)

from conftest import mms_square


def test_time_grid():
    g = TimeGrid.from_dt(0.1, 1e-3)
    assert g.n_steps == 100 and g.time(100) == 0.1
    assert np.isclose(g.dt, 1e-3)
    assert len(g.times()) == 101
    with pytest.raises(ValueError):
        TimeGrid.from_dt(0.1, 0.03)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 3)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


@pytest.mark.parametrize("k", [1, 2])
def test_l2_projection_reproduces_polynomials(k):
    L = build_layout(mms_square(2), k, "hdg")
    ev = ErrorEvaluator(L)
    scal = lambda x: 1.0 + x[:, 0] ** (k - 1) - 2.0 * x[:, 1] ** (k - 1)  # noqa: E731
    c = l2_projection(L, scal, "Q")
    assert ev.l2(c, lambda x, t: scal(x), 0.0, 1)[0] < 1e-12
    vec = lambda x: np.column_stack([x[:, 0] ** k, 3.0 - x[:, 0] * x[:, 1] ** (k - 1)])  # noqa: E731
    c = l2_projection(L, vec, "V")
    assert ev.l2(c, lambda x, t: vec(x), 0.0, 2)[0] < 1e-12


def test_pressure_projection_rate():
    case = quasistatic_case(2)
    errs = []
    for n in (4, 8):
        L = build_layout(case.mesh(n), 2, "hdg")
        c = l2_projection(L, lambda x: case.exact.p(x, 0.0), "Q")
        errs.append(ErrorEvaluator(L).l2(c, case.exact.p, 0.0, 1)[0])
    assert abs(np.log2(errs[0] / errs[1]) - 2.0) < 0.2


def test_elliptic_projection_reproduces_polynomial_and_zero():
    prm = ModelParams(E=1e4, nu=0.3, alpha=0.1, kappa=1e-2, c0=0.1, k=2)
    L = build_layout(mms_square(2), 2, "hdg")
    u = lambda x: np.column_stack([x[:, 0] * x[:, 1], 1.0 - x[:, 0] ** 2])  # noqa: E731
    grad = lambda x: np.stack([np.column_stack([x[:, 1], x[:, 0]]),  # noqa: E731
                               np.column_stack([-2.0 * x[:, 0], 0.0 * x[:, 0]])], axis=1)
    xi, _ = elliptic_projection(L, prm, u, grad)
    assert ErrorEvaluator(L).l2(xi, lambda x, t: u(x), 0.0, 2)[0] < 1e-10
    zero = lambda x: np.zeros((len(x), 2))  # noqa: E731
    xi0, xf0 = elliptic_projection(L, prm, zero, lambda x: np.zeros((len(x), 2, 2)))
    assert np.abs(xi0).max() == 0.0 and np.abs(xf0).max() == 0.0


def test_initial_states():
    for case in (footing_case(1), cantilever_case(1)):
        L = build_layout(case.mesh(2), 1, case.variant)
        s = initialize(L, case.params, case.exact)
        assert not np.any(s.interior()) and not np.any(s.facet)
    case = quasistatic_case(1)
    L = build_layout(case.mesh(2), 1, "hdg")
    s = initialize(L, case.params, case.exact)
    assert np.abs(s.u).max() < 1e-12                 # u(x, 0) = 0
    assert np.abs(s.p).max() > 0.1


def test_one_step_run_matches_solve_step():
    case = quasistatic_case(1)
    L = build_layout(case.mesh(2), 1, "edg-hdg")
    x0 = initialize(L, case.params, case.exact)
    res = run(L, case.params, TimeGrid(1e-3, 1), "bdf2", case.data, x0)
    direct = BiotSystem(L, case.params, backward_euler(1e-3)).solve_step([x0], case.data, 1e-3)
    assert np.array_equal(res.final.interior(), direct.interior())
    assert np.array_equal(res.final.facet, direct.facet)


def test_checkpoint_restart_is_bit_identical(tmp_path):
    case = quasistatic_case(1)
    L = build_layout(case.mesh(2), 1, "hdg")
    grid = TimeGrid(6e-3, 6)
    x0 = initialize(L, case.params, case.exact)
    full = run(L, case.params, grid, "bdf2", case.data, x0, checkpoint_dir=tmp_path,
               checkpoint_every=3)
    history, step = load_checkpoint(tmp_path / "checkpoint_000003.npz", L)
    assert step == 3 and len(history) == 2
    rest = run(L, case.params, grid, "bdf2", case.data, history, start_step=step)
    assert np.array_equal(full.final.interior(), rest.final.interior())
    assert np.array_equal(full.final.facet, rest.final.facet)

    other = build_layout(case.mesh(2), 2, "hdg")
    with pytest.raises(ValueError, match="does not belong"):
        load_checkpoint(tmp_path / "checkpoint_000003.npz", other)


def test_backward_euler_is_first_order_in_time():
    """BE minus BDF2 halves with the step size (BE's O(dt) error dominates)."""
    case = quasistatic_case(1)
    L = build_layout(case.mesh(4), 1, "hdg")
    ev = ErrorEvaluator(L)
    x0 = initialize(L, case.params, case.exact)
    gaps = []
    for dt in (5e-3, 2.5e-3):
        grid = TimeGrid.from_dt(0.1, dt)
        be = run(L, case.params, grid, "be", case.data, x0).final
        bd = run(L, case.params, grid, "bdf2", case.data, x0).final
        gaps.append(ev.l2(be.p - bd.p, lambda x, t: 0.0 * x[:, 0], 0.0, 1)[0])
    assert abs(gaps[0] / gaps[1] - 2.0) < 0.3


def test_stepper_switches_bdf2_operator_after_first_step():
    case = quasistatic_case(1)
    L = build_layout(case.mesh(2), 1, "hdg")
    st = Stepper(L, case.params, "bdf2", 1e-3)
    assert st.system_for(1).scheme.name == "BE"
    assert st.system_for(2).scheme.name == "BDF2"
    with pytest.raises(ValueError):
        run(L, case.params, TimeGrid(1.0, 1), "static", case.data, SolutionState.zeros(L))


def test_quasistatic_run_on_128_cells_is_finite():
    case = quasistatic_case(2)
    L = build_layout(case.mesh(8), 2, "edg-hdg")
    res = run(L, case.params, TimeGrid(5e-3, 5), "bdf2", case.data,
              initialize(L, case.params, case.exact), keep_states=True)
    assert len(res.states) == 6 and res.final.is_finite()
    rec = ErrorEvaluator(L).record(res.final, case.exact, case.params, 5e-3)
    assert rec.e_p < 1e-2 * rec.norms["p"]
