import math

import numpy as np
import pytest

from biothdg.forms import (DEFAULT_PENALTY_FACTOR, ElementTables, ModelParams, ParameterError,
                           assemble_ah_local, assemble_bh_local, coercivity_check, norm_q, norm_v,
                           norm_q_blocks, norm_v_blocks, scatter_matrix)
from biothdg.spaces import build_layout, project_trace
from biothdg.timeloop import l2_projection

from conftest import mms_square, reference_cell


def half_mu_params(k=1):
    # mu = E / (2 (1 + nu)) = 1/2
    return ModelParams(E=1.3, nu=0.3, alpha=0.5, kappa=1.0, c0=1.0, k=k)


def fields(layout, u=None, ubar=None, q=None, qbar=None, which="pTbar"):
    """Element coefficients and the full facet vector for given functions of x."""
    facets = np.arange(layout.mesh.num_facets)
    facet = np.zeros(layout.n_facet)
    out = {}
    if u is not None:
        out["u"] = l2_projection(layout, u, "V")
    if ubar is not None:
        idx, val = project_trace(layout, ubar, facets, "ubar")
        facet[idx] = val
    if q is not None:
        out["q"] = l2_projection(layout, q, "Q")
    if qbar is not None:
        idx, val = project_trace(layout, qbar, facets, which)
        facet[idx] = val
    out["facet"] = facet
    return out


def ah_value(layout, params, u, facet, v=None, vfacet=None):
    T = ElementTables(layout)
    Auu, Aub, Abb = assemble_ah_local(T, params)
    sl = layout.cell_facet_dofs[:, layout.local_facet_slices["ubar"]]
    ub = facet[sl]
    v = u if v is None else v
    vb = ub if vfacet is None else vfacet[sl]
    return float(np.einsum("ci,cij,cj->", v, Auu, u) + np.einsum("ci,cij,cj->", v, Aub, ub)
                 + np.einsum("ci,cij,cj->", vb, Aub.transpose(0, 2, 1), u)
                 + np.einsum("ci,cij,cj->", vb, Abb, ub))


def bh_value(layout, v, vfacet, q, qfacet, which="pTbar", role="displacement"):
    T = ElementTables(layout)
    Bvol, Bs, Bt = assemble_bh_local(T, role)
    qb = qfacet[layout.cell_facet_dofs[:, layout.local_facet_slices[which]]]
    val = np.einsum("ci,cij,cj->", q, Bvol, v) + np.einsum("ci,cij,cj->", qb, Bs, v)
    if Bt is not None:
        vb = vfacet[layout.cell_facet_dofs[:, layout.local_facet_slices["ubar"]]]
        val += np.einsum("ci,cij,cj->", qb, Bt, vb)
    return float(val)


# parameters -----------------------------------------------------------------------------

def test_lame_parameters():
    p = ModelParams(E=1e4, nu=0.49999, alpha=0.1, kappa=1e-7, c0=1e-5)
    assert 1.6e8 < p.lam < 1.7e8                      # "lambda ~ 1.7e8"
    assert abs(p.lam - 1e4 * 0.49999 / (1.49999 * 0.00002)) <= 1e-6 * p.lam
    q = ModelParams(E=1e4, nu=0.4, alpha=0.1, kappa=1e-7, c0=1e-5)
    assert abs(q.mu - 1e4 / 2.8) < 1e-9
    foot = ModelParams(E=3e4, nu=0.4995, alpha=0.1, kappa=1e-4, c0=1e-3)
    assert 0.9e7 < foot.lam < 1.1e7                   # footing: lambda ~ 1e7


@pytest.mark.parametrize("bad", [dict(nu=0.5), dict(nu=0.6), dict(E=0.0), dict(alpha=1.0),
                                 dict(kappa=0.0), dict(c0=-1.0), dict(k=0), dict(beta=0.0)])
def test_parameter_validation(bad):
    base = dict(E=1.0, nu=0.3, alpha=0.5, kappa=1.0, c0=0.0, k=1)
    with pytest.raises(ParameterError):
        ModelParams(**{**base, **bad})


def test_penalty_default_and_override():
    assert ModelParams(E=1, nu=0.3, alpha=0.5, kappa=1, c0=0, k=3).penalty == DEFAULT_PENALTY_FACTOR * 9
    assert ModelParams(E=1, nu=0.3, alpha=0.5, kappa=1, c0=0, k=3, beta=2.5).penalty == 2.5


# a_h ---------------------------------------------------------------------------------------

@pytest.mark.parametrize("u", [lambda x: np.stack([0 * x[:, 0] + 1.5, 0 * x[:, 0] - 0.5], -1),
                               lambda x: np.stack([-x[:, 1], x[:, 0]], -1)],
                         ids=["translation", "rotation"])
def test_rigid_motions_in_kernel(u):
    L = build_layout(mms_square(2), 2, "hdg")
    f = fields(L, u=u, ubar=u)
    assert abs(ah_value(L, half_mu_params(2), f["u"], f["facet"])) < 1e-12


def test_ah_hand_value_on_reference_cell():
    L = build_layout(reference_cell(), 1, "hdg")
    u = lambda x: np.stack([x[:, 0], 0 * x[:, 0]], -1)  # noqa: E731
    f = fields(L, u=u, ubar=u)
    assert abs(ah_value(L, half_mu_params(), f["u"], f["facet"]) - 0.5) < 1e-12


@pytest.mark.parametrize("variant", ["hdg", "edg-hdg"])
def test_ah_reduces_to_volume_term_for_continuous_fields(variant):
    L = build_layout(mms_square(3), 2, variant)
    prm = half_mu_params(2)
    u = lambda x: np.stack([x[:, 0] ** 2, x[:, 0] * x[:, 1]], -1)  # noqa: E731
    v = lambda x: np.stack([x[:, 1] ** 2 - x[:, 0], x[:, 0] + 0.5 * x[:, 1]], -1)  # noqa: E731
    fu, fv = fields(L, u=u, ubar=u), fields(L, u=v, ubar=v)
    val = ah_value(L, prm, fu["u"], fu["facet"], fv["u"], fv["facet"])
    # 2 mu (eps(u), eps(v)) with eps(u) = [[2x, y/2], [y/2, x]], eps(v) = [[-1, y + 1/2], [y + 1/2, 1/2]]
    # integrand: -2x + y (y + 1/2) + x / 2; over the unit square: -1 + 1/3 + 1/4 + 1/4
    exact = 2 * prm.mu * (-1.0 + 1.0 / 3.0 + 0.25 + 0.25)
    assert abs(val - exact) < 1e-12


def test_ah_global_matrix_symmetric():
    L = build_layout(mms_square(2), 2, "edg-hdg")
    A, _ = scatter_matrix(L, *assemble_ah_local(ElementTables(L), half_mu_params(2)))
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()


# b_h ---------------------------------------------------------------------------------------

def test_bh_constant_field_in_kernel(rng):
    L = build_layout(mms_square(2), 2, "hdg")
    c = lambda x: np.stack([0 * x[:, 0] + 0.7, 0 * x[:, 0] - 1.2], -1)  # noqa: E731
    f = fields(L, u=c, ubar=c)
    q = rng.standard_normal((L.mesh.num_cells, L.nk1))
    qf = rng.standard_normal(L.n_facet)
    assert abs(bh_value(L, f["u"], f["facet"], q, qf)) < 1e-12


def test_bh_hand_value_on_reference_cell():
    L = build_layout(reference_cell(), 1, "hdg")
    v = lambda x: x.copy()  # noqa: E731
    one = lambda x: np.ones(len(x))  # noqa: E731
    f = fields(L, u=v, ubar=v, q=one, qbar=one)
    assert abs(bh_value(L, f["u"], f["facet"], f["q"], f["facet"]) + 1.0) < 1e-12


def test_bh_velocity_role_divergence_theorem():
    L = build_layout(reference_cell(), 2, "hdg")
    w = lambda x: np.stack([0 * x[:, 0] + 0.3, 0 * x[:, 0] + 2.0], -1)  # noqa: E731
    one = lambda x: np.ones(len(x))  # noqa: E731
    f = fields(L, u=w, qbar=one, which="pbar")
    q0 = np.zeros((1, L.nk1))
    assert abs(bh_value(L, f["u"], None, q0, f["facet"], "pbar", "velocity")) < 1e-13


# norms -------------------------------------------------------------------------------------

def test_norm_v_examples():
    L = build_layout(mms_square(2), 2, "hdg")
    T = ElementTables(L)
    assert norm_v(T, np.zeros((L.mesh.num_cells, 2 * L.nk)), np.zeros(L.n_facet)) == 0.0
    rot = lambda x: np.stack([1 - x[:, 1], x[:, 0]], -1)  # noqa: E731
    f = fields(L, u=rot, ubar=rot)
    # the norm is a square root of a cancelling sum: compare its square
    assert norm_v(T, f["u"], f["facet"]) ** 2 < 1e-12
    R = build_layout(reference_cell(), 1, "hdg")
    f = fields(R, u=lambda x: np.stack([x[:, 0], 0 * x[:, 0]], -1))
    # |eps|^2 area + h^-1 (int_{y=0} x^2 + int_hyp x^2), h = sqrt(2)
    exact = 0.5 + (1.0 / 3.0 + math.sqrt(2) / 3.0) / math.sqrt(2)
    assert abs(norm_v(ElementTables(R), f["u"], f["facet"]) ** 2 - exact) < 1e-12


def test_norm_q_examples():
    L = build_layout(mms_square(4), 1, "hdg")
    one = lambda x: np.ones(len(x))  # noqa: E731
    f = fields(L, q=one)
    assert abs(norm_q(ElementTables(L), f["q"], f["facet"]) ** 2 - 1.0) < 1e-12
    R = build_layout(reference_cell(), 2, "hdg")
    f = fields(R, qbar=one)
    val = norm_q(ElementTables(R), np.zeros((1, R.nk1)), f["facet"]) ** 2
    assert abs(val - math.sqrt(2) * (2 + math.sqrt(2))) < 1e-12


@pytest.mark.parametrize("variant", ["hdg", "edg-hdg"])
def test_norm_v_definite_after_constraints(variant):
    L = build_layout(mms_square(2), 2, variant)
    N, _ = scatter_matrix(L, *norm_v_blocks(ElementTables(L)), constrain=True)
    assert np.linalg.eigvalsh(N).min() > 1e-10
    Nqq, Nbb = norm_q_blocks(ElementTables(L))
    assert np.linalg.eigvalsh(Nqq).min() > 0 and np.linalg.eigvalsh(Nbb).min() > 0


# coercivity --------------------------------------------------------------------------------

def test_coercivity_default_penalty_positive():
    L = build_layout(mms_square(2), 1, "hdg")
    assert coercivity_check(L, half_mu_params(1)) > 0


def test_coercivity_flags_tiny_penalty():
    L = build_layout(mms_square(2), 3, "hdg")
    prm = ModelParams(E=1.3, nu=0.3, alpha=0.5, kappa=1.0, c0=1.0, k=3, beta=0.01)
    assert coercivity_check(L, prm) <= 0


def test_coercivity_sampled_and_unconstrained():
    L = build_layout(mms_square(2), 2, "hdg")
    prm = half_mu_params(2)
    exact = coercivity_check(L, prm)
    sampled = coercivity_check(L, prm, n_samples=200)
    assert sampled >= exact - 1e-12
    # without Gamma_D the rigid motions are filtered out of the ratio
    assert coercivity_check(L, prm, constrain=False) > 0
