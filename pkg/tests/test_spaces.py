import numpy as np
import pytest

from biothdg.mesh import build_structured_square, tag_boundary
from biothdg.spaces import Variant, build_layout, evaluate_trace, project_trace
from biothdg.system import BiotSystem, static_scheme
from biothdg.forms import ModelParams

from conftest import mms_square

# total (uncondensed, constrained included) unknowns of the quasi-static study meshes
TABLE3_DOFS = {("hdg", 1): [896, 3456, 13568, 53760], ("edg-hdg", 1): [722, 2786, 10946, 43394],
               ("hdg", 2): [1632, 6336, 24960], ("edg-hdg", 2): [1458, 5666, 22338]}


@pytest.mark.parametrize("variant,k", sorted(TABLE3_DOFS))
def test_dof_counts_match_reference_table(variant, k):
    counts = [build_layout(build_structured_square(n), k, variant).total_dofs
              for n in (4, 8, 16, 32)[:len(TABLE3_DOFS[variant, k])]]
    assert counts == TABLE3_DOFS[variant, k]


def test_two_cell_dimensions():
    m = mms_square(1)
    L = build_layout(m, 1, "hdg")
    assert L.dims == {"V_h": 12, "Q_h": 2, "Z_h": 12, "Vbar_h": 20, "Qbar_h": 10}
    E = build_layout(m, 1, "edg-hdg")
    assert E.dims["Vbar_h"] == 8


@pytest.mark.parametrize("k", [1, 2, 3])
def test_edg_trace_dimension_formula(k):
    m = mms_square(3)
    E = build_layout(m, k, Variant.EDG_HDG)
    H = build_layout(m, k, Variant.HDG)
    assert E.n_ubar == 2 * (m.num_vertices + (k - 1) * m.num_facets)
    assert H.n_ubar == 2 * (k + 1) * m.num_facets
    assert E.n_ubar < H.n_ubar


def test_degree_zero_rejected():
    with pytest.raises(ValueError):
        build_layout(mms_square(1), 0)


def test_all_dirichlet_constraints():
    m = tag_boundary(build_structured_square(2), {"D": lambda x, y: True}, {"P": lambda x, y: True})
    L = build_layout(m, 1, "hdg")
    bnd = np.flatnonzero(m.boundary)
    expect = np.sort(np.concatenate([L.ubar_index(bnd, 0).ravel(), L.ubar_index(bnd, 1).ravel(),
                                     L.pbar_index(bnd).ravel()]))
    assert np.array_equal(np.sort(L.constrained), expect)
    inner = np.flatnonzero(~m.boundary)
    assert np.all(np.isin(L.ubar_index(inner, 0), L.free))
    # the total-pressure trace is never constrained
    assert not np.any(np.isin(L.ptbar_index(np.arange(m.num_facets)), L.constrained))


def test_layout_is_deterministic():
    a = build_layout(mms_square(3), 2, "edg-hdg")
    b = build_layout(mms_square(3), 2, "edg-hdg")
    assert a.digest() == b.digest()
    assert np.array_equal(a.cell_facet_dofs, b.cell_facet_dofs)


@pytest.mark.parametrize("variant", ["hdg", "edg-hdg"])
def test_trace_projection_reproduces_linear_fields(variant):
    L = build_layout(mms_square(3), 2, variant)
    facets = np.arange(L.mesh.num_facets)
    t = np.linspace(0, 1, 5)
    lin = lambda x: np.stack([1 + 2 * x[:, 0] - x[:, 1], 3.0 + 0 * x[:, 0]], -1)  # noqa: E731
    coeffs = np.zeros(L.n_facet)
    idx, val = project_trace(L, lin, facets, "ubar")
    coeffs[idx] = val
    got = evaluate_trace(L, coeffs, facets, t, "ubar")
    a = L.mesh.vertices[L.mesh.facets[:, 0]]
    b = L.mesh.vertices[L.mesh.facets[:, 1]]
    pts = a[:, None] + t[None, :, None] * (b - a)[:, None]
    assert np.abs(got - lin(pts.reshape(-1, 2)).reshape(got.shape)).max() <= 1e-13
    idx, val = project_trace(L, lambda x: np.full(len(x), 2.5), facets, "pbar")
    coeffs[idx] = val
    assert np.abs(evaluate_trace(L, coeffs, facets, t, "pbar") - 2.5).max() <= 1e-13


def test_trace_projection_error_drops_with_degree():
    m = mms_square(4)
    facets = np.flatnonzero(m.boundary)
    fn = lambda x: np.sin(np.pi * x[:, 0])  # noqa: E731
    errs = []
    for k in (2, 3):
        L = build_layout(m, k, "hdg")
        coeffs = np.zeros(L.n_facet)
        idx, val = project_trace(L, fn, facets, "pTbar")
        coeffs[idx] = val
        t = np.linspace(0, 1, 41)
        a = m.vertices[m.facets[facets, 0]]
        b = m.vertices[m.facets[facets, 1]]
        pts = a[:, None] + t[None, :, None] * (b - a)[:, None]
        diff = evaluate_trace(L, coeffs, facets, t, "pTbar") - fn(pts.reshape(-1, 2)).reshape(len(facets), -1)
        errs.append(np.sqrt(np.mean(diff ** 2)))
    assert errs[0] >= 2 * errs[1]


def test_edg_trace_is_continuous_at_vertices(rng):
    m = mms_square(3)
    L = build_layout(m, 3, "edg-hdg")
    coeffs = rng.standard_normal(L.n_facet)
    facets = np.arange(m.num_facets)
    ends = evaluate_trace(L, coeffs, facets, np.array([0.0, 1.0]), "ubar")   # (nf, 2, 2)
    for v in range(m.num_vertices):
        vals = [ends[f, 0] if m.facets[f, 0] == v else ends[f, 1]
                for f in np.flatnonzero(np.any(m.facets == v, axis=1))]
        assert all(np.array_equal(vals[0], w) for w in vals[1:])


def test_constrained_unknowns_are_eliminated():
    L = build_layout(mms_square(2), 1, "hdg")
    sys_ = BiotSystem(L, ModelParams(E=1, nu=0.3, alpha=0.5, kappa=1, c0=1, k=1), static_scheme())
    cond = sys_.condensation
    assert cond.S_ff.shape == (L.n_global, L.n_global)
    assert set(cond.free).isdisjoint(cond.constrained)
    assert len(cond.free) + len(cond.constrained) == L.n_facet
