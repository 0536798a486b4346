import io

import numpy as np
import pytest

from fvproj import operators
from fvproj.fields import (P0Scalar, P0Vector, P1ncField, RT0Flux,
                           SmoothFieldSpec, inner_l2, norm_h, norm_l2,
                           project_p1nc)
from fvproj.operators import (NonzeroBoundaryFlux, OperatorMatrix,
                              apply_laplacian_p0, assemble_convection_matrix,
                              assemble_laplacian_p0, assemble_laplacian_p1nc,
                              assemble_pressure_system, div_h, export_matrix,
                              grad_h, rt0_flux_of_p0, trilinear_b_h,
                              upwind_apply)


def test_grad_h_constant(kite):
    g = grad_h(P1ncField(np.full(5, 3.0)), kite)
    assert np.abs(g.values).max() <= 1e-13


def test_grad_h_kite_oracle(kite):
    q = P1ncField(np.zeros(5))
    q.values[0] = 1.0      # edge AB midpoint
    g = grad_h(q, kite)
    np.testing.assert_allclose(g.values[0], [0.0, -20.0 / 9.0], atol=1e-13)


def test_grad_h_exact_for_affine(mesh8):
    q = project_p1nc(SmoothFieldSpec(lambda x, y: x), mesh8)
    g = grad_h(q, mesh8)
    np.testing.assert_allclose(g.values, np.tile([1.0, 0.0],
                                                 (mesh8.n_triangles, 1)),
                               atol=1e-13)


def test_div_h_constant_interior_zero(mesh8):
    d = div_h(P0Vector(np.tile([2.0, -1.0], (mesh8.n_triangles, 1))), mesh8)
    assert np.abs(d.values[mesh8.interior]).max() <= 1e-13


def test_div_h_kite_oracle(kite):
    v = P0Vector(np.array([[0.0, 1.0], [0.0, 0.0]]))
    d = div_h(v, kite)
    np.testing.assert_allclose(d.values[0], 10.0 / 3.0, rtol=1e-13)  # AB
    # BC and CA carry -10/3; AD and DB are zero.
    np.testing.assert_allclose(sorted(d.values[1:3]), [-10.0 / 3.0] * 2,
                               rtol=1e-13)
    np.testing.assert_allclose(d.values[3:], 0.0, atol=1e-14)
    from fvproj.fields import p1nc_mean
    assert abs(p1nc_mean(d, kite)) <= 1e-13


def test_div_h_zero_mean(mesh8):
    rng = np.random.default_rng(0)
    for _ in range(5):
        v = P0Vector(rng.standard_normal((mesh8.n_triangles, 2)))
        d = div_h(v, mesh8)
        total = np.sum(mesh8.edge_weight * d.values)
        assert abs(total) <= 1e-12 * norm_l2(v, mesh8)


def test_adjointness_random(mesh8):
    rng = np.random.default_rng(1)
    for _ in range(20):
        v = P0Vector(rng.standard_normal((mesh8.n_triangles, 2)))
        q = P1ncField(rng.standard_normal(mesh8.n_edges))
        gq = grad_h(q, mesh8)
        dv = div_h(v, mesh8)
        lhs = inner_l2(v, gq, mesh8)
        rhs = -inner_l2(q, dv, mesh8)
        scale = (norm_l2(v, mesh8) * norm_l2(gq, mesh8)
                 + norm_l2(q, mesh8) * norm_l2(dv, mesh8))
        assert abs(lhs - rhs) <= 1e-12 * scale


def test_mirrored_boundary_mode_breaks_adjointness(mesh8):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        v = P0Vector(rng.standard_normal((mesh8.n_triangles, 2)))
        q = P1ncField(rng.standard_normal(mesh8.n_edges))
        gq = grad_h(q, mesh8)
        dv = div_h(v, mesh8, boundary_mode="mirrored")
        scale = (norm_l2(v, mesh8) * norm_l2(gq, mesh8)
                 + norm_l2(q, mesh8) * norm_l2(dv, mesh8))
        worst = max(worst, abs(inner_l2(v, gq, mesh8)
                               + inner_l2(q, dv, mesh8)) / scale)
    assert worst > 1e-6   # boundary-localized deviation is visible


def test_laplacian_p0_kite_oracle(kite):
    v = P0Scalar(np.array([1.0, 0.0]))
    lv = apply_laplacian_p0(v, kite)
    expected = -(45.0 / 28.0 + 7.2) / 0.45
    np.testing.assert_allclose(lv.values[0], expected, rtol=1e-13)


def test_laplacian_coercivity_and_symmetry(mesh8):
    rng = np.random.default_rng(2)
    for _ in range(20):
        u = P0Scalar(rng.standard_normal(mesh8.n_triangles))
        v = P0Scalar(rng.standard_normal(mesh8.n_triangles))
        lu, lv = apply_laplacian_p0(u, mesh8), apply_laplacian_p0(v, mesh8)
        nh2 = norm_h(u, mesh8) ** 2
        assert abs(-inner_l2(lu, u, mesh8) - nh2) <= 1e-12 * nh2
        gap = abs(inner_l2(lu, v, mesh8) - inner_l2(u, lv, mesh8))
        assert gap <= 1e-12 * norm_h(u, mesh8) * norm_h(v, mesh8)


def test_weighted_laplacian_symmetric(mesh8):
    A = assemble_laplacian_p0(mesh8, weighted=True).matrix
    gap = abs(A - A.T).max()
    assert gap <= 1e-14 * abs(A).max()


def test_neumann_laplacian_kills_constants(mesh8):
    v = P0Scalar(np.ones(mesh8.n_triangles))
    lv = apply_laplacian_p0(v, mesh8, boundary="neumann")
    assert np.abs(lv.values).max() <= 1e-12


def test_laplacian_p1nc_kernel_and_symmetry(mesh8):
    L = assemble_laplacian_p1nc(mesh8)
    const = np.ones(mesh8.n_edges)
    assert np.abs(L @ const).max() <= 1e-12 * abs(L.matrix).max()
    import scipy.sparse as sp
    W = (sp.diags(mesh8.edge_weight) @ L.matrix).tocsr()  # lumped-mass weighted
    assert abs(W - W.T).max() <= 1e-13 * abs(W).max()


def test_laplacian_p1nc_greens_identity(mesh8):
    rng = np.random.default_rng(3)
    L = assemble_laplacian_p1nc(mesh8)
    for _ in range(10):
        p = P1ncField(rng.standard_normal(mesh8.n_edges))
        q = P1ncField(rng.standard_normal(mesh8.n_edges))
        lp = P1ncField(L @ p.values)
        lhs = inner_l2(q, lp, mesh8)
        gp, gq = grad_h(p, mesh8), grad_h(q, mesh8)
        rhs = -inner_l2(gp, gq, mesh8)
        scale = norm_l2(gp, mesh8) * norm_l2(gq, mesh8)
        assert abs(lhs - rhs) <= 1e-12 * scale


def test_pressure_system_spd(mesh8):
    A = assemble_pressure_system(mesh8)
    assert A.symmetric
    assert np.abs(A @ np.ones(mesh8.n_edges)).max() <= 1e-12 * abs(A.matrix).max()


def test_upwind_kite_oracle(kite):
    flux = RT0Flux(np.zeros(5))
    flux.values[0] = 1.0     # through AB along the stored normal, out of ABC
    v = P0Vector(np.array([[1.0, 0.0], [0.0, 0.0]]))
    out = upwind_apply(flux, v, kite)
    np.testing.assert_allclose(out.values[0], [20.0 / 9.0, 0.0], rtol=1e-13)
    np.testing.assert_allclose(out.values[1], [-20.0 / 9.0, 0.0], rtol=1e-13)


def test_upwind_zero_flux(kite):
    out = upwind_apply(RT0Flux(np.zeros(5)), P0Vector(np.ones((2, 2))), kite)
    assert np.abs(out.values).max() == 0.0


def test_upwind_rejects_boundary_flux(kite):
    flux = RT0Flux(np.zeros(5))
    flux.values[1] = 1.0    # BC is a boundary edge
    with pytest.raises(NonzeroBoundaryFlux):
        upwind_apply(flux, P0Vector(np.ones((2, 2))), kite)


def test_convection_matrix_matches_apply(mesh8):
    rng = np.random.default_rng(4)
    flux = RT0Flux(rng.standard_normal(mesh8.n_edges))
    flux.values[~mesh8.interior] = 0.0
    C = assemble_convection_matrix(flux, mesh8)
    v = P0Vector(rng.standard_normal((mesh8.n_triangles, 2)))
    direct = upwind_apply(flux, v, mesh8)
    via = np.column_stack([C @ v.values[:, 0], C @ v.values[:, 1]])
    np.testing.assert_allclose(via, direct.values, atol=1e-14)
    # M-matrix sign pattern: off-diagonal entries nonpositive.
    coo = C.matrix.tocoo()
    off = coo.data[coo.row != coo.col]
    assert off.max(initial=0.0) <= 1e-14


def test_trilinear_form(mesh8):
    rng = np.random.default_rng(5)
    flux = RT0Flux(rng.standard_normal(mesh8.n_edges))
    flux.values[~mesh8.interior] = 0.0
    zero = P0Vector(np.zeros((mesh8.n_triangles, 2)))
    v = P0Vector(rng.standard_normal((mesh8.n_triangles, 2)))
    assert trilinear_b_h(flux, zero, v, mesh8) == 0.0
    assert trilinear_b_h(flux, v, zero, mesh8) == 0.0


def test_upwind_dissipative_on_divfree(mesh8):
    from fvproj import scheme
    from fvproj.verification import random_divfree_flux
    rng = np.random.default_rng(6)
    cfg = scheme.RunConfig(re=1.0, k=0.01, T=0.02)
    ws = scheme.Workspace(mesh8, cfg)
    for _ in range(10):
        u, flux = random_divfree_flux(rng, mesh8, ws)
        v = P0Vector(rng.standard_normal((mesh8.n_triangles, 2)))
        b = trilinear_b_h(flux, v, v, mesh8)
        scale = norm_l2(u, mesh8) * norm_h(v, mesh8) ** 2
        assert b >= -1e-12 * scale


def test_rt0_flux_of_p0_jump_check(mesh8):
    rng = np.random.default_rng(7)
    v = P0Vector(rng.standard_normal((mesh8.n_triangles, 2)))
    with pytest.raises(NonzeroBoundaryFlux):
        rt0_flux_of_p0(v, mesh8, tol=1e-12)


def test_operator_matrix_symmetry_flag(mesh8):
    import scipy.sparse as sp
    bad = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        OperatorMatrix(bad, "P0S", "P0S", symmetric=True)


def test_export_matrix(kite):
    A = assemble_laplacian_p0(kite, weighted=True)
    buf = io.StringIO()
    export_matrix(A, kite, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# domain=P0S codomain=P0S mesh=%s" % kite.digest
    rows = [tuple(map(float, ln.split())) for ln in lines[1:]]
    assert rows == sorted(rows)
