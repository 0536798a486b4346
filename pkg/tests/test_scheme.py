import numpy as np
import pytest

from fvproj import operators, scheme
from fvproj.fields import (P0Vector, P1ncField, SmoothFieldSpec, inner_l2,
                           norm_l2, p1nc_mean, project_p1nc)
from fvproj.scheme import (RunConfig, SolverFailure, Workspace,
                           correction_step, discrete_leray_project,
                           initialize, momentum_step, pressure_step, run)
from fvproj.verification import builtin_mms


def _zero_cfg(k=0.01, T=0.1):
    return RunConfig(re=1.0, k=k, T=T)


def _mms_cfg(mesh_unused=None, re=10.0, k=0.005, T=0.05, init_mode="mms"):
    mms = builtin_mms(re)
    return RunConfig(re=re, k=k, T=T, forcing=mms.forcing,
                     initial=mms.velocity(0.0), exact=mms,
                     init_mode=init_mode), mms


def test_runconfig_validation():
    with pytest.raises(ValueError):
        RunConfig(re=-1.0, k=0.01, T=0.1)
    with pytest.raises(ValueError):
        RunConfig(re=1.0, k=0.2, T=0.1)
    with pytest.raises(ValueError):
        RunConfig(re=1.0, k=0.01, T=0.1, init_mode="exact")
    with pytest.raises(ValueError):
        RunConfig(re=1.0, k=0.03, T=0.1).n_steps
    assert RunConfig(re=1.0, k=0.01, T=0.1).n_steps == 10


def test_leray_projection(mesh8):
    cfg = _zero_cfg()
    ws = Workspace(mesh8, cfg)
    rng = np.random.default_rng(0)
    v = P0Vector(rng.standard_normal((mesh8.n_triangles, 2)))
    w, q = discrete_leray_project(v, mesh8, ws)
    tol = 10 * cfg.pressure_solver.rtol * norm_l2(v, mesh8)
    assert norm_l2(operators.div_h(w, mesh8), mesh8) <= tol
    # Idempotence and orthogonality to discrete gradients.
    w2, q2 = discrete_leray_project(w, mesh8, ws)
    assert norm_l2(P0Vector(w2.values - w.values), mesh8) <= tol
    for _ in range(5):
        s = P1ncField(rng.standard_normal(mesh8.n_edges))
        g = operators.grad_h(s, mesh8)
        assert abs(inner_l2(w, g, mesh8)) <= tol * norm_l2(g, mesh8)


def test_leray_removes_gradient(mesh8):
    cfg = _zero_cfg()
    ws = Workspace(mesh8, cfg)
    rng = np.random.default_rng(1)
    r = P1ncField(rng.standard_normal(mesh8.n_edges))
    v = operators.grad_h(r, mesh8)
    w, q = discrete_leray_project(v, mesh8, ws)
    assert norm_l2(operators.div_h(w, mesh8), mesh8) <= 1e-9 * norm_l2(v, mesh8)


def test_zero_data_stays_zero(mesh8):
    cfg = _zero_cfg(k=0.01, T=0.1)
    state, records = run(cfg, mesh8)
    assert state.step == 10
    assert norm_l2(state.u_curr, mesh8) == 0.0
    assert all(r.l2_u == 0.0 for r in records)


def test_initialize_divergence_free(mesh8):
    cfg, _ = _mms_cfg(init_mode="be")
    ws = Workspace(mesh8, cfg)
    state = initialize(cfg, mesh8, ws)
    tol = 10 * cfg.pressure_solver.rtol
    assert norm_l2(operators.div_h(state.u_prev, mesh8), mesh8) <= tol
    assert norm_l2(operators.div_h(state.u_curr, mesh8), mesh8) <= tol
    assert np.isfinite(state.hi_monitor)
    assert abs(p1nc_mean(state.p_curr, mesh8)) <= 1e-12


def test_leray_correction_shrinks_under_refinement():
    from fvproj.mesh import generate_structured
    from fvproj.fields import project_p0
    mms = builtin_mms(10.0)
    errs = []
    for n in (8, 16, 32):
        m = generate_structured(n, n)
        cfg = _zero_cfg()
        ws = Workspace(m, cfg)
        raw = project_p0(mms.velocity(0.0), m)
        u0, _ = discrete_leray_project(raw, m, ws)
        errs.append(norm_l2(P0Vector(u0.values - raw.values), m))
    assert errs[2] < errs[1] < errs[0]


def test_momentum_step_dense_oracle(kite):
    cfg, mms = _mms_cfg(re=1.0, k=0.01, T=0.02)
    ws = Workspace(kite, cfg)
    state = initialize(cfg, kite, ws)
    u_tilde, _ = momentum_step(state, cfg, kite, ws, state.time + cfg.k)
    # Rebuild the 2x2 system densely and eliminate directly.
    w = P0Vector(2.0 * state.u_curr.values - state.u_prev.values)
    flux = operators.rt0_flux_of_p0(w, kite)
    A = (3.0 / (2.0 * cfg.k) * np.eye(2)
         - ws.laplacian_p0.toarray() / cfg.re
         + operators.assemble_convection_matrix(flux, kite).matrix.toarray())
    from fvproj.fields import project_p0
    rhs = (project_p0(mms.forcing(state.time + cfg.k), kite).values
           + (4.0 * state.u_curr.values - state.u_prev.values) / (2.0 * cfg.k)
           - operators.grad_h(state.p_curr, kite).values)
    expected = np.linalg.solve(A, rhs)
    np.testing.assert_allclose(u_tilde.values, expected, rtol=1e-9, atol=1e-12)


def test_momentum_without_convection_is_pure_diffusion(kite):
    cfg, mms = _mms_cfg(re=1.0, k=0.01, T=0.02)
    ws = Workspace(kite, cfg)
    state = initialize(cfg, kite, ws)
    # Zero out the advecting states: w = 2u - u = u = 0.
    zero = P0Vector(np.zeros((2, 2)))
    frozen = scheme.SchemeState(u_prev=zero, u_curr=zero, u_tilde=zero,
                                p_curr=state.p_curr, step=1, time=cfg.k)
    u_tilde, _ = momentum_step(frozen, cfg, kite, ws, 2 * cfg.k)
    A = 3.0 / (2.0 * cfg.k) * np.eye(2) - ws.laplacian_p0.toarray() / cfg.re
    from fvproj.fields import project_p0
    rhs = (project_p0(mms.forcing(2 * cfg.k), kite).values
           - operators.grad_h(state.p_curr, kite).values)
    np.testing.assert_allclose(u_tilde.values, np.linalg.solve(A, rhs),
                               rtol=1e-9, atol=1e-12)


def test_pressure_step_zero_divergence(mesh8):
    cfg, _ = _mms_cfg()
    ws = Workspace(mesh8, cfg)
    state = initialize(cfg, mesh8, ws)
    p_next, delta, _ = pressure_step(state, state.u_curr, cfg, mesh8, ws)
    # u_curr is already divergence-free, so the increment nearly vanishes.
    assert norm_l2(delta, mesh8) <= 1e-7
    assert abs(p1nc_mean(p_next, mesh8)) <= 1e-12


def test_pressure_step_recovers_potential(kite):
    cfg = _zero_cfg(k=0.01, T=0.02)
    ws = Workspace(kite, cfg)
    rng = np.random.default_rng(2)
    r = P1ncField(rng.standard_normal(5))
    u_tilde = operators.grad_h(r, kite)
    zero_p = P1ncField(np.zeros(5), zero_mean=True)
    zero_u = P0Vector(np.zeros((2, 2)))
    state = scheme.SchemeState(u_prev=zero_u, u_curr=zero_u, u_tilde=zero_u,
                               p_curr=zero_p, step=1, time=cfg.k)
    p_next, delta, _ = pressure_step(state, u_tilde, cfg, kite, ws)
    expected = 3.0 / (2.0 * cfg.k) * r.values
    expected -= p1nc_mean(P1ncField(expected), kite)
    # The kite's gradient operator loses the boundary-only component of r,
    # so compare through the gradient.
    gd = operators.grad_h(delta, kite)
    ge = operators.grad_h(P1ncField(expected), kite)
    np.testing.assert_allclose(gd.values, ge.values, rtol=1e-8, atol=1e-8)


def test_correction_step_identity(mesh8):
    cfg, _ = _mms_cfg()
    ws = Workspace(mesh8, cfg)
    state = initialize(cfg, mesh8, ws)
    rng = np.random.default_rng(3)
    u_tilde = P0Vector(rng.standard_normal((mesh8.n_triangles, 2)))
    p_next = P1ncField(rng.standard_normal(mesh8.n_edges))
    u_next = correction_step(state, u_tilde, p_next, cfg.k, mesh8)
    delta = P1ncField(p_next.values - state.p_curr.values)
    g = operators.grad_h(delta, mesh8)
    np.testing.assert_array_equal(
        u_next.values, u_tilde.values - (2.0 * cfg.k / 3.0) * g.values)
    # delta p = 0 keeps u_tilde unchanged.
    same = correction_step(state, u_tilde, state.p_curr, cfg.k, mesh8)
    np.testing.assert_array_equal(same.values, u_tilde.values)


def test_advance_keeps_divergence_free(mesh8):
    cfg, _ = _mms_cfg()
    ws = Workspace(mesh8, cfg)
    state = initialize(cfg, mesh8, ws)
    state, rec = scheme.advance(state, cfg, mesh8, ws)
    assert rec.div_u <= 10 * cfg.pressure_solver.rtol
    assert rec.normal_jump <= 10 * cfg.pressure_solver.rtol
    assert abs(p1nc_mean(state.p_curr, mesh8)) <= 1e-12


def test_run_minimal_two_steps(mesh8):
    cfg, _ = _mms_cfg(k=0.01, T=0.02)
    state, records = run(cfg, mesh8)
    assert state.step == 2
    assert len(records) == 1


def test_nan_aborts():
    rec_vals = dict(step=2, time=0.02, l2_u=float("nan"), cum_k_normh_ut2=0.0,
                    du_dt=0.0, cum_k_l2_p2=0.0, l2_grad_p=0.0, div_u=0.0,
                    normal_jump=0.0, momentum_iters=0, pressure_iters=0)
    rec = scheme.StabilityRecord(**rec_vals)
    assert not all(np.isfinite(v) for v in rec.as_row())


def test_sinks_receive_flush_on_failure(mesh8):
    class Boom:
        def __init__(self):
            self.flushed = False

        def snapshot(self, state, mesh):
            raise scheme.SolverFailure("boom")

        def record(self, rec):
            pass

        def flush(self):
            self.flushed = True

    cfg, _ = _mms_cfg(k=0.01, T=0.02)
    sink = Boom()
    with pytest.raises(SolverFailure):
        run(cfg, mesh8, sinks=sink)
    assert sink.flushed
