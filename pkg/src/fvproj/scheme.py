"""BDF2 projection time stepper: momentum prediction with upwind
convection, Crouzeix-Raviart pressure correction, velocity update, and the
stability monitors that must stay bounded along a run."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg, operators
from .fields import (P0Vector, P1ncField, SmoothFieldSpec, inner_l2, norm_h,
                     norm_l2, p1nc_mean, p1nc_zero_mean, project_p0,
                     project_p1nc)

__all__ = [
    "RunConfig", "SchemeState", "StabilityRecord", "SolverFailure",
    "Workspace", "discrete_leray_project", "initialize", "momentum_step",
    "pressure_step", "correction_step", "advance", "run",
]


class SolverFailure(Exception):
    """A linear solve inside the stepper did not converge."""


@dataclass
class RunConfig:
    """Physical data and run controls for one simulation."""

    re: float
    k: float
    T: float
    forcing: callable = None      # forcing(t) -> vector SmoothFieldSpec, or None
    initial: SmoothFieldSpec = None
    exact: object = None          # provides velocity(t) / pressure(t) for MMS init
    init_mode: str = "be"         # "be" | "mms"
    momentum_solver: linalg.SolverConfig = field(default_factory=linalg.SolverConfig)
    pressure_solver: linalg.SolverConfig = field(default_factory=linalg.SolverConfig)

    def __post_init__(self):
        if self.re <= 0:
            raise ValueError("Reynolds number must be positive")
        if self.k <= 0 or self.T < self.k:
            raise ValueError("need 0 < k <= T")
        if self.init_mode not in ("be", "mms"):
            raise ValueError("init_mode must be 'be' or 'mms'")
        if self.init_mode == "mms" and self.exact is None:
            raise ValueError("mms initialization needs an exact solution")

    @property
    def n_steps(self):
        n = int(round(self.T / self.k))
        if abs(n * self.k - self.T) > 1e-9 * self.T:
            raise ValueError("T must be an integer multiple of k")
        return n


@dataclass
class SchemeState:
    """Rolling state (u^{n-1}, u^n, utilde^n, p^n) at time t_n."""

    u_prev: P0Vector
    u_curr: P0Vector
    u_tilde: P0Vector
    p_curr: P1ncField
    step: int
    time: float
    hi_monitor: float = 0.0      # |u^1 - u^0| / k, logged at initialization


@dataclass
class StabilityRecord:
    """Per-step monitors mirroring the discrete stability estimate."""

    step: int
    time: float
    l2_u: float
    cum_k_normh_ut2: float       # k * sum ||utilde^n||_h^2
    du_dt: float                 # |u^n - u^{n-1}| / k
    cum_k_l2_p2: float           # k * sum |p^n|^2
    l2_grad_p: float
    div_u: float                 # |div_h u^n| (L2)
    normal_jump: float           # max interior normal jump of u^n
    momentum_iters: int
    pressure_iters: int

    def as_row(self):
        return (self.step, self.time, self.l2_u, self.cum_k_normh_ut2,
                self.du_dt, self.cum_k_l2_p2, self.l2_grad_p, self.div_u,
                self.normal_jump, self.momentum_iters, self.pressure_iters)

    FIELDS = ("step", "t", "l2_u", "cum_k_normh_ut2", "du_dt",
              "cum_k_l2_p2", "l2_grad_p", "div_u", "normal_jump",
              "momentum_iters", "pressure_iters")


class Workspace:
    """Per-mesh operator cache shared by all solves of a run."""

    def __init__(self, mesh, cfg):
        self.mesh = mesh
        self.cfg = cfg
        self.pressure_matrix = operators.assemble_pressure_system(mesh)
        self.laplacian_p0 = operators.assemble_laplacian_p0(mesh).matrix
        self.kernel = np.ones(mesh.n_edges)
        self.identity = sp.identity(mesh.n_triangles, format="csr")

    def solve_pressure(self, rhs_p1nc):
        """Solve -M_e div grad q = -M_e rhs for a zero-mean q."""
        mesh = self.mesh
        b = -mesh.edge_weight * rhs_p1nc
        try:
            x, report = linalg.solve_spd_deflated(
                self.pressure_matrix, b, kernel=self.kernel,
                cfg=self.cfg.pressure_solver)
        except linalg.NotConverged as exc:
            raise SolverFailure(str(exc)) from exc
        q = P1ncField(x, zero_mean=True)
        q = p1nc_zero_mean(q, mesh)
        return q, report


def _max_normal_jump(v, mesh):
    it = mesh.interior
    jump = np.einsum("ed,ed->e",
                     v.values[mesh.edge_tri[it]] - v.values[mesh.edge_neighbor[it]],
                     mesh.edge_normal[it])
    return float(np.abs(jump).max(initial=0.0))


def discrete_leray_project(v, mesh, ws):
    """Remove the discrete-gradient part of a cellwise-constant field.

    Returns (w, q) with div_h w = 0 up to the solver tolerance, which places
    w in the intersection of the constant and Raviart-Thomas spaces.
    """
    rhs = operators.div_h(v, mesh)
    q, _ = ws.solve_pressure(rhs.values)
    g = operators.grad_h(q, mesh)
    return P0Vector(v.values - g.values), q


def _forcing_field(cfg, mesh, t):
    if cfg.forcing is None:
        return np.zeros((mesh.n_triangles, 2))
    return project_p0(cfg.forcing(t), mesh).values


def _momentum_matrix(ws, coeff_dt, flux):
    """coeff_dt * I - (1/Re) * lap + upwind(flux, .)"""
    mesh = ws.mesh
    A = coeff_dt * ws.identity - (1.0 / ws.cfg.re) * ws.laplacian_p0
    if flux is not None and np.any(flux.values):
        A = A + operators.assemble_convection_matrix(flux, mesh).matrix
    return sp.csr_matrix(A)


def _solve_momentum(ws, A, rhs):
    """Componentwise nonsymmetric solve; returns (P0Vector, iterations)."""
    out = np.empty_like(rhs)
    iters = 0
    for c in range(2):
        try:
            x, report = linalg.solve_general(A, rhs[:, c], cfg=ws.cfg.momentum_solver)
        except linalg.NotConverged as exc:
            raise SolverFailure(str(exc)) from exc
        out[:, c] = x
        iters += report.iterations
    return P0Vector(out), iters


def momentum_step(state, cfg, mesh, ws, t_next):
    """BDF2 semi-implicit momentum prediction at time t_next."""
    k = cfg.k
    w_vals = 2.0 * state.u_curr.values - state.u_prev.values
    flux = operators.rt0_flux_of_p0(P0Vector(w_vals), mesh)
    A = _momentum_matrix(ws, 3.0 / (2.0 * k), flux)
    rhs = (_forcing_field(cfg, mesh, t_next)
           + (4.0 * state.u_curr.values - state.u_prev.values) / (2.0 * k)
           - operators.grad_h(state.p_curr, mesh).values)
    return _solve_momentum(ws, A, rhs)


def pressure_step(state, u_tilde, cfg, mesh, ws):
    """Solve the pressure-increment Poisson problem and update the pressure."""
    rhs = operators.div_h(u_tilde, mesh)
    # Compatibility: the divergence has zero mean by telescoping.
    mean = abs(p1nc_mean(rhs, mesh))
    scale = max(norm_l2(rhs, mesh), norm_l2(u_tilde, mesh), 1e-300)
    if mean > 1e-12 * scale:
        raise SolverFailure("pressure RHS mean %.3e is not compatible" % mean)
    delta, report = ws.solve_pressure(3.0 / (2.0 * cfg.k) * rhs.values)
    p_next = p1nc_zero_mean(
        P1ncField(state.p_curr.values + delta.values), mesh)
    return p_next, delta, report


def correction_step(state, u_tilde, p_next, k, mesh):
    """Exact velocity update removing the new pressure-increment gradient."""
    delta = P1ncField(p_next.values - state.p_curr.values)
    g = operators.grad_h(delta, mesh)
    return P0Vector(u_tilde.values - (2.0 * k / 3.0) * g.values)


def initialize(cfg, mesh, ws=None):
    """Build (u^0, u^1, p^1): discrete Leray projection of the initial data
    plus one backward-Euler projection step (or exact MMS injection)."""
    ws = ws or Workspace(mesh, cfg)
    if cfg.initial is not None:
        u0_raw = project_p0(cfg.initial, mesh)
    else:
        u0_raw = P0Vector(np.zeros((mesh.n_triangles, 2)))
    u0, _ = discrete_leray_project(u0_raw, mesh, ws)

    k = cfg.k
    if cfg.init_mode == "mms":
        u1_raw = project_p0(cfg.exact.velocity(k), mesh)
        u1, _ = discrete_leray_project(u1_raw, mesh, ws)
        p1 = p1nc_zero_mean(project_p1nc(cfg.exact.pressure(k), mesh), mesh)
    else:
        # Backward Euler prediction from u^0 with p^0 = 0.
        flux = operators.rt0_flux_of_p0(u0, mesh)
        A = _momentum_matrix(ws, 1.0 / k, flux)
        rhs = _forcing_field(cfg, mesh, k) + u0.values / k
        u1_tilde, _ = _solve_momentum(ws, A, rhs)
        div1 = operators.div_h(u1_tilde, mesh)
        p1, _ = ws.solve_pressure(div1.values / k)
        g = operators.grad_h(p1, mesh)
        u1 = P0Vector(u1_tilde.values - k * g.values)

    hi = norm_l2(P0Vector(u1.values - u0.values), mesh) / k
    # The first tilde velocity is aliased to u^1 for monitoring purposes.
    return SchemeState(u_prev=u0, u_curr=u1, u_tilde=u1.copy(),
                       p_curr=p1, step=1, time=k, hi_monitor=hi)


def _make_record(state, mesh, cfg, prev_record, mom_iters, p_iters):
    k = cfg.k
    cum_ut = (prev_record.cum_k_normh_ut2 if prev_record else 0.0)
    cum_p = (prev_record.cum_k_l2_p2 if prev_record else 0.0)
    cum_ut += k * norm_h(state.u_tilde, mesh) ** 2
    cum_p += k * norm_l2(state.p_curr, mesh) ** 2
    gp = operators.grad_h(state.p_curr, mesh)
    rec = StabilityRecord(
        step=state.step, time=state.time,
        l2_u=norm_l2(state.u_curr, mesh),
        cum_k_normh_ut2=cum_ut,
        du_dt=norm_l2(P0Vector(state.u_curr.values - state.u_prev.values), mesh) / k,
        cum_k_l2_p2=cum_p,
        l2_grad_p=norm_l2(gp, mesh),
        div_u=norm_l2(operators.div_h(state.u_curr, mesh), mesh),
        normal_jump=_max_normal_jump(state.u_curr, mesh),
        momentum_iters=mom_iters, pressure_iters=p_iters)
    vals = rec.as_row()
    if not all(np.isfinite(v) for v in vals):
        raise SolverFailure("non-finite monitor at step %d; aborting" % state.step)
    return rec


def advance(state, cfg, mesh, ws, prev_record=None):
    """One full projection step; returns (new state, stability record)."""
    t_next = state.time + cfg.k
    u_tilde, mom_iters = momentum_step(state, cfg, mesh, ws, t_next)
    p_next, _, p_report = pressure_step(state, u_tilde, cfg, mesh, ws)
    u_next = correction_step(state, u_tilde, p_next, cfg.k, mesh)
    new_state = SchemeState(
        u_prev=state.u_curr, u_curr=u_next, u_tilde=u_tilde,
        p_curr=p_next, step=state.step + 1, time=t_next,
        hi_monitor=state.hi_monitor)
    rec = _make_record(new_state, mesh, cfg, prev_record,
                       mom_iters, p_report.iterations)
    return new_state, rec


def run(cfg, mesh, ws=None, sinks=None):
    """Drive the scheme over [0, T]; N = T/k steps, snapshots go to sinks."""
    n = cfg.n_steps
    if n < 2:
        raise ValueError("need at least two time steps")
    ws = ws or Workspace(mesh, cfg)
    state = initialize(cfg, mesh, ws)
    records = []
    try:
        if sinks is not None:
            sinks.snapshot(state, mesh)
        prev = None
        for _ in range(n - 1):
            state, rec = advance(state, cfg, mesh, ws, prev_record=prev)
            records.append(rec)
            prev = rec
            if sinks is not None:
                sinks.record(rec)
                sinks.snapshot(state, mesh)
    finally:
        if sinks is not None:
            sinks.flush()
    return state, records
