"""Krylov solves with the contracts the projection scheme needs: an SPD
solve with constant-mode deflation for the pressure system and a
nonsymmetric solve for the momentum system.

Storage and iterations are backed by scipy.sparse; this module adds the
residual re-verification, deflation and reporting around them.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SolverConfig", "SolveReport", "NotConverged", "AsymmetricMatrix",
    "solve_spd_deflated", "solve_general",
]


class AsymmetricMatrix(Exception):
    """SPD solve requested on a matrix that is not symmetric."""


class NotConverged(Exception):
    """Iteration exhausted; carries the best iterate and its report."""

    def __init__(self, message, solution=None, report=None):
        super().__init__(message)
        self.solution = solution
        self.report = report


@dataclass
class SolverConfig:
    rtol: float = 1e-10
    atol: float = 1e-14
    maxiter: int = 0          # 0 means 10 * unknowns
    preconditioner: str = "diagonal"   # "none" | "diagonal"

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.maxiter < 0:
            raise ValueError("maxiter must be nonnegative")


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    solver: str


def _as_csr(A):
    mat = getattr(A, "matrix", A)
    return sp.csr_matrix(mat)


def _diag_precond(A, cfg):
    if cfg.preconditioner == "none":
        return None
    d = A.diagonal().copy()
    d[np.abs(d) < 1e-300] = 1.0
    return spla.LinearOperator(A.shape, matvec=lambda x: x / d)


def _check_residual(A, x, b, cfg):
    res = float(np.linalg.norm(A @ x - b))
    return res, res <= cfg.rtol * np.linalg.norm(b) + cfg.atol


def solve_spd_deflated(A, b, kernel=None, cfg=None):
    """Conjugate-gradient solve of a symmetric (semi)definite system.

    If ``kernel`` is given (a basis vector of the nullspace, e.g. the
    constant mode of the pressure laplacian), the right-hand side is
    projected onto its orthogonal complement first and the solution is
    returned with zero kernel component.
    """
    cfg = cfg or SolverConfig()
    sym = getattr(A, "symmetric", None)
    A = _as_csr(A)
    if sym is False or (
            sym is None
            and abs(A - A.T).max() > 1e-12 * max(abs(A).max(), 1e-300)):
        raise AsymmetricMatrix("matrix fails the symmetry check")
    b = np.asarray(b, dtype=float)

    def deflate(v):
        if kernel is None:
            return v
        k = np.asarray(kernel, dtype=float)
        return v - (k @ v) / (k @ k) * k

    b_work = deflate(b)
    if not np.any(b_work):
        return np.zeros_like(b), SolveReport(0, 0.0, True, "cg")

    maxiter = cfg.maxiter or 10 * len(b)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.cg(A, b_work, rtol=cfg.rtol * 0.1, atol=cfg.atol * 0.1,
                      maxiter=maxiter, M=_diag_precond(A, cfg), callback=cb)
    x = deflate(x)
    res, ok = _check_residual(A, x, b_work, cfg)
    report = SolveReport(count[0], res, ok and info == 0, "cg")
    if not report.converged:
        raise NotConverged("cg stalled at residual %.3e" % res, x, report)
    return x, report


def solve_general(A, b, cfg=None):
    """BiCGStab solve of a square system, with a GMRES restart on breakdown."""
    cfg = cfg or SolverConfig()
    A = _as_csr(A)
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b), SolveReport(0, 0.0, True, "bicgstab")
    maxiter = cfg.maxiter or 10 * len(b)
    M = _diag_precond(A, cfg)

    count = [0]
    x, info = spla.bicgstab(A, b, rtol=cfg.rtol * 0.1, atol=cfg.atol * 0.1,
                            maxiter=maxiter, M=M,
                            callback=lambda _: count.__setitem__(0, count[0] + 1))
    res, ok = _check_residual(A, x, b, cfg)
    solver = "bicgstab"
    if not ok:
        # Breakdown or stagnation: retry with restarted GMRES.
        count2 = [0]
        x, info = spla.gmres(A, b, rtol=cfg.rtol * 0.1, atol=cfg.atol * 0.1,
                             maxiter=maxiter, restart=50, M=M,
                             callback=lambda _: count2.__setitem__(0, count2[0] + 1),
                             callback_type="pr_norm")
        res, ok = _check_residual(A, x, b, cfg)
        count[0] += count2[0]
        solver = "bicgstab+gmres"
    report = SolveReport(count[0], res, ok, solver)
    if not ok:
        raise NotConverged("%s stalled at residual %.3e" % (solver, res), x, report)
    return x, report
