"""Discrete differential calculus on admissible meshes: gradient,
divergence, the two laplacians and the upwind convection forms, as both
matrix-free applications and assembled sparse matrices."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fields import P0Scalar, P0Vector, P1ncField, RT0Flux

__all__ = [
    "OperatorMatrix", "NonzeroBoundaryFlux",
    "grad_h", "div_h", "apply_laplacian_p0",
    "assemble_laplacian_p1nc", "assemble_laplacian_p0",
    "assemble_pressure_system", "assemble_convection_matrix",
    "upwind_apply", "trilinear_b_h", "rt0_flux_of_p0", "export_matrix",
]


class NonzeroBoundaryFlux(Exception):
    """Upwind convection requires a flux field with zero boundary entries."""


@dataclass
class OperatorMatrix:
    """Sparse operator with its space tags; rows/cols are entity ids."""

    matrix: sp.csr_matrix
    domain: str
    codomain: str
    symmetric: bool = False

    def __post_init__(self):
        if self.symmetric:
            gap = abs(self.matrix - self.matrix.T).max()
            if gap > 1e-14 * abs(self.matrix).max():
                raise ValueError("matrix flagged symmetric but is not")

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x


def gradient_matrices(mesh):
    """Sparse (T x E) component matrices of the cell gradient of a CR field.

    Cell gradient of an affine function equals its boundary formula:
    (1/|K|) sum |sigma| q(x_sigma) n.
    """
    T, E = mesh.n_triangles, mesh.n_edges
    rows = np.repeat(np.arange(T), 3)
    cols = mesh.tri_edges.ravel()
    sgn = np.where(mesh.edge_tri[cols] == rows, 1.0, -1.0)
    base = sgn * mesh.edge_len[cols] / mesh.tri_area[rows]
    Gx = sp.csr_matrix((base * mesh.edge_normal[cols, 0], (rows, cols)), shape=(T, E))
    Gy = sp.csr_matrix((base * mesh.edge_normal[cols, 1], (rows, cols)), shape=(T, E))
    return Gx, Gy


def divergence_matrices(mesh, boundary_mode="adjoint"):
    """Sparse (E x T) component matrices of the edge-midpoint divergence.

    ``boundary_mode`` selects the boundary-edge scaling: "adjoint" divides by
    the single existing cell area (which makes the gradient adjointness an
    exact identity under the lumped CR mass), "mirrored" doubles that area
    as if a ghost cell of equal size sat outside the wall.
    """
    if boundary_mode not in ("adjoint", "mirrored"):
        raise ValueError("boundary_mode must be 'adjoint' or 'mirrored'")
    E, T = mesh.n_edges, mesh.n_triangles
    it = mesh.interior
    K, L = mesh.edge_tri, mesh.edge_neighbor
    denom = mesh.tri_area[K].copy()
    denom[it] += mesh.tri_area[L[it]]
    if boundary_mode == "mirrored":
        denom[~it] *= 2.0
    coef = 3.0 * mesh.edge_len / denom

    rows = np.concatenate([np.arange(E)[it], np.arange(E)[it], np.arange(E)[~it]])
    cols = np.concatenate([L[it], K[it], K[~it]])
    vals = np.concatenate([coef[it], -coef[it], -coef[~it]])
    Dx = sp.csr_matrix((vals * mesh.edge_normal[rows, 0], (rows, cols)), shape=(E, T))
    Dy = sp.csr_matrix((vals * mesh.edge_normal[rows, 1], (rows, cols)), shape=(E, T))
    return Dx, Dy


def grad_h(q, mesh):
    """Cell-averaged gradient of a Crouzeix-Raviart field (exact per cell)."""
    Gx, Gy = _cached(mesh, "grad", gradient_matrices)
    return P0Vector(np.column_stack([Gx @ q.values, Gy @ q.values]))


def div_h(v, mesh, boundary_mode="adjoint"):
    """Edge-midpoint divergence of a cellwise-constant vector field.

    The result has zero integral mean by telescoping over interior edges.
    """
    Dx, Dy = _cached(mesh, "div_" + boundary_mode,
                     lambda m: divergence_matrices(m, boundary_mode))
    vals = Dx @ v.values[:, 0] + Dy @ v.values[:, 1]
    return P1ncField(vals, zero_mean=(boundary_mode == "adjoint"))


def _laplacian_p0_matrix(mesh, boundary="dirichlet"):
    """Raw (T x T) cell laplacian.

    "dirichlet" includes the boundary penalty -tau v_K (homogeneous no-slip
    data); "neumann" keeps interior fluxes only, matching fields whose
    normal derivative vanishes on the wall.
    """
    it = mesh.interior
    K, L = mesh.edge_tri, mesh.edge_neighbor
    diag_edges = slice(None) if boundary == "dirichlet" else it
    rows = np.concatenate([K[diag_edges], K[it], L[it], L[it]])
    cols = np.concatenate([K[diag_edges], L[it], K[it], L[it]])
    vals = np.concatenate([-mesh.edge_tau[diag_edges], mesh.edge_tau[it],
                           mesh.edge_tau[it], -mesh.edge_tau[it]])
    n = mesh.n_triangles
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return sp.diags(1.0 / mesh.tri_area) @ A


def apply_laplacian_p0(v, mesh, boundary="dirichlet"):
    """Two-point flux cell laplacian; acts componentwise on vector fields."""
    A = _cached(mesh, "lap_p0_" + boundary,
                lambda m: _laplacian_p0_matrix(m, boundary))
    if v.space == "P0S":
        return P0Scalar(A @ v.values)
    return P0Vector(np.column_stack([A @ v.values[:, 0], A @ v.values[:, 1]]))


def assemble_laplacian_p0(mesh, weighted=False, boundary="dirichlet"):
    """Cell laplacian matrix. ``weighted=True`` returns the cell-integrated
    (mass-weighted) form, which is the symmetric one."""
    A = _cached(mesh, "lap_p0_" + boundary,
                lambda m: _laplacian_p0_matrix(m, boundary))
    if weighted:
        M = sp.diags(mesh.tri_area)
        return OperatorMatrix(sp.csr_matrix(M @ A), "P0S", "P0S", symmetric=True)
    return OperatorMatrix(A, "P0S", "P0S", symmetric=False)


def assemble_laplacian_p1nc(mesh, boundary_mode="adjoint"):
    """Composed pressure laplacian div_h(grad_h .) as an (E x E) matrix.

    Its kernel contains the constant field; the lumped-mass-weighted form is
    symmetric negative semidefinite (see assemble_pressure_system).
    """
    Gx, Gy = _cached(mesh, "grad", gradient_matrices)
    Dx, Dy = _cached(mesh, "div_" + boundary_mode,
                     lambda m: divergence_matrices(m, boundary_mode))
    return OperatorMatrix(sp.csr_matrix(Dx @ Gx + Dy @ Gy), "P1NC", "P1NC")


def assemble_pressure_system(mesh):
    """SPD form of the pressure laplacian: -M_e * div_h grad_h = G^T M_c G.

    Singular with the constant field as kernel; solve with deflation.
    """
    def build(m):
        Gx, Gy = _cached(m, "grad", gradient_matrices)
        Mc = sp.diags(m.tri_area)
        A = Gx.T @ Mc @ Gx + Gy.T @ Mc @ Gy
        return OperatorMatrix(sp.csr_matrix(A), "P1NC", "P1NC", symmetric=True)
    return _cached(mesh, "pressure", build)


def _check_boundary_flux(flux, mesh):
    bnd = np.abs(flux.values[~mesh.interior]).max(initial=0.0)
    scale = max(float(np.abs(flux.values).max()), 1e-300)
    if bnd > 1e-13 * scale:
        raise NonzeroBoundaryFlux("max boundary flux %.3e" % bnd)


def assemble_convection_matrix(flux, mesh):
    """Upwind convection matrix (T x T); acts componentwise on velocities.

    Off-diagonal entries are nonpositive; row structure follows the donor
    cell of each signed edge flux.
    """
    _check_boundary_flux(flux, mesh)
    it = mesh.interior
    K, L = mesh.edge_tri[it], mesh.edge_neighbor[it]
    f = flux.values[it] * mesh.edge_len[it]   # signed flow along stored normal
    fp, fm = np.maximum(f, 0.0), np.minimum(f, 0.0)
    # Contribution of edge sigma to cell K: (f+) v_K + (f-) v_L;
    # to cell L the flux flips sign: (-f)+ v_L + (-f)- v_K.
    rows = np.concatenate([K, K, L, L])
    cols = np.concatenate([K, L, L, K])
    vals = np.concatenate([fp, fm, -fm, -fp])
    n = mesh.n_triangles
    C = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    C = sp.diags(1.0 / mesh.tri_area) @ C
    return OperatorMatrix(sp.csr_matrix(C), "P0S", "P0S")


def upwind_apply(flux, v, mesh):
    """Donor-cell upwind transport of a cellwise-constant velocity."""
    C = assemble_convection_matrix(flux, mesh)
    return P0Vector(np.column_stack([C @ v.values[:, 0], C @ v.values[:, 1]]))


def trilinear_b_h(flux, v, w, mesh):
    """Convection trilinear form: cell-integrated upwind transport tested by w."""
    bv = upwind_apply(flux, v, mesh)
    return float(np.sum(mesh.tri_area * np.einsum("td,td->t", w.values, bv.values)))


def rt0_flux_of_p0(v, mesh, tol=None):
    """Edge fluxes of a cellwise-constant field that lies in RT0.

    Interior fluxes average the two one-sided normal components (equal up to
    the pressure-solver tolerance for projected velocities); boundary fluxes
    are zero by the space definition.
    """
    it = mesh.interior
    vals = np.einsum("ed,ed->e", v.values[mesh.edge_tri], mesh.edge_normal)
    other = np.einsum("ed,ed->e",
                      v.values[mesh.edge_neighbor[it]], mesh.edge_normal[it])
    vals[it] = 0.5 * (vals[it] + other)
    if tol is not None:
        jump = np.abs(np.einsum("ed,ed->e",
                                v.values[mesh.edge_tri[it]]
                                - v.values[mesh.edge_neighbor[it]],
                                mesh.edge_normal[it])).max(initial=0.0)
        if jump > tol:
            raise NonzeroBoundaryFlux(
                "normal jump %.3e exceeds RT0 tolerance %.1e" % (jump, tol))
    vals[~it] = 0.0
    return RT0Flux(vals)


def export_matrix(om, mesh, fileobj):
    """Coordinate text export: header names the spaces and mesh hash."""
    fileobj.write("# domain=%s codomain=%s mesh=%s\n"
                  % (om.domain, om.codomain, mesh.digest))
    coo = om.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for i in order:
        fileobj.write("%d %d %.17g\n" % (coo.row[i], coo.col[i], coo.data[i]))


def _cached(mesh, key, builder):
    """Per-mesh operator cache (meshes are immutable after construction)."""
    cache = _MESH_CACHE.setdefault(mesh.digest, {})
    if key not in cache:
        cache[key] = builder(mesh)
    return cache[key]


_MESH_CACHE = {}
