"""Discrete function spaces: cellwise constants, Crouzeix-Raviart edge
fields and lowest-order Raviart-Thomas fluxes, with their projections,
inner products and norms."""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg

__all__ = [
    "P0Scalar", "P0Vector", "P1ncField", "RT0Flux", "SmoothFieldSpec",
    "SpaceMismatch", "project_p0", "project_tilde_p0", "project_p1nc",
    "project_rt0", "inner_l2", "norm_l2", "norm_h", "norm_dual",
    "p1nc_mean", "p1nc_zero_mean", "write_field_csv",
]


class SpaceMismatch(Exception):
    """Inner product between fields of different spaces or meshes."""


@dataclass
class P0Scalar:
    values: np.ndarray  # (T,)

    space = "P0S"

    def copy(self):
        return P0Scalar(self.values.copy())


@dataclass
class P0Vector:
    values: np.ndarray  # (T, 2)

    space = "P0V"

    def copy(self):
        return P0Vector(self.values.copy())


@dataclass
class P1ncField:
    """Edge-midpoint values of a piecewise-affine nonconforming function."""

    values: np.ndarray  # (E,)
    zero_mean: bool = False

    space = "P1NC"

    def copy(self):
        return P1ncField(self.values.copy(), self.zero_mean)


@dataclass
class RT0Flux:
    """Constant normal flux per edge, signed along the stored edge normal.

    Boundary entries are identically zero (zero normal trace on the wall).
    """

    values: np.ndarray  # (E,)

    space = "RT0"


@dataclass
class SmoothFieldSpec:
    """A smooth scalar or vector field, evaluatable at arbitrary points.

    ``fn(x, y)`` must broadcast over coordinate arrays and return values of
    shape ``x.shape`` (scalar) or ``x.shape + (2,)`` (vector).
    """

    fn: callable
    vector: bool = False
    grad: callable = None
    quad_order: int = 4

    def __call__(self, x, y):
        return self.fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))


# Dunavant degree-4 rule on the reference triangle (6 points, weights sum to 1).
_TRI_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)
_TRI_B = np.array([
    [0.108103018168070, 0.445948490915965, 0.445948490915965],
    [0.445948490915965, 0.108103018168070, 0.445948490915965],
    [0.445948490915965, 0.445948490915965, 0.108103018168070],
    [0.816847572980459, 0.091576213509771, 0.091576213509771],
    [0.091576213509771, 0.816847572980459, 0.091576213509771],
    [0.091576213509771, 0.091576213509771, 0.816847572980459],
])

# 3-point Gauss-Legendre on [0, 1].
_EDGE_X = 0.5 * (1.0 + np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)]))
_EDGE_W = 0.5 * np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def _tri_quad_points(mesh):
    """(T, 6, 2) physical quadrature points of the degree-4 triangle rule."""
    corners = mesh.vertices[mesh.triangles]          # (T, 3, 2)
    return np.einsum("qk,tkd->tqd", _TRI_B, corners)


def cell_average(spec, mesh):
    """Quadrature cell averages of a smooth field; exact up to degree 4."""
    pts = _tri_quad_points(mesh)
    vals = spec(pts[..., 0], pts[..., 1])
    return np.einsum("q,tq...->t...", _TRI_W, vals)


def project_p0(spec, mesh):
    """L2 projection onto cellwise constants: per-cell averages."""
    avg = cell_average(spec, mesh)
    return P0Vector(avg) if spec.vector else P0Scalar(avg)


def project_tilde_p0(spec, mesh):
    """Pointwise circumcenter sampling onto cellwise constants."""
    cc = mesh.tri_circumcenter
    vals = spec(cc[:, 0], cc[:, 1])
    return P0Vector(vals) if spec.vector else P0Scalar(vals)


def edge_average(spec, mesh):
    """Gauss edge averages; shape (E,) or (E, 2) for vector specs."""
    a = mesh.vertices[mesh.edge_vertices[:, 0]]
    b = mesh.vertices[mesh.edge_vertices[:, 1]]
    pts = a[:, None, :] + _EDGE_X[None, :, None] * (b - a)[:, None, :]
    vals = spec(pts[..., 0], pts[..., 1])
    return np.einsum("q,eq...->e...", _EDGE_W, vals)


def project_p1nc(spec, mesh):
    """Projection onto the Crouzeix-Raviart space: matches edge integrals."""
    return P1ncField(edge_average(spec, mesh))


def project_rt0(spec, mesh, boundary_tol=1e-12):
    """Projection onto RT0: edge averages of the normal component.

    The normal trace is forced to zero on boundary edges; if the field
    visibly violates that, a warning is recorded.
    """
    if not spec.vector:
        raise SpaceMismatch("RT0 projection needs a vector field")
    avg = edge_average(spec, mesh)
    flux = np.einsum("ed,ed->e", avg, mesh.edge_normal)
    bnd = ~mesh.interior
    scale = max(float(np.abs(flux).max()), 1.0)
    if np.abs(flux[bnd]).max(initial=0.0) > boundary_tol * scale:
        warnings.warn("field has nonzero normal trace on the boundary; "
                      "boundary fluxes forced to zero", stacklevel=2)
    flux[bnd] = 0.0
    return RT0Flux(flux)


def rt0_cell_values(flux, mesh, points_bary):
    """Evaluate the per-cell RT0 reconstruction at barycentric points.

    Used for L2 error integrals: on each triangle the RT0 basis attached to
    edge sigma is (|sigma| / 2|K|) (x - P_opp), with P_opp the opposite vertex.
    """
    corners = mesh.vertices[mesh.triangles]              # (T, 3, 2)
    pts = np.einsum("qk,tkd->tqd", points_bary, corners)  # (T, Q, 2)
    out = np.zeros_like(pts)
    for k in range(3):
        e = mesh.tri_edges[:, k]
        # Edge k joins local vertices k, k+1; the opposite vertex is k+2.
        opp = corners[:, (k + 2) % 3, :]
        sgn = np.where(mesh.edge_tri[e] == np.arange(mesh.n_triangles), 1.0, -1.0)
        coeff = (sgn * flux.values[e] * mesh.edge_len[e]
                 / (2.0 * mesh.tri_area))                 # (T,)
        out += coeff[:, None, None] * (pts - opp[:, None, :])
    return pts, out


def inner_l2(a, b, mesh):
    """L2 inner product. P1nc x P1nc uses the exact three-midpoint rule."""
    if a.space != b.space:
        raise SpaceMismatch("%s vs %s" % (a.space, b.space))
    if a.space == "P0S":
        return float(np.sum(mesh.tri_area * a.values * b.values))
    if a.space == "P0V":
        return float(np.sum(mesh.tri_area * np.einsum("td,td->t", a.values, b.values)))
    if a.space == "P1NC":
        return float(np.sum(mesh.edge_weight * a.values * b.values))
    raise SpaceMismatch("no L2 inner product for space %s" % a.space)


def norm_l2(a, mesh):
    return float(np.sqrt(max(inner_l2(a, a, mesh), 0.0)))


def _edge_diff_sq(v, mesh):
    """Per-edge squared jumps: |v_L - v_K|^2 inside, |v_K|^2 on the boundary."""
    vals = v.values
    vk = vals[mesh.edge_tri]
    out = np.empty(mesh.n_edges)
    it = mesh.interior
    diff = vals[mesh.edge_neighbor[it]] - vk[it]
    if vals.ndim == 2:
        out[it] = np.einsum("ed,ed->e", diff, diff)
        out[~it] = np.einsum("ed,ed->e", vk[~it], vk[~it])
    else:
        out[it] = diff ** 2
        out[~it] = vk[~it] ** 2
    return out


def norm_h(v, mesh):
    """Discrete H1 norm: sum of tau-weighted jumps, boundary terms included."""
    return float(np.sqrt(np.sum(mesh.edge_tau * _edge_diff_sq(v, mesh))))


def h_gram_matrix(mesh):
    """Cells x cells SPD Gram matrix of the discrete H1 norm.

    Assembled directly from the edge jump sums (independently of the
    operators module, which reaches the same matrix through the cell
    laplacian and the mass weighting).
    """
    it = mesh.interior
    K = mesh.edge_tri
    L = mesh.edge_neighbor
    rows = np.concatenate([K, K[it], L[it], L[it]])
    cols = np.concatenate([K, L[it], K[it], L[it]])
    vals = np.concatenate([mesh.edge_tau, -mesh.edge_tau[it],
                           -mesh.edge_tau[it], mesh.edge_tau[it]])
    n = mesh.n_triangles
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def norm_dual(v, mesh, solver=None):
    """Dual norm of a cellwise-constant field.

    Computed as ||w||_h with A w = M v, A the Gram matrix of the discrete H1
    norm; this realizes the sup over test fields exactly. Vector fields are
    handled componentwise, combined in the Euclidean sense.
    """
    if v.space not in ("P0S", "P0V"):
        raise SpaceMismatch("dual norm is defined on cellwise constants")
    cfg = solver if solver is not None else linalg.SolverConfig()
    A = h_gram_matrix(mesh)
    comps = v.values if v.values.ndim == 2 else v.values[:, None]
    total = 0.0
    for c in range(comps.shape[1]):
        b = mesh.tri_area * comps[:, c]
        if not np.any(b):
            continue
        w, _ = linalg.solve_spd_deflated(A, b, kernel=None, cfg=cfg)
        total += float(w @ b)
    return float(np.sqrt(max(total, 0.0)))


def p1nc_mean(q, mesh):
    """Integral mean of a Crouzeix-Raviart field over the domain."""
    return float(np.sum(mesh.edge_weight * q.values) / mesh.total_area)


def p1nc_zero_mean(q, mesh):
    """Recenter a Crouzeix-Raviart field to zero integral mean."""
    return P1ncField(q.values - p1nc_mean(q, mesh), zero_mean=True)


def write_field_csv(fieldobj, mesh, fileobj):
    """Field snapshot: header names the space and mesh hash, one entity per row."""
    fileobj.write("# space=%s mesh=%s\n" % (fieldobj.space, mesh.digest))
    vals = fieldobj.values
    if vals.ndim == 2:
        fileobj.write("entity_id,vx,vy\n")
        for i, (vx, vy) in enumerate(vals):
            fileobj.write("%d,%.17g,%.17g\n" % (i, vx, vy))
    else:
        fileobj.write("entity_id,value\n")
        for i, x in enumerate(vals):
            fileobj.write("%d,%.17g\n" % (i, x))
