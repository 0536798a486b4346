"""Triangular meshes with circumcenter geometry for two-point flux schemes.

A mesh is admissible when every triangle is strictly acute (circumcenters
inside their triangles) and neighbouring circumcenters do not collide, so
that the transmissibility tau = |edge| / d stays finite on every edge.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "ValidationReport",
    "NonConforming",
    "DegenerateTriangle",
    "GenerationFailed",
    "ParseError",
    "build_mesh",
    "validate_admissibility",
    "generate_structured",
    "load_mesh",
    "dump_mesh",
]


class NonConforming(Exception):
    """An edge is shared by more than two triangles."""


class DegenerateTriangle(Exception):
    """A triangle has (numerically) zero area."""


class GenerationFailed(Exception):
    """The structured generator produced an inadmissible mesh."""


class ParseError(Exception):
    """Malformed mesh file; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line %d: %s" % (line, message)
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Mesh:
    """Immutable triangulation with all two-point-flux geometry precomputed.

    Vertices and triangles are index arrays; triangles are counterclockwise.
    Edge normals point from ``edge_tri`` toward ``edge_neighbor`` (or out of
    the domain for boundary edges, where ``edge_neighbor`` is -1).
    """

    vertices: np.ndarray        # (V, 2)
    triangles: np.ndarray       # (T, 3) vertex ids, CCW
    tri_edges: np.ndarray       # (T, 3) edge ids
    tri_area: np.ndarray        # (T,)
    tri_circumcenter: np.ndarray  # (T, 2)
    tri_circumradius: np.ndarray  # (T,)
    edge_vertices: np.ndarray   # (E, 2)
    edge_mid: np.ndarray        # (E, 2)
    edge_len: np.ndarray        # (E,)
    edge_normal: np.ndarray     # (E, 2) unit, from edge_tri side
    edge_tri: np.ndarray        # (E,) owning triangle K
    edge_neighbor: np.ndarray   # (E,) neighbour L, -1 on the boundary
    edge_d: np.ndarray          # (E,) circumcenter distance
    edge_tau: np.ndarray        # (E,) |edge| / d
    interior: np.ndarray        # (E,) bool mask
    edge_weight: np.ndarray     # (E,) lumped CR mass: (|K|+|L|)/3
    h: float                    # max circumradius
    total_area: float
    digest: str = field(repr=False, default="")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edge_len)


@dataclass
class ValidationReport:
    """Per-entity admissibility diagnostics; ``admissible`` is the verdict."""

    admissible: bool
    angle_margin: float
    max_angle: np.ndarray          # (T,) largest interior angle per triangle
    circumcenter_inside: np.ndarray  # (T,) bool, closed-triangle test
    circumcenter_boundary_dist: np.ndarray  # (T,) signed dist, >=0 inside
    d_over_len: np.ndarray         # (E,) d / |edge|
    min_tau: float
    min_d: float
    min_edge_over_h: float
    messages: list = field(default_factory=list)


def _circumcenters(p0, p1, p2):
    """Circumcenters for stacked vertex triples, via perpendicular bisectors."""
    ax, ay = p0[:, 0], p0[:, 1]
    bx, by = p1[:, 0], p1[:, 1]
    cx, cy = p2[:, 0], p2[:, 1]
    d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
    a2 = ax * ax + ay * ay
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    ux = (a2 * (by - cy) + b2 * (cy - ay) + c2 * (ay - by)) / d
    uy = (a2 * (cx - bx) + b2 * (ax - cx) + c2 * (bx - ax)) / d
    return np.column_stack([ux, uy])


def build_mesh(vertices, triangles):
    """Assemble a Mesh from vertex coordinates and vertex-id triples.

    Orientation is normalized to counterclockwise; all edge and triangle
    geometry (areas, circumcenters, normals, d, tau, h) is computed here.
    """
    verts = np.asarray(vertices, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64)
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise ValueError("vertices must be an (V, 2) array")
    if tris.ndim != 2 or tris.shape[1] != 3:
        raise ValueError("triangles must be an (T, 3) array")
    if not np.all(np.isfinite(verts)):
        raise ValueError("vertex coordinates must be finite")
    if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
        raise IndexError("triangle references a vertex outside 0..V-1")
    if len(tris) == 0:
        raise ValueError("mesh needs at least one triangle")

    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    signed = 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                    - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))
    flip = signed < 0
    if np.any(flip):
        tris = tris.copy()
        tris[flip, 1], tris[flip, 2] = tris[flip, 2].copy(), tris[flip, 1].copy()
        p1, p2 = verts[tris[:, 1]], verts[tris[:, 2]]
    area = np.abs(signed)

    edge_scale = max(np.linalg.norm(p1 - p0, axis=1).max(),
                     np.linalg.norm(p2 - p1, axis=1).max(),
                     np.linalg.norm(p0 - p2, axis=1).max())
    bad = np.nonzero(area <= 1e-14 * edge_scale ** 2)[0]
    if bad.size:
        raise DegenerateTriangle("triangle %d has area %.3e" % (bad[0], area[bad[0]]))

    cc = _circumcenters(p0, p1, p2)
    circumradius = np.linalg.norm(verts[tris[:, 0]] - cc, axis=1)

    # Edge table keyed by the sorted vertex pair; first owner is K.
    edge_ids = {}
    edge_vertices = []
    edge_tri = []
    edge_neighbor = []
    edge_normal = []
    tri_edges = np.empty_like(tris)
    for t in range(len(tris)):
        tv = tris[t]
        for k in range(3):
            a, b = int(tv[k]), int(tv[(k + 1) % 3])
            key = (a, b) if a < b else (b, a)
            if key not in edge_ids:
                e = len(edge_vertices)
                edge_ids[key] = e
                edge_vertices.append((a, b))
                edge_tri.append(t)
                edge_neighbor.append(-1)
                tvec = verts[b] - verts[a]
                # CCW traversal: outward normal is the edge vector rotated -90deg.
                n = np.array([tvec[1], -tvec[0]])
                edge_normal.append(n / np.linalg.norm(n))
            else:
                e = edge_ids[key]
                if edge_neighbor[e] != -1:
                    raise NonConforming(
                        "edge (%d, %d) is shared by more than two triangles" % key)
                edge_neighbor[e] = t
            tri_edges[t, k] = e

    edge_vertices = np.asarray(edge_vertices, dtype=np.int64)
    edge_tri = np.asarray(edge_tri, dtype=np.int64)
    edge_neighbor = np.asarray(edge_neighbor, dtype=np.int64)
    edge_normal = np.asarray(edge_normal, dtype=float)
    interior = edge_neighbor >= 0

    ea, eb = verts[edge_vertices[:, 0]], verts[edge_vertices[:, 1]]
    edge_mid = 0.5 * (ea + eb)
    edge_len = np.linalg.norm(eb - ea, axis=1)

    edge_d = np.where(
        interior,
        np.linalg.norm(cc[edge_tri] - cc[np.where(interior, edge_neighbor, 0)], axis=1),
        np.linalg.norm(edge_mid - cc[edge_tri], axis=1))
    with np.errstate(divide="ignore"):
        edge_tau = np.where(edge_d > 0, edge_len / np.where(edge_d > 0, edge_d, 1.0),
                            np.inf)

    edge_weight = area[edge_tri] / 3.0
    edge_weight[interior] += area[edge_neighbor[interior]] / 3.0

    digest = hashlib.sha256()
    digest.update(verts.tobytes())
    digest.update(tris.tobytes())

    return Mesh(
        vertices=verts, triangles=tris, tri_edges=tri_edges, tri_area=area,
        tri_circumcenter=cc, tri_circumradius=circumradius,
        edge_vertices=edge_vertices, edge_mid=edge_mid, edge_len=edge_len,
        edge_normal=edge_normal, edge_tri=edge_tri, edge_neighbor=edge_neighbor,
        edge_d=edge_d, edge_tau=edge_tau, interior=interior,
        edge_weight=edge_weight, h=float(circumradius.max()),
        total_area=float(area.sum()), digest=digest.hexdigest()[:16])


def _barycentric(mesh):
    """Barycentric coordinates of each circumcenter in its own triangle."""
    p0 = mesh.vertices[mesh.triangles[:, 0]]
    p1 = mesh.vertices[mesh.triangles[:, 1]]
    p2 = mesh.vertices[mesh.triangles[:, 2]]
    v0, v1 = p1 - p0, p2 - p0
    vp = mesh.tri_circumcenter - p0
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (vp[:, 0] * v1[:, 1] - vp[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * vp[:, 1] - v0[:, 1] * vp[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def validate_admissibility(mesh, angle_margin=0.01):
    """Check the acute-angle and circumcenter-distance mesh hypotheses.

    Report style: never raises. The mesh is admissible iff every interior
    angle is at most pi/2 - angle_margin and min d is at least 1e-10 * h.
    """
    p = [mesh.vertices[mesh.triangles[:, k]] for k in range(3)]
    max_angle = np.zeros(mesh.n_triangles)
    for k in range(3):
        a = p[k] - p[(k + 2) % 3]
        b = p[(k + 1) % 3] - p[(k + 2) % 3]
        cosang = np.einsum("ij,ij->i", a, b) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        max_angle = np.maximum(max_angle, ang)

    bary = _barycentric(mesh)
    inside = np.all(bary >= -1e-12, axis=1)
    # Signed distance proxy: min barycentric coordinate scaled to length units.
    boundary_dist = bary.min(axis=1) * np.sqrt(mesh.tri_area)

    min_d = float(mesh.edge_d.min())
    min_tau = float(mesh.edge_tau.min()) if min_d > 0 else float("inf")
    messages = []
    ok_angle = bool(np.all(max_angle <= np.pi / 2 - angle_margin))
    ok_d = min_d >= 1e-10 * mesh.h
    if not ok_angle:
        messages.append("max interior angle %.6f rad exceeds pi/2 - %.3f"
                        % (max_angle.max(), angle_margin))
    if not ok_d:
        messages.append("min circumcenter distance %.3e below 1e-10*h" % min_d)
    if not np.all(inside):
        messages.append("%d circumcenters outside their triangles"
                        % int(np.sum(~inside)))

    return ValidationReport(
        admissible=ok_angle and ok_d,
        angle_margin=angle_margin,
        max_angle=max_angle,
        circumcenter_inside=inside,
        circumcenter_boundary_dist=boundary_dist,
        d_over_len=mesh.edge_d / mesh.edge_len,
        min_tau=min_tau,
        min_d=min_d,
        min_edge_over_h=float(mesh.edge_len.min() / mesh.h),
        messages=messages)


def _strip_triangles(bottom, top, verts_of):
    """Triangulate the strip between two x-monotone vertex chains."""
    tris = []
    i, j = 0, 0
    while i < len(bottom) - 1 or j < len(top) - 1:
        can_b = i < len(bottom) - 1
        can_t = j < len(top) - 1
        if can_b and (not can_t or
                      verts_of[bottom[i + 1]][0] <= verts_of[top[j + 1]][0]):
            tris.append((bottom[i], bottom[i + 1], top[j]))
            i += 1
        else:
            tris.append((bottom[i], top[j + 1], top[j]))
            j += 1
    return tris


def generate_structured(nx, ny, domain=(0.0, 1.0, 0.0, 1.0)):
    """Offset-lattice triangulation of a rectangle, guaranteed admissible.

    Rows alternate between full rows (with boundary vertices) and rows
    shifted half a cell. Shifted rows carry no vertices on the left/right
    boundary; the end strips are closed by compressed triangles instead,
    which keeps every boundary vertex strictly acute. The row height is
    derived from ``ny`` but nudged toward ~0.8 of the column width, since
    equal spacing would produce right angles.
    """
    if nx < 2 or ny < 2:
        raise GenerationFailed("nx and ny must be at least 2")
    x0, x1, y0, y1 = domain
    w, hgt = x1 - x0, y1 - y0
    if w <= 0 or hgt <= 0:
        raise GenerationFailed("empty domain")
    dx = w / nx
    rows = 2 * int(np.ceil(0.625 * ny))
    dy = hgt / rows
    # First/last shifted vertex sits between dy and dx from the wall.
    s = 0.5 * (dy + dx)
    if not dy < s < dx:
        raise GenerationFailed(
            "aspect ratio dy/dx = %.3f is not triangulable; change nx:ny" % (dy / dx))

    verts = []
    row_ids = []
    for j in range(rows + 1):
        y = y0 + j * dy
        ids = []
        if j % 2 == 0:
            for i in range(nx + 1):
                ids.append(len(verts))
                verts.append((x0 + i * dx, y))
        else:
            xs = [x0 + s] + [x0 + (i + 0.5) * dx for i in range(1, nx - 1)] + [x1 - s]
            for x in xs:
                ids.append(len(verts))
                verts.append((x, y))
        row_ids.append(ids)
    verts = np.asarray(verts)

    tris = []
    for j in range(rows):
        tris.extend(_strip_triangles(row_ids[j], row_ids[j + 1], verts))
    # Close the left/right end strips across each shifted row.
    for j in range(1, rows, 2):
        below, here, above = row_ids[j - 1], row_ids[j], row_ids[j + 1]
        tris.append((below[0], here[0], above[0]))
        tris.append((below[-1], above[-1], here[-1]))

    mesh = build_mesh(verts, tris)
    report = validate_admissibility(mesh, angle_margin=0.05)
    if not report.admissible:
        raise GenerationFailed("generated mesh is inadmissible: %s"
                               % "; ".join(report.messages))
    return mesh


def load_mesh(text):
    """Parse the plain node/element format: "V T", V "x y" lines, T "i j k" lines."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append((lineno, line.split()))
    if not rows:
        raise ParseError("empty mesh file")

    lineno, head = rows[0]
    if len(head) != 2:
        raise ParseError("expected 'V T' counts", lineno)
    try:
        nv, nt = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError("counts must be integers", lineno)
    if len(rows) != 1 + nv + nt:
        raise ParseError("expected %d data lines, found %d" % (nv + nt, len(rows) - 1))

    verts = np.empty((nv, 2))
    for i in range(nv):
        lineno, fields = rows[1 + i]
        if len(fields) != 2:
            raise ParseError("expected 'x y'", lineno)
        try:
            verts[i] = [float(fields[0]), float(fields[1])]
        except ValueError:
            raise ParseError("bad coordinate", lineno)

    tris = np.empty((nt, 3), dtype=np.int64)
    for i in range(nt):
        lineno, fields = rows[1 + nv + i]
        if len(fields) != 3:
            raise ParseError("expected 'i j k'", lineno)
        try:
            tris[i] = [int(f) for f in fields]
        except ValueError:
            raise ParseError("bad vertex id", lineno)
        if tris[i].min() < 0 or tris[i].max() >= nv:
            raise ParseError("vertex id out of range", lineno)

    return build_mesh(verts, tris)


def dump_mesh(mesh):
    """Serialize a mesh to the text format accepted by load_mesh."""
    lines = ["%d %d" % (mesh.n_vertices, mesh.n_triangles)]
    for x, y in mesh.vertices:
        lines.append("%.17g %.17g" % (x, y))
    for a, b, c in mesh.triangles:
        lines.append("%d %d %d" % (a, b, c))
    return "\n".join(lines) + "\n"


def kite_mesh():
    """The four-vertex two-triangle reference mesh used throughout the tests."""
    return build_mesh(
        [(0.0, 0.0), (1.0, 0.0), (0.5, 0.9), (0.5, -0.9)],
        [(0, 1, 2), (0, 3, 1)])
