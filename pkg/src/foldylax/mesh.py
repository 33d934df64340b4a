"""Closed triangle surfaces: generation, validation and panel quadrature."""
from __future__ import annotations

import numpy as np

__all__ = [
    "MeshError",
    "icosphere",
    "ellipsoid_mesh",
    "validate_closed_mesh",
    "panel_geometry",
    "winding_number",
    "enclosed_volume",
    "vertex_normals",
    "CurvedSurface",
    "duffy_rule",
    "subdivided_rule",
]


class MeshError(ValueError):
    """Open, inverted or degenerate surface mesh."""


def icosphere(level: int = 2, radius: float = 1.0):
    """Geodesic sphere from ``level`` midpoint subdivisions of an icosahedron."""
    t = (1 + 5**0.5) / 2
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(level):
        edges = np.sort(np.vstack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.ravel()
        mid = v[uniq].mean(axis=1)
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        base = len(v)
        v = np.vstack([v, mid])
        n = len(f)
        m01, m12, m20 = (base + inv[i * n:(i + 1) * n] for i in range(3))
        a, b, c = f.T
        f = np.vstack(
            [
                np.column_stack([a, m01, m20]),
                np.column_stack([b, m12, m01]),
                np.column_stack([c, m20, m12]),
                np.column_stack([m01, m12, m20]),
            ]
        )
    return radius * v, f


def ellipsoid_mesh(semi_axes, level: int = 2):
    v, f = icosphere(level)
    return v * np.asarray(semi_axes, dtype=float), f


def panel_geometry(vertices, faces):
    """Centroids, unit normals (right-hand rule) and areas of all panels."""
    tri = np.asarray(vertices)[np.asarray(faces)]
    cen = tri.mean(axis=1)
    cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    area2 = np.linalg.norm(cr, axis=1)
    return cen, cr / area2[:, None], 0.5 * area2


def enclosed_volume(vertices, faces) -> float:
    tri = np.asarray(vertices)[np.asarray(faces)]
    return float(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def validate_closed_mesh(vertices, faces, rel_area_tol: float = 1e-12):
    """Reject meshes that are open, inconsistently oriented, inverted or degenerate."""
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=int)
    if faces.min() < 0 or faces.max() >= len(vertices):
        raise MeshError("face index out of range")
    _, _, area = panel_geometry(vertices, faces)
    scale = np.ptp(vertices, axis=0).max() ** 2
    bad = np.nonzero(area <= rel_area_tol * scale)[0]
    if len(bad):
        raise MeshError(f"{len(bad)} degenerate triangle(s), first index {bad[0]}")
    directed = np.vstack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    und = np.sort(directed, axis=1)
    _, counts = np.unique(und, axis=0, return_counts=True)
    if np.any(counts != 2):
        raise MeshError("mesh is not closed: some edge is not shared by exactly two faces")
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    if np.any(dcounts != 1):
        raise MeshError("mesh orientation is inconsistent between neighbouring faces")
    if enclosed_volume(vertices, faces) <= 0:
        raise MeshError("mesh is inverted: normals point inwards")


def winding_number(vertices, faces, pts):
    """Generalised winding number of the surface around each point."""
    tri = np.asarray(vertices)[np.asarray(faces)]
    pts = np.atleast_2d(pts)
    out = np.zeros(len(pts))
    for start in range(0, len(pts), 2048):
        p = pts[start:start + 2048]
        a = tri[None, :, 0] - p[:, None]
        b = tri[None, :, 1] - p[:, None]
        c = tri[None, :, 2] - p[:, None]
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        num = np.einsum("...i,...i->...", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("...i,...i->...", a, b) * lc
            + np.einsum("...i,...i->...", b, c) * la
            + np.einsum("...i,...i->...", c, a) * lb
        )
        out[start:start + 2048] = 2 * np.arctan2(num, den).sum(axis=1) / (4 * np.pi)
    return out


def subdivided_rule(level: int):
    """Barycentric nodes and weights (summing to 1) of a ``4^level`` subdivision.

    Each sub-triangle carries the degree-2 edge-midpoint rule.
    """
    tris = [np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])]
    for _ in range(level):
        nxt = []
        for t in tris:
            m01, m12, m20 = (t[0] + t[1]) / 2, (t[1] + t[2]) / 2, (t[2] + t[0]) / 2
            nxt += [
                np.array([t[0], m01, m20]),
                np.array([t[1], m12, m01]),
                np.array([t[2], m20, m12]),
                np.array([m01, m12, m20]),
            ]
        tris = nxt
    nodes = np.vstack([(t[[0, 1, 2]] + t[[1, 2, 0]]) / 2 for t in tris])
    w = np.full(len(nodes), 1.0 / len(nodes))
    return nodes, w


def vertex_normals(vertices, faces):
    """Unit vertex normals with Max's weights (exact for vertices on a sphere)."""
    vertices = np.asarray(vertices, dtype=float)
    nrm = np.zeros_like(vertices)
    for k in range(3):
        p = vertices[faces[:, k]]
        e1 = vertices[faces[:, (k + 1) % 3]] - p
        e2 = vertices[faces[:, (k + 2) % 3]] - p
        w = np.cross(e1, e2) / (np.einsum("ij,ij->i", e1, e1) * np.einsum("ij,ij->i", e2, e2))[:, None]
        np.add.at(nrm, faces[:, k], w)
    return nrm / np.linalg.norm(nrm, axis=1, keepdims=True)


# exponents (i, j, k) of u^i v^j w^k and multinomial weights of a cubic triangle
_CUBIC = [(3, 0, 0), (0, 3, 0), (0, 0, 3), (2, 1, 0), (1, 2, 0), (0, 2, 1),
          (0, 1, 2), (1, 0, 2), (2, 0, 1), (1, 1, 1)]
_MULT = np.array([1, 1, 1, 3, 3, 3, 3, 3, 3, 6], dtype=float)


class CurvedSurface:
    """Cubic (PN) triangle patches interpolating vertices and vertex normals.

    Each flat face is replaced by a cubic Bezier patch whose boundary curves
    are tangent to the vertex normals, which recovers a smooth surface to
    third order from a polyhedral mesh.
    """

    def __init__(self, vertices, faces):
        self.vertices = np.asarray(vertices, dtype=float)
        self.faces = np.asarray(faces, dtype=int)
        vn = vertex_normals(self.vertices, self.faces)
        P = self.vertices[self.faces]
        N = vn[self.faces]

        def edge(i, j):
            w = np.einsum("nd,nd->n", P[:, j] - P[:, i], N[:, i])
            return (2 * P[:, i] + P[:, j] - w[:, None] * N[:, i]) / 3

        b = {
            (3, 0, 0): P[:, 0], (0, 3, 0): P[:, 1], (0, 0, 3): P[:, 2],
            (2, 1, 0): edge(0, 1), (1, 2, 0): edge(1, 0), (0, 2, 1): edge(1, 2),
            (0, 1, 2): edge(2, 1), (1, 0, 2): edge(2, 0), (2, 0, 1): edge(0, 2),
        }
        E = sum(b[key] for key in _CUBIC[3:9]) / 6
        V = P.mean(axis=1)
        b[(1, 1, 1)] = E + (E - V) / 2
        self._ctrl = np.stack([b[key] for key in _CUBIC], axis=1) * _MULT[None, :, None]

    def __len__(self):
        return len(self.faces)

    def evaluate(self, bary, panels=None):
        """Points, unit normals and area Jacobians at barycentric ``bary``.

        ``bary`` is ``(q, 3)`` (shared by all panels) or ``(p, q, 3)`` (one
        set per selected panel).  The Jacobian is per unit parameter area of
        a reference triangle of area 1/2.
        """
        ctrl = self._ctrl if panels is None else self._ctrl[panels]
        bary = np.asarray(bary, dtype=float)
        if bary.ndim == 2:
            bary = np.broadcast_to(bary, (len(ctrl),) + bary.shape)
        u, v, w = (bary[..., c, None] for c in range(3))
        i, j, k = np.array(_CUBIC).T

        def mono(a, b, c):
            return u ** np.maximum(a, 0) * v ** np.maximum(b, 0) * w ** np.maximum(c, 0)

        basis = mono(i, j, k)
        du = i * mono(i - 1, j, k)
        dv = j * mono(i, j - 1, k)
        dw = k * mono(i, j, k - 1)
        pts = np.einsum("pqm,pmd->pqd", basis, ctrl)
        ts = np.einsum("pqm,pmd->pqd", du - dw, ctrl)
        tt = np.einsum("pqm,pmd->pqd", dv - dw, ctrl)
        cr = np.cross(ts, tt)
        jac = np.linalg.norm(cr, axis=-1)
        return pts, cr / jac[..., None], jac


def duffy_rule(order: int = 8):
    """Barycentric nodes and weights for integrands singular at the centroid.

    The parameter triangle is split into three triangles sharing the
    centroid and each is mapped from the unit square with a Duffy
    transform; weights sum to 1/2 (the reference-triangle area).
    """
    x, wx = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1)
    wx = 0.5 * wx
    s, t = np.meshgrid(x, x, indexing="ij")
    ws = np.outer(wx, wx)
    c = np.array([1 / 3, 1 / 3, 1 / 3])
    corners = np.eye(3)
    nodes, weights = [], []
    for a in range(3):
        pa, pb = corners[a], corners[(a + 1) % 3]
        pts = c + s[..., None] * ((pa - c) + t[..., None] * (pb - pa))
        # area of the sub-triangle in (u, v) parameter space is 1/6
        nodes.append(pts.reshape(-1, 3))
        weights.append((ws * s).ravel() * 2 * (1 / 6))
    return np.vstack(nodes), np.concatenate(weights)
