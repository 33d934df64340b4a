"""Voxel-level integrals of the static and Helmholtz kernels.

Cubes of side ``h`` are the basic cells of both the static tensor solver
and the full-wave volume solver.  Near interactions use the closed-form
Newton-potential derivatives of a rectangular box; the smooth remainder of
the Helmholtz kernel is added by midpoint quadrature.  Interactions on a
regular lattice only depend on index offsets, so products with the
interaction matrix can be applied with zero-padded FFTs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .kernels import cross_matrix

__all__ = [
    "cube_hessian0",
    "cube_grad0",
    "static_block",
    "dynamic_blocks",
    "LatticeConvolution",
    "voxelize",
    "Voxels",
]

_FOUR_PI = 4.0 * np.pi
_SIGNS = np.array([-1.0, 1.0])
# beyond this many cell widths the exact formulas lose digits to cancellation
# and the midpoint rule is accurate to ~(h/d)^4
_FAR = 40.0


def _log_sum(x, r):
    """Stable ``log(x + r)`` with ``r = |(x, y, z)|``."""
    out = np.empty_like(r)
    pos = x >= 0
    out[pos] = np.log(x[pos] + r[pos])
    neg = ~pos
    rho2 = r[neg] ** 2 - x[neg] ** 2
    out[neg] = np.log(rho2 / (r[neg] - x[neg]))
    return out


def _corner_terms(d, h):
    """Corner coordinates ``X = y - x`` and sign products for a cube at offset ``-d``."""
    d = np.asarray(d, dtype=float)
    half = 0.5 * h
    xs = [(-d[..., i, None] + half * _SIGNS) for i in range(3)]
    X, Y, Z = np.broadcast_arrays(
        xs[0][..., :, None, None], xs[1][..., None, :, None], xs[2][..., None, None, :]
    )
    s = _SIGNS[:, None, None] * _SIGNS[None, :, None] * _SIGNS[None, None, :]
    return (X, Y, Z), s


def _exact_hessian0(d, h):
    (X, Y, Z), s = _corner_terms(d, h)
    r = np.sqrt(X * X + Y * Y + Z * Z)
    C = (X, Y, Z)
    out = np.empty(d.shape[:-1] + (3, 3))
    axes = (-3, -2, -1)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        with np.errstate(divide="ignore", invalid="ignore"):
            at = np.arctan(C[j] * C[k] / (C[i] * r))
        out[..., i, i] = -(s * at).sum(axis=axes)
        off = (s * _log_sum(C[k], r)).sum(axis=axes)
        out[..., i, j] = out[..., j, i] = off
    return out / _FOUR_PI


def _exact_grad0(d, h):
    (X, Y, Z), s = _corner_terms(d, h)
    r = np.sqrt(X * X + Y * Y + Z * Z)
    C = (X, Y, Z)
    out = np.empty(d.shape[:-1] + (3,))
    axes = (-3, -2, -1)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        with np.errstate(divide="ignore", invalid="ignore"):
            at = np.arctan(C[j] * C[k] / (C[i] * r))
        f = C[j] * _log_sum(C[k], r) + C[k] * _log_sum(C[j], r) - C[i] * at
        out[..., i] = -(s * f).sum(axis=axes)
    return out / _FOUR_PI


def _point_hessian0(d):
    r = np.linalg.norm(d, axis=-1)
    rr = d[..., :, None] * d[..., None, :] / (r**2)[..., None, None]
    c = 1.0 / (_FOUR_PI * r**3)
    return c[..., None, None] * (3 * rr - np.eye(3))


def _point_grad0(d):
    r = np.linalg.norm(d, axis=-1)
    return -d / (_FOUR_PI * r**3)[..., None]


def cube_hessian0(d, h):
    """``int_cube grad_x grad_x 1/(4 pi |x - y|) dy`` for targets at offsets ``d``.

    ``d`` is target minus cube centre and must lie outside the closed cube,
    except ``d = 0`` which returns the principal-value self term ``-I/3``.
    """
    d = np.asarray(d, dtype=float)
    flat = d.reshape(-1, 3)
    out = np.empty((len(flat), 3, 3))
    dist = np.linalg.norm(flat, axis=1)
    self_ = dist == 0
    far = dist > _FAR * h
    near = ~(self_ | far)
    out[self_] = -np.eye(3) / 3.0
    if far.any():
        out[far] = h**3 * _point_hessian0(flat[far])
    if near.any():
        out[near] = _exact_hessian0(flat[near], h)
    return out.reshape(d.shape[:-1] + (3, 3))


def cube_grad0(d, h):
    """``int_cube grad_x 1/(4 pi |x - y|) dy``; zero at the cube centre by symmetry."""
    d = np.asarray(d, dtype=float)
    flat = d.reshape(-1, 3)
    out = np.zeros((len(flat), 3))
    dist = np.linalg.norm(flat, axis=1)
    far = dist > _FAR * h
    near = (~far) & (dist > 0)
    if far.any():
        out[far] = h**3 * _point_grad0(flat[far])
    if near.any():
        out[near] = _exact_grad0(flat[near], h)
    return out.reshape(d.shape[:-1] + (3,))


def static_block(d, h):
    """Static interaction ``grad div S^0`` of one cell on a target at offset ``d``."""
    return cube_hessian0(d, h)


def dynamic_blocks(d, h, k):
    """Cell interactions of the Helmholtz operators at offsets ``d``.

    Returns ``(G, g)`` such that, for a piecewise-constant density ``v``,
    ``(k^2 + grad div) S[v](x_i) = sum_j G_ij v_j`` and
    ``curl S[v](x_i) = sum_j g_ij x v_j``.  The self term uses the
    equal-volume ball.
    """
    k = complex(k)
    d = np.asarray(d, dtype=float)
    flat = d.reshape(-1, 3)
    G = cube_hessian0(flat, h).astype(complex)
    g = cube_grad0(flat, h).astype(complex)
    dist = np.linalg.norm(flat, axis=1)
    off = dist > 0
    if off.any():
        x = flat[off]
        r = dist[off]
        ph = np.exp(1j * k * r) / (_FOUR_PI * r)
        rr = x[:, :, None] * x[:, None, :] / (r**2)[:, None, None]
        # Pi_k minus the static Hessian, and grad(Phi_k - Phi_0)
        a = ph * (k * k + 1j * k / r - 1 / r**2) + 1.0 / (_FOUR_PI * r**3)
        b = ph * (-k * k - 3j * k / r + 3 / r**2) - 3.0 / (_FOUR_PI * r**3)
        G[off] += h**3 * (a[:, None, None] * np.eye(3) + b[:, None, None] * rr)
        gr = (1j * k - 1 / r) * ph / r + 1.0 / (_FOUR_PI * r**3)
        g[off] += h**3 * gr[:, None] * x
    if (~off).any():
        R = h * (3.0 / _FOUR_PI) ** (1.0 / 3.0)
        corr = (2.0 / 3.0) * ((1 - 1j * k * R) * np.exp(1j * k * R) - 1.0)
        G[~off] += corr * np.eye(3)
    return G.reshape(d.shape[:-1] + (3, 3)), g.reshape(d.shape[:-1] + (3,))


class LatticeConvolution:
    """Discrete convolution with a 3x3-matrix kernel on a box of lattice cells.

    ``apply(v)`` returns ``w_i = sum_j K(idx_i - idx_j) v_j`` for vector
    fields ``v`` stored at the listed lattice indices.
    """

    def __init__(self, kernel_fn, indices: np.ndarray, h: float):
        self.indices = np.asarray(indices, dtype=int)
        lo = self.indices.min(axis=0)
        self.local = self.indices - lo
        self.dims = tuple(int(n) for n in self.local.max(axis=0) + 1)
        self.shape = tuple(sfft.next_fast_len(2 * n - 1) for n in self.dims)
        # offsets laid out in wrap-around order for the circular convolution
        grids = []
        for n, m in zip(self.dims, self.shape):
            full = np.zeros(m, dtype=int)
            full[: n] = np.arange(n)
            full[m - (n - 1):] = np.arange(-(n - 1), 0)
            grids.append(full)
        off = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1) * h
        K = np.asarray(kernel_fn(off))
        self._khat = sfft.fftn(K, axes=(0, 1, 2))

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        buf = np.zeros(self.shape + (3,), dtype=complex)
        ix, iy, iz = self.local.T
        buf[ix, iy, iz] = v
        vh = sfft.fftn(buf, axes=(0, 1, 2))
        wh = np.einsum("...ab,...b->...a", self._khat, vh)
        w = sfft.ifftn(wh, axes=(0, 1, 2))
        return w[ix, iy, iz]


@dataclass(frozen=True, eq=False)
class Voxels:
    """Cells of a global lattice with centre ``origin + h * index``.

    ``fill`` is the occupied volume fraction of every cell and ``owner`` the
    particle each cell belongs to.
    """

    indices: np.ndarray
    h: float
    origin: np.ndarray
    fill: np.ndarray
    owner: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return self.origin + self.h * self.indices

    @property
    def count(self) -> int:
        return len(self.indices)

    def volumes(self) -> np.ndarray:
        return self.fill * self.h**3


def _cell_fill(contains, centers, h, subsample):
    """Occupied fraction of cubes centred at ``centers``."""
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * 0.5 * h
    inside_c = contains(centers)
    inside_k = contains((centers[:, None, :] + corners[None]).reshape(-1, 3)).reshape(-1, 8)
    all_in = inside_c & inside_k.all(axis=1)
    all_out = ~inside_c & ~inside_k.any(axis=1)
    fill = np.where(all_in, 1.0, 0.0)
    mixed = ~(all_in | all_out)
    if mixed.any():
        t = (np.arange(subsample) + 0.5) / subsample - 0.5
        sub = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3) * h
        pts = centers[mixed][:, None, :] + sub[None]
        fill[mixed] = contains(pts.reshape(-1, 3)).reshape(len(pts), -1).mean(axis=1)
    return fill


def voxelize(cluster, h: float, origin=None, subsample: int = 6, fractional: bool = False) -> Voxels:
    """Cover every particle of ``cluster`` with lattice cells of side ``h``.

    With ``fractional=True`` boundary cells carry their occupied volume
    fraction (estimated on a ``subsample^3`` point grid); otherwise a cell
    belongs to the body when its centre does.
    """
    a = cluster.radius_a
    origin = np.asarray(cluster.centers[0] if origin is None else origin, dtype=float)
    all_idx, all_fill, all_owner = [], [], []
    for m, (z, shape) in enumerate(zip(cluster.centers, cluster.shapes)):
        rad = a * shape.bounding_radius
        lo = np.floor((z - rad - origin) / h - 0.5).astype(int)
        hi = np.ceil((z + rad - origin) / h + 0.5).astype(int)
        rng = [np.arange(l, u + 1) for l, u in zip(lo, hi)]
        idx = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, 3)
        # cell centres relative to the particle; exact lattice offsets when the
        # centre sits on a lattice point, so congruent particles get identical cells
        zi = np.rint((z - origin) / h)
        if np.allclose(origin + h * zi, z, rtol=0, atol=1e-9 * h):
            centers = h * (idx - zi)
        else:
            centers = origin + h * idx - z

        def contains(p, shape=shape):
            return shape.contains(p / a)

        if fractional:
            fill = _cell_fill(contains, centers, h, subsample)
        else:
            fill = contains(centers).astype(float)
        keep = fill > 0
        all_idx.append(idx[keep])
        all_fill.append(fill[keep])
        all_owner.append(np.full(int(keep.sum()), m))
    idx = np.vstack(all_idx)
    if len(np.unique(idx, axis=0)) != len(idx):
        raise ValueError("two particles share a lattice cell; refine h")
    return Voxels(idx, float(h), origin, np.concatenate(all_fill), np.concatenate(all_owner))


def pair_offsets(indices_t, indices_s, h):
    """Offsets ``x_t - x_s`` for all target/source pairs, shape ``(nt, ns, 3)``."""
    return h * (indices_t[:, None, :] - indices_s[None, :, :]).astype(float)


def cross_kernel(g):
    return cross_matrix(g)
