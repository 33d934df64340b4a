"""Per-particle 3x3 tensors.

Penetrable particles use the anisotropic polarization tensor

    A_B = int_D grad V (B - I) dv,   (grad V)_{lj} = d_j V_l,

where ``V_l - div S^0[(B - I) grad V_l] = x_l`` in ``D`` and ``S^0`` is the
Newton potential with kernel ``1/(4 pi |x - y|)``.  Differentiating that
equation gives the uniform-field problem ``F - grad div S^0[(B - I) F] = e_l``
for ``F = grad V_l``, which is what is discretised here.

Perfect conductors use the boundary-integral tensors

    P = int [-1/2 + K*]^{-1}(nu) y^T ds,   T = int [1/2 + K*]^{-1}(nu) y^T ds

with ``K* psi(x) = (1/4 pi) int (x - y).nu_x / |x - y|^3 psi(y) ds_y``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, gmres
from scipy.special import elliprd

from .geometry import Ball, Cluster, Ellipsoid, MeshShape, VoxelShape
from .io import complex_from_json, complex_to_json
from .mesh import CurvedSurface, duffy_rule, subdivided_rule, validate_closed_mesh
from .voxel import LatticeConvolution, cube_hessian0, voxelize

__all__ = [
    "TensorError",
    "Material",
    "TensorSet",
    "aniso_tensor_ball",
    "aniso_tensor_ellipsoid",
    "depolarization_factors",
    "spheroid_depolarization",
    "aniso_tensor_numeric",
    "static_tensor_on_cells",
    "pec_tensors_numeric",
    "tensor_spectral_bounds",
    "nonsym_modified_tensor",
    "is_spd",
    "richardson",
    "tensor_set_for_cluster",
]

log = logging.getLogger(__name__)

_I3 = np.eye(3)


class TensorError(ValueError):
    """Invalid material, singular tensor or failed tensor solve."""


# ---------------------------------------------------------------------------
# materials and tensor sets
# ---------------------------------------------------------------------------


def _coercivity_margin(contrast: np.ndarray) -> float:
    """Lower bound of Re((C) U . conj U) / |U|^2 over unit vectors."""
    herm = 0.5 * (contrast + contrast.conj().T)
    re_part = herm.real
    # imaginary part of a Hermitian matrix is antisymmetric and drops out of
    # the real quadratic form, so only the real symmetric part matters
    return float(np.linalg.eigvalsh(0.5 * (re_part + re_part.T)).min())


@dataclass(frozen=True, eq=False)
class Material:
    """Relative permittivity/permeability of one particle, or a PEC marker.

    A penetrable material needs each contrast ``eps_r - I`` and ``mu_r - I``
    to be either uniformly coercive or exactly zero (no response).
    """

    eps_r: np.ndarray = field(default_factory=lambda: np.eye(3, dtype=complex))
    mu_r: np.ndarray = field(default_factory=lambda: np.eye(3))
    kind: str = "penetrable"

    def __post_init__(self):
        if self.kind not in ("penetrable", "pec"):
            raise TensorError(f"unknown material kind {self.kind!r}")
        eps = np.asarray(self.eps_r, dtype=complex)
        if eps.ndim == 0:
            eps = eps * np.eye(3)
        mu = np.asarray(self.mu_r)
        if mu.ndim == 0:
            mu = mu * np.eye(3)
        if np.iscomplexobj(mu):
            if np.any(np.abs(mu.imag) > 0):
                raise TensorError("mu_r must be real")
            mu = mu.real
        mu = mu.astype(float)
        if eps.shape != (3, 3) or mu.shape != (3, 3):
            raise TensorError("eps_r and mu_r must be 3x3")
        object.__setattr__(self, "eps_r", eps)
        object.__setattr__(self, "mu_r", mu)
        if self.kind == "penetrable":
            for name, c in (("eps_r", eps - _I3), ("mu_r", mu - _I3)):
                if np.allclose(c, 0, atol=1e-14):
                    continue
                margin = _coercivity_margin(c)
                if margin <= 0:
                    raise TensorError(
                        f"{name} - I is not coercive (smallest eigenvalue of its real symmetric part {margin:.3g})"
                    )

    @classmethod
    def isotropic(cls, eps: complex = 1.0, mu: float = 1.0) -> "Material":
        return cls(eps * np.eye(3, dtype=complex), mu * np.eye(3))

    @classmethod
    def pec(cls) -> "Material":
        return cls(kind="pec")

    @property
    def is_pec(self) -> bool:
        return self.kind == "pec"

    @property
    def eps_contrast(self) -> np.ndarray:
        return self.eps_r - _I3

    @property
    def mu_contrast(self) -> np.ndarray:
        return self.mu_r - _I3

    def is_isotropic(self) -> bool:
        return all(
            np.allclose(m, m[0, 0] * _I3, atol=1e-14) for m in (self.eps_r, self.mu_r)
        )

    def to_dict(self) -> dict:
        if self.is_pec:
            return {"kind": "pec"}
        return {"kind": "penetrable", "eps_r": complex_to_json(self.eps_r), "mu_r": self.mu_r.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Material":
        if d.get("kind") == "pec":
            return cls.pec()
        eps = d.get("eps_r", 1.0)
        if isinstance(eps, (int, float)):
            eps = eps * np.eye(3)
        elif isinstance(eps, dict):
            eps = complex(eps.get("re", 0.0), eps.get("im", 0.0)) * np.eye(3)
        else:
            arr = np.asarray(eps, dtype=float)
            eps = complex_from_json(arr) if arr.ndim == 3 else arr
        mu = d.get("mu_r", 1.0)
        mu = mu * np.eye(3) if isinstance(mu, (int, float)) else np.asarray(mu, dtype=float)
        return cls(eps, mu)


@dataclass(frozen=True, eq=False)
class TensorSet:
    """Per-particle tensor pairs.

    For penetrable particles ``first``/``second`` are ``(A_eps, A_mu)``;
    for perfect conductors they are ``(P, T)``.  ``scale`` is the size
    parameter ``a`` used to rescale tensors to unit size.
    """

    first: np.ndarray
    second: np.ndarray
    kind: str = "penetrable"
    provenance: str = "analytic"
    scale: float = 1.0

    def __post_init__(self):
        f = np.asarray(self.first, dtype=complex)
        s = np.asarray(self.second, dtype=complex)
        if f.ndim == 2:
            f = f[None]
        if s.ndim == 2:
            s = s[None]
        if f.shape != s.shape or f.shape[1:] != (3, 3):
            raise TensorError("tensor arrays must both have shape (n, 3, 3)")
        if self.kind not in ("penetrable", "pec"):
            raise TensorError(f"unknown tensor kind {self.kind!r}")
        object.__setattr__(self, "first", f)
        object.__setattr__(self, "second", s)

    @classmethod
    def penetrable(cls, A_eps, A_mu, provenance="analytic", scale=1.0):
        return cls(A_eps, A_mu, "penetrable", provenance, scale)

    @classmethod
    def pec(cls, P, T, provenance="numeric", scale=1.0):
        return cls(P, T, "pec", provenance, scale)

    def __len__(self):
        return len(self.first)

    @property
    def A_eps(self):
        return self.first

    @property
    def A_mu(self):
        return self.second

    @property
    def P(self):
        return self.first

    @property
    def T(self):
        return self.second

    def broadcast(self, n: int) -> "TensorSet":
        if len(self) == n:
            return self
        if len(self) != 1:
            raise TensorError(f"tensor set has {len(self)} entries, cluster has {n}")
        return TensorSet(
            np.repeat(self.first, n, axis=0), np.repeat(self.second, n, axis=0),
            self.kind, self.provenance, self.scale,
        )

    def to_dict(self) -> dict:
        names = ("P", "T") if self.kind == "pec" else ("A_eps", "A_mu")
        return {
            "kind": self.kind,
            "provenance": self.provenance,
            "scale": self.scale,
            "particles": [
                {names[0]: complex_to_json(a), names[1]: complex_to_json(b)}
                for a, b in zip(self.first, self.second)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TensorSet":
        names = ("P", "T") if d["kind"] == "pec" else ("A_eps", "A_mu")
        f = np.array([complex_from_json(p[names[0]]) for p in d["particles"]])
        s = np.array([complex_from_json(p[names[1]]) for p in d["particles"]])
        return cls(f, s, d["kind"], d.get("provenance", "analytic"), float(d.get("scale", 1.0)))

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def _ellipsoid_tensor(B, factors, volume):
    B = np.asarray(B, dtype=complex)
    if B.ndim == 0:
        B = B * _I3
    Nd = np.diag(factors)
    M = _I3 + Nd @ (B - _I3)
    if abs(np.linalg.det(M)) < 1e-12 * max(1.0, np.abs(B).max()) ** 3:
        raise TensorError("material is at a depolarisation resonance (singular interior field map)")
    F = np.linalg.solve(M, _I3)
    return volume * F.T @ (B - _I3)


def aniso_tensor_ball(B, radius: float) -> np.ndarray:
    """Polarization tensor of a ball: ``4 pi r^3 (B + 2I)^{-T} (B - I)``.

    ``B`` is the relative material tensor (a scalar means ``B * I``).
    """
    if not radius > 0:
        raise TensorError(f"radius must be positive, got {radius}")
    return _ellipsoid_tensor(B, (1 / 3, 1 / 3, 1 / 3), 4 / 3 * np.pi * radius**3)


def spheroid_depolarization(a_eq: float, c_axis: float):
    """Depolarisation factors ``(N_x, N_y, N_z)`` of a spheroid with semi-axes ``(a, a, c)``."""
    if abs(c_axis - a_eq) < 1e-14 * a_eq:
        return (1 / 3, 1 / 3, 1 / 3)
    if c_axis > a_eq:
        e = math.sqrt(1 - (a_eq / c_axis) ** 2)
        nz = (1 - e * e) / e**3 * (math.atanh(e) - e)
    else:
        e = math.sqrt((a_eq / c_axis) ** 2 - 1)
        nz = (1 + e * e) / e**3 * (e - math.atan(e))
    nx = 0.5 * (1 - nz)
    return (nx, nx, nz)


def depolarization_factors(semi_axes):
    """Depolarisation factors of a general ellipsoid via Carlson's R_D."""
    a, b, c = (float(v) for v in semi_axes)
    abc3 = a * b * c / 3.0
    return (
        abc3 * elliprd(b * b, c * c, a * a),
        abc3 * elliprd(c * c, a * a, b * b),
        abc3 * elliprd(a * a, b * b, c * c),
    )


def aniso_tensor_ellipsoid(B, semi_axes) -> np.ndarray:
    """Polarization tensor of an axis-aligned ellipsoid (uniform interior field)."""
    ax = np.asarray(semi_axes, dtype=float)
    return _ellipsoid_tensor(B, depolarization_factors(ax), 4 / 3 * np.pi * ax.prod())


# ---------------------------------------------------------------------------
# numeric static tensors on voxel cells
# ---------------------------------------------------------------------------


@dataclass
class SolveInfo:
    method: str
    unknowns: int
    residuals: list
    iterations: list


def _chunked_hessian(off, h, chunk=60_000):
    flat = off.reshape(-1, 3)
    out = np.empty((len(flat), 3, 3))
    for s in range(0, len(flat), chunk):
        out[s:s + chunk] = cube_hessian0(flat[s:s + chunk], h)
    return out.reshape(off.shape[:-1] + (3, 3))


def _gmres(apply, rhs, tol, maxiter, restart=60):
    n = len(rhs)
    op = LinearOperator((n, n), matvec=apply, dtype=complex)
    hist = []
    x, info = gmres(
        op, rhs, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter,
        callback=lambda r: hist.append(float(r)), callback_type="pr_norm",
    )
    res = np.linalg.norm(apply(x) - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if info != 0 or res > 10 * tol:
        raise TensorError(
            f"iterative solve did not converge: relative residual {res:.3g} after "
            f"{len(hist)} iterations (last residuals {hist[-3:]})"
        )
    return x, res, len(hist)


def static_tensor_on_cells(indices, h: float, chi, tol: float = 1e-10, dense_limit: int = 3000,
                           maxiter: int = 200, return_info: bool = False):
    """Static polarization tensor of a union of lattice cells.

    Parameters
    ----------
    indices : (n, 3) int array
        Lattice indices; cell ``i`` is the cube of side ``h`` centred at ``h * indices[i]``.
    chi : (n, 3, 3) array
        Volume-weighted contrast ``fill_i (B_i - I)`` of every cell.

    Returns
    -------
    A : (3, 3) complex array, ``h^3 sum_i F_i^T chi_i``.
    """
    indices = np.asarray(indices, dtype=int)
    chi = np.asarray(chi, dtype=complex)
    n = len(indices)
    rhs = np.tile(_I3, (n, 1))  # (3n, 3): column l is e_l in every cell
    residuals, iters = [], []
    if not np.any(chi):
        F = rhs.reshape(n, 3, 3)
        method = "trivial"
    elif 3 * n <= dense_limit:
        off = h * (indices[:, None, :] - indices[None, :, :]).astype(float)
        Nmat = _chunked_hessian(off, h)
        M = np.eye(3 * n) - np.einsum("ijab,jbc->iajc", Nmat, chi).reshape(3 * n, 3 * n)
        F = sla.solve(M, rhs)
        residuals = [float(np.linalg.norm(M @ F - rhs) / np.linalg.norm(rhs))]
        F = F.reshape(n, 3, 3)
        method = "dense"
    else:
        conv = LatticeConvolution(lambda d: _chunked_hessian(d, h), indices, h)

        def apply(x):
            v = x.reshape(n, 3)
            return (v - conv.apply(np.einsum("iab,ib->ia", chi, v))).ravel()

        cols = []
        for l in range(3):
            x, res, it = _gmres(apply, rhs[:, l].astype(complex), tol, maxiter)
            cols.append(x.reshape(n, 3))
            residuals.append(res)
            iters.append(it)
        F = np.stack(cols, axis=-1)
        method = "fft-gmres"
    A = h**3 * np.einsum("ial,iaj->lj", F, chi)
    if return_info:
        return A, SolveInfo(method, 3 * n, residuals, iters)
    return A


def _cells_for_shape(shape, h: float, scale: float, fractional: bool, subsample: int):
    if isinstance(shape, VoxelShape):
        idx = np.argwhere(shape.mask)
        cell_h = shape.h * scale
        if h is not None and not math.isclose(h, shape.h, rel_tol=1e-9):
            raise TensorError(f"resolution {h} does not match the voxel shape's cell size {shape.h}")
        return idx, np.ones(len(idx)), cell_h
    if isinstance(shape, np.ndarray):
        arr = np.asarray(shape)
        if h is None:
            raise TensorError("a raw mask needs the resolution h")
        idx = np.argwhere(arr > 0)
        fill = arr[arr > 0].astype(float) if arr.dtype != bool else np.ones(len(idx))
        return idx, fill, h * scale
    if h is None:
        raise TensorError("the resolution h is required for non-voxel shapes")
    vox = voxelize(Cluster(np.zeros((1, 3)), scale, (shape,)), h * scale,
                   subsample=subsample, fractional=fractional)
    return vox.indices, vox.fill, h * scale


def aniso_tensor_numeric(shape, B, h: float | None = None, scale: float = 1.0, *,
                         fractional: bool = False, subsample: int = 6, tol: float = 1e-10,
                         return_info: bool = False):
    """Polarization tensor ``A_B`` by collocation of the static volume equation.

    Parameters
    ----------
    shape : VoxelShape, Ball, Ellipsoid, MeshShape or ndarray
        Reference body.  A boolean array is a voxel mask, a float array an
        occupancy field (cell volume fractions); both need ``h``.
    B : (3, 3) array, scalar, or (n_cells, 3, 3) array
        Relative material tensor, uniform or per occupied cell.
    h : float
        Cell size in reference units; physical cells have side ``h * scale``.
    scale : float
        The body is ``scale * shape``.
    fractional : bool
        Weight boundary cells of analytic shapes by their occupied fraction
        instead of keeping the cells whose centre is inside (first order only).
    """
    idx, fill, hh = _cells_for_shape(shape, h, scale, fractional, subsample)
    B = np.asarray(B, dtype=complex)
    if B.ndim == 0:
        B = B * _I3
    if B.ndim == 2:
        B = np.broadcast_to(B, (len(idx), 3, 3))
    if B.shape != (len(idx), 3, 3):
        raise TensorError(f"material field has shape {B.shape}, expected ({len(idx)}, 3, 3)")
    for Bi in np.unique(B.reshape(len(idx), -1), axis=0):
        c = Bi.reshape(3, 3) - _I3
        if np.any(c) and _coercivity_margin(c) <= 0:
            raise TensorError("contrast field violates coercivity on its support")
    chi = fill[:, None, None] * (B - _I3)
    return static_tensor_on_cells(idx, hh, chi, tol=tol, return_info=return_info)


# ---------------------------------------------------------------------------
# perfect conductors
# ---------------------------------------------------------------------------


def _kstar_matrix(vertices, faces, near_factor: float = 3.0, near_level: int = 3):
    """Collocation matrix of ``K*`` on cubic patches rebuilt from the mesh.

    Returns the matrix together with collocation points, unit normals there,
    patch areas and patch first moments.
    """
    surf = CurvedSurface(vertices, faces)
    n = len(surf)
    centroid = np.full((1, 3), 1 / 3)
    x, nu, _ = (a[:, 0] for a in surf.evaluate(centroid))
    coarse, cw = subdivided_rule(1)
    yc, _, jc = surf.evaluate(coarse)
    wc = 0.5 * cw[None] * jc  # (n, q) surface weights
    area = wc.sum(axis=1)
    first = np.einsum("nq,nqd->nd", wc, yc)
    diam = np.linalg.norm(vertices[faces] - vertices[faces][:, [1, 2, 0]], axis=2).max(axis=1)

    K = np.zeros((n, n))
    rows = max(1, 2_000_000 // (n * len(cw)))
    for s in range(0, n, rows):
        d = x[s:s + rows, None, None, :] - yc[None]
        r = np.linalg.norm(d, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ker = np.einsum("ipqd,id->ipq", d, nu[s:s + rows]) / r**3
        K[s:s + rows] = np.einsum("ipq,pq->ip", np.nan_to_num(ker), wc)

    dist = np.linalg.norm(x[:, None] - x[None], axis=-1)
    ii, jj = np.nonzero((dist < near_factor * diam[None]) & ~np.eye(n, dtype=bool))
    fine, fw = subdivided_rule(near_level)
    yf, _, jf = surf.evaluate(fine)
    wf = 0.5 * fw[None] * jf
    for s in range(0, len(ii), 4096):
        i, j = ii[s:s + 4096], jj[s:s + 4096]
        d = x[i][:, None] - yf[j]
        ker = np.einsum("pqd,pd->pq", d, nu[i]) / np.linalg.norm(d, axis=-1) ** 3
        K[i, j] = np.einsum("pq,pq->p", ker, wf[j])

    dn, dw = duffy_rule()
    y, _, jac = surf.evaluate(dn)
    d = x[:, None] - y
    ker = np.einsum("pqd,pd->pq", d, nu) / np.linalg.norm(d, axis=-1) ** 3
    K[np.arange(n), np.arange(n)] = (ker * jac) @ dw
    return K / (4 * np.pi), x, nu, area, first


def pec_tensors_numeric(vertices, faces, center=None, *, near_factor: float = 3.0,
                        near_level: int = 3, return_info: bool = False):
    """Polarization and virtual-mass tensors ``(P, T)`` of a closed surface.

    The surface is rebuilt from the mesh as cubic patches tangent to the
    vertex normals; densities are piecewise constant and collocated at the
    patch centres.  Patches closer than ``near_factor`` panel diameters use a
    ``4^near_level`` subdivided rule and self patches a Duffy rule.  The interior system ``-1/2 + K*`` is singular on
    the equilibrium density; it is solved on mean-zero densities by a
    rank-one deflation.  Moments are taken about ``center`` (default: the
    volume centroid).
    """
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=int)
    validate_closed_mesh(vertices, faces)
    K, x, nrm, area, first = _kstar_matrix(vertices, faces, near_factor, near_level)
    n = len(faces)
    if center is None:
        center = _volume_centroid(vertices, faces)
    center = np.asarray(center, dtype=float)
    total = area.sum()
    I = np.eye(n)
    M_minus = -0.5 * I + K + np.outer(np.ones(n), area) / total
    M_plus = 0.5 * I + K
    psi_m = np.linalg.solve(M_minus, nrm)
    psi_p = np.linalg.solve(M_plus, nrm)

    def moment(psi, c):
        return psi.T @ (first - area[:, None] * c)

    P = moment(psi_m, center)
    T = moment(psi_p, center)
    if not return_info:
        return P, T
    info = {
        "panels": n,
        "P_uncentered": moment(psi_m, np.zeros(3)),
        "T_uncentered": moment(psi_p, np.zeros(3)),
        "density_mean_P": (area @ psi_m) / total,
        "density_mean_T": (area @ psi_p) / total,
        "center": center,
        "mesh_size": float(np.sqrt(area.mean())),
    }
    info["recentering_difference"] = float(
        max(np.abs(info["P_uncentered"] - P).max(), np.abs(info["T_uncentered"] - T).max())
    )
    return P, T, info


def _volume_centroid(vertices, faces):
    tri = vertices[faces]
    vol = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])) / 6.0
    return (vol[:, None] * tri.sum(axis=1) / 4.0).sum(axis=0) / vol.sum()


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def is_spd(M, tol: float = 0.0) -> bool:
    """Symmetric (to ``1e-6`` relative) and Cholesky-positive."""
    M = np.asarray(M)
    if np.iscomplexobj(M):
        if np.abs(M.imag).max() > 1e-10 * max(np.abs(M).max(), 1e-300):
            return False
        M = M.real
    if np.linalg.norm(M - M.T) > 1e-6 * np.linalg.norm(M):
        return False
    try:
        np.linalg.cholesky(0.5 * (M + M.T) - tol * np.eye(len(M)))
    except np.linalg.LinAlgError:
        return False
    return True


def tensor_spectral_bounds(ts: TensorSet, a: float | None = None):
    """``(mu_plus, mu_minus)``: extreme eigenvalues of the unit-size tensors.

    Tensors are divided by ``a^3`` (default ``ts.scale``); for conductors
    ``-P`` is used.  Identically zero tensors (no response) are skipped.
    """
    a = ts.scale if a is None else a
    mats = [-ts.first if ts.kind == "pec" else ts.first, ts.second]
    lo, hi = math.inf, -math.inf
    for group in mats:
        for m, M in enumerate(group):
            if not np.any(M):
                continue
            H = 0.5 * (M + M.conj().T).real / a**3
            ev = np.linalg.eigvalsh(0.5 * (H + H.T))
            if ts.kind == "pec" and ev.min() <= 0:
                raise TensorError(f"particle {m}: rescaled tensor is not positive definite")
            lo, hi = min(lo, ev.min()), max(hi, ev.max())
    if not math.isfinite(hi):
        return 0.0, 0.0
    return float(hi), float(lo)


def nonsym_modified_tensor(A, mean_contrast) -> np.ndarray:
    """``C A (C^T)^{-1}`` for the mean contrast ``C``."""
    A = np.asarray(A, dtype=complex)
    C = np.asarray(mean_contrast, dtype=complex)
    if C.ndim == 0:
        C = C * _I3
    if np.linalg.cond(C) > 1e12:
        raise TensorError("mean contrast is singular")
    return C @ A @ np.linalg.inv(C.T)


def richardson(values, hs):
    """Observed order and extrapolated limit from three refinements.

    ``values[i]`` is computed at mesh size ``hs[i]`` with a constant
    refinement ratio.  Works elementwise on arrays.
    """
    v0, v1, v2 = (np.asarray(v, dtype=complex) for v in values)
    ratio = hs[0] / hs[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.abs((v0 - v1) / (v1 - v2))
        p = np.log(q) / np.log(ratio)
        limit = v2 + (v2 - v1) / (ratio**p - 1)
    return p, limit


# ---------------------------------------------------------------------------
# cluster level
# ---------------------------------------------------------------------------


def tensor_set_for_cluster(cluster: Cluster, materials, h: float | None = None,
                           method: str = "auto", mesh_level: int = 3,
                           variant: str = "symmetric") -> TensorSet:
    """Tensors of every particle in ``cluster``.

    ``materials`` is one :class:`Material` or one per particle.  Penetrable
    particles get ``(A(eps_r^T), A(mu_r^T))``, the tensors that enter the
    coupled system; conductors get ``(P, T)``.  ``method`` is ``analytic``
    (balls and ellipsoids), ``numeric`` or ``auto``.  ``h`` is the relative
    cell size for the numeric route (cells of side ``h * a``).

    With ``variant="nonsymmetric"`` each penetrable tensor is replaced by
    ``C A (C^T)^{-1}`` with ``C`` the particle contrast; it coincides with
    the symmetric choice whenever the contrast is symmetric.
    """
    if variant not in ("symmetric", "nonsymmetric"):
        raise TensorError(f"unknown tensor variant {variant!r}")
    n = cluster.count
    mats = [materials] * n if isinstance(materials, Material) else list(materials)
    if len(mats) != n:
        raise TensorError(f"{len(mats)} materials for {n} particles")
    kinds = {m.kind for m in mats}
    if len(kinds) != 1:
        raise TensorError("mixed conductor / penetrable clusters are not supported")
    a = cluster.radius_a
    first, second, prov = [], [], set()
    cache: dict = {}
    for shape, mat in zip(cluster.shapes, mats):
        key = (id(shape), id(mat))
        if key not in cache:
            f, s, p = _particle_tensors(shape, mat, a, h, method, mesh_level)
            if variant == "nonsymmetric" and not mat.is_pec:
                f = _nonsym_or_zero(f, mat.eps_contrast)
                s = _nonsym_or_zero(s, mat.mu_contrast)
                p += ",nonsymmetric"
            cache[key] = f, s, p
        f, s, p = cache[key]
        first.append(f)
        second.append(s)
        prov.add(p)
    return TensorSet(np.array(first), np.array(second), mats[0].kind, "+".join(sorted(prov)), a)


def _nonsym_or_zero(A, contrast):
    if not np.any(contrast):
        return np.zeros((3, 3), dtype=complex)
    return nonsym_modified_tensor(A, contrast)


def _particle_tensors(shape, mat: Material, a, h, method, mesh_level):
    analytic_ok = isinstance(shape, (Ball, Ellipsoid))
    if mat.is_pec:
        if isinstance(shape, MeshShape):
            v, f = shape.vertices, shape.faces
        elif isinstance(shape, Ball):
            from .mesh import icosphere

            v, f = icosphere(mesh_level, shape.radius)
        elif isinstance(shape, Ellipsoid):
            from .mesh import ellipsoid_mesh

            v, f = ellipsoid_mesh(shape.semi_axes, mesh_level)
        else:
            raise TensorError("conductor tensors need a surface (ball, ellipsoid or mesh)")
        if method == "analytic" and isinstance(shape, Ball):
            r = a * shape.radius
            return -4 * np.pi * r**3 * _I3, 2 * np.pi * r**3 * _I3, "analytic"
        P, T = pec_tensors_numeric(v, f, center=np.zeros(3))
        return a**3 * P, a**3 * T, f"numeric(mesh level {mesh_level})"
    if method == "analytic" or (method == "auto" and analytic_ok):
        if not analytic_ok:
            raise TensorError("analytic tensors exist only for balls and ellipsoids")
        axes = (shape.radius,) * 3 if isinstance(shape, Ball) else shape.semi_axes
        axes = a * np.asarray(axes)
        fe = aniso_tensor_ellipsoid(mat.eps_r.T, axes)
        fm = aniso_tensor_ellipsoid(mat.mu_r.T, axes)
        return fe, fm, "analytic"
    if h is None:
        raise TensorError("numeric tensors need the resolution h")
    fe = aniso_tensor_numeric(shape, mat.eps_r.T, h, a)
    fm = aniso_tensor_numeric(shape, mat.mu_r.T, h, a) if np.any(mat.mu_contrast) else np.zeros((3, 3))
    return fe, fm, f"numeric(h={h:g}a)"
