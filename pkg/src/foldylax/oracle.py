"""Full-wave references: voxel volume-integral solver and sphere series.

The volume solver collocates the coupled Lippmann-Schwinger system

    E - (k^2 + grad div) S[chi_e E] - ik curl S[chi_m H] = E_in
    H + ik curl S[chi_e E] - (k^2 + grad div) S[chi_m H] = H_in

at the centres of cubic cells (``chi = B - I`` per cell).  Cell integrals
come from :func:`foldylax.voxel.dynamic_blocks`; on the regular lattice the
operators are applied by FFT and the system is solved with restarted GMRES
(restart 60, fixed), or densely for small problems.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import special
from scipy.sparse.linalg import LinearOperator, gmres

from .farfield import FarFieldPattern, SphereGrid, _directions, sphere_grid
from .geometry import Cluster
from .io import write_voxel_array
from .kernels import PlaneWave, cross_matrix, incident_fields
from .tensors import Material, TensorSet, static_tensor_on_cells
from .voxel import LatticeConvolution, Voxels, dynamic_blocks, voxelize

__all__ = [
    "OracleError",
    "VolumeDiscretization",
    "VolumeFields",
    "discretize",
    "ls_solve",
    "voxel_tensor_set",
    "sphere_series_far_field",
    "mie_coefficients",
    "write_voxel_fields",
]

RESTART = 60
DENSE_LIMIT = 3000  # unknowns


class OracleError(RuntimeError):
    """Invalid oracle input or a solve that failed to converge."""


@dataclass(frozen=True, eq=False)
class VolumeDiscretization:
    """Cells covering the cluster with per-cell contrasts ``chi = fill (B - I)``."""

    cluster: Cluster
    voxels: Voxels
    chi_e: np.ndarray
    chi_m: np.ndarray

    @property
    def h(self) -> float:
        return self.voxels.h

    @property
    def magnetic(self) -> bool:
        return bool(np.any(self.chi_m))

    @property
    def unknowns(self) -> int:
        return 3 * self.voxels.count * (2 if self.magnetic else 1)


@dataclass(frozen=True, eq=False)
class VolumeFields:
    """Total fields at the cell centres of a discretization."""

    discretization: VolumeDiscretization
    E: np.ndarray
    H: np.ndarray
    residual: float
    iterations: int = 0
    history: list = field(default_factory=list)
    method: str = "dense"

    @property
    def voxels(self) -> Voxels:
        return self.discretization.voxels

    @property
    def chi_e(self):
        return self.discretization.chi_e

    @property
    def chi_m(self):
        return self.discretization.chi_m


def _materials(materials, n):
    mats = [materials] * n if isinstance(materials, Material) else list(materials)
    if len(mats) != n:
        raise OracleError(f"{len(mats)} materials for {n} particles")
    for m, mat in enumerate(mats):
        if mat.is_pec:
            raise OracleError(f"particle {m}: the volume solver handles penetrable particles only")
    return mats


def discretize(cluster: Cluster, materials, h: float, origin=None) -> VolumeDiscretization:
    """Cells of side ``h`` (physical units, at most ``a/8``) over every particle."""
    if h > cluster.radius_a / 8 * (1 + 1e-12):
        raise OracleError(f"cell size {h:g} exceeds a/8 = {cluster.radius_a / 8:g}")
    mats = _materials(materials, cluster.count)
    vox = voxelize(cluster, h, origin=origin)
    eps = np.array([mats[o].eps_r for o in vox.owner], dtype=complex)
    mu = np.array([mats[o].mu_r for o in vox.owner], dtype=complex)
    f = vox.fill[:, None, None]
    eye = np.eye(3)
    return VolumeDiscretization(cluster, vox, f * (eps - eye), f * (mu - eye))


class _Operators:
    """Products with the cell-integrated ``(k^2 + grad div) S`` and ``curl S``."""

    def __init__(self, vox: Voxels, k: complex, dense: bool):
        self.dense = dense
        h = vox.h
        if dense:
            off = h * (vox.indices[:, None, :] - vox.indices[None, :, :]).astype(float)
            G, g = dynamic_blocks(off, h, k)
            n = vox.count
            self.G = G.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)
            self.C = cross_matrix(g).transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)
        else:
            cache = {}

            def blocks(d):
                key = d.shape
                if key not in cache:
                    cache[key] = dynamic_blocks(d, h, k)
                return cache[key]

            self.conv_G = LatticeConvolution(lambda d: blocks(d)[0], vox.indices, h)
            self.conv_C = LatticeConvolution(lambda d: cross_matrix(blocks(d)[1]), vox.indices, h)

    def G_apply(self, v):
        return (self.G @ v.ravel()).reshape(-1, 3) if self.dense else self.conv_G.apply(v)

    def C_apply(self, v):
        return (self.C @ v.ravel()).reshape(-1, 3) if self.dense else self.conv_C.apply(v)


def ls_solve(cluster: Cluster, materials, wave: PlaneWave, h: float, *, tol: float = 1e-9,
             method: str = "auto", maxiter: int = 100, origin=None) -> VolumeFields:
    """Total ``(E, H)`` at the cell centres.

    Parameters
    ----------
    materials : Material or sequence of Material
        One per particle or shared.
    h : float
        Physical cell size, ``h <= a/8``.
    tol : float
        Relative residual target of the iterative solve.
    method : {"auto", "dense", "iterative"}
    """
    disc = discretize(cluster, materials, h, origin)
    vox = disc.voxels
    n = vox.count
    k = wave.k
    e_in, h_in = incident_fields(wave, vox.centers)
    if not np.any(disc.chi_e) and not disc.magnetic:
        return VolumeFields(disc, e_in, h_in, 0.0, 0, [], "trivial")
    if method == "auto":
        method = "dense" if disc.unknowns <= DENSE_LIMIT else "iterative"
    if method not in ("dense", "iterative"):
        raise OracleError(f"unknown solve method {method!r}")
    ops = _Operators(vox, k, method == "dense")
    ce, cm = disc.chi_e, disc.chi_m
    mag = disc.magnetic

    def apply(x):
        X = x.reshape(-1, n, 3)
        E = X[0]
        uE = np.einsum("nab,nb->na", ce, E)
        outE = E - ops.G_apply(uE)
        if not mag:
            return outE.ravel()
        H = X[1]
        uH = np.einsum("nab,nb->na", cm, H)
        outE = outE - 1j * k * ops.C_apply(uH)
        outH = H + 1j * k * ops.C_apply(uE) - ops.G_apply(uH)
        return np.concatenate([outE.ravel(), outH.ravel()])

    rhs = np.concatenate([e_in.ravel(), h_in.ravel()]) if mag else e_in.ravel().astype(complex)
    size = len(rhs)
    hist: list = []
    if method == "dense":
        def times(K, chi):
            return np.einsum("iajb,jbc->iajc", K.reshape(n, 3, n, 3), chi).reshape(3 * n, 3 * n)

        Ge = times(ops.G, ce)
        if mag:
            M = np.block([[-Ge, -1j * k * times(ops.C, cm)], [1j * k * times(ops.C, ce), -times(ops.G, cm)]])
        else:
            M = -Ge
        M[np.diag_indices(size)] += 1.0
        x = sla.solve(M, rhs)
        its = 0
    else:
        op = LinearOperator((size, size), matvec=apply, dtype=complex)
        x, info = gmres(op, rhs, rtol=tol, atol=0.0, restart=RESTART, maxiter=maxiter,
                        callback=lambda r: hist.append(float(r)), callback_type="pr_norm")
        its = len(hist)
    res = float(np.linalg.norm(apply(x) - rhs) / np.linalg.norm(rhs))
    if res > max(10 * tol, 1e-12):
        raise OracleError(
            f"volume solve stopped at relative residual {res:.3g} after {its} iterations; "
            f"residual history tail {hist[-5:]}"
        )
    X = x.reshape(-1, n, 3)
    E = X[0]
    if mag:
        H = X[1]
    else:
        H = h_in - 1j * k * ops.C_apply(np.einsum("nab,nb->na", ce, E))
    return VolumeFields(disc, E, H, res, its, hist, method)


def voxel_tensor_set(disc: VolumeDiscretization, tol: float = 1e-10) -> TensorSet:
    """Static tensors of the voxelized particles, for like-for-like comparisons.

    The tensors enter the coupled system as ``A(B^T)``, i.e. they are built
    from the transposed per-cell contrasts.  Particles with identical cell
    patterns and contrasts share one computation.
    """
    vox = disc.voxels
    cluster = disc.cluster
    cache: dict = {}
    first, second = [], []
    for m in range(cluster.count):
        sel = vox.owner == m
        idx = vox.indices[sel] - vox.indices[sel].min(axis=0)
        pair = []
        for chi in (disc.chi_e[sel], disc.chi_m[sel]):
            chi_t = np.swapaxes(chi, 1, 2)
            key = (idx.tobytes(), np.ascontiguousarray(chi_t).tobytes())
            if key not in cache:
                cache[key] = static_tensor_on_cells(idx, vox.h, chi_t, tol=tol) if np.any(chi_t) else np.zeros((3, 3), complex)
            pair.append(cache[key])
        first.append(pair[0])
        second.append(pair[1])
    return TensorSet(np.array(first), np.array(second), "penetrable", f"voxel(h={vox.h:g})", cluster.radius_a)


def write_voxel_fields(path, fields: VolumeFields):
    """Dump ``E`` and ``H`` on the bounding lattice box (zero outside the cells).

    Array layout ``(nx, ny, nz, 2, 3)`` complex: slot 0 is ``E``, slot 1 ``H``.
    """
    vox = fields.voxels
    lo = vox.indices.min(axis=0)
    local = vox.indices - lo
    dims = tuple(int(d) for d in local.max(axis=0) + 1)
    arr = np.zeros(dims + (2, 3), dtype=np.complex128)
    ix, iy, iz = local.T
    arr[ix, iy, iz, 0] = fields.E
    arr[ix, iy, iz, 1] = fields.H
    origin = vox.origin + vox.h * lo
    write_voxel_array(path, arr, vox.h, origin, extra={"fields": ["E", "H"], "cells": int(vox.count)})


# ---------------------------------------------------------------------------
# sphere series
# ---------------------------------------------------------------------------


def _riccati(n, z):
    """``psi_n(z) = z j_n(z)`` and its derivative for complex or real ``z``."""
    j = special.spherical_jn(n, z)
    dj = special.spherical_jn(n, z, derivative=True)
    return z * j, j + z * dj


def mie_coefficients(x: float, eps=None, mu: float = 1.0, pec: bool = False, tol: float = 1e-12):
    """Electric ``a_n`` and magnetic ``b_n`` coefficients of a sphere with size parameter ``x``."""
    if x <= 0:
        raise OracleError("size parameter must be positive")
    n_max = int(math.ceil(x + 4 * x ** (1 / 3) + 2)) + 10
    n = np.arange(1, n_max + 1)
    psi, dpsi = _riccati(n, x)
    y = special.spherical_yn(n, x)
    dy = special.spherical_yn(n, x, derivative=True)
    jn = special.spherical_jn(n, x)
    h = jn + 1j * y
    xi, dxi = x * h, h + x * (special.spherical_jn(n, x, derivative=True) + 1j * dy)
    if pec:
        a = dpsi / dxi
        b = psi / xi
    else:
        m = np.sqrt(complex(eps) * mu)
        mx = m * x
        psi_m, dpsi_m = _riccati(n, mx)
        jm = psi_m / mx
        # Bohren-Huffman with unit background permeability
        a = (m * m * jm * dpsi - mu * jn * dpsi_m) / (m * m * jm * dxi - mu * h * dpsi_m)
        b = (mu * jm * dpsi - jn * dpsi_m) / (mu * jm * dxi - h * dpsi_m)
    mag = np.abs(a) + np.abs(b)
    keep = np.nonzero(mag >= tol * mag.max())[0]
    stop = keep.max() + 1 if len(keep) else 1
    return a[:stop], b[:stop]


def _angular(nmax, mu):
    """``pi_n`` and ``tau_n`` for ``n = 1..nmax`` at ``mu = cos(theta)``."""
    pi = np.zeros((nmax + 1,) + mu.shape)
    tau = np.zeros_like(pi)
    pi[1] = 1.0
    tau[1] = mu
    for n in range(2, nmax + 1):
        pi[n] = (2 * n - 1) / (n - 1) * mu * pi[n - 1] - n / (n - 1) * pi[n - 2]
        tau[n] = n * mu * pi[n] - (n + 1) * pi[n - 1]
    return pi[1:], tau[1:]


def _series_linear(a, b, k, d_local):
    """Far field for unit x-polarisation along +z, in local coordinates."""
    theta = np.arccos(np.clip(d_local[:, 2], -1.0, 1.0))
    phi = np.arctan2(d_local[:, 1], d_local[:, 0])
    n = np.arange(1, len(a) + 1)
    pi, tau = _angular(len(a), np.cos(theta))
    c = ((2 * n + 1) / (n * (n + 1)))[:, None]
    S1 = np.sum(c * (a[:, None] * pi + b[:, None] * tau), axis=0)
    S2 = np.sum(c * (a[:, None] * tau + b[:, None] * pi), axis=0)
    ct, st, cp, sp = np.cos(theta), np.sin(theta), np.cos(phi), np.sin(phi)
    e_theta = np.stack([ct * cp, ct * sp, -st], axis=1)
    e_phi = np.stack([-sp, cp, np.zeros_like(sp)], axis=1)
    return (1j / k) * ((cp * S2)[:, None] * e_theta - (sp * S1)[:, None] * e_phi)


def sphere_series_far_field(radius: float, material, wave: PlaneWave, grid=None, center=(0.0, 0.0, 0.0)) -> FarFieldPattern:
    """Classical vector spherical-wave far field of one isotropic or conducting sphere.

    ``material`` is a :class:`Material` (isotropic or ``Material.pec()``).
    Uses ``E_s ~ e^{ik|x|}/|x| E_inf`` with ``H_in = theta x E_in``.
    """
    if not material.is_pec and not material.is_isotropic():
        raise OracleError("the sphere series handles isotropic materials only")
    k = wave.k
    if abs(k.imag) > 0 or k.real <= 0:
        raise OracleError("the sphere series needs a real positive wavenumber")
    k = k.real
    grid = sphere_grid() if grid is None else grid
    d = _directions(grid)
    if material.is_pec:
        a, b = mie_coefficients(k * radius, pec=True)
    else:
        mu = material.mu_r[0, 0].real
        a, b = mie_coefficients(k * radius, material.eps_r[0, 0], mu)
    z = wave.direction
    P = wave.polarization
    helper = np.array([1.0, 0, 0]) if abs(z[0]) < 0.9 else np.array([0, 1.0, 0])
    u1 = np.cross(z, helper)
    u1 /= np.linalg.norm(u1)
    u2 = np.cross(z, u1)
    vals = np.zeros((len(d), 3), dtype=complex)
    for amp, ex, ey in ((P @ u1, u1, u2), (P @ u2, u2, -u1)):
        if amp == 0:
            continue
        frame = np.stack([ex, ey, z])  # rows: local axes in global coordinates
        loc = _series_linear(a, b, k, d @ frame.T)
        vals += amp * (loc @ frame)
    vals *= np.exp(-1j * k * (d @ np.asarray(center, dtype=float)))[:, None] * np.exp(1j * k * (z @ np.asarray(center, dtype=float)))
    w = grid.weights if isinstance(grid, SphereGrid) else None
    return FarFieldPattern(d, vals, complex(k), "analytic", w, {"terms": len(a)})
