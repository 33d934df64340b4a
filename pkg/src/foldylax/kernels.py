"""Helmholtz kernels, the dyadic Green function and plane-wave incidence.

All kernels are vectorised over leading axes: ``x`` and ``y`` may be arrays
of shape ``(..., 3)`` that broadcast against each other.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelDomainError",
    "WaveNumber",
    "PlaneWave",
    "phi",
    "grad_phi",
    "dyadic_pi",
    "hessian_phi",
    "cross_matrix",
    "incident_fields",
    "expansion_remainders",
]

_TOL = 1e-12


class KernelDomainError(ValueError):
    """Kernel evaluated on its singular set or on an invalid input."""


@dataclass(frozen=True)
class WaveNumber:
    k: complex

    def __post_init__(self):
        k = complex(self.k)
        if not (np.isfinite(k.real) and np.isfinite(k.imag)):
            raise KernelDomainError("wavenumber must be finite")
        if k.real < 0 or k.imag < 0:
            raise KernelDomainError(f"wavenumber {k} needs Re(k) >= 0 and Im(k) >= 0")
        object.__setattr__(self, "k", k)

    @property
    def re_nonneg(self) -> bool:
        return self.k.real >= 0

    @property
    def im_nonneg(self) -> bool:
        return self.k.imag >= 0

    def __complex__(self) -> complex:
        return self.k

    def __abs__(self) -> float:
        return abs(self.k)


def _k(k) -> complex:
    return k.k if isinstance(k, WaveNumber) else complex(k)


@dataclass(frozen=True, eq=False)
class PlaneWave:
    """Incident plane wave ``E = P exp(i k theta.x)``."""

    direction: np.ndarray
    polarization: np.ndarray
    wavenumber: WaveNumber

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float).reshape(3)
        p = np.asarray(self.polarization, dtype=complex).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > _TOL:
            raise KernelDomainError(f"direction must be a unit vector, |theta| = {np.linalg.norm(d)}")
        if abs(p @ d) > _TOL:
            raise KernelDomainError(f"polarization not transverse: P.theta = {p @ d}")
        wn = self.wavenumber if isinstance(self.wavenumber, WaveNumber) else WaveNumber(self.wavenumber)
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "polarization", p)
        object.__setattr__(self, "wavenumber", wn)

    @property
    def k(self) -> complex:
        return self.wavenumber.k

    def scaled(self, factor: complex) -> "PlaneWave":
        return PlaneWave(self.direction, factor * self.polarization, self.wavenumber)


def _sep(x, y):
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0):
        raise KernelDomainError("kernel evaluated at x = y")
    return d, r


def phi(k, x, y):
    """``exp(ik|x-y|) / (4 pi |x-y|)``."""
    k = _k(k)
    _, r = _sep(x, y)
    out = np.exp(1j * k * r) / (4 * np.pi * r)
    return out[()] if out.ndim == 0 else out


def grad_phi(k, x, y):
    """Gradient of :func:`phi` with respect to ``x``."""
    k = _k(k)
    d, r = _sep(x, y)
    ph = np.exp(1j * k * r) / (4 * np.pi * r)
    return ((1j * k - 1 / r) * ph / r)[..., None] * d


def hessian_phi(k, x, y):
    """``grad_x grad_x phi``."""
    k = _k(k)
    d, r = _sep(x, y)
    ph = np.exp(1j * k * r) / (4 * np.pi * r)
    rr = d[..., :, None] * d[..., None, :] / (r**2)[..., None, None]
    a = ph * (1j * k / r - 1 / r**2)
    b = ph * (-k * k - 3j * k / r + 3 / r**2)
    return a[..., None, None] * np.eye(3) + b[..., None, None] * rr


def dyadic_pi(k, x, y):
    """Dyadic Green function ``k^2 phi I + grad grad phi``."""
    k = _k(k)
    d, r = _sep(x, y)
    ph = np.exp(1j * k * r) / (4 * np.pi * r)
    rr = d[..., :, None] * d[..., None, :] / (r**2)[..., None, None]
    a = ph * (k * k + 1j * k / r - 1 / r**2)
    b = ph * (-k * k - 3j * k / r + 3 / r**2)
    return a[..., None, None] * np.eye(3) + b[..., None, None] * rr


def cross_matrix(v):
    """Matrix ``[v]_x`` with ``[v]_x w = v x w``; vectorised over leading axes."""
    v = np.asarray(v)
    z = np.zeros(v.shape[:-1], dtype=v.dtype)
    return np.stack(
        [
            np.stack([z, -v[..., 2], v[..., 1]], axis=-1),
            np.stack([v[..., 2], z, -v[..., 0]], axis=-1),
            np.stack([-v[..., 1], v[..., 0], z], axis=-1),
        ],
        axis=-2,
    )


def incident_fields(wave: PlaneWave, x, paper_convention: bool = False):
    """Incident ``(E, H)`` at points ``x``.

    By default ``H = (theta x P) exp(ik theta.x)``, which satisfies
    ``curl E = ik H`` and ``curl H = -ik E``.  With ``paper_convention=True``
    the alternative normalisation ``H = (P x theta) exp(ik theta.x) / (ik)``
    is returned instead (kept only for comparison runs).
    """
    x = np.asarray(x, dtype=float)
    phase = np.exp(1j * wave.k * (x @ wave.direction))[..., None]
    e = phase * wave.polarization
    if paper_convention:
        if wave.k == 0:
            raise KernelDomainError("alternative H normalisation undefined at k = 0")
        h = phase * np.cross(wave.polarization, wave.direction) / (1j * wave.k)
    else:
        h = phase * np.cross(wave.direction, wave.polarization)
    return e, h


def expansion_remainders(k, z_m, x, y):
    """Remainders of replacing ``x`` by the centre ``z_m`` in the kernel.

    Returns ``(|phi(x,y) - phi(z,y)|, |grad(...)|, |grad grad(...)|)`` with
    matrix norms in the Frobenius sense.
    """
    z_m, x, y = (np.asarray(v, dtype=float) for v in (z_m, x, y))
    if np.linalg.norm(y - z_m) < 2 * np.linalg.norm(x - z_m):
        raise KernelDomainError("y must satisfy |y - z_m| >= 2 |x - z_m|")
    if np.array_equal(x, z_m):
        return 0.0, 0.0, 0.0
    r0 = abs(phi(k, x, y) - phi(k, z_m, y))
    r1 = float(np.linalg.norm(grad_phi(k, x, y) - grad_phi(k, z_m, y)))
    r2 = float(np.linalg.norm(hessian_phi(k, x, y) - hessian_phi(k, z_m, y)))
    return float(r0), r1, r2
