"""Far-field patterns from point moments and from volume fields.

Scattered fields behave like ``E_s(x) ~ e^{ik|x|} / |x| * E_inf(x_hat)``.
A point electric moment ``R`` contributes ``(k^2/4pi) x_hat x (R x x_hat)``;
a magnetic moment ``Q`` contributes ``c_m x_hat x Q`` with
``c_m = -k^2/(4pi)`` by default (the coefficient produced by the
``ik curl S`` coupling used throughout this package).  ``c_m = ik/(4pi)``
is available with ``magnetic="alt"``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FarFieldError",
    "SphereGrid",
    "FarFieldPattern",
    "sphere_grid",
    "magnetic_coefficient",
    "dipole_far_field",
    "foldy_far_field",
    "volume_far_field",
    "pattern_distance",
    "write_pattern_csv",
    "read_pattern_csv",
]

SOURCES = ("foldy", "oracle", "analytic")


class FarFieldError(ValueError):
    """Mismatched grids or inputs."""


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Directions on the unit sphere with quadrature weights (sum ``4 pi``)."""

    directions: np.ndarray
    weights: np.ndarray
    theta: np.ndarray
    phi: np.ndarray

    def __len__(self):
        return len(self.directions)

    def __iter__(self):
        return iter((self.directions, self.weights))


def sphere_grid(n_theta: int = 16, n_phi: int = 32) -> SphereGrid:
    """Gauss-Legendre nodes in ``cos(theta)`` times uniform ``phi``."""
    if n_theta < 2 or n_phi < 4:
        raise FarFieldError(f"grid {n_theta}x{n_phi} too small (need n_theta >= 2, n_phi >= 4)")
    x, w = np.polynomial.legendre.leggauss(n_theta)
    theta = np.arccos(x[::-1])
    wt = w[::-1]
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(theta, phi, indexing="ij")
    d = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    weights = np.repeat(wt, n_phi) * (2 * np.pi / n_phi)
    return SphereGrid(d, weights, T.ravel(), P.ravel())


def _directions(grid):
    d = grid.directions if isinstance(grid, SphereGrid) else np.asarray(grid, dtype=float)
    d = np.atleast_2d(d)
    if d.shape[-1] != 3:
        raise FarFieldError("directions must be 3-vectors")
    if np.any(np.abs(np.linalg.norm(d, axis=1) - 1) > 1e-12):
        raise FarFieldError("directions must be unit vectors")
    return d


def _angles(d):
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi)
    return theta, phi


@dataclass(frozen=True, eq=False)
class FarFieldPattern:
    directions: np.ndarray
    values: np.ndarray
    k: complex
    source: str = "foldy"
    weights: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        if d.shape != v.shape or d.shape[-1] != 3:
            raise FarFieldError("directions and values must both have shape (n, 3)")
        if self.source not in SOURCES:
            raise FarFieldError(f"unknown pattern source {self.source!r}")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.directions)

    def transversality_error(self) -> float:
        """``max |x_hat . E_inf|`` relative to ``max |E_inf|``."""
        scale = np.abs(self.values).max()
        if scale == 0:
            return 0.0
        return float(np.abs(np.einsum("nd,nd->n", self.directions, self.values)).max() / scale)

    def norm(self) -> float:
        """L2 norm over the sphere (weighted when weights are known)."""
        sq = np.sum(np.abs(self.values) ** 2, axis=1)
        if self.weights is not None:
            return float(np.sqrt(sq @ self.weights))
        return float(np.sqrt(sq.sum()))

    def to_csv(self, path):
        write_pattern_csv(path, self)


def _project(d, v):
    """Remove the radial part; ``x_hat x (v x x_hat)``."""
    return v - d * np.einsum("nd,nd->n", d, v)[:, None]


def magnetic_coefficient(k, magnetic: str = "consistent") -> complex:
    k = complex(k)
    if magnetic == "consistent":
        return -k * k / (4 * np.pi)
    if magnetic == "alt":
        return 1j * k / (4 * np.pi)
    raise FarFieldError(f"unknown magnetic coefficient convention {magnetic!r}")


def dipole_far_field(R, Q, centers, k, grid, magnetic: str = "consistent") -> np.ndarray:
    """Raw far-field values of point moments ``R`` (electric) and ``Q`` (magnetic)."""
    d = _directions(grid)
    k = complex(k)
    R = np.atleast_2d(np.asarray(R, dtype=complex))
    Q = np.atleast_2d(np.asarray(Q, dtype=complex))
    phase = np.exp(-1j * k * (d @ np.atleast_2d(centers).T))  # (n_dir, n_part)
    sR = phase @ R
    sQ = phase @ Q
    return (k * k / (4 * np.pi)) * _project(d, sR) + magnetic_coefficient(k, magnetic) * np.cross(d, sQ)


def foldy_far_field(solution, cluster, k, grid=None, magnetic: str = "consistent") -> FarFieldPattern:
    """Far field of a Foldy solution.

    Solutions of the conductor ``proposition`` form use their own rule
    ``(ik/4pi) sum e^{-ik x.z} x x (Q1 - ik x x Q2)`` (``R = Q1``, ``Q = Q2``).
    """
    grid = sphere_grid() if grid is None else grid
    d = _directions(grid)
    k = complex(k)
    centers = cluster.centers
    if len(solution.R) != cluster.count:
        raise FarFieldError(f"solution has {len(solution.R)} particles, cluster has {cluster.count}")
    if getattr(solution, "form", "") == "proposition":
        phase = np.exp(-1j * k * (d @ centers.T))
        s1 = phase @ solution.R
        s2 = phase @ solution.Q
        inner = s1 - 1j * k * np.cross(d, s2)
        vals = (1j * k / (4 * np.pi)) * np.cross(d, inner)
        conv = "proposition"
    else:
        vals = dipole_far_field(solution.R, solution.Q, centers, k, d, magnetic)
        conv = magnetic
    w = grid.weights if isinstance(grid, SphereGrid) else None
    return FarFieldPattern(d, vals, k, "foldy", w, {"magnetic": conv})


def volume_far_field(fields, contrasts, cluster, k, grid=None, magnetic: str = "consistent") -> FarFieldPattern:
    """Far field of volume polarisation currents by voxel midpoint sums.

    ``fields`` carries ``voxels`` (with ``centers``, ``volumes``, ``owner``),
    ``E`` and ``H`` of shape ``(n_vox, 3)``.  ``contrasts`` is
    ``(chi_e, chi_m)`` per voxel, each ``(n_vox, 3, 3)`` (or a single
    ``3x3`` shared by all voxels); ``None`` takes them from ``fields``.
    """
    grid = sphere_grid() if grid is None else grid
    d = _directions(grid)
    vox = fields.voxels
    _check_voxels_match(vox, cluster)
    if contrasts is None:
        contrasts = (fields.chi_e, fields.chi_m)
    chi_e, chi_m = (np.broadcast_to(np.asarray(c, dtype=complex), (vox.count, 3, 3)) for c in contrasts)
    vol = vox.volumes()[:, None]
    pe = vol * np.einsum("nab,nb->na", chi_e, fields.E)
    pm = vol * np.einsum("nab,nb->na", chi_m, fields.H)
    vals = dipole_far_field(pe, pm, vox.centers, k, d, magnetic)
    w = grid.weights if isinstance(grid, SphereGrid) else None
    return FarFieldPattern(d, vals, complex(k), "oracle", w, {"magnetic": magnetic})


def _check_voxels_match(vox, cluster):
    owner = np.asarray(vox.owner)
    if owner.size == 0:
        return
    if owner.max() >= cluster.count:
        raise FarFieldError(f"voxels reference particle {owner.max()}, cluster has {cluster.count}")
    dist = np.linalg.norm(vox.centers - cluster.centers[owner], axis=1)
    reach = np.array([s.bounding_radius for s in cluster.shapes])[owner] * cluster.radius_a
    if np.any(dist > reach + np.sqrt(3) * vox.h):
        raise FarFieldError("voxel fields do not belong to this cluster")


def pattern_distance(p1: FarFieldPattern, p2: FarFieldPattern):
    """``(rel_l2, max_abs)`` of ``p1 - p2``, relative to ``p2``."""
    if p1.directions.shape != p2.directions.shape or not np.allclose(p1.directions, p2.directions, atol=1e-12):
        raise FarFieldError("patterns are sampled on different direction grids")
    diff = p1.values - p2.values
    num = np.linalg.norm(diff)
    den = np.linalg.norm(p2.values)
    if den == 0:
        rel = 0.0 if num == 0 else float("inf")
    else:
        rel = float(num / den)
    max_abs = float(np.linalg.norm(diff, axis=1).max()) if len(diff) else 0.0
    return rel, max_abs


_CSV_COLUMNS = ["theta", "phi", "reEx", "imEx", "reEy", "imEy", "reEz", "imEz"]


def write_pattern_csv(path, pattern: FarFieldPattern):
    theta, phi = _angles(pattern.directions)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_CSV_COLUMNS)
        for t, p, v in zip(theta, phi, pattern.values):
            w.writerow([repr(float(x)) for x in (t, p, v[0].real, v[0].imag, v[1].real, v[1].imag, v[2].real, v[2].imag)])


def read_pattern_csv(path, k=0.0, source: str = "foldy") -> FarFieldPattern:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != _CSV_COLUMNS:
        raise FarFieldError(f"unexpected CSV header {rows[0]}")
    a = np.array(rows[1:], dtype=float).reshape(-1, 8)
    t, p = a[:, 0], a[:, 1]
    d = np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=1)
    v = a[:, 2::2] + 1j * a[:, 3::2]
    return FarFieldPattern(d, v, complex(k), source)
