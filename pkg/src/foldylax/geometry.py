"""Particle clusters, inter-body distances and the counting-lemma bounds.

A particle is ``D_m = a * shape_m + z_m`` where ``shape_m`` is a reference
body contained in the ball of radius 1/2 around the origin and ``a`` is the
common (maximal) size parameter.  So a "ball" particle has physical radius
``a / 2``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

__all__ = [
    "Ball",
    "Ellipsoid",
    "VoxelShape",
    "MeshShape",
    "Cluster",
    "ClusterMetrics",
    "GeometryError",
    "build_grid_cluster",
    "random_cluster",
    "metrics",
    "counting_bound_check",
    "double_sum_bound_check",
]

_FIT_TOL = 1e-12


class GeometryError(ValueError):
    """Invalid or overlapping particle configuration."""


# ---------------------------------------------------------------------------
# reference shapes (unit scale, centred at the origin)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ball:
    radius: float = 0.5

    def __post_init__(self):
        if not 0 < self.radius <= 0.5 + _FIT_TOL:
            raise GeometryError(f"ball radius {self.radius} must lie in (0, 1/2]")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.einsum("...i,...i->...", pts, pts) <= self.radius**2

    def boundary_points(self, n: int = 400) -> np.ndarray:
        return self.radius * _fibonacci_sphere(n)

    @property
    def bounding_radius(self) -> float:
        return self.radius

    def to_dict(self) -> dict:
        return {"kind": "ball", "radius": self.radius}


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid with the given semi-axes."""

    semi_axes: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        ax = np.asarray(self.semi_axes, dtype=float)
        if ax.shape != (3,) or np.any(ax <= 0) or ax.max() > 0.5 + _FIT_TOL:
            raise GeometryError(f"semi-axes {self.semi_axes} must be positive and <= 1/2")
        object.__setattr__(self, "semi_axes", tuple(float(v) for v in ax))

    def contains(self, pts: np.ndarray) -> np.ndarray:
        q = pts / np.asarray(self.semi_axes)
        return np.einsum("...i,...i->...", q, q) <= 1.0

    def boundary_points(self, n: int = 400) -> np.ndarray:
        return _fibonacci_sphere(n) * np.asarray(self.semi_axes)

    @property
    def bounding_radius(self) -> float:
        return max(self.semi_axes)

    def to_dict(self) -> dict:
        return {"kind": "ellipsoid", "semi_axes": list(self.semi_axes)}


@dataclass(frozen=True, eq=False)
class VoxelShape:
    """Union of cubes of side ``h`` centred at ``origin + index * h``."""

    mask: np.ndarray
    h: float
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 3 or not mask.any():
            raise GeometryError("voxel mask must be a non-empty 3-D boolean array")
        if self.h <= 0:
            raise GeometryError("voxel size must be positive")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        corners = self.centers()[:, None, :] + 0.5 * self.h * _CUBE_CORNERS[None]
        if np.linalg.norm(corners, axis=-1).max() > 0.5 + 1e-9:
            raise GeometryError("voxel shape does not fit inside B(0, 1/2)")

    @classmethod
    def centered(cls, mask, h: float) -> "VoxelShape":
        mask = np.asarray(mask, dtype=bool)
        origin = -0.5 * h * (np.array(mask.shape) - 1)
        return cls(mask, h, tuple(origin))

    def centers(self) -> np.ndarray:
        idx = np.argwhere(self.mask)
        return np.asarray(self.origin) + idx * self.h

    def contains(self, pts: np.ndarray) -> np.ndarray:
        rel = (np.asarray(pts) - np.asarray(self.origin)) / self.h
        idx = np.floor(rel + 0.5).astype(int)
        inside = np.all((idx >= 0) & (idx < np.array(self.mask.shape)), axis=-1)
        out = np.zeros(inside.shape, dtype=bool)
        sel = idx[inside]
        out[inside] = self.mask[sel[:, 0], sel[:, 1], sel[:, 2]]
        return out

    def boundary_points(self, n: int = 400) -> np.ndarray:
        # corners of every voxel; exact enough for a set distance at one-voxel resolution
        pts = self.centers()[:, None, :] + 0.5 * self.h * _CUBE_CORNERS[None]
        return np.unique(pts.reshape(-1, 3).round(12), axis=0)

    @property
    def bounding_radius(self) -> float:
        corners = self.centers()[:, None, :] + 0.5 * self.h * _CUBE_CORNERS[None]
        return float(np.linalg.norm(corners, axis=-1).max())

    def to_dict(self) -> dict:
        return {
            "kind": "voxel",
            "dims": list(self.mask.shape),
            "h": self.h,
            "origin": list(self.origin),
            "indices": np.argwhere(self.mask).tolist(),
        }


@dataclass(frozen=True, eq=False)
class MeshShape:
    """Closed triangle surface (vertices in reference coordinates)."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=int)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise GeometryError("mesh needs (n, 3) vertices and (m, 3) faces")
        if np.linalg.norm(v, axis=1).max() > 0.5 + 1e-9:
            raise GeometryError("mesh does not fit inside B(0, 1/2)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        from .mesh import winding_number

        return winding_number(self.vertices, self.faces, np.atleast_2d(pts)) > 0.5

    def boundary_points(self, n: int = 400) -> np.ndarray:
        tri = self.vertices[self.faces]
        return np.vstack([self.vertices, tri.mean(axis=1)])

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.vertices, axis=1).max())

    def to_dict(self) -> dict:
        return {"kind": "mesh", "vertices": self.vertices.tolist(), "faces": self.faces.tolist()}


Shape = Ball | Ellipsoid | VoxelShape | MeshShape

_CUBE_CORNERS = np.array(
    [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float
)


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5**0.5) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def shape_from_dict(d: dict, base: Path | None = None) -> Shape:
    kind = d.get("kind", "ball")
    if kind == "ball":
        return Ball(float(d.get("radius", 0.5)))
    if kind == "ellipsoid":
        return Ellipsoid(tuple(d["semi_axes"]))
    if kind == "voxel":
        if "path" in d:
            from .io import read_voxel_mask

            p = Path(d["path"])
            mask, h, origin = read_voxel_mask(p if base is None or p.is_absolute() else base / p)
            return VoxelShape(mask, h, origin)
        mask = np.zeros(tuple(d["dims"]), dtype=bool)
        idx = np.asarray(d["indices"], dtype=int).reshape(-1, 3)
        mask[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        return VoxelShape(mask, float(d["h"]), tuple(d.get("origin", (0.0, 0.0, 0.0))))
    if kind == "mesh":
        if "path" in d:
            from .io import read_mesh

            p = Path(d["path"])
            v, f = read_mesh(p if base is None or p.is_absolute() else base / p)
            return MeshShape(v, f)
        return MeshShape(np.asarray(d["vertices"]), np.asarray(d["faces"]))
    raise GeometryError(f"unknown shape kind {kind!r}")


# ---------------------------------------------------------------------------
# clusters
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Cluster:
    """Particles ``a * shapes[m] + centers[m]``.

    Parameters
    ----------
    centers : (n, 3) array
    radius_a : float
        Common size parameter ``a``; every reference shape sits in B(0, 1/2).
    shapes : sequence of shapes, optional
        One per particle, or a single shape shared by all.  Defaults to balls
        of reference radius 1/2.
    """

    centers: np.ndarray
    radius_a: float
    shapes: tuple = field(default=None)

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if c.ndim != 2 or c.shape[1] != 3 or len(c) == 0:
            raise GeometryError("centers must be a non-empty (n, 3) array")
        if not np.all(np.isfinite(c)):
            raise GeometryError("centers must be finite")
        if not (self.radius_a > 0 and math.isfinite(self.radius_a)):
            raise GeometryError(f"radius_a must be positive, got {self.radius_a}")
        shapes = self.shapes
        if shapes is None:
            shapes = (Ball(),) * len(c)
        elif isinstance(shapes, (Ball, Ellipsoid, VoxelShape, MeshShape)):
            shapes = (shapes,) * len(c)
        shapes = tuple(shapes)
        if len(shapes) != len(c):
            raise GeometryError(f"{len(shapes)} shapes for {len(c)} particles")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "shapes", shapes)
        if len(c) > 1:
            d = _body_distances(self)
            np.fill_diagonal(d, np.inf)
            m, j = np.unravel_index(np.argmin(d), d.shape)
            if d[m, j] <= 0:
                raise GeometryError(
                    f"particles {m} and {j} overlap (body distance {d[m, j]:.3g})"
                )

    @property
    def count(self) -> int:
        return len(self.centers)

    def __len__(self) -> int:
        return self.count

    def translated(self, t) -> "Cluster":
        return Cluster(self.centers + np.asarray(t, dtype=float), self.radius_a, self.shapes)

    def scaled(self, factor: float) -> "Cluster":
        """Same reference shapes, size and positions multiplied by ``factor``."""
        return Cluster(self.centers * factor, self.radius_a * factor, self.shapes)

    def to_dict(self) -> dict:
        shapes = [s.to_dict() for s in self.shapes]
        if all(s == shapes[0] for s in shapes):
            shapes = shapes[:1]
        return {"centers": self.centers.tolist(), "radius_a": self.radius_a, "shapes": shapes}

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "Cluster":
        centers = np.asarray(d["centers"], dtype=float)
        raw = d.get("shapes") or [{"kind": "ball"}]
        shapes = [shape_from_dict(s, base) for s in raw]
        if len(shapes) == 1:
            shapes = shapes * len(centers)
        return cls(centers, float(d["radius_a"]), tuple(shapes))

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, src) -> "Cluster":
        """Load from a JSON string or a path to a JSON file."""
        p = Path(src) if not str(src).lstrip().startswith("{") else None
        if p is not None and p.exists():
            return cls.from_dict(json.loads(p.read_text()), p.parent)
        return cls.from_dict(json.loads(src))


@dataclass(frozen=True, eq=False)
class ClusterMetrics:
    d_min: float
    c_r: float
    distance_matrix: np.ndarray

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.d_min)


def _body_distances(cluster: Cluster) -> np.ndarray:
    c, a = cluster.centers, cluster.radius_a
    n = len(c)
    center_d = cdist(c, c)
    if all(isinstance(s, Ball) for s in cluster.shapes):
        r = a * np.array([s.radius for s in cluster.shapes])
        d = center_d - r[:, None] - r[None, :]
        np.fill_diagonal(d, 0.0)
        return d
    # sampled boundaries; only pairs whose bounding balls could be closest matter
    pts = [a * s.boundary_points() + z for s, z in zip(cluster.shapes, c)]
    trees = [cKDTree(p) for p in pts]
    rad = a * np.array([s.bounding_radius for s in cluster.shapes])
    d = np.zeros((n, n))
    for m in range(n):
        for j in range(m + 1, n):
            lower = center_d[m, j] - rad[m] - rad[j]
            if lower > 0 and isinstance(cluster.shapes[m], Ball) and isinstance(cluster.shapes[j], Ball):
                d[m, j] = lower
            else:
                dist, _ = trees[j].query(pts[m], k=1)
                inside = cluster.shapes[j].contains((pts[m] - c[j]) / a)
                d[m, j] = -1.0 if np.any(inside) else float(dist.min())
            d[j, m] = d[m, j]
    return d


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_grid_cluster(spacing: float, counts_per_axis, radius_a: float, origin=(0.0, 0.0, 0.0), shape=None) -> Cluster:
    """Axis-aligned lattice of particles (balls by default)."""
    counts = tuple(int(c) for c in counts_per_axis)
    if len(counts) != 3 or min(counts) < 1:
        raise GeometryError(f"counts_per_axis must be three integers >= 1, got {counts_per_axis}")
    if spacing <= radius_a and np.prod(counts) > 1:
        raise GeometryError(
            f"spacing {spacing} <= radius_a {radius_a}: neighbouring particles overlap"
        )
    axes = [np.arange(n) * spacing for n in counts]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return Cluster(g + np.asarray(origin, dtype=float), radius_a, shape)


def random_cluster(n: int, radius_a: float, box: float, min_gap: float = 0.0, seed=None, max_attempts: int = 100_000) -> Cluster:
    """Ball centres drawn uniformly in ``[0, box]^3`` by rejection sampling.

    ``min_gap`` is the minimal body distance accepted between two balls.
    """
    rng = np.random.default_rng(seed)
    sep = radius_a + max(min_gap, 0.0)
    pts: list[np.ndarray] = []
    attempts = 0
    while len(pts) < n:
        attempts += 1
        if attempts > max_attempts:
            raise GeometryError(
                f"could only place {len(pts)} of {n} particles in {max_attempts} attempts"
            )
        p = rng.uniform(0, box, 3)
        if pts and np.min(np.linalg.norm(np.asarray(pts) - p, axis=1)) <= sep:
            continue
        pts.append(p)
    return Cluster(np.asarray(pts), radius_a)


# ---------------------------------------------------------------------------
# metrics and counting lemma
# ---------------------------------------------------------------------------


def metrics(cluster: Cluster) -> ClusterMetrics:
    """Pairwise body distances, minimal distance and dilution parameter.

    For a single particle the minimal distance is undefined and reported as
    ``inf`` (so is ``c_r``).
    """
    d = _body_distances(cluster)
    if cluster.count < 2:
        return ClusterMetrics(math.inf, math.inf, d)
    off = d[~np.eye(cluster.count, dtype=bool)]
    d_min = float(off.min())
    return ClusterMetrics(d_min, d_min / cluster.radius_a, d)


@lru_cache(maxsize=8)
def _lattice_shell_counts(n_max: int) -> np.ndarray:
    """counts[s] = #{(l, k, i): 1 <= l <= n_max, 0 <= i <= k <= l, l^2+k^2+i^2 = s}."""
    counts = np.zeros(3 * n_max * n_max + 1, dtype=np.int64)
    for l in range(1, n_max + 1):
        k, i = np.tril_indices(l + 1)
        np.add.at(counts, l * l + k * k + i * i, 1)
    return counts


def _check_nonneg(values: np.ndarray, what: str):
    if np.any(~np.isfinite(values)) or np.any(values < 0):
        raise GeometryError(f"{what} must be finite and non-negative at every evaluated point")


def counting_bound_check(cluster: Cluster, g: Callable[[np.ndarray], np.ndarray]):
    """Evaluate both sides of the lattice counting bound.

    ``lhs = max_m sum_{j != m} g(d_mj)`` and
    ``rhs = 48 sum_{1<=l<=N, 0<=i<=k<=l} g([sqrt(l^2+k^2+i^2)(c_r+1) - 1] a)``.

    Returns ``(lhs, rhs, lhs <= rhs)``.
    """
    if cluster.count < 2:
        raise GeometryError("counting bound needs at least two particles")
    met = metrics(cluster)
    d = met.distance_matrix
    off = ~np.eye(cluster.count, dtype=bool)
    gd = np.where(off, np.asarray(g(np.where(off, d, 1.0)), dtype=float), 0.0)
    _check_nonneg(gd[off], "g")
    lhs = float(gd.sum(axis=1).max())

    counts = _lattice_shell_counts(cluster.count)
    s = np.nonzero(counts)[0]
    args = (np.sqrt(s) * (met.c_r + 1.0) - 1.0) * cluster.radius_a
    gv = np.asarray(g(args), dtype=float)
    _check_nonneg(gv, "g")
    rhs = float(48.0 * np.dot(counts[s], gv))
    return lhs, rhs, lhs <= rhs


def double_sum_bound_check(cluster: Cluster, alpha, q: float, c0: float = 48.0):
    """Evaluate both sides of the weighted double-sum bound.

    ``lhs = sum_m (sum_{j != m} alpha_j / d_mj^q)^2`` and
    ``rhs = (c0 / delta^q * sum_{l=1}^{N^(1/3)} l^(2-q))^2 * sum_m alpha_m^2``.
    """
    if q <= 0:
        raise GeometryError(f"exponent q must be positive, got {q}")
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (cluster.count,):
        raise GeometryError(f"alpha must have length {cluster.count}")
    if np.any(alpha < 0):
        raise GeometryError("alpha must be non-negative")
    if cluster.count < 2:
        return 0.0, 0.0, True
    met = metrics(cluster)
    d = met.distance_matrix.copy()
    np.fill_diagonal(d, np.inf)
    inner = (alpha[None, :] / d**q).sum(axis=1)
    lhs = float(np.sum(inner**2))
    l_max = max(1, int(math.floor(cluster.count ** (1.0 / 3.0) + 1e-9)))
    l = np.arange(1, l_max + 1, dtype=float)
    rhs = float((c0 / met.d_min**q * np.sum(l ** (2.0 - q))) ** 2 * np.sum(alpha**2))
    return lhs, rhs, lhs <= rhs
