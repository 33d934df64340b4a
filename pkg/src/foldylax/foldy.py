"""Coupled point-interaction (Foldy-Lax) systems for small-particle clusters.

Per particle ``m`` the unknowns are a magnetic moment ``Q_m`` and an
electric moment ``R_m``.  In inverse-tensor form the system reads

    A_mu_m^{-1} Q_m  - sum_j [Pi(z_m, z_j) Q_j - ik grad Phi(z_m, z_j) x R_j] = H_in(z_m)
    A_eps_m^{-1} R_m - sum_j [Pi(z_m, z_j) R_j + ik grad Phi(z_m, z_j) x Q_j] = E_in(z_m)

with the ordering ``[Q_1, R_1, Q_2, R_2, ...]``.  Solves use the equivalent
polarizability form ``X - A C X = A b``, which stays well defined when a
particle has no magnetic (or electric) response.

Conductor variants (``pec_form``):

``consistent`` (default)
    diagonal tensors ``-T`` and ``-P``: the limit of the penetrable system
    for infinite permittivity and vanishing permeability.
``theorem``
    diagonal tensors ``T`` and ``P`` with the coupling above.
``proposition``
    ``Q2 = -P [sum (Pi Q2 - k^2 grad Phi x Q1) + curl E_in]`` and
    ``Q1 = T [sum (-grad Phi x Q2 + Pi Q1) - E_in]``, whose far field is
    ``(ik/4pi) sum e^{-ik x.z} x x (Q1 - ik x x Q2)``.  Stored with
    ``Q = Q2`` and ``R = Q1``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack
from scipy.sparse.linalg import LinearOperator, gmres

from .geometry import Cluster, metrics
from .io import complex_from_json, complex_to_json
from .kernels import PlaneWave, cross_matrix, dyadic_pi, grad_phi, incident_fields
from .tensors import TensorSet, tensor_spectral_bounds

__all__ = [
    "FoldyError",
    "DilutionWarning",
    "FoldyProblem",
    "FoldySolution",
    "assemble",
    "solve",
    "solution_norm_check",
    "coupling_kernels",
]

VARIANTS = ("aniso_symmetric", "aniso_nonsymmetric", "pec")
PEC_FORMS = ("consistent", "theorem", "proposition")
DENSE_LIMIT = 6000


class FoldyError(ValueError):
    """Invalid problem or numerically singular system."""


class DilutionWarning(UserWarning):
    """The cluster is denser than the sufficient invertibility threshold."""


@dataclass(frozen=True, eq=False)
class FoldyProblem:
    """Cluster, per-particle tensors, incident wave and system variant.

    Parameters
    ----------
    cluster : Cluster
    tensors : TensorSet
        One entry per particle, or a single entry shared by all.
    wave : PlaneWave
    variant : {"aniso_symmetric", "aniso_nonsymmetric", "pec"}
        For the penetrable variants the tensors are used as given; build
        them with :func:`foldylax.tensors.tensor_set_for_cluster`.
    pec_form : {"consistent", "theorem", "proposition"}
    alt_incident_h : bool
        Use ``H_in = (P x theta) e^{ik theta.x} / (ik)`` instead of
        ``(theta x P) e^{ik theta.x}``.
    """

    cluster: Cluster
    tensors: TensorSet
    wave: PlaneWave
    variant: str = "aniso_symmetric"
    pec_form: str = "consistent"
    alt_incident_h: bool = False
    warn: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise FoldyError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.pec_form not in PEC_FORMS:
            raise FoldyError(f"unknown conductor form {self.pec_form!r}; choose from {PEC_FORMS}")
        if (self.variant == "pec") != (self.tensors.kind == "pec"):
            raise FoldyError(f"variant {self.variant!r} incompatible with {self.tensors.kind} tensors")
        object.__setattr__(self, "tensors", self.tensors.broadcast(self.cluster.count))
        if self.warn and not self.condition()["satisfied"]:
            c = self.condition()
            warnings.warn(
                f"c_r = {c['c_r']:.4g} is below 3|k|mu+ = {c['threshold']:.4g}; "
                "the coupled system may be ill-conditioned",
                DilutionWarning,
                stacklevel=2,
            )

    @property
    def k(self) -> complex:
        return self.wave.k

    @property
    def form(self) -> str:
        return self.pec_form if self.variant == "pec" else "penetrable"

    def spectral_bounds(self):
        return tensor_spectral_bounds(self.tensors, self.cluster.radius_a)

    def condition(self) -> dict:
        """Dilution condition ``c_r >= 3 |k| mu+``."""
        mu_plus, mu_minus = self.spectral_bounds()
        c_r = metrics(self.cluster).c_r
        thr = 3 * abs(self.k) * mu_plus
        return {
            "c_r": c_r,
            "mu_plus": mu_plus,
            "mu_minus": mu_minus,
            "threshold": thr,
            "satisfied": bool(c_r >= thr),
        }

    def polarizabilities(self):
        """Per-particle ``(alpha_Q, alpha_R)`` with ``Q = alpha_Q (H + ...)``."""
        t = self.tensors
        if self.variant != "pec":
            return t.A_mu, t.A_eps
        if self.pec_form == "consistent":
            return -t.T, -t.P
        if self.pec_form == "theorem":
            return t.T, t.P
        return -t.P, t.T  # proposition: (Q2, Q1)

    def incident(self):
        """Right-hand sides ``(H_in(z_m), E_in(z_m))``; proposition form uses ``(curl E_in, -E_in)``."""
        e, h = incident_fields(self.wave, self.cluster.centers, paper_convention=self.alt_incident_h)
        if self.form == "proposition":
            # curl E_in = ik theta x E_in for a plane wave
            curl_e = 1j * self.k * np.cross(self.wave.direction, e)
            return curl_e, -e
        return h, e


@dataclass(frozen=True, eq=False)
class FoldySolution:
    R: np.ndarray
    Q: np.ndarray
    residual: float
    condition_estimate: float
    form: str = "penetrable"
    method: str = "dense"
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "form": self.form,
            "method": self.method,
            "residual": self.residual,
            "condition_estimate": self.condition_estimate,
            "iterations": self.iterations,
            "particles": [
                {"R": complex_to_json(r), "Q": complex_to_json(q)} for r, q in zip(self.R, self.Q)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldySolution":
        R = np.array([complex_from_json(p["R"]) for p in d["particles"]]).reshape(-1, 3)
        Q = np.array([complex_from_json(p["Q"]) for p in d["particles"]]).reshape(-1, 3)
        return cls(R, Q, float(d["residual"]), float(d["condition_estimate"]),
                   d.get("form", "penetrable"), d.get("method", "dense"), int(d.get("iterations", 0)))

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text


# ---------------------------------------------------------------------------
# coupling
# ---------------------------------------------------------------------------


def coupling_kernels(k, centers, rows=None):
    """``Pi(z_m, z_j)`` and ``[grad Phi(z_m, z_j)]_x`` for ``m`` in ``rows``, zero on the diagonal."""
    centers = np.asarray(centers, dtype=float)
    rows = np.arange(len(centers)) if rows is None else np.asarray(rows)
    x = centers[rows][:, None, :]
    y = centers[None, :, :]
    same = rows[:, None] == np.arange(len(centers))[None, :]
    # shift coincident pairs to a dummy separation, then zero them
    yy = np.where(same[..., None], x + 1.0, y)
    Pi = dyadic_pi(k, x, yy)
    G = cross_matrix(grad_phi(k, x, yy))
    Pi[same] = 0
    G[same] = 0
    return Pi, G


def _coupling_matrix_rows(problem: FoldyProblem, rows):
    """Coupling ``C`` (so that the system is ``D X - C X = b``) for particle ``rows``.

    Shape ``(len(rows), 2, 3, n, 2, 3)`` with slot 0 = Q and slot 1 = R.
    """
    k = problem.k
    n = problem.cluster.count
    Pi, G = coupling_kernels(k, problem.cluster.centers, rows)
    C = np.zeros((len(rows), 2, 3, n, 2, 3), dtype=complex)
    Pi_t = Pi.transpose(0, 2, 1, 3)  # (r, a, j, b)
    G_t = G.transpose(0, 2, 1, 3)
    if problem.form == "proposition":
        # slot 0 = Q2 row:  Pi Q2 - k^2 gradPhi x Q1
        C[:, 0, :, :, 0, :] = Pi_t
        C[:, 0, :, :, 1, :] = -k * k * G_t
        # slot 1 = Q1 row: -gradPhi x Q2 + Pi Q1
        C[:, 1, :, :, 0, :] = -G_t
        C[:, 1, :, :, 1, :] = Pi_t
    else:
        C[:, 0, :, :, 0, :] = Pi_t
        C[:, 0, :, :, 1, :] = -1j * k * G_t
        C[:, 1, :, :, 0, :] = 1j * k * G_t
        C[:, 1, :, :, 1, :] = Pi_t
    return C


def _diag_inverse_blocks(problem: FoldyProblem):
    aq, ar = problem.polarizabilities()
    blocks = []
    for m, (q, r) in enumerate(zip(aq, ar)):
        pair = []
        for name, t in (("magnetic", q), ("electric", r)):
            s = np.linalg.svd(t, compute_uv=False)
            if s[0] == 0 or s[-1] < 1e-13 * s[0]:
                raise FoldyError(f"particle {m}: {name} tensor is singular and has no inverse")
            pair.append(np.linalg.inv(t))
        blocks.append(pair)
    return blocks


def assemble(problem: FoldyProblem):
    """Inverse-tensor system matrix ``(6n, 6n)`` and right-hand side ``(6n,)``.

    Ordering per particle: the three ``Q`` rows, then the three ``R`` rows.
    """
    n = problem.cluster.count
    blocks = _diag_inverse_blocks(problem)
    C = _coupling_matrix_rows(problem, np.arange(n)).reshape(6 * n, 6 * n)
    M = -C
    for m, (dq, dr) in enumerate(blocks):
        s = 6 * m
        M[s:s + 3, s:s + 3] += dq
        M[s + 3:s + 6, s + 3:s + 6] += dr
    hq, er = problem.incident()
    rhs = np.concatenate([hq, er], axis=1).reshape(-1)
    return M, rhs


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def _active_slots(problem: FoldyProblem):
    aq, ar = problem.polarizabilities()
    slots = [s for s, t in ((0, aq), (1, ar)) if np.any(t)]
    return slots


def _pol_system(problem: FoldyProblem, slots):
    """Dense polarizability-form matrix ``I - A C`` and rhs ``A b`` restricted to ``slots``."""
    n = problem.cluster.count
    aq, ar = problem.polarizabilities()
    A = np.stack([aq, ar], axis=1)[:, slots]  # (n, s, 3, 3)
    C = _coupling_matrix_rows(problem, np.arange(n))[:, slots][:, :, :, :, slots]
    AC = np.einsum("msab,msbjtc->msajtc", A, C)
    ns = len(slots)
    size = n * ns * 3
    M = np.eye(size, dtype=complex) - AC.reshape(size, size)
    hq, er = problem.incident()
    b = np.stack([hq, er], axis=1)[:, slots]
    rhs = np.einsum("msab,msb->msa", A, b).reshape(-1)
    return M, rhs


def _cond_estimate(M, lu_piv):
    anorm = np.linalg.norm(M, 1)
    lu, piv = lu_piv
    rcond, info = lapack.zgecon(lu, anorm, norm="1")
    return math.inf if rcond == 0 else float(1.0 / rcond)


def solve(problem: FoldyProblem, method: str = "auto", tol: float = 1e-12) -> FoldySolution:
    """Solve the coupled system.

    Particles with an identically zero tensor of one kind drop the matching
    unknowns (their moments are zero).  ``method`` is ``dense``,
    ``iterative`` or ``auto`` (dense up to 6000 unknowns).
    """
    n = problem.cluster.count
    slots = _active_slots(problem)
    R = np.zeros((n, 3), dtype=complex)
    Q = np.zeros((n, 3), dtype=complex)
    if not slots:
        return FoldySolution(R, Q, 0.0, 1.0, problem.form, "trivial")
    size = 3 * n * len(slots)
    if method == "auto":
        method = "dense" if size <= DENSE_LIMIT else "iterative"
    if method == "dense":
        M, rhs = _pol_system(problem, slots)
        lu_piv = sla.lu_factor(M, check_finite=False)
        cond = _cond_estimate(M, lu_piv)
        if not math.isfinite(cond) or cond > 1e14:
            raise FoldyError(f"coupled system is numerically singular (condition estimate {cond:.3g})")
        X = sla.lu_solve(lu_piv, rhs)
        bn = np.linalg.norm(rhs)
        res = float(np.linalg.norm(M @ X - rhs) / bn) if bn > 0 else 0.0
        its = 0
    elif method == "iterative":
        X, res, cond, its = _solve_iterative(problem, slots, tol)
    else:
        raise FoldyError(f"unknown solve method {method!r}")
    X = X.reshape(n, len(slots), 3)
    for i, s in enumerate(slots):
        (Q if s == 0 else R)[:] = X[:, i]
    return FoldySolution(R, Q, res, cond, problem.form, method, its)


def _solve_iterative(problem: FoldyProblem, slots, tol):
    n = problem.cluster.count
    aq, ar = problem.polarizabilities()
    A = np.stack([aq, ar], axis=1)[:, slots]
    ns = len(slots)
    size = 3 * n * ns
    chunk = max(1, int(4e6 // (n * 36)))

    def matvec(x):
        X = x.reshape(n, ns, 3)
        out = np.empty_like(X)
        for s in range(0, n, chunk):
            rows = np.arange(s, min(n, s + chunk))
            C = _coupling_matrix_rows(problem, rows)[:, slots][:, :, :, :, slots]
            CX = np.einsum("msajtb,jtb->msa", C, X)
            out[rows] = X[rows] - np.einsum("msab,msb->msa", A[rows], CX)
        return out.ravel()

    hq, er = problem.incident()
    b = np.stack([hq, er], axis=1)[:, slots]
    rhs = np.einsum("msab,msb->msa", A, b).ravel()
    op = LinearOperator((size, size), matvec=matvec, dtype=complex)
    hist = []
    x, info = gmres(op, rhs, rtol=tol, atol=0.0, restart=100, maxiter=50,
                    callback=lambda r: hist.append(float(r)), callback_type="pr_norm")
    bn = np.linalg.norm(rhs)
    res = float(np.linalg.norm(matvec(x) - rhs) / bn) if bn > 0 else 0.0
    if info != 0 and res > 100 * tol:
        raise FoldyError(f"iterative solve stalled at relative residual {res:.3g}")
    return x, res, math.nan, len(hist)


# ---------------------------------------------------------------------------
# a-priori bounds
# ---------------------------------------------------------------------------


def solution_norm_check(problem: FoldyProblem, solution: FoldySolution) -> dict:
    """Compare moment norms with ``(9 mu+ a^3 / 8)`` times the incident norms.

    Requires ``|k| > 1`` and ``c_r >= 3 |k| mu+``; otherwise the check is
    skipped and the reason returned.
    """
    cond = problem.condition()
    out = {"checked": False, "reason": None, **cond}
    if problem.form == "proposition":
        out["reason"] = "bounds are stated for the penetrable and theorem/consistent forms only"
        return out
    if not abs(problem.k) > 1:
        out["reason"] = f"|k| = {abs(problem.k):.4g} is not > 1"
        return out
    if not cond["satisfied"]:
        out["reason"] = f"c_r = {cond['c_r']:.4g} < 3|k|mu+ = {cond['threshold']:.4g}"
        return out
    e, h = incident_fields(problem.wave, problem.cluster.centers, paper_convention=problem.alt_incident_h)
    nh, ne = np.linalg.norm(h), np.linalg.norm(e)
    c = 9 * cond["mu_plus"] * problem.cluster.radius_a**3 / 8
    q_l, r_l = float(np.linalg.norm(solution.Q)), float(np.linalg.norm(solution.R))
    q_r, r_r = c * (nh + ne / 3), c * (nh / 3 + ne)
    out.update(
        checked=True,
        Q_lhs=q_l, Q_rhs=q_r, Q_holds=bool(q_l <= q_r),
        R_lhs=r_l, R_rhs=r_r, R_holds=bool(r_l <= r_r),
    )
    out["holds"] = out["Q_holds"] and out["R_holds"]
    return out
