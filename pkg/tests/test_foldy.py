import json
import warnings

import numpy as np
import pytest

from foldylax.farfield import foldy_far_field
from foldylax.foldy import (
    DilutionWarning,
    FoldyError,
    FoldyProblem,
    FoldySolution,
    assemble,
    solution_norm_check,
    solve,
)
from foldylax.geometry import Cluster, build_grid_cluster, random_cluster
from foldylax.kernels import PlaneWave, dyadic_pi
from foldylax.tensors import Material, TensorSet, tensor_set_for_cluster

from _oracles import brute_force_moments

I3 = np.eye(3)


# independent assembly oracle -----------------------------------------------------


def random_tensor(rng, scale):
    return scale * (I3 + 0.3 * rng.normal(size=(3, 3)) + 0.1j * rng.normal(size=(3, 3)))


def test_brute_force_two_spheres():
    a = 0.05
    cl = Cluster(np.array([[0, 0, 0], [11 * a, 0, 0]]), a)
    ts = tensor_set_for_cluster(cl, Material.isotropic(3.0, 2.0))
    w = PlaneWave([0, 0, 1], [1, 0, 0], 1.0)
    sol = solve(FoldyProblem(cl, ts, w))
    R, Q = brute_force_moments(cl.centers, ts.A_eps, ts.A_mu, 1.0, w.direction, w.polarization)
    np.testing.assert_allclose(sol.R, R, rtol=1e-10, atol=1e-10 * np.abs(R).max())
    np.testing.assert_allclose(sol.Q, Q, rtol=1e-10, atol=1e-10 * np.abs(Q).max())


@pytest.mark.parametrize("n", [2, 3, 4])
def test_brute_force_random_anisotropic(n, rng):
    cl = random_cluster(n, 0.1, 1.0, min_gap=0.2, seed=n)
    Ae = np.array([random_tensor(rng, 1e-3) for _ in range(n)])
    Am = np.array([random_tensor(rng, 5e-4) for _ in range(n)])
    k = 2.0 + 0.3j
    theta = np.array([1.0, 2.0, 2.0]) / 3
    pol = np.cross(theta, [0, 0, 1.0]) + 0.5j * np.cross(theta, np.cross(theta, [0, 0, 1.0]))
    sol = solve(FoldyProblem(cl, TensorSet.penetrable(Ae, Am, scale=0.1), PlaneWave(theta, pol, k)))
    R, Q = brute_force_moments(cl.centers, Ae, Am, k, theta, pol)
    scale = max(np.abs(R).max(), np.abs(Q).max())
    assert np.abs(sol.R - R).max() < 1e-10 * scale
    assert np.abs(sol.Q - Q).max() < 1e-10 * scale


# single particle -----------------------------------------------------------------


def single(variant="aniso_symmetric", pec_form="consistent", tensors=None):
    cl = Cluster(np.array([[0.1, -0.2, 0.3]]), 0.2)
    w = PlaneWave([0, 1, 0], [1j, 0, 2], 1.3)
    return FoldyProblem(cl, tensors, w, variant, pec_form), w


def test_single_particle_penetrable(rng):
    Ae, Am = random_tensor(rng, 1e-2), random_tensor(rng, 1e-2)
    p, w = single(tensors=TensorSet.penetrable(Ae, Am))
    s = solve(p)
    ph = np.exp(1j * w.k * (w.direction @ p.cluster.centers[0]))
    np.testing.assert_allclose(s.R[0], Ae @ (ph * w.polarization), rtol=1e-12)
    np.testing.assert_allclose(s.Q[0], Am @ (ph * np.cross(w.direction, w.polarization)), rtol=1e-12)


@pytest.mark.parametrize("form", ["theorem", "consistent", "proposition"])
def test_single_particle_pec(form):
    P, T = -4 * np.pi * 0.1**3 * np.diag([1.0, 1.1, 1.2]), 2 * np.pi * 0.1**3 * np.diag([1.2, 1.0, 0.9])
    p, w = single("pec", form, TensorSet.pec(P, T))
    s = solve(p)
    z = p.cluster.centers[0]
    e = np.exp(1j * w.k * (w.direction @ z)) * w.polarization
    h = np.cross(w.direction, e)
    if form == "theorem":
        exp_Q, exp_R = T @ h, P @ e
    elif form == "consistent":
        exp_Q, exp_R = -T @ h, -P @ e
    else:
        exp_Q, exp_R = -P @ (1j * w.k * h), T @ (-e)
    np.testing.assert_allclose(s.Q[0], exp_Q, rtol=1e-12)
    np.testing.assert_allclose(s.R[0], exp_R, rtol=1e-12)


def test_assemble_single_pec_theorem():
    P, T = -4 * np.pi * I3, 2 * np.pi * I3
    p, _ = single("pec", "theorem", TensorSet.pec(P, T))
    M, _ = assemble(p)
    expected = np.zeros((6, 6))
    expected[:3, :3] = np.linalg.inv(T)
    expected[3:, 3:] = np.linalg.inv(P)
    np.testing.assert_allclose(M, expected, atol=1e-15)


def test_assemble_two_particle_blocks():
    cl = Cluster(np.array([[0, 0, 0], [0.4, 0.3, -0.2]]), 0.1)
    ts = tensor_set_for_cluster(cl, Material.isotropic(3.0, 2.0))
    p = FoldyProblem(cl, ts, PlaneWave([0, 0, 1], [1, 0, 0], 1.0))
    M, b = assemble(p)
    Pi = dyadic_pi(1.0, cl.centers[0], cl.centers[1])
    np.testing.assert_allclose(M[0:3, 6:9], -Pi, rtol=1e-14)
    np.testing.assert_allclose(M[0:3, 6:9], M[6:9, 0:3].T, rtol=1e-14)
    np.testing.assert_allclose(M[3:6, 9:12], M[9:12, 3:6].T, rtol=1e-14)
    assert b.shape == (12,)


def test_assemble_rejects_singular_tensor():
    Ae = np.array([I3 * 1e-3, np.diag([1e-3, 1e-3, 0.0])])
    cl = Cluster(np.array([[0, 0, 0], [1.0, 0, 0]]), 0.1)
    p = FoldyProblem(cl, TensorSet.penetrable(Ae, Ae), PlaneWave([0, 0, 1], [1, 0, 0], 1.0))
    with pytest.raises(FoldyError, match="particle 1"):
        assemble(p)


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_singular_system_reports_condition():
    cl = Cluster(np.array([[0, 0, 0], [1.0, 0, 0]]), 0.1)
    Pi = dyadic_pi(1.0, cl.centers[0], cl.centers[1])
    Ae = np.array([np.linalg.inv(Pi), np.linalg.inv(Pi.T)])
    p = FoldyProblem(cl, TensorSet.penetrable(Ae, np.zeros((2, 3, 3))), PlaneWave([0, 0, 1], [1, 0, 0], 1.0),
                     warn=False)
    with pytest.raises(FoldyError, match="condition estimate"):
        solve(p)


def grid_problem(pol=(1, 0, 0), variant="aniso_symmetric", k=1.5):
    cl = build_grid_cluster(0.5, (3, 3, 3), 0.05)
    ts = tensor_set_for_cluster(cl, Material.isotropic(3.0, 2.0), variant="nonsymmetric" if variant == "aniso_nonsymmetric" else "symmetric")
    return FoldyProblem(cl, ts, PlaneWave([0, 0, 1], np.asarray(pol, complex), k), variant)


def test_zero_incident_field():
    s = solve(grid_problem((0, 0, 0)))
    assert not np.any(s.R) and not np.any(s.Q)
    chk = solution_norm_check(grid_problem((0, 0, 0)), s)
    assert chk["checked"] and chk["holds"] and chk["Q_lhs"] == 0


def test_linearity():
    s1 = solve(grid_problem((1, 0.5j, 0)))
    s2 = solve(grid_problem((2, 1j, 0)))
    np.testing.assert_allclose(s2.R, 2 * s1.R, rtol=1e-12, atol=0)
    np.testing.assert_allclose(s2.Q, 2 * s1.Q, rtol=1e-12, atol=0)


def test_residual_and_condition_reported():
    s = solve(grid_problem())
    assert s.residual < 1e-10
    assert 1 <= s.condition_estimate < 1e3


def test_symmetric_and_nonsymmetric_variants_agree():
    s1 = solve(grid_problem())
    s2 = solve(grid_problem(variant="aniso_nonsymmetric"))
    np.testing.assert_allclose(s2.R, s1.R, rtol=1e-8)
    np.testing.assert_allclose(s2.Q, s1.Q, rtol=1e-8)


def test_iterative_matches_dense():
    p = grid_problem()
    d = solve(p, method="dense")
    it = solve(p, method="iterative")
    assert it.method == "iterative"
    np.testing.assert_allclose(it.R, d.R, rtol=1e-9, atol=1e-12 * np.abs(d.R).max())


def test_pec_only_in_pec_variant():
    cl = Cluster(np.zeros((1, 3)), 0.1)
    with pytest.raises(FoldyError):
        FoldyProblem(cl, TensorSet.pec(-I3, I3), PlaneWave([0, 0, 1], [1, 0, 0], 1.0))
    with pytest.raises(FoldyError):
        FoldyProblem(cl, TensorSet.penetrable(I3, I3), PlaneWave([0, 0, 1], [1, 0, 0], 1.0), "bogus")


def test_dilution_warning():
    cl = build_grid_cluster(0.12, (2, 1, 1), 0.1)
    ts = tensor_set_for_cluster(cl, Material.isotropic(10.0))
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        p = FoldyProblem(cl, ts, PlaneWave([0, 0, 1], [1, 0, 0], 3.0))
    assert any(issubclass(r.category, DilutionWarning) for r in rec)
    assert not p.condition()["satisfied"]
    assert not solution_norm_check(p, solve(p))["checked"]


def test_solution_json_round_trip(tmp_path):
    s = solve(grid_problem())
    s.to_json(tmp_path / "s.json")
    back = FoldySolution.from_dict(json.loads((tmp_path / "s.json").read_text()))
    np.testing.assert_array_equal(back.R, s.R)
    np.testing.assert_array_equal(back.Q, s.Q)
    assert back.residual == s.residual


# norm bound ------------------------------------------------------------------------


def test_norm_bound_single_pec():
    a = 2.0  # reference unit sphere scaled so that the body has radius 1
    cl = Cluster(np.zeros((1, 3)), a)
    ts = TensorSet.pec(-4 * np.pi * I3, 2 * np.pi * I3, scale=a)
    p = FoldyProblem(cl, ts, PlaneWave([0, 0, 1], [1, 0, 0], 1.5), "pec")
    chk = solution_norm_check(p, solve(p))
    assert chk["checked"] and chk["Q_holds"] and chk["R_holds"]


def test_norm_bound_27_grid_dilute():
    a = 0.05
    cl = build_grid_cluster(21 * a, (3, 3, 3), a)
    ts = tensor_set_for_cluster(cl, Material.isotropic(3.0, 2.0))
    p = FoldyProblem(cl, ts, PlaneWave([0, 0, 1], [1, 0, 0], 1.5))
    chk = solution_norm_check(p, solve(p))
    assert chk["c_r"] == pytest.approx(20)
    assert chk["checked"] and chk["holds"]


def test_norm_bound_skips_small_k():
    p = grid_problem(k=0.5)
    chk = solution_norm_check(p, solve(p))
    assert not chk["checked"] and "not > 1" in chk["reason"]


def test_proposition_form_far_field_runs():
    cl = build_grid_cluster(0.5, (2, 2, 1), 0.05)
    ts = tensor_set_for_cluster(cl, Material.pec(), method="analytic")
    p = FoldyProblem(cl, ts, PlaneWave([0, 0, 1], [1, 0, 0], 1.0), "pec", "proposition")
    s = solve(p)
    assert s.form == "proposition"
    ff = foldy_far_field(s, cl, 1.0)
    assert ff.transversality_error() < 1e-10
