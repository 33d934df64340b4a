import numpy as np
import pytest
from scipy.integrate import quad

from foldylax.geometry import Ball, Cluster, Ellipsoid, VoxelShape
from foldylax.mesh import icosphere
from foldylax.tensors import (
    Material,
    TensorError,
    TensorSet,
    aniso_tensor_ball,
    aniso_tensor_ellipsoid,
    aniso_tensor_numeric,
    depolarization_factors,
    is_spd,
    nonsym_modified_tensor,
    pec_tensors_numeric,
    richardson,
    spheroid_depolarization,
    static_tensor_on_cells,
    tensor_set_for_cluster,
    tensor_spectral_bounds,
)

I3 = np.eye(3)
CM3 = 5.02654824574366918154022941325  # 8 pi / 5 to 30 digits


def random_spd(rng, lo=0.3, hi=3.0):
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return Q @ np.diag(rng.uniform(lo, hi, 3)) @ Q.T


# materials ---------------------------------------------------------------------


def test_material_coercivity():
    Material.isotropic(3.0, 2.0)
    Material.isotropic(1.0)  # zero contrast is allowed
    Material(np.diag([2.0, 3.0, 4.0]) + 0.1j * I3)
    with pytest.raises(TensorError, match="coercive"):
        Material.isotropic(0.5)
    with pytest.raises(TensorError, match="coercive"):
        Material.isotropic(3.0, 0.8)
    with pytest.raises(TensorError, match="real"):
        Material(I3 * 2, I3 * (2 + 1j))


def test_material_round_trip():
    m = Material(np.diag([2.0, 3.0, 4.0]) + 0.1j * I3, np.diag([1.5, 2.0, 2.5]))
    back = Material.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.eps_r, m.eps_r)
    np.testing.assert_array_equal(back.mu_r, m.mu_r)
    assert Material.from_dict({"kind": "pec"}).is_pec


# closed forms ------------------------------------------------------------------


def test_ball_closed_form():
    np.testing.assert_array_equal(aniso_tensor_ball(1.0, 1.0), np.zeros((3, 3)))
    np.testing.assert_allclose(aniso_tensor_ball(3.0, 1.0), CM3 * I3, rtol=1e-14)
    np.testing.assert_allclose(aniso_tensor_ball(3.0, 2.0), 8 * aniso_tensor_ball(3.0, 1.0), rtol=1e-14)
    with pytest.raises(TensorError, match="resonance"):
        aniso_tensor_ball(-2.0, 1.0)


def test_ball_diagonal_anisotropy():
    A = aniso_tensor_ball(np.diag([2.0, 3.0, 5.0]), 1.0)
    expected = [4 * np.pi * (e - 1) / (e + 2) for e in (2.0, 3.0, 5.0)]
    np.testing.assert_allclose(np.diag(A).real, expected, rtol=1e-14)


def depol_quadrature(axes):
    a = np.asarray(axes, float)

    def n(i):
        f = lambda s: 1.0 / ((s + a[i] ** 2) * np.sqrt(np.prod(s + a**2)))
        return a.prod() / 2 * quad(f, 0, np.inf, epsabs=1e-14, epsrel=1e-12)[0]

    return np.array([n(i) for i in range(3)])


@pytest.mark.parametrize("axes", [(0.5, 0.3, 0.2), (0.2, 0.2, 0.45), (0.4, 0.4, 0.1)])
def test_depolarization_factors_match_quadrature(axes):
    ref = depol_quadrature(axes)
    np.testing.assert_allclose(depolarization_factors(axes), ref, rtol=1e-9)
    assert sum(depolarization_factors(axes)) == pytest.approx(1.0, abs=1e-13)
    if axes[0] == axes[1]:
        np.testing.assert_allclose(spheroid_depolarization(axes[0], axes[2]), ref, rtol=1e-9)


# numeric volume tensors ------------------------------------------------------


def test_numeric_zero_contrast():
    np.testing.assert_array_equal(aniso_tensor_numeric(Ball(), 1.0, h=1 / 8), np.zeros((3, 3)))


def test_numeric_ball_close_to_closed_form():
    A = aniso_tensor_numeric(Ball(), 3.0, h=1 / 16)  # r / 8 cells
    np.testing.assert_allclose(A, aniso_tensor_ball(3.0, 0.5), rtol=0.02, atol=1e-12)


def test_numeric_spheroid_close_to_closed_form():
    shape = Ellipsoid((0.25, 0.25, 0.5))
    A = aniso_tensor_numeric(shape, 3.0, h=1 / 24)
    ref = aniso_tensor_ellipsoid(3.0, (0.25, 0.25, 0.5))
    assert np.linalg.norm(A - ref) < 0.03 * np.linalg.norm(ref)


def test_dense_and_fft_paths_agree():
    idx = np.argwhere(np.ones((5, 4, 3), bool))
    chi = np.broadcast_to(2.0 * I3, (len(idx), 3, 3))
    dense = static_tensor_on_cells(idx, 0.1, chi)
    fft, info = static_tensor_on_cells(idx, 0.1, chi, dense_limit=0, return_info=True)
    assert info.method == "fft-gmres"
    np.testing.assert_allclose(fft, dense, rtol=1e-9, atol=1e-14)


def test_symmetric_contrast_gives_symmetric_tensor(rng):
    mask = np.zeros((5, 5, 5), bool)
    mask[1:4, 1:4, 1:4] = True
    mask[1, 1, 4] = True
    shape = VoxelShape.centered(mask, 0.1)
    B = I3 + random_spd(rng)
    A = aniso_tensor_numeric(shape, B, h=0.1)
    assert np.linalg.norm(A - A.T) / np.linalg.norm(A) < 1e-6


def test_definiteness_inherited_on_random_spd_contrasts(rng):
    shape = VoxelShape.centered(np.ones((3, 3, 3), bool), 0.15)
    for _ in range(20):
        B = I3 + random_spd(rng)
        A = aniso_tensor_numeric(shape, B, h=0.15)
        assert np.linalg.eigvalsh(0.5 * (A + A.T).real).min() > 0


def test_numeric_tensor_scaling_law():
    shape = Ellipsoid((0.25, 0.25, 0.5))
    A1 = aniso_tensor_numeric(shape, 3.0, h=1 / 12)
    A2 = aniso_tensor_numeric(shape, 3.0, h=1 / 12, scale=0.3)
    np.testing.assert_allclose(A2, 0.3**3 * A1, rtol=1e-9, atol=1e-15)


def test_numeric_rejects_incoercive_field():
    with pytest.raises(TensorError):
        aniso_tensor_numeric(Ball(), 0.5, h=1 / 8)


def test_voxel_shape_resolution_mismatch():
    shape = VoxelShape.centered(np.ones((3, 3, 3), bool), 0.15)
    with pytest.raises(TensorError):
        aniso_tensor_numeric(shape, 3.0, h=0.1)


# conductors ------------------------------------------------------------------


@pytest.fixture(scope="module")
def sphere_pec():
    v, f = icosphere(2)
    return pec_tensors_numeric(v, f, return_info=True)


def test_pec_sphere_values(sphere_pec):
    P, T, info = sphere_pec
    np.testing.assert_allclose(P, -4 * np.pi * I3, rtol=0.02, atol=0.02 * 4 * np.pi)
    np.testing.assert_allclose(T, 2 * np.pi * I3, rtol=0.02, atol=0.02 * 2 * np.pi)
    assert is_spd(-P) and is_spd(T)
    # zero-mean densities make the recentring immaterial on the sphere
    assert info["recentering_difference"] < 1e-10


def test_pec_scaling(sphere_pec):
    v, f = icosphere(2)
    P2, T2 = pec_tensors_numeric(2 * v, f)
    np.testing.assert_allclose(P2, 8 * sphere_pec[0], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(T2, 8 * sphere_pec[1], rtol=1e-9, atol=1e-9)


def test_pec_ellipsoid_spd():
    from foldylax.mesh import ellipsoid_mesh

    v, f = ellipsoid_mesh((1.0, 0.7, 0.5), 2)
    P, T = pec_tensors_numeric(v, f)
    assert is_spd(-P) and is_spd(T)


def test_pec_rejects_open_mesh():
    v, f = icosphere(1)
    with pytest.raises(ValueError):
        pec_tensors_numeric(v, f[2:])


# spectral bounds and modified tensors -------------------------------------------


def test_spectral_bounds():
    ts = TensorSet.pec(-4 * np.pi * I3, 2 * np.pi * I3, scale=1.0)
    assert tensor_spectral_bounds(ts) == pytest.approx((4 * np.pi, 2 * np.pi))
    ts = TensorSet.penetrable(aniso_tensor_ball(3.0, 0.5), np.zeros((3, 3)), scale=1.0)
    assert tensor_spectral_bounds(ts) == pytest.approx((CM3 / 8, CM3 / 8))
    bad = TensorSet.pec(4 * np.pi * I3, 2 * np.pi * I3)
    with pytest.raises(TensorError):
        tensor_spectral_bounds(bad)


def test_nonsym_modified_tensor(rng):
    B = I3 + random_spd(rng)
    A = aniso_tensor_ball(B, 0.5)
    np.testing.assert_allclose(nonsym_modified_tensor(A, B - I3), A, atol=1e-13)
    D = np.diag([2.0, 3.0, 4.0])
    Ad = np.diag([1.0, 2.0, 3.0])
    np.testing.assert_allclose(nonsym_modified_tensor(Ad, D), Ad, atol=1e-14)
    C = rng.normal(size=(3, 3)) + 3 * I3
    A = rng.normal(size=(3, 3))
    np.testing.assert_allclose(nonsym_modified_tensor(A, C), C @ A @ np.linalg.inv(C.T), rtol=1e-12)
    with pytest.raises(TensorError):
        nonsym_modified_tensor(A, np.diag([1.0, 1.0, 0.0]))


def test_cluster_tensor_variants(rng):
    cl = Cluster(np.array([[0, 0, 0], [1.0, 0, 0]]), 0.1)
    B = I3 + random_spd(rng)
    sym = tensor_set_for_cluster(cl, Material(B))
    non = tensor_set_for_cluster(cl, Material(B), variant="nonsymmetric")
    np.testing.assert_allclose(non.A_eps, sym.A_eps, atol=1e-14)
    np.testing.assert_array_equal(non.A_mu, 0)
    pec = tensor_set_for_cluster(cl, Material.pec(), method="analytic")
    np.testing.assert_allclose(pec.P[0], -4 * np.pi * 0.05**3 * I3)
    with pytest.raises(TensorError):
        tensor_set_for_cluster(cl, [Material.pec(), Material.isotropic(2.0)])


def test_tensor_set_json_round_trip():
    ts = TensorSet.penetrable(aniso_tensor_ball(3 + 0.1j, 0.5)[None].repeat(2, 0), np.zeros((2, 3, 3)), scale=0.1)
    back = TensorSet.from_dict(ts.to_dict())
    np.testing.assert_array_equal(back.A_eps, ts.A_eps)
    assert back.scale == 0.1 and back.kind == "penetrable"
    with pytest.raises(TensorError):
        ts.broadcast(3)


def test_richardson_recovers_synthetic_order():
    hs = [0.4, 0.2, 0.1]
    vals = [2.0 + 0.7 * h**1.5 for h in hs]
    p, lim = richardson(vals, hs)
    assert p == pytest.approx(1.5, rel=1e-10)
    assert lim.real == pytest.approx(2.0, rel=1e-10)
