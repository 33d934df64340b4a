import json

import numpy as np
import pytest

from foldylax.geometry import Cluster
from foldylax.io import (
    complex_from_json,
    complex_to_json,
    read_mesh,
    read_voxel_array,
    read_voxel_mask,
    write_mesh,
    write_voxel_array,
    write_voxel_mask,
)
from foldylax.kernels import dyadic_pi, grad_phi, hessian_phi
from foldylax.mesh import (
    CurvedSurface,
    MeshError,
    duffy_rule,
    enclosed_volume,
    icosphere,
    subdivided_rule,
    validate_closed_mesh,
    winding_number,
)
from foldylax.voxel import LatticeConvolution, cube_grad0, cube_hessian0, dynamic_blocks, voxelize


def gauss_cube(fn, d, h, n=10):
    """Tensor Gauss-Legendre integral of fn(d - y) over the cube of side h at the origin."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * h * x, 0.5 * h * w
    Y = np.stack(np.meshgrid(x, x, x, indexing="ij"), -1).reshape(-1, 3)
    W = np.einsum("i,j,k->ijk", w, w, w).ravel()
    vals = fn(d[None, :] - Y)
    return np.tensordot(W, vals, axes=(0, 0))


def test_self_hessian_is_minus_third():
    np.testing.assert_allclose(cube_hessian0(np.zeros(3), 0.3), -np.eye(3) / 3, atol=1e-14)


@pytest.mark.parametrize("d", [[3.0, 0.4, -0.2], [2.0, 2.0, 1.0], [1.5, -1.0, 0.5]])
def test_near_blocks_match_quadrature(d):
    h = 0.5
    d = np.asarray(d) * h
    ref_H = gauss_cube(lambda r: hessian_phi(0.0, r, np.zeros(3)).real, d, h)
    ref_g = gauss_cube(lambda r: grad_phi(0.0, r, np.zeros(3)).real, d, h)
    np.testing.assert_allclose(cube_hessian0(d, h), ref_H, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(cube_grad0(d, h), ref_g, rtol=1e-7, atol=1e-10)


def test_off_cell_hessian_traceless_symmetric(rng):
    d = rng.uniform(1.2, 4.0, size=(20, 3)) * rng.choice([-1, 1], size=(20, 3))
    H = cube_hessian0(d, 1.0)
    np.testing.assert_allclose(np.trace(H, axis1=1, axis2=2), 0, atol=1e-12)
    np.testing.assert_allclose(H, np.swapaxes(H, 1, 2), atol=1e-14)


def test_far_blocks_continuous_across_switch():
    h = 0.1
    for dist in (39.9, 40.1):
        d = np.array([dist, 1.3, -0.7]) * h
        ref = gauss_cube(lambda r: hessian_phi(0.0, r, np.zeros(3)).real, d, h, n=4)
        assert np.linalg.norm(cube_hessian0(d, h) - ref) < 1e-6 * np.linalg.norm(ref)


def test_dynamic_blocks_limits():
    h = 0.1
    d = np.array([[0.3, 0.1, 0.0], [0.0, 0.0, 0.0]])
    G0, g0 = dynamic_blocks(d, h, 0.0)
    np.testing.assert_allclose(G0, cube_hessian0(d, h), atol=1e-14)
    far = np.array([[5.0, 1.0, 2.0]])
    G, g = dynamic_blocks(far, h, 1.0)
    np.testing.assert_allclose(G[0], h**3 * dyadic_pi(1.0, far[0], np.zeros(3)), rtol=1e-4)
    np.testing.assert_allclose(g[0], h**3 * grad_phi(1.0, far[0], np.zeros(3)), rtol=1e-4)
    _, gself = dynamic_blocks(np.zeros((1, 3)), h, 1.0)
    np.testing.assert_array_equal(gself, 0)


def test_dynamic_blocks_parity(rng):
    d = rng.normal(size=(6, 3)) * 0.4
    G1, g1 = dynamic_blocks(d, 0.1, 1.0 + 0.2j)
    G2, g2 = dynamic_blocks(-d, 0.1, 1.0 + 0.2j)
    np.testing.assert_allclose(G1, G2, atol=1e-15)
    np.testing.assert_allclose(g1, -g2, atol=1e-15)


def test_lattice_convolution_matches_dense(rng):
    idx = np.array([[0, 0, 0], [1, 0, 0], [3, 2, 1], [0, 4, 2], [2, 2, 2]])
    h = 0.2
    kern = lambda d: dynamic_blocks(d, h, 1.0)[0]
    v = rng.normal(size=(5, 3)) + 1j * rng.normal(size=(5, 3))
    dense = np.zeros((5, 3), complex)
    for i in range(5):
        for j in range(5):
            dense[i] += kern(h * (idx[i] - idx[j])[None].astype(float))[0] @ v[j]
    np.testing.assert_allclose(LatticeConvolution(kern, idx, h).apply(v), dense, atol=1e-13)


def test_voxelize_ball_volume_and_owners():
    c = Cluster(np.array([[0, 0, 0], [1.0, 0, 0]]), 0.4)
    vox = voxelize(c, 0.02)
    r = 0.2
    for m in range(2):
        vol = vox.volumes()[vox.owner == m].sum()
        assert vol == pytest.approx(4 / 3 * np.pi * r**3, rel=0.02)
    # congruent lattice-aligned particles get identical cell sets
    a, b = (vox.indices[vox.owner == m] for m in range(2))
    np.testing.assert_array_equal(a - a.min(0), b - b.min(0))
    frac = voxelize(c, 0.02, fractional=True)
    assert frac.volumes()[frac.owner == 0].sum() == pytest.approx(4 / 3 * np.pi * r**3, rel=0.01)


# mesh ----------------------------------------------------------------------------


def test_icosphere_closed_and_volume():
    v, f = icosphere(3)
    validate_closed_mesh(v, f)
    assert enclosed_volume(v, f) == pytest.approx(4 / 3 * np.pi, rel=0.02)


def test_mesh_validation_errors():
    v, f = icosphere(1)
    with pytest.raises(MeshError, match="not closed"):
        validate_closed_mesh(v, f[1:])
    with pytest.raises(MeshError, match="inconsistent|inverted"):
        validate_closed_mesh(v, np.vstack([f[:1, ::-1], f[1:]]))
    with pytest.raises(MeshError, match="inverted"):
        validate_closed_mesh(v, f[:, ::-1])


def test_winding_number():
    v, f = icosphere(2)
    w = winding_number(v, f, np.array([[0, 0, 0], [0.3, 0.2, 0.1], [2, 0, 0]]))
    np.testing.assert_allclose(w, [1, 1, 0], atol=1e-10)


def test_quadrature_rules():
    for level in range(3):
        nodes, w = subdivided_rule(level)
        assert w.sum() == pytest.approx(1.0)
        # exact for quadratics in barycentric coordinates: mean of u^2 over a triangle is 1/6
        assert np.dot(w, nodes[:, 0] ** 2) == pytest.approx(1 / 6)
    nodes, w = duffy_rule(8)
    assert w.sum() == pytest.approx(0.5)
    np.testing.assert_allclose(nodes.sum(axis=1), 1)


def test_curved_surface_area():
    v, f = icosphere(2)
    surf = CurvedSurface(v, f)
    nodes, w = duffy_rule(6)
    _, nrm, jac = surf.evaluate(nodes)
    area = np.sum(jac * w)
    assert area == pytest.approx(4 * np.pi, rel=1e-3)
    pts, _, _ = surf.evaluate(np.array([[1, 0, 0]]))
    np.testing.assert_allclose(np.linalg.norm(pts[:, 0], axis=1), 1, atol=1e-14)


# io ------------------------------------------------------------------------------


def test_voxel_array_round_trip(tmp_path, rng):
    data = rng.normal(size=(3, 4, 5, 2, 3)) + 1j * rng.normal(size=(3, 4, 5, 2, 3))
    write_voxel_array(tmp_path / "f.raw", data, 0.1, (1, 2, 3))
    back, header = read_voxel_array(tmp_path / "f.raw")
    np.testing.assert_array_equal(back, data)
    assert header["dims"] == [3, 4, 5] and header["ordering"] == "x-fastest"
    raw = np.fromfile(tmp_path / "f.raw", dtype=header["dtype"])
    # components innermost, then x fastest
    assert raw[6] == data[1, 0, 0, 0, 0]


def test_voxel_mask_round_trip(tmp_path):
    mask = np.zeros((4, 3, 2), bool)
    mask[1, 2, 0] = mask[3, 0, 1] = True
    write_voxel_mask(tmp_path / "m.raw", mask, 0.25, (0.5, 0, 0))
    m, h, origin = read_voxel_mask(tmp_path / "m.raw")
    np.testing.assert_array_equal(m, mask)
    assert h == 0.25 and origin == (0.5, 0, 0)


def test_mesh_round_trip(tmp_path):
    v, f = icosphere(1)
    write_mesh(tmp_path / "s.mesh", v, f)
    v2, f2 = read_mesh(tmp_path / "s.mesh")
    np.testing.assert_array_equal(v2, v)
    np.testing.assert_array_equal(f2, f)
    (tmp_path / "bad.mesh").write_text("3 1\n0 0 0\n")
    with pytest.raises(ValueError):
        read_mesh(tmp_path / "bad.mesh")


def test_complex_json():
    a = np.array([[1 + 2j, 3], [0, -1j]])
    s = json.dumps(complex_to_json(a))
    np.testing.assert_array_equal(complex_from_json(json.loads(s)), a)
