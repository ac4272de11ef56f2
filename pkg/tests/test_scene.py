import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import graphics_sh, quat_matrix, sh_polynomials
from uwsplat import sh as shlib
from uwsplat.scene import (CameraPose, EmptyInput, InitConfig, covariance, init_scene, local_to_world,
                           quat_to_rotmat, rotmat_to_quat)


def t64(a):
    return torch.tensor(a, dtype=torch.float64)


def test_identity_covariance():
    cov = covariance(t64([[1.0, 0, 0, 0]]), t64([[0.0, 0, 0]]))[0]
    assert torch.equal(cov, torch.eye(3, dtype=torch.float64))


def test_axis_aligned_scaling():
    cov = covariance(t64([[1.0, 0, 0, 0]]), t64([[math.log(2), 0, 0]]))[0]
    torch.testing.assert_close(cov, torch.diag(t64([4.0, 1.0, 1.0])), rtol=0, atol=1e-14)


def test_covariance_eigenvalues(rng):
    q = rng.normal(size=(100, 4))
    ls = rng.uniform(-3, 1, size=(100, 3))
    cov = covariance(t64(q / np.linalg.norm(q, axis=1, keepdims=True)), t64(ls)).numpy()
    for c, s in zip(cov, ls):
        assert np.max(np.abs(c - c.T)) < 1e-12
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(c)), np.sort(np.exp(2 * s)), rtol=1e-8)
        assert np.linalg.det(c) == pytest.approx(math.exp(2 * s.sum()), rel=1e-8)


def test_rotation_matches_independent_formula(rng):
    q = rng.normal(size=(50, 4))
    r = quat_to_rotmat(t64(q / np.linalg.norm(q, axis=1, keepdims=True))).numpy()
    for qi, ri in zip(q, r):
        np.testing.assert_allclose(ri, quat_matrix(qi), atol=1e-12)


def test_quaternion_roundtrip_canonical(rng):
    q = rng.normal(size=(50, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    for qi in q:
        back = rotmat_to_quat(quat_matrix(qi))
        assert back[0] >= 0
        np.testing.assert_allclose(back, qi * np.sign(qi[0]), atol=1e-10)


def test_local_to_world_layout(rng):
    m = local_to_world(t64([[1.0, 2.0, 3.0]]), t64([[1.0, 0, 0, 0]]), t64([[0.0, 0, 0]]))[0].numpy()
    np.testing.assert_array_equal(m[:3, 3], [1, 2, 3])
    np.testing.assert_array_equal(m[:3, :3], np.eye(3))
    np.testing.assert_array_equal(m[3], [0, 0, 0, 1])
    np.testing.assert_array_equal(m @ [0, 0, 0, 1], [1, 2, 3, 1])

    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    ls = rng.normal(size=3) * 0.5
    m = local_to_world(t64([[0.0, 0, 0]]), t64(q[None]), t64(ls[None]))[0].numpy()
    rs = quat_matrix(q) * np.exp(ls)[None, :]
    for k in range(3):
        e = np.zeros(4)
        e[k] = 1
        np.testing.assert_allclose((m @ e)[:3], rs[:, k], atol=1e-12)
    np.testing.assert_allclose(m @ np.linalg.inv(m), np.eye(4), atol=1e-9)


def test_camera_pose_from_center():
    rot = quat_matrix([0.9, 0.1, -0.3, 0.2])
    pose = CameraPose.from_center([1.0, -2.0, 0.5], 64, 32, rotation=rot)
    np.testing.assert_allclose(pose.center, [1.0, -2.0, 0.5], atol=1e-12)
    np.testing.assert_allclose(pose.rotation, rot)


# ---------------------------------------------------------------------------
# spherical harmonics


def _dirs(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_zero_coefficients_give_grey(rng):
    d = t64(_dirs(rng, 20))
    rgb = shlib.sh_to_rgb(torch.zeros(20, 16, 3, dtype=torch.float64), d, 3)
    assert torch.equal(rgb, torch.full((20, 3), 0.5, dtype=torch.float64))


def test_degree_zero_is_isotropic(rng):
    coeffs = t64(rng.normal(size=(1, 16, 3))).expand(2, 16, 3)
    d = t64(_dirs(rng, 2))
    rgb = shlib.sh_to_rgb(coeffs, d, 0)
    assert torch.equal(rgb[0], rgb[1])


def test_basis_matches_scipy(rng):
    d = _dirs(rng, 500)
    ours = shlib.sh_basis(t64(d), 3).numpy()
    np.testing.assert_allclose(ours, graphics_sh(d), atol=1e-12)
    # the explicit polynomial table agrees up to the convention's signs
    signs = np.array([(-1) ** abs(m) for l in range(4) for m in range(-l, l + 1)])
    np.testing.assert_allclose(ours, sh_polynomials(d) * signs, atol=1e-12)


def test_sh_to_rgb_matches_brute_force(rng):
    d = _dirs(rng, 200)
    coeffs = rng.normal(size=(200, 16, 3)) * 0.2
    ours = shlib.sh_to_rgb(t64(coeffs), t64(d), 3).numpy()
    basis = graphics_sh(d)
    ref = np.maximum(0.5 + np.einsum("nk,nkc->nc", basis, coeffs), 0.0)
    np.testing.assert_allclose(ours, ref, atol=1e-10)


def test_sh_linear_in_coefficients(rng):
    d = t64(_dirs(rng, 30))
    a = t64(rng.normal(size=(30, 16, 3)) * 0.1)
    b = t64(rng.normal(size=(30, 16, 3)) * 0.1)
    # stay away from the zero floor
    a[:, 0] += 3.0
    b[:, 0] += 3.0
    lin = lambda c: shlib.sh_to_rgb(c, d, 3) - 0.5  # noqa: E731
    torch.testing.assert_close(lin(a + b), lin(a) + lin(b), rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------------------
# initialisation


def test_init_single_red_point():
    scene = init_scene(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]]), InitConfig())
    c0 = 0.2820948
    np.testing.assert_allclose(scene.sh[0, 0].numpy(), [0.5 / c0, -0.5 / c0, -0.5 / c0], rtol=1e-6)
    np.testing.assert_allclose(scene.opacity.numpy(), [0.1], rtol=1e-12)


def test_init_grid_scale(rng):
    g = np.stack(np.meshgrid(*[np.arange(6.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    scene = init_scene(g, rng.uniform(size=g.shape), InitConfig())
    assert len(scene) == len(g)
    torch.testing.assert_close(scene.opacity, torch.full((len(g),), 0.1, dtype=torch.float64))
    assert float(scene.log_scale.abs().max()) < 1e-6
    assert torch.equal(scene.sh[:, 1:], torch.zeros_like(scene.sh[:, 1:]))


def test_init_reproduces_colours(rng):
    pts = rng.normal(size=(40, 3))
    cols = rng.uniform(size=(40, 3))
    scene = init_scene(pts, cols, InitConfig())
    rgb = shlib.sh_to_rgb(scene.sh, t64(_dirs(rng, 40)), 0)
    np.testing.assert_allclose(rgb.numpy(), cols, atol=1e-12)


def test_init_empty_raises():
    with pytest.raises(EmptyInput):
        init_scene(None, None, InitConfig())
    scene = init_scene(None, None, InitConfig(fallback_points=50, fallback_radius=2.0))
    assert len(scene) == 50
    assert float(scene.mu.norm(dim=1).max()) <= 2.0


@settings(max_examples=50, deadline=None)
@given(ls=arrays(np.float64, 3, elements=st.floats(-5, 2)),
       q=arrays(np.float64, 4, elements=st.floats(-1, 1)).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_covariance_spd(ls, q):
    q = q / np.linalg.norm(q)
    cov = covariance(t64(q[None]), t64(ls[None]))[0].numpy()
    ev = np.linalg.eigvalsh(cov)
    assert ev.min() >= math.exp(2 * ls.min()) * (1 - 1e-8) - 1e-14
