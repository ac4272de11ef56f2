import numpy as np
import pytest
import torch

from conftest import single_gaussian
from uwsplat.appearance import AppearanceNet
from uwsplat.diff import (backward, flat_params, forward_loss, forward_view, grad_check, gradcheck_fixture,
                          param_groups)
from uwsplat.medium import MediumNet
from uwsplat.scene import CameraPose
from uwsplat.state import TrainState

GROUPS = ["gaussian.mu", "gaussian.quat", "gaussian.log_scale", "gaussian.raw_opacity", "gaussian.sh",
          "appearance.pose_mlp", "appearance.correct_mlp", "medium.backscatter", "medium.attenuation"]


@pytest.fixture(scope="module")
def fixture():
    return gradcheck_fixture()


def one_gaussian_state(raw_opacity=0.0, rgb=(0.5, 0.5, 0.5)):
    scene = single_gaussian([0, 0, -3], log_scale=(-0.5, -0.5, -0.5), opacity_raw=raw_opacity, rgb=rgb)
    return TrainState(scene=scene, appearance=AppearanceNet(), medium=MediumNet(), use_medium=False)


def test_groups_and_stable_enumeration(fixture):
    state, _ = fixture
    assert list(param_groups(state)) == GROUPS
    a, b = flat_params(state), flat_params(state)
    assert all(np.array_equal(a[g], b[g]) for g in GROUPS)
    assert a["gaussian.mu"].size == 30 and a["gaussian.sh"].size == 10 * 48


def test_self_consistent_targets_give_zero_loss(fixture):
    state, views = fixture
    with torch.no_grad():
        own = [(p, forward_view(state, p).image.detach()) for p, _ in views]
        assert float(forward_loss(state, own)) < 1e-12


def test_loss_invariant_to_view_order(fixture):
    state, views = fixture
    with torch.no_grad():
        a = float(forward_loss(state, views))
        b = float(forward_loss(state, views[::-1]))
    assert a == pytest.approx(b, rel=1e-14)


def test_empty_view_list_rejected(fixture):
    state, _ = fixture
    with pytest.raises(ValueError):
        forward_loss(state, [])


def test_gradient_linear_over_views(fixture):
    state, views = fixture
    _, both = backward(state, views)
    _, g1 = backward(state, views[:1])
    _, g2 = backward(state, views[1:])
    for g in GROUPS:
        np.testing.assert_allclose(both[g], g1[g] + g2[g], rtol=0, atol=1e-10)


def test_backward_is_deterministic(fixture):
    state, views = fixture
    l1, a = backward(state, views)
    l2, b = backward(state, views)
    assert l1 == l2
    assert all(np.array_equal(a[g], b[g]) for g in GROUPS)


def test_invisible_gaussian_has_zero_gradient():
    state = one_gaussian_state(raw_opacity=-10.0)  # alpha < 1/255 at every pixel
    pose = CameraPose.from_center([0, 0, 0], 16, 8)
    target = torch.full((8, 16, 3), 0.7, dtype=torch.float64)
    _, g = backward(state, [(pose, target)])
    for name in GROUPS[:5]:
        assert np.all(g[name] == 0.0)


def test_opacity_gradient_sign_matches_sweep():
    pose = CameraPose.from_center([0, 0, 0], 16, 8)
    target = torch.full((8, 16, 3), 0.9, dtype=torch.float64)
    state = one_gaussian_state(raw_opacity=0.0, rgb=(0.9, 0.9, 0.9))
    _, g = backward(state, [(pose, target)])
    grad = g["gaussian.raw_opacity"][0]
    losses = []
    for ro in (-0.1, 0.1):
        s = one_gaussian_state(raw_opacity=ro, rgb=(0.9, 0.9, 0.9))
        with torch.no_grad():
            losses.append(float(forward_loss(s, [(pose, target)])))
    assert grad < 0 and losses[1] < losses[0]


def test_dc_sweep_toward_target_lowers_loss():
    pose = CameraPose.from_center([0, 0, 0], 16, 8)
    state = one_gaussian_state(raw_opacity=4.0, rgb=(0.2, 0.2, 0.2))
    with torch.no_grad():
        target = forward_view(one_gaussian_state(raw_opacity=4.0, rgb=(0.8, 0.8, 0.8)), pose).image
    prev = None
    for c in np.linspace(0.2, 0.8, 7):
        s = one_gaussian_state(raw_opacity=4.0, rgb=(c, c, c))
        with torch.no_grad():
            cur = float(forward_loss(s, [(pose, target)]))
        if prev is not None:
            assert cur < prev
        prev = cur
    assert prev < 1e-12


def test_grad_check_subsampled(fixture):
    state, views = fixture
    rep = grad_check(state, views, max_per_group=12, seed=1)
    assert list(rep.groups) == GROUPS
    assert rep.passed, "\n".join(rep.lines())
    assert len(rep.lines()) == len(GROUPS)


def test_grad_check_with_zero_initialised_correction():
    state, views = gradcheck_fixture(n_gaussians=6, seed=2)
    state.appearance = AppearanceNet(dtype=torch.float64)
    _, g = backward(state, views)
    # zero weights in the last layer still receive gradient
    n_last = 6 * 128 + 6
    assert np.any(g["appearance.correct_mlp"][-n_last:] != 0)
    rep = grad_check(state, views, max_per_group=8, seed=3)
    assert rep.passed, "\n".join(rep.lines())


def test_finite_difference_error_is_second_order(fixture):
    state, views = fixture
    _, g = backward(state, views)
    mu = state.scene.mu
    ratios = []
    with torch.no_grad():
        for j in range(6):
            errs = []
            for eps in (2e-3, 4e-3):
                flat = mu.view(-1)
                orig = float(flat[j])
                flat[j] = orig + eps
                up = float(forward_loss(state, views))
                flat[j] = orig - eps
                dn = float(forward_loss(state, views))
                flat[j] = orig
                errs.append(abs((up - dn) / (2 * eps) - g["gaussian.mu"][j]))
            if errs[0] > 1e-9:
                ratios.append(errs[1] / errs[0])
    assert ratios
    # doubling eps scales the truncation error by about 4
    assert 2.5 < float(np.median(ratios)) < 6.0
