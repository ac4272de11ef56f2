import math

import numpy as np
import pytest
import torch

from uwsplat.medium import MediumConfig, MediumNet, ShapeMismatch, compose_uifm, simulate_uifm_gt


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


def t(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


def e_view(rng, dim=32):
    return t(rng.normal(size=dim))


def randomised(rng, scale=1.0):
    net = MediumNet()
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(t(rng.normal(size=p.shape) * scale))
    return net


def test_zero_depth_attenuation(rng):
    net = randomised(rng)
    a = net.attenuation(torch.zeros(4, 5, dtype=torch.float64), e_view(rng))
    assert a.shape == (4, 5, 3)
    assert torch.max(torch.abs(a - 0.7310585786300049)) < 1e-12
    assert logistic(1.0) == pytest.approx(0.731059, abs=1e-6)


def test_zero_init_backscatter(rng):
    net = MediumNet()
    with torch.no_grad():
        for name in ("wb", "bb", "wr", "br"):
            getattr(net, name).zero_()
    d = t(rng.uniform(0, 10, size=(3, 4)))
    b = net.backscatter(d)
    expect = 0.5 * (net.binf + net.bres)
    assert torch.equal(b, expect.expand(3, 4, 3))


def test_bounds_on_random_inputs(rng):
    for scale in (0.1, 0.5, 1.0, 2.0, 5.0) * 2:
        net = randomised(rng, scale=scale)
        d = t(rng.uniform(0, 50, size=(1000,)))
        a, b = net.maps(d, e_view(rng) * 3)
        assert torch.all(a > 0) and torch.all(a < 1)
        assert torch.all(b >= 0) and torch.all(b <= net.binf + net.bres)


def test_far_limit_attenuation():
    net = MediumNet()
    with torch.no_grad():
        net.ba.fill_(5.0)
        net.wa.zero_()
    a = net.attenuation(torch.tensor([1e4], dtype=torch.float64), torch.zeros(32, dtype=torch.float64))
    assert float(a[0, 0].detach()) == pytest.approx(0.5, abs=1e-12)


def test_scalar_attenuation_oracle():
    net = MediumNet()
    with torch.no_grad():
        net.wa.zero_()
        net.ba.zero_()
        net.lam.copy_(torch.tensor([1.0, 0, 0, 0]))
    a = net.attenuation(torch.tensor([2.0], dtype=torch.float64), torch.zeros(32, dtype=torch.float64))
    assert float(a[0, 0].detach()) == pytest.approx(logistic(math.exp(-1.0)), rel=1e-14)


def test_backscatter_saturates():
    net = MediumNet()
    with torch.no_grad():
        net.wb.fill_(1.0)
        net.wr.fill_(1.0)
    b = net.backscatter(torch.tensor([200.0], dtype=torch.float64))
    torch.testing.assert_close(b[0], net.binf, rtol=1e-12, atol=1e-12)


def test_backscatter_terms_monotone():
    net = MediumNet()
    with torch.no_grad():
        net.wb.fill_(0.4)
        net.wr.fill_(0.7)
        net.bb.fill_(-0.3)
    d = torch.linspace(0, 20, 200, dtype=torch.float64)
    first = net.binf * (1 - torch.exp(-torch.nn.functional.softplus(d[:, None] * net.wb + net.bb)))
    second = net.bres * torch.exp(-torch.nn.functional.softplus(d[:, None] * net.wr + net.br))
    assert torch.all(first[1:] > first[:-1])
    assert torch.all(second[1:] < second[:-1])
    torch.testing.assert_close(first + second, net.backscatter(d), rtol=0, atol=1e-15)


def test_attenuation_non_increasing_with_fixed_coefficient(rng):
    net = randomised(rng)
    with torch.no_grad():
        net.lam.abs_()
        net.wa[:, 0] = 0.0   # a does not depend on D
    d = torch.linspace(0, 30, 300, dtype=torch.float64)
    a = net.attenuation(d, e_view(rng))[:, 0]
    assert torch.all(a[1:] <= a[:-1])


def test_compose_examples(rng):
    shape = (3, 4, 3)
    j, a, b = (t(rng.uniform(size=shape)) for _ in range(3))
    assert torch.equal(compose_uifm(torch.zeros(shape, dtype=torch.float64), a, b), b)
    assert torch.equal(compose_uifm(j, torch.ones(shape, dtype=torch.float64), torch.zeros(shape, dtype=torch.float64)), j)
    j2 = t(rng.uniform(size=shape))
    z = torch.zeros(shape, dtype=torch.float64)
    torch.testing.assert_close(compose_uifm(j + j2, a, z), compose_uifm(j, a, z) + compose_uifm(j2, a, z),
                               rtol=0, atol=1e-12)
    with pytest.raises(ShapeMismatch):
        compose_uifm(j, a[:2], b)


def test_compose_gradients_match_finite_differences(rng):
    net = randomised(rng, scale=0.5)
    d = t(rng.uniform(0.5, 5, size=(3, 2))).requires_grad_(True)
    ev = e_view(rng)
    j = t(rng.uniform(size=(3, 2, 3)))
    w = t(rng.normal(size=(3, 2, 3)))

    def loss():
        a, b = net.maps(d, ev)
        return (compose_uifm(j, a, b) * w).sum()

    loss().backward()
    for p in [d, *net.parameters()]:
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            old = float(flat[i])
            with torch.no_grad():
                flat[i] = old + 1e-6
                up = float(loss())
                flat[i] = old - 1e-6
                dn = float(loss())
                flat[i] = old
            assert float(p.grad.view(-1)[i]) == pytest.approx((up - dn) / 2e-6, rel=1e-3, abs=1e-7)


def test_simulator_examples(rng):
    j = rng.uniform(size=(4, 6, 3))
    d = rng.uniform(0, 10, size=(4, 6))
    np.testing.assert_array_equal(simulate_uifm_gt(j, np.zeros((4, 6)), (0.1, 0.2, 0.3), (0.3, 0.2, 0.1), (0.1, 0.2, 0.3)), j)
    np.testing.assert_array_equal(simulate_uifm_gt(j, d, (0, 0, 0), (0, 0, 0), (0.1, 0.2, 0.3)), j)
    ln2 = math.log(2)
    np.testing.assert_allclose(simulate_uifm_gt(j, np.ones((4, 6)), (ln2,) * 3, (0, 0, 0), (0.5,) * 3), j / 2,
                               rtol=1e-15)
    with pytest.raises(ValueError):
        simulate_uifm_gt(j, d, (-0.1, 0, 0), (0, 0, 0), (0, 0, 0))


def test_init_defaults():
    net = MediumNet(MediumConfig())
    torch.testing.assert_close(net.binf, torch.full((3,), 0.05, dtype=torch.float64))
    torch.testing.assert_close(net.lam, torch.full((4,), 0.25, dtype=torch.float64))
    assert net.wa.shape == (4, 33)
