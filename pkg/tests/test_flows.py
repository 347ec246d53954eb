import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phynf.diffcore import Tensor, grad, no_grad, softplus, tsum
from phynf.flows import (
    DegenerateDirectionError,
    FlowChain,
    PlanarFlowParams,
    SingularJacobianError,
    chain_forward,
    constrain_u,
    flow_log_density,
    init_chain,
    planar_forward,
)

from _oracles import fd_grad, grid_mass, numerical_jacobian, rel_err


def _flow(u, w, b):
    return PlanarFlowParams(Tensor(np.asarray(u, float), requires_grad=True), Tensor(np.asarray(w, float), requires_grad=True), Tensor(np.asarray(b, float), requires_grad=True))


def _random_flow(rng, d, scale=1.0):
    return _flow(rng.normal(size=d) * scale, rng.normal(size=d) * scale, rng.normal() * scale)


def _map(chain):
    def fn(z):
        with no_grad():
            return chain_forward(Tensor(z[None]), chain)[0].data[0]

    return fn


def test_projection_when_orthogonal():
    u, w = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    uh = constrain_u(_flow(u, w, 0.0)).data
    sp0 = np.log(2.0)
    np.testing.assert_allclose(uh, u + (sp0 - 1.0) * w / 4.0, rtol=0, atol=1e-15)
    assert w @ uh == pytest.approx(-1.0 + sp0)
    assert w @ uh == pytest.approx(-0.3068528194400547)


def test_projection_of_zero_u():
    w = np.array([0.4, -1.1, 2.0])
    uh = constrain_u(_flow(np.zeros(3), w, 0.0)).data
    assert w @ uh == pytest.approx(-1.0 + np.log(2.0))


def test_projection_sweep(rng):
    for _ in range(1000):
        d = rng.integers(1, 6)
        f = _random_flow(rng, d, scale=3.0)
        assert f.w.data @ constrain_u(f).data >= -1.0 - 1e-12


def test_zero_direction_rejected():
    with pytest.raises(DegenerateDirectionError):
        constrain_u(_flow([1.0, 2.0], [0.0, 0.0], 0.0))


def test_zero_u_is_identity(rng):
    f = _flow(np.zeros(3), rng.normal(size=3), 0.3)
    z = rng.normal(size=(4, 3))
    z2, ld = planar_forward(Tensor(z), f, u_hat=Tensor(np.zeros(3)))
    np.testing.assert_array_equal(z2.data, z)
    np.testing.assert_array_equal(ld.data, np.zeros(4))


def test_saturated_flow_has_zero_log_det(rng):
    f = _flow(rng.normal(size=2), np.array([0.1, 0.2]), 50.0)
    _, ld = planar_forward(Tensor(rng.normal(size=(3, 2))), f)
    np.testing.assert_allclose(ld.data, 0.0, atol=1e-12)


def test_log_det_matches_2x2_jacobian(rng):
    for _ in range(20):
        chain = FlowChain(2, [_random_flow(rng, 2)])
        z = rng.normal(size=2)
        _, ld = planar_forward(Tensor(z[None]), chain.flows[0])
        det = abs(np.linalg.det(numerical_jacobian(_map(chain), z)))
        assert abs(np.exp(ld.data[0]) - det) / det < 1e-6


@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_log_det_exactness_property(d):
    rng = np.random.default_rng(d)
    for _ in range(200):
        chain = FlowChain(d, [_random_flow(rng, d)])
        z = rng.normal(size=d)
        _, ld = planar_forward(Tensor(z[None]), chain.flows[0])
        det = abs(np.linalg.det(numerical_jacobian(_map(chain), z)))
        assert abs(np.exp(ld.data[0]) - det) / det < 1e-5


def test_empty_chain_is_identity(rng):
    z = rng.normal(size=(3, 4))
    zk, s = chain_forward(Tensor(z), FlowChain(4))
    np.testing.assert_array_equal(zk.data, z)
    np.testing.assert_array_equal(s.data, np.zeros(3))


def test_chain_composes_stepwise(rng):
    chain = init_chain(2, 3, rng, scale=0.7)
    z = Tensor(rng.normal(size=(5, 3)))
    zk, s = chain_forward(z, chain)
    z1, l1 = planar_forward(z, chain.flows[0])
    z2, l2 = planar_forward(z1, chain.flows[1])
    np.testing.assert_array_equal(zk.data, z2.data)
    np.testing.assert_array_equal(s.data, (l1 + l2).data)


def test_chain_log_det_matches_composite_jacobian(rng):
    for _ in range(10):
        chain = FlowChain(2, [_random_flow(rng, 2) for _ in range(5)])
        z = rng.normal(size=2)
        _, s = chain_forward(Tensor(z[None]), chain)
        det = abs(np.linalg.det(numerical_jacobian(_map(chain), z)))
        assert abs(np.exp(s.data[0]) - det) / det < 1e-5


def test_log_density_passthrough():
    assert flow_log_density(Tensor(-1.25), Tensor(0.0)).item() == -1.25


@pytest.mark.parametrize("k", [1, 3, 5])
def test_density_normalizes_on_grid(k):
    rng = np.random.default_rng(10 + k)
    chain = FlowChain(2, [_random_flow(rng, 2) for _ in range(k)])
    assert 0.98 <= grid_mass(chain) <= 1.02


def test_near_linear_regime_log_det(rng):
    w = np.array([0.3, -0.2])
    f = _flow(np.array([1e-4, 2e-4]), w, 0.1)
    chain = FlowChain(2, [f])
    z = rng.normal(size=2)
    _, ld = planar_forward(Tensor(z[None]), f)
    det = abs(np.linalg.det(numerical_jacobian(_map(chain), z)))
    assert ld.data[0] == pytest.approx(np.log(det), abs=1e-9)


def test_log_det_gradients(rng):
    chain = FlowChain(3, [_random_flow(rng, 3) for _ in range(3)])
    z = Tensor(rng.normal(size=(4, 3)))

    def f():
        with no_grad():
            return float(np.sum(chain_forward(z, chain)[1].data))

    params = list(chain.parameters().values())
    grads = grad(tsum(chain_forward(z, chain)[1]), params)
    for p, g in zip(params, grads):
        assert rel_err(g.data, fd_grad(f, p.data)) < 1e-4


def test_singular_jacobian_detected():
    # u_hat bypasses the projection: w.u_hat = -1 at the origin gives det 0
    f = _flow([0.0, 0.0], [1.0, 0.0], 0.0)
    with pytest.raises(SingularJacobianError):
        planar_forward(Tensor(np.zeros((1, 2))), f, u_hat=Tensor([-1.0, 0.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_projection_property(u, w):
    if np.linalg.norm(w) < 1e-3:
        return
    uh = constrain_u(_flow(u, w, 0.0)).data
    assert np.dot(w, uh) >= -1.0 - 1e-9
    assert np.dot(w, uh) == pytest.approx(softplus(Tensor(np.dot(w, u))).item() - 1.0, abs=1e-9)
