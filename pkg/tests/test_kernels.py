import os
import subprocess
import sys

import numpy as np
import pytest

from phynf import kernels
from phynf.kernels import _fallback

from _oracles import fd_grad, rel_err


def _net(rng, d=4, h=7):
    return (
        rng.normal(size=(d, h)),
        rng.normal(size=h) * 0.3,
        rng.normal(size=(h, h)) / np.sqrt(h),
        rng.normal(size=h) * 0.3,
        rng.normal(size=(h, 1)),
    )


def _energy(x, W1, b1, W2, b2, w3):
    return float(np.sum(np.tanh(np.tanh(x @ W1 + b1) @ W2 + b2) @ w3))


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_forward_is_energy_gradient(backend, rng):
    if backend == "cython" and not kernels.compiled_available():
        pytest.skip("compiled kernel not built")
    fwd = kernels.get_backend(backend).hamgrad_forward
    W1, b1, W2, b2, w3 = _net(rng)
    x = rng.normal(size=(5, 4))
    G = fwd(x, W1, b1, W2, b2, w3)[0]
    ref = fd_grad(lambda: _energy(x, W1, b1, W2, b2, w3), x, h=1e-6)
    assert rel_err(G, ref) < 1e-8


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_backward_is_vjp(backend, rng):
    if backend == "cython" and not kernels.compiled_available():
        pytest.skip("compiled kernel not built")
    mod = kernels.get_backend(backend)
    fwd, bwd = mod.hamgrad_forward, mod.hamgrad_backward
    W1, b1, W2, b2, w3 = _net(rng)
    x = rng.normal(size=(5, 4))
    V = rng.normal(size=(5, 4))
    G, a1, a2, c1 = fwd(x, W1, b1, W2, b2, w3)
    grads = bwd(V, x, W1, W2, w3, a1, a2, c1)
    inputs = [x, W1, b1, W2, b2, w3]

    def contraction():
        return float(np.sum(V * _fallback.hamgrad_forward(*inputs)[0]))

    for g, arr in zip(grads, inputs):
        assert rel_err(g, fd_grad(contraction, arr)) < 1e-7


def test_backends_agree(rng):
    if not kernels.compiled_available():
        pytest.skip("compiled kernel not built")
    cy, py = kernels.get_backend("cython"), kernels.get_backend("python")
    cf, cb = cy.hamgrad_forward, cy.hamgrad_backward
    pf, pb = py.hamgrad_forward, py.hamgrad_backward
    for n, d, h in [(1, 3, 2), (9, 4, 16), (64, 4, 128)]:
        W1, b1, W2, b2, w3 = _net(rng, d, h)
        x = rng.normal(size=(n, d))
        V = rng.normal(size=(n, d))
        fc, fp = cf(x, W1, b1, W2, b2, w3), pf(x, W1, b1, W2, b2, w3)
        for a, b in zip(fc, fp):
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)
        for a, b in zip(cb(V, x, W1, W2, w3, *fc[1:]), pb(V, x, W1, W2, w3, *fp[1:])):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_env_forces_fallback():
    code = "from phynf import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "PHYNF_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
