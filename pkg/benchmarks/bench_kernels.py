"""Time the energy-gradient kernel: compiled vs numpy, and the decoder that uses it.

    python benchmarks/bench_kernels.py [--repeat 7] [--batch 100]

Kernel rows time one forward and one backward call of each backend.  The
decoder rows time a full physics decode plus its backward pass, once through
the fused primitive and once through the generic autodiff route.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from phynf import kernels
from phynf.diffcore import Tensor, grad_through_grad, square, tsum
from phynf.physics import IntegrationGrid, init_hamiltonian, init_readout, physics_decode


def _net(rng, d, h):
    return (
        rng.normal(size=(d, h)) * 0.3,
        rng.normal(size=h) * 0.1,
        rng.normal(size=(h, h)) / np.sqrt(h),
        rng.normal(size=h) * 0.1,
        rng.normal(size=(h, 1)) / np.sqrt(h),
    )


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_kernel(name, batch, hidden, repeat):
    mod = kernels.get_backend(name)
    rng = np.random.default_rng(0)
    W1, b1, W2, b2, w3 = _net(rng, 4, hidden)
    x = rng.normal(size=(batch, 4))
    V = rng.normal(size=(batch, 4))
    G, a1, a2, c1 = mod.hamgrad_forward(x, W1, b1, W2, b2, w3)
    fwd = _best(lambda: mod.hamgrad_forward(x, W1, b1, W2, b2, w3), repeat, 200)
    bwd = _best(lambda: mod.hamgrad_backward(V, x, W1, W2, w3, a1, a2, c1), repeat, 200)
    return fwd, bwd


def bench_decoder(mode, batch, repeat):
    rng = np.random.default_rng(0)
    field = init_hamiltonian(rng, 2, 128)
    readout = init_readout(3, 2, rng)
    z = Tensor(rng.normal(size=(batch, 2)))
    x0 = Tensor(rng.normal(size=(batch, 3)))
    grid = IntegrationGrid(0.0, 1.0, 100)
    params = list({**field.parameters(), **readout.parameters()}.values())

    def step():
        grad_through_grad(lambda: tsum(square(physics_decode(z, x0, field, readout, grid, mode))), params)

    return _best(step, max(1, repeat // 2), 1)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--batch", type=int, default=100)
    ap.add_argument("--hidden", type=int, default=128)
    args = ap.parse_args(argv)

    backends = ["python"] + (["cython"] if kernels.compiled_available() else [])
    print(f"import-time backend: {kernels.BACKEND}; batch {args.batch}, hidden {args.hidden}")
    print(f"{'kernel':<10}{'forward us':>14}{'backward us':>14}")
    rows = {}
    for name in backends:
        fwd, bwd = bench_kernel(name, args.batch, args.hidden, args.repeat)
        rows[name] = fwd + bwd
        print(f"{name:<10}{fwd * 1e6:>14.1f}{bwd * 1e6:>14.1f}")
    if "cython" in rows:
        print(f"compiled speedup (forward + backward): {rows['python'] / rows['cython']:.2f}x")

    print(f"\n{'decoder (99 RK4 steps, fwd + bwd)':<36}{'ms':>10}")
    for mode in ("fused", "autodiff"):
        print(f"{mode:<36}{bench_decoder(mode, args.batch, args.repeat) * 1e3:>10.1f}")


if __name__ == "__main__":
    main()
