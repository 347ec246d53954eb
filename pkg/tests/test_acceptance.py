"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s -v``.  The two training
criteria take several minutes on one CPU.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from phynf import harness
from phynf import hybridvae as hv
from phynf.attention import AttentionParams, attention_weights, self_attention
from phynf.diffcore import Tensor, no_grad
from phynf.flows import FlowChain, PlanarFlowParams, chain_forward
from phynf.physics import IntegrationGrid, QuadraticHamiltonian, hamiltonian_vector_field, init_hamiltonian, rk4_integrate

from _oracles import (
    SECOND_ORDER_GROUPS,
    fd_grad,
    grid_mass,
    loop_attention,
    model_gradient_errors,
    numerical_jacobian,
    rel_err,
    tiny_config,
    tiny_experiment,
)

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    t0 = time.perf_counter()

    def emit(name: str, ok: bool, detail: str, budget_s: float | None = None):
        elapsed = time.perf_counter() - t0
        if budget_s is not None:
            ok = ok and elapsed < budget_s
            detail = f"{detail}; {elapsed:.1f}s (budget {budget_s:.0f}s)"
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return emit


def test_gradient_correctness(report):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 8))
    worst_first, worst_second, failures = 0.0, 0.0, []
    for variant in hv.VARIANTS:
        model = hv.HybridModel(tiny_config(variant), seed=1)
        for group, err in model_gradient_errors(model, x, per_tensor=16).items():
            second = group in SECOND_ORDER_GROUPS
            if second:
                worst_second = max(worst_second, err)
            else:
                worst_first = max(worst_first, err)
            if err >= (1e-3 if second else 1e-4):
                failures.append(f"{variant}/{group}={err:.2e}")
    report(
        "gradient correctness",
        not failures,
        f"max rel err first-order {worst_first:.2e}, second-order path {worst_second:.2e}" + (f"; {failures}" if failures else ""),
        budget_s=120,
    )


def _random_chain(rng, d, k):
    flows = [
        PlanarFlowParams(Tensor(rng.normal(size=d)), Tensor(rng.normal(size=d)), Tensor(np.asarray(rng.normal())))
        for _ in range(k)
    ]
    return FlowChain(d, flows)


def test_flow_exactness(report):
    rng = np.random.default_rng(0)
    worst = 0.0
    for d in (1, 2, 3, 5):
        for k in (1, 3, 5):
            for _ in range(200):
                chain = _random_chain(rng, d, k)
                z = rng.normal(size=d)

                def fn(v):
                    with no_grad():
                        return chain_forward(Tensor(v[None]), chain)[0].data[0]

                _, s = chain_forward(Tensor(z[None]), chain)
                det = abs(np.linalg.det(numerical_jacobian(fn, z)))
                worst = max(worst, abs(np.exp(s.data[0]) - det) / det)
    masses = [grid_mass(_random_chain(np.random.default_rng(10 + k), 2, k)) for k in (1, 3, 5)]
    ok = worst < 1e-5 and all(0.98 <= m <= 1.02 for m in masses)
    report("flow exactness", ok, f"max rel det err {worst:.2e}; grid masses {[round(m, 5) for m in masses]}", budget_s=120)


def test_attention_contract(report):
    rng = np.random.default_rng(0)
    worst_form, worst_simplex, worst_perm = 0.0, 0.0, 0.0
    ok = True
    for _ in range(100):
        n, d = int(rng.integers(1, 8)), int(rng.integers(1, 6))
        mats = [rng.normal(size=(d, d)) for _ in range(3)]
        vecs = [rng.normal(size=d) for _ in range(3)]
        p = AttentionParams(*[Tensor(m) for m in mats], *[Tensor(v) for v in vecs])
        x = rng.normal(size=(n, d))
        out = self_attention(Tensor(x), p).data
        worst_form = max(worst_form, float(np.max(np.abs(out - loop_attention(x, *mats, *vecs)))))
        A = attention_weights(Tensor(x), p).data
        ok &= bool(np.all(A >= 0))
        worst_simplex = max(worst_simplex, float(np.max(np.abs(A.sum(axis=1) - 1.0))))
        perm = rng.permutation(n)
        worst_perm = max(worst_perm, float(np.max(np.abs(self_attention(Tensor(x[perm]), p).data - out[perm]))))
    ok = ok and worst_form <= 1e-12 and worst_simplex <= 1e-12 and worst_perm <= 1e-12
    report(
        "attention contract",
        ok,
        f"matrix vs pairwise {worst_form:.1e}; row-sum err {worst_simplex:.1e}; permutation err {worst_perm:.1e}",
        budget_s=30,
    )


def test_physics_contract(report):
    field = QuadraticHamiltonian()

    def traj(y0, t1, n_points):
        return rk4_integrate(lambda t, y: hamiltonian_vector_field(y, None, field), Tensor(y0), IntegrationGrid(0.0, t1, n_points))

    y0 = np.array([[0.7, -0.2]])
    H = [0.5 * float(np.sum(y.data**2)) for y in traj(y0, 2 * np.pi, 101)]
    drift = max(abs(h - H[0]) for h in H)

    def endpoint_error(n_steps):
        y = traj(np.array([[1.0, 0.0]]), 2.0, n_steps + 1)[-1].data[0]
        return np.linalg.norm(y - [np.cos(2.0), np.sin(2.0)])

    ratio = endpoint_error(20) / endpoint_error(40)

    rng = np.random.default_rng(0)
    net = init_hamiltonian(rng, 2, 16)
    s, z = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    x = np.concatenate([s, z], axis=1)

    def energy():
        with no_grad():
            return float(np.sum(net.energy(Tensor(x)).data))

    dH = fd_grad(energy, x, h=1e-6)
    worst = max(
        rel_err(hamiltonian_vector_field(Tensor(s), Tensor(z), net, mode).data, np.stack([-dH[:, 1], dH[:, 0]], axis=1))
        for mode in ("fused", "autodiff")
    )
    ok = drift < 1e-6 and 12 <= ratio <= 20 and worst < 1e-6
    report("physics contract", ok, f"energy drift {drift:.1e}; halving ratio {ratio:.2f}; field vs FD {worst:.1e}", budget_s=60)


def test_gaussian_kl_oracle(report):
    rng = np.random.default_rng(0)
    results = []
    for variant in ("OrdVAE", "NFPhyR"):
        model = hv.HybridModel(tiny_config(variant, k_aux=0), seed=2)
        model.aux_prior.logvar_head.biases[-1].data[...] = [0.4, -0.7, 0.1]
        model.aux_prior.mean_head.biases[-1].data[...] += [0.5, -0.3, 0.2]
        x = np.repeat(rng.normal(size=(1, 3, 8)), 10_000, axis=0)
        with no_grad():
            draw = hv.encode_aux(x, model, rng=rng)
        kl = hv.kl_estimate(draw).data
        exact = hv.gaussian_kl_closed_form(draw.m.data[0], np.exp(draw.logvar.data[0]))
        se = kl.std(ddof=1) / np.sqrt(len(kl))
        results.append((variant, kl.mean(), exact, se))
    ok = all(abs(mc - ex) < 2 * se for _, mc, ex, se in results)
    detail = "; ".join(f"{v}: MC {mc:.4f} vs closed form {ex:.4f} (2SE {2 * se:.4f})" for v, mc, ex, se in results)
    report("Gaussian-KL oracle", ok, detail, budget_s=60)


ORDERING_RUN = dict(synth_n=700, split_sizes=(400, 100, 200), epochs=10, seeds=(0, 1, 2), save_checkpoints=False)


@pytest.mark.slow
def test_variant_ordering(report, tmp_path):
    cfg = harness.ExperimentConfig(output_dir=str(tmp_path), **ORDERING_RUN)
    records = harness.run_variant_suite(cfg)
    mean = {v: float(np.mean([r.test_mae for r in records if r.variant == v])) for v in hv.VARIANTS}
    hybrids = ("OrdPhyR", "NFPhyR", "AttNFPhyR")
    ratio = mean["PhyVAE"] / max(mean[v] for v in hybrids)
    ok = ratio > 3.0 and mean["NFPhyR"] <= mean["OrdPhyR"]
    detail = ", ".join(f"{v} {m:.4f}" for v, m in mean.items()) + f"; PhyVAE / worst hybrid {ratio:.2f}"
    report("variant ordering", ok, detail, budget_s=20 * 60)


@pytest.mark.slow
def test_noise_sweep_shape_and_sanity(report, tmp_path):
    base = harness.ExperimentConfig(output_dir=str(tmp_path), synth_n=700, split_sizes=(400, 100, 200), save_checkpoints=False)
    data = harness.prepare_data(base)
    # Ord VAE at the full 10 epochs and 3 seeds; the physics variants at reduced epochs for shape
    _, grids = harness.noise_sweep(harness.with_config(base, noise_epochs=10, seeds=(0, 1, 2)), ("OrdVAE",), data)
    _, more = harness.noise_sweep(
        harness.with_config(base, output_dir=str(tmp_path / "phys"), noise_epochs=1, seeds=(0,)),
        ("OrdPhyR", "NFPhyR", "AttNFPhyR"),
        data,
    )
    grids.update(more)
    shapes_ok = set(grids) == set(harness.NOISE_VARIANTS) and all(g.mae.shape == (4, 5) for g in grids.values())
    ord_grid = grids["OrdVAE"]
    low, high = ord_grid.mae[0, 0], ord_grid.mae[-1, -1]
    rho = ", ".join(f"{v} {np.nanmean(g.spearman):+.2f}" for v, g in grids.items())
    report(
        "noise sweep",
        shapes_ok and high > low,
        f"grids {[g.mae.shape for g in grids.values()]}; OrdVAE (50,75) {high:.4f} vs (5,5) {low:.4f}, control {ord_grid.control:.4f}; mean Spearman {rho}",
        budget_s=30 * 60,
    )


def test_regularizer_knockout(report, tmp_path):
    cfg = harness.ExperimentConfig(output_dir=str(tmp_path), synth_n=200, epochs=2, batch_size=50, seeds=(0,), save_checkpoints=False)
    cells = [c[0] for c in harness.ABLATION_CELLS if c[0].startswith("reg_")]
    records = harness.ablation_suite(cfg, cells)
    ran = sorted({r.cell for r in records}) == sorted(cells)
    worst = max(abs(t - e) for r in records if r.cell.endswith("alpha0_beta0") for t, e in r.trace)
    steps = sum(len(r.trace) for r in records if r.cell.endswith("alpha0_beta0"))
    report("regularizer knockout", ran and worst <= 1e-12, f"{len(records)} cells ran; max |total - (-elbo)| {worst:.1e} over {steps} steps", budget_s=300)


def _result_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted((root / "results").glob("*.csv"))} | {
        "manifest.txt": (root / "manifest.txt").read_bytes()
    }


def test_determinism(report, tmp_path):
    outputs = []
    for run in ("a", "b"):
        cfg = tiny_experiment(tmp_path / run, noise_samples=(5, 50), noise_features=(5, 75))
        harness.run_variant_suite(cfg)
        harness.noise_sweep(cfg, ("OrdVAE", "NFPhyR"))
        harness.ablation_suite(cfg)
        outputs.append(_result_bytes(tmp_path / run))
    a, b = outputs
    differing = [k for k in a if a[k] != b.get(k)]
    report("determinism", a.keys() == b.keys() and not differing, f"{len(a)} result files compared; differing: {differing or 'none'}")
