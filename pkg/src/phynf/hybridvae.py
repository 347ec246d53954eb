"""Physics-integrated VAE with planar-flow posteriors and attentive fusion.

Two latents: ``z_aux`` (decoded by an MLP) and ``z_P`` (decoded by the
Hamiltonian ODE).  Each posterior is a learned diagonal Gaussian optionally
pushed through a planar-flow chain and optionally fused with batch attention.
The physics posterior is conditioned on ``[x, m_aux]``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as gait
from .attention import AttentionParams, attentive_fuse, init_attention, self_attention
from .diffcore import (
    MlpParams,
    Tensor,
    as_tensor,
    concat_lastdim,
    exp,
    init_mlp,
    mean,
    mlp_forward,
    mul,
    square,
    tsum,
)
from .flows import FlowChain, chain_forward, init_chain
from .physics import (
    HamiltonianField,
    IntegrationGrid,
    ReadoutParams,
    init_hamiltonian,
    init_readout,
    physics_decode,
)

LOG_2PI = math.log(2.0 * math.pi)
FAMILIES = ("gauss", "nf", "attnf")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "NFPhyR"
    aux_family: str | None = "nf"
    phys_family: str | None = "nf"
    regularized: bool = True
    n_channels: int = 3
    n_points: int = 100
    dim_z_aux: int = 15
    dim_z_phys: int = 2
    k_aux: int = 12
    k_phys: int = 5
    phys_trunk: tuple[int, ...] = (512, 512, -1, 512, 512, 512)  # -1 -> M*t
    phys_head: tuple[int, ...] = (128,)
    aux_trunk: tuple[int, ...] = (512, 512, 512)
    aux_head: tuple[int, ...] = (64, 32)
    aux_decoder: tuple[int, ...] = (512, 512)
    hamiltonian_hidden: int = 128
    sigma2: float = 1.0
    horizon: float = 1.0
    substeps: int = 1
    field_mode: str = "auto"
    flow_init_scale: float = 0.1
    attn_init_scale: float = 0.1

    def __post_init__(self):
        for fam in (self.aux_family, self.phys_family):
            if fam is not None and fam not in FAMILIES:
                raise ValueError(f"unknown posterior family {fam!r}")
        if self.aux_family is None and self.phys_family is None:
            raise ValueError("at least one latent must be active")
        if self.sigma2 <= 0:
            raise ValueError("observation variance must be positive")

    @property
    def obs_dim(self) -> int:
        return self.n_channels * self.n_points

    @property
    def has_aux(self) -> bool:
        return self.aux_family is not None

    @property
    def has_phys(self) -> bool:
        return self.phys_family is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items() if k in names}
        return cls(**kw)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


# The five model variants.
VARIANTS: dict[str, dict] = {
    "OrdVAE": dict(aux_family="gauss", phys_family=None, regularized=False),
    "PhyVAE": dict(aux_family=None, phys_family="gauss", regularized=False),
    "OrdPhyR": dict(aux_family="gauss", phys_family="gauss", regularized=True),
    "NFPhyR": dict(aux_family="nf", phys_family="nf", regularized=True),
    "AttNFPhyR": dict(aux_family="attnf", phys_family="attnf", regularized=True),
}


def variant_config(variant: str, **overrides) -> ModelConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return ModelConfig(variant=variant, **{**VARIANTS[variant], **overrides})


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


@dataclass
class FeatureExtractor:
    """Shared trunk ("Feature") feeding a mean head and a log-variance head."""

    trunk: MlpParams
    mean_head: MlpParams
    logvar_head: MlpParams

    def features(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = mlp_forward(self.trunk, x)
        if mask is not None:
            h = mul(h, Tensor(mask))
        return h

    def heads(self, h: Tensor) -> tuple[Tensor, Tensor]:
        return mlp_forward(self.mean_head, h), mlp_forward(self.logvar_head, h)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for m in (self.trunk, self.mean_head, self.logvar_head):
            out.update(m.parameters())
        return out


def init_extractor(in_dim, trunk, head, out_dim, rng, name) -> FeatureExtractor:
    trunk_dims = [in_dim, *trunk]
    feat = trunk_dims[-1]
    return FeatureExtractor(
        trunk=init_mlp(trunk_dims, rng, out_activation="tanh", name=f"{name}.trunk"),
        mean_head=init_mlp([feat, *head, out_dim], rng, name=f"{name}.mean"),
        logvar_head=init_mlp([feat, *head, out_dim], rng, name=f"{name}.logvar", zero_last=True),
    )


@dataclass
class LatentDraw:
    z: Tensor  # latent handed to the decoder (after optional attentive fusion)
    z_flow: Tensor  # output of the flow chain
    z0: Tensor
    m: Tensor
    logvar: Tensor
    log_q0: Tensor  # (N,)
    sum_log_det: Tensor  # (N,)
    log_q: Tensor  # (N,)  log density of z_flow under the flow posterior

    @property
    def var(self) -> Tensor:
        return exp(self.logvar)


@dataclass
class LossBreakdown:
    elbo: float
    recon_term: float
    kl_phys: float
    kl_aux: float
    r_t1: float
    r_t2: float
    total: float
    loss: Tensor | None = field(default=None, repr=False, compare=False)

    def as_row(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("elbo", "recon_term", "kl_phys", "kl_aux", "r_t1", "r_t2", "total")}


class HybridModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        c = config
        D = c.obs_dim
        self.aux_prior = self.phys_prior = None
        self.aux_chain = FlowChain(c.dim_z_aux)
        self.phys_chain = FlowChain(c.dim_z_phys)
        self.aux_attn: AttentionParams | None = None
        self.phys_attn: AttentionParams | None = None
        self.aux_decoder: MlpParams | None = None
        self.hamiltonian: HamiltonianField | None = None
        self.readout: ReadoutParams | None = None
        # Submodules are drawn in a fixed order so that variants sharing a
        # submodule start from the same weights for a given seed.
        if c.has_aux:
            self.aux_prior = init_extractor(D, c.aux_trunk, c.aux_head, c.dim_z_aux, rng, "aux_prior")
            self.aux_decoder = init_mlp([c.dim_z_aux, *c.aux_decoder, D], rng, name="aux_decoder")
        if c.has_phys:
            trunk = tuple(D if w == -1 else w for w in c.phys_trunk)
            self.phys_prior = init_extractor(D + c.dim_z_aux, trunk, c.phys_head, c.dim_z_phys, rng, "phys_prior")
            self.hamiltonian = init_hamiltonian(rng, c.dim_z_phys, c.hamiltonian_hidden)
            self.readout = init_readout(c.n_channels, c.dim_z_phys, rng)
        frng = np.random.default_rng([seed, 1])
        if c.aux_family in ("nf", "attnf"):
            self.aux_chain = init_chain(c.k_aux, c.dim_z_aux, frng, c.flow_init_scale)
        if c.phys_family in ("nf", "attnf"):
            self.phys_chain = init_chain(c.k_phys, c.dim_z_phys, frng, c.flow_init_scale)
        arng = np.random.default_rng([seed, 2])
        if c.aux_family == "attnf":
            self.aux_attn = init_attention(c.dim_z_aux, arng, c.attn_init_scale)
        if c.phys_family == "attnf":
            self.phys_attn = init_attention(c.dim_z_phys, arng, c.attn_init_scale)
        self.grid = IntegrationGrid(0.0, c.horizon, c.n_points, c.substeps)

    @property
    def variant(self) -> str:
        return self.config.variant

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.aux_prior is not None:
            out.update(self.aux_prior.parameters())
        if self.phys_prior is not None:
            out.update(self.phys_prior.parameters())
        out.update(self.aux_chain.parameters("aux_flow"))
        out.update(self.phys_chain.parameters("phys_flow"))
        if self.aux_attn is not None:
            out.update(self.aux_attn.parameters("aux_attn"))
        if self.phys_attn is not None:
            out.update(self.phys_attn.parameters("phys_attn"))
        if self.aux_decoder is not None:
            out.update(self.aux_decoder.parameters())
        if self.hamiltonian is not None:
            out.update(self.hamiltonian.parameters())
            out.update(self.readout.parameters())
        return out

    def parameter_groups(self) -> dict[str, list[str]]:
        groups: dict[str, list[str]] = {}
        for name in self.parameters():
            groups.setdefault(name.split(".")[0], []).append(name)
        return groups

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.copy()


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------


def reparam_sample(m, var, rng: np.random.Generator | None = None, eps: np.ndarray | None = None) -> Tensor:
    """``m + sqrt(var) * eps`` with ``eps ~ N(0, I)`` (or the given ``eps``)."""
    m, var = as_tensor(m), as_tensor(var)
    if np.any(var.data < 0) or not np.all(np.isfinite(var.data)):
        raise ValueError("variance must be non-negative and finite")
    if eps is None:
        eps = rng.standard_normal(m.shape) if rng is not None else np.zeros(m.shape)
    if np.all(var.data > 0):
        std = exp(mul(0.5, _log(var)))
    else:
        std = Tensor(np.sqrt(var.data))
    return m + mul(std, Tensor(eps))


def _log(t: Tensor) -> Tensor:
    from .diffcore import log

    return log(t)


def gaussian_log_pdf(x, m, var) -> Tensor:
    """Diagonal Gaussian log-density summed over the last axis."""
    var = as_tensor(var)
    if np.any(var.data <= 0):
        raise ValueError("variance must be positive")
    return gaussian_log_pdf_logvar(x, m, _log(var))


def gaussian_log_pdf_logvar(x, m, logvar) -> Tensor:
    x, m, logvar = as_tensor(x), as_tensor(m), as_tensor(logvar)
    quad = mul(square(x - m), exp(-logvar))
    return mul(tsum(quad + logvar + LOG_2PI, axis=-1), -0.5)


def standard_normal_log_pdf(z) -> Tensor:
    z = as_tensor(z)
    return mul(tsum(square(z) + LOG_2PI, axis=-1), -0.5)


def gaussian_kl_closed_form(m: np.ndarray, var: np.ndarray) -> np.ndarray:
    """KL(N(m, diag var) || N(0, I)) per row."""
    return 0.5 * np.sum(var + m * m - 1.0 - np.log(var), axis=-1)


# ---------------------------------------------------------------------------
# encoder / decoder
# ---------------------------------------------------------------------------


def _posterior(
    extractor: FeatureExtractor,
    inp: Tensor,
    chain: FlowChain,
    attn: AttentionParams | None,
    eps: np.ndarray | None,
    mask: np.ndarray | None,
) -> LatentDraw:
    h = extractor.features(inp, mask)
    m, logvar = extractor.heads(h)
    if eps is None:
        eps = np.zeros(m.shape)
    z0 = m + mul(exp(mul(0.5, logvar)), Tensor(eps))
    log_q0 = gaussian_log_pdf_logvar(z0, m, logvar)
    z_flow, sld = chain_forward(z0, chain)
    log_q = log_q0 - sld
    z = z_flow
    if attn is not None:
        z = attentive_fuse(z_flow, self_attention(z_flow, attn))
    return LatentDraw(z=z, z_flow=z_flow, z0=z0, m=m, logvar=logvar, log_q0=log_q0, sum_log_det=sld, log_q=log_q)


def _flatten(x) -> Tensor:
    x = as_tensor(x)
    return x.reshape(x.shape[0], -1) if x.ndim == 3 else x


def encode_aux(x, model: HybridModel, rng=None, eps=None, mask=None) -> LatentDraw:
    """Posterior draw for ``z_aux``; ``rng=None`` and ``eps=None`` gives the posterior mean path."""
    if model.aux_prior is None:
        raise ValueError(f"variant {model.variant} has no auxiliary latent")
    xf = _flatten(x)
    if eps is None and rng is not None:
        eps = rng.standard_normal((xf.shape[0], model.config.dim_z_aux))
    return _posterior(model.aux_prior, xf, model.aux_chain, model.aux_attn, eps, mask)


def encode_phys(x, m_aux, model: HybridModel, rng=None, eps=None, mask=None) -> LatentDraw:
    """Posterior draw for ``z_P`` from the mixed input ``[x, m_aux]``."""
    if model.phys_prior is None:
        raise ValueError(f"variant {model.variant} has no physics latent")
    xf = _flatten(x)
    if m_aux is None:
        m_aux = Tensor(np.zeros((xf.shape[0], model.config.dim_z_aux)))
    mixed = concat_lastdim([xf, as_tensor(m_aux)])
    if eps is None and rng is not None:
        eps = rng.standard_normal((xf.shape[0], model.config.dim_z_phys))
    return _posterior(model.phys_prior, mixed, model.phys_chain, model.phys_attn, eps, mask)


@dataclass
class Decoded:
    x_hat: Tensor
    f_p: Tensor | None
    f_a: Tensor | None


def decode_aux(z_aux, model: HybridModel) -> Tensor:
    c = model.config
    out = mlp_forward(model.aux_decoder, as_tensor(z_aux))
    return out.reshape(out.shape[0], c.n_channels, c.n_points)


def decode_phys(z_p, x0, model: HybridModel) -> Tensor:
    return physics_decode(z_p, x0, model.hamiltonian, model.readout, model.grid, model.config.field_mode)


def decode(z_p, z_aux, x0, model: HybridModel) -> Decoded:
    """``x_hat = f_P + f_A`` (only the active branch for single-latent models)."""
    f_a = decode_aux(z_aux, model) if model.config.has_aux else None
    f_p = decode_phys(z_p, x0, model) if model.config.has_phys else None
    if f_a is None:
        x_hat = f_p
    elif f_p is None:
        x_hat = f_a
    else:
        x_hat = f_p + f_a
    return Decoded(x_hat, f_p, f_a)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def recon_log_likelihood(x, x_hat, sigma2: float) -> Tensor:
    """Per-sample ``log N(x | x_hat, sigma2 I)`` summed over every entry."""
    if sigma2 <= 0:
        raise ValueError("observation variance must be positive")
    x, x_hat = _flatten(x), _flatten(x_hat)
    n = x.shape[-1]
    sq = tsum(square(x - x_hat), axis=-1)
    return mul(sq, -0.5 / sigma2) - 0.5 * n * math.log(2.0 * math.pi * sigma2)


def kl_estimate(draw: LatentDraw) -> Tensor:
    """Single-draw estimate of KL(q || N(0, I)) per sample."""
    return draw.log_q - standard_normal_log_pdf(draw.z_flow)


@dataclass
class ElboTerms:
    elbo: Tensor  # (N,)
    recon: Tensor
    kl_aux: Tensor | None
    kl_phys: Tensor | None


def elbo(x, aux: LatentDraw | None, phys: LatentDraw | None, x_hat, model: HybridModel) -> ElboTerms:
    recon = recon_log_likelihood(x, x_hat, model.config.sigma2)
    out = recon
    kl_a = kl_p = None
    if aux is not None:
        kl_a = kl_estimate(aux)
        out = out - kl_a
    if phys is not None:
        kl_p = kl_estimate(phys)
        out = out - kl_p
    return ElboTerms(out, recon, kl_a, kl_p)


def regularizers(x, phys: LatentDraw, f_p, model: HybridModel) -> tuple[Tensor, Tensor]:
    """Physics-branch penalties.

    ``r_t1``: mean squared gap between the data and the physics-only output.
    ``r_t2``: re-encode the physics output (zero mixing block) and penalize the
    distance of its posterior mean from the original one (held fixed).
    """
    x = as_tensor(x)
    r_t1 = mean(square(x - f_p))
    fpf = _flatten(f_p)
    mixed = concat_lastdim([fpf, Tensor(np.zeros((fpf.shape[0], model.config.dim_z_aux)))])
    h = model.phys_prior.features(mixed)
    m_re, _ = model.phys_prior.heads(h)
    r_t2 = mean(square(phys.m.detach() - m_re))
    return r_t1, r_t2


@dataclass
class ForwardPass:
    aux: LatentDraw | None
    phys: LatentDraw | None
    decoded: Decoded


def forward(
    x,
    model: HybridModel,
    rng: np.random.Generator | None = None,
    noise: gait.NoiseSpec | None = None,
    noise_rng: np.random.Generator | None = None,
) -> ForwardPass:
    """Encode and decode a batch.  ``rng=None`` uses posterior means (eps = 0)."""
    x = as_tensor(x)
    c = model.config
    n = x.shape[0]
    aux = phys = None
    mask_a = mask_p = None
    if noise is not None:
        nrng = noise_rng if noise_rng is not None else np.random.default_rng(noise.seed)
        if c.has_aux:
            mask_a = gait.corruption_mask(n, model.aux_prior.trunk.out_dim, noise, nrng)
        if c.has_phys:
            mask_p = gait.corruption_mask(n, model.phys_prior.trunk.out_dim, noise, nrng)
    eps_a = rng.standard_normal((n, c.dim_z_aux)) if (rng is not None and c.has_aux) else None
    eps_p = rng.standard_normal((n, c.dim_z_phys)) if (rng is not None and c.has_phys) else None
    if c.has_aux:
        aux = encode_aux(x, model, eps=eps_a, mask=mask_a)
    if c.has_phys:
        phys = encode_phys(x, aux.m if aux is not None else None, model, eps=eps_p, mask=mask_p)
    x0 = x[:, :, 0]
    decoded = decode(phys.z if phys else None, aux.z if aux else None, x0, model)
    return ForwardPass(aux, phys, decoded)


def total_loss(
    x,
    model: HybridModel,
    rng: np.random.Generator | None,
    alpha: float = 1e-2,
    beta: float = 1e-1,
    noise: gait.NoiseSpec | None = None,
    noise_rng: np.random.Generator | None = None,
) -> LossBreakdown:
    """Batch-mean ``-ELBO + alpha * r_t1 + beta * r_t2``; ``.loss`` is differentiable."""
    if alpha < 0 or beta < 0:
        raise ValueError("regularizer weights must be non-negative")
    x = as_tensor(x)
    fp = forward(x, model, rng, noise, noise_rng)
    terms = elbo(x, fp.aux, fp.phys, fp.decoded.x_hat, model)
    neg_elbo = -mean(terms.elbo)
    loss = neg_elbo
    r1 = r2 = None
    if model.config.regularized and model.config.has_phys:
        r1, r2 = regularizers(x, fp.phys, fp.decoded.f_p, model)
        loss = loss + mul(r1, alpha) + mul(r2, beta)
    return LossBreakdown(
        elbo=float(np.mean(terms.elbo.data)),
        recon_term=float(np.mean(terms.recon.data)),
        kl_phys=float(np.mean(terms.kl_phys.data)) if terms.kl_phys is not None else 0.0,
        kl_aux=float(np.mean(terms.kl_aux.data)) if terms.kl_aux is not None else 0.0,
        r_t1=float(r1.data) if r1 is not None else 0.0,
        r_t2=float(r2.data) if r2 is not None else 0.0,
        total=float(loss.data),
        loss=loss,
    )


def reconstruct(x: np.ndarray, model: HybridModel, batch_size: int = 100) -> np.ndarray:
    """Deterministic posterior-mean reconstruction, evaluated in batches."""
    from .diffcore import no_grad

    out = []
    with no_grad():
        for start in range(0, len(x), batch_size):
            fp = forward(x[start : start + batch_size], model, rng=None)
            out.append(fp.decoded.x_hat.data)
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: HybridModel, extra: dict | None = None) -> None:
    meta = {
        "variant": model.variant,
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "seed": model.seed,
        **(extra or {}),
    }
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[HybridModel, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        state = {k[len("param/") :]: z[k] for k in z.files if k.startswith("param/")}
    config = ModelConfig.from_dict(meta["config"])
    model = HybridModel(config, seed=meta.get("seed", 0))
    model.load_state_dict(state)
    return model, meta


def with_overrides(config: ModelConfig, **kw) -> ModelConfig:
    return replace(config, **kw)
