"""Experiment runner: training loop, MAE evaluation, variant suite, noise sweep, ablations.

Every run is deterministic given ``(ExperimentConfig, seed)``.  Result CSVs hold
only reproducible numbers; wall-clock times go to a separate ``timings.csv``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import data as gait
from . import hybridvae as hv
from .diffcore import AdamState, adam_step, grad
from .physics import IntegrationError

log = logging.getLogger(__name__)

NOISE_SAMPLES = (5, 10, 25, 50)
NOISE_FEATURES = (5, 10, 25, 50, 75)
NOISE_VARIANTS = ("OrdVAE", "OrdPhyR", "NFPhyR", "AttNFPhyR")
SUITE_VARIANTS = tuple(hv.VARIANTS)


class TrainingDivergedError(ArithmeticError):
    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "NFPhyR"
    epochs: int = 50
    noise_epochs: int = 10
    batch_size: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-6
    eps: float = 1e-3
    alpha: float = 1e-2
    beta: float = 1e-1
    k_aux: int = 12
    k_phys: int = 5
    seeds: tuple[int, ...] = (0, 1, 2)
    csv_path: str | None = None
    synth_n: int = 844
    data_seed: int = 0
    split_sizes: tuple[int, int, int] | None = None
    n_points: int = 100
    noise_samples: tuple[int, ...] = NOISE_SAMPLES
    noise_features: tuple[int, ...] = NOISE_FEATURES
    noise_variants: tuple[str, ...] = NOISE_VARIANTS
    output_dir: str = "runs"
    degrees: bool = False
    workers: int = 1
    save_checkpoints: bool = True
    model: dict = field(default_factory=dict)  # extra ModelConfig overrides

    def __post_init__(self):
        if self.epochs < 0 or self.noise_epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("regularizer weights must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) and k != "model" else v for k, v in d.items()}
        return cls(**kw)

    def hash(self) -> str:
        # output location and parallelism never change results
        d = {k: v for k, v in self.to_dict().items() if k not in ("output_dir", "workers", "save_checkpoints")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def model_config(self, variant: str | None = None, **overrides) -> hv.ModelConfig:
        kw = {"k_aux": self.k_aux, "k_phys": self.k_phys, "n_points": self.n_points, **self.model, **overrides}
        return hv.variant_config(variant or self.variant, **kw)


@dataclass
class ResultRecord:
    config_hash: str
    variant: str
    seed: int
    cell: str
    test_mae: float
    val_mae: float
    epochs: list[dict] = field(default_factory=list)
    noise_samples: float | None = None
    noise_features: float | None = None
    test_mae_deg: float | None = None
    checkpoint: str = ""
    wall_clock: float = field(default=0.0, compare=False)
    trace: list[tuple[float, float]] = field(default_factory=list, repr=False, compare=False)

    CSV_FIELDS = (
        "cell",
        "variant",
        "seed",
        "config_hash",
        "noise_samples",
        "noise_features",
        "test_mae",
        "test_mae_deg",
        "val_mae",
        "checkpoint",
        "epochs",
    )

    def to_row(self) -> dict[str, str]:
        def num(v):
            return "" if v is None else repr(float(v))

        return {
            "cell": self.cell,
            "variant": self.variant,
            "seed": str(self.seed),
            "config_hash": self.config_hash,
            "noise_samples": num(self.noise_samples),
            "noise_features": num(self.noise_features),
            "test_mae": num(self.test_mae),
            "test_mae_deg": num(self.test_mae_deg),
            "val_mae": num(self.val_mae),
            "checkpoint": self.checkpoint,
            "epochs": json.dumps(self.epochs, sort_keys=True),
        }

    @classmethod
    def from_row(cls, row: dict[str, str]) -> ResultRecord:
        def num(v):
            return None if v == "" else float(v)

        return cls(
            config_hash=row["config_hash"],
            variant=row["variant"],
            seed=int(row["seed"]),
            cell=row["cell"],
            test_mae=float(row["test_mae"]),
            val_mae=float(row["val_mae"]),
            epochs=json.loads(row["epochs"]),
            noise_samples=num(row["noise_samples"]),
            noise_features=num(row["noise_features"]),
            test_mae_deg=num(row["test_mae_deg"]),
            checkpoint=row["checkpoint"],
        )


@dataclass
class PreparedData:
    split: gait.DatasetSplit  # normalized
    stats: gait.NormStats
    source: dict


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def _raw_data(config: ExperimentConfig) -> tuple[np.ndarray, dict]:
    if config.csv_path:
        report = gait.load_gait_csv(config.csv_path, n_points=config.n_points)
        if report.rejected:
            log.warning("rejected %d incomplete samples from %s", len(report.rejected), config.csv_path)
        if not report.samples:
            raise gait.GaitDataError(f"no complete samples in {config.csv_path}")
        return gait.stack_samples(report.samples), {"kind": "csv", "path": str(config.csv_path), "n_points": config.n_points}
    cfg = gait.SynthConfig(n_points=config.n_points)
    x = gait.stack_samples(gait.synth_generate(config.synth_n, config.data_seed, cfg))
    return x, {"kind": "synthetic", "n": config.synth_n, "seed": config.data_seed, "n_points": config.n_points}


def prepare_data(config: ExperimentConfig) -> PreparedData:
    x, source = _raw_data(config)
    split = gait.split_dataset(x, config.data_seed, config.split_sizes)
    normed, stats = gait.normalize(split)
    return PreparedData(normed, stats, source)


def data_from_manifest(manifest_path) -> PreparedData:
    """Rebuild the exact normalized split a previous invocation used."""
    man = gait.read_manifest(manifest_path)
    src = man["source"]
    if src["kind"] == "csv":
        x = gait.stack_samples(gait.load_gait_csv(src["path"], n_points=src["n_points"]).samples)
    else:
        x = gait.stack_samples(gait.synth_generate(src["n"], src["seed"], gait.SynthConfig(n_points=src["n_points"])))
    stats = gait.NormStats.from_dict(man["normalization"])
    idx = {k: [int(i) for i in v] for k, v in man["indices"].items()}
    split = gait.DatasetSplit(
        train=stats.apply(x[idx["train"]]),
        validation=stats.apply(x[idx["validation"]]),
        test=stats.apply(x[idx["test"]]),
        indices=idx,
        seed=man["split_seed"],
    )
    return PreparedData(split, stats, src)


# ---------------------------------------------------------------------------
# training / evaluation
# ---------------------------------------------------------------------------


def evaluate_mae(model_or_checkpoint, test: np.ndarray, batch_size: int = 100) -> float:
    """Mean |x - x_hat| over every entry, with posterior-mean reconstructions."""
    if len(test) == 0:
        raise ValueError("test set is empty")
    model = model_or_checkpoint
    if isinstance(model, (str, Path)):
        model, _ = hv.load_checkpoint(model)
    if isinstance(model, hv.HybridModel):
        x_hat = hv.reconstruct(test, model, batch_size)
    else:  # anything exposing reconstruct(x)
        x_hat = model.reconstruct(test)
    return float(np.mean(np.abs(test - x_hat)))


def mae_degrees(model: hv.HybridModel, test: np.ndarray, stats: gait.NormStats, batch_size: int = 100) -> float:
    x_hat = hv.reconstruct(test, model, batch_size)
    return float(np.mean(np.abs(stats.inverse(test) - stats.inverse(x_hat))))


@dataclass
class TrainOutcome:
    model: hv.HybridModel
    epochs: list[dict]
    trace: list[tuple[float, float]]  # per step: (total, -elbo)


def fit(
    model: hv.HybridModel,
    split: gait.DatasetSplit,
    seed: int,
    epochs: int,
    batch_size: int = 100,
    lr: float = 1e-3,
    weight_decay: float = 1e-6,
    eps: float = 1e-3,
    alpha: float = 1e-2,
    beta: float = 1e-1,
    noise: gait.NoiseSpec | None = None,
) -> TrainOutcome:
    """Mini-batch Adam on ``total_loss``; validation MAE after each epoch."""
    rng = np.random.default_rng([seed, 0])
    noise_rng = np.random.default_rng([seed, 1, noise.seed]) if noise is not None else None
    opt = AdamState(lr=lr, weight_decay=weight_decay, eps=eps)
    train = split.train
    n = len(train)
    history, trace = [], []
    for epoch in range(epochs):
        order = rng.permutation(n)
        sums = {}
        n_batches = 0
        for b, start in enumerate(range(0, n, batch_size)):
            xb = train[order[start : start + batch_size]]
            try:
                lb = hv.total_loss(xb, model, rng, alpha, beta, noise=noise, noise_rng=noise_rng)
            except (IntegrationError, ArithmeticError) as exc:
                raise TrainingDivergedError(str(exc), epoch, b) from exc
            if not math.isfinite(lb.total):
                raise TrainingDivergedError("non-finite loss", epoch, b)
            params = model.parameters()
            grads = grad(lb.loss, list(params.values()))
            for g in grads:
                if g is not None and not np.all(np.isfinite(g.data)):
                    raise TrainingDivergedError("non-finite gradient", epoch, b)
            adam_step(opt, params, dict(zip(params, grads)))
            trace.append((lb.total, -lb.elbo))
            for k, v in lb.as_row().items():
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
        row = {k: v / n_batches for k, v in sums.items()}
        row["epoch"] = epoch + 1
        row["val_mae"] = evaluate_mae(model, split.validation, batch_size) if len(split.validation) else float("nan")
        history.append(row)
        log.info("%s seed %d epoch %d: total %.4f val_mae %.4f", model.variant, seed, epoch + 1, row["total"], row["val_mae"])
    return TrainOutcome(model, history, trace)


@dataclass(frozen=True)
class Job:
    variant: str
    seed: int
    cell: str
    epochs: int
    model_overrides: tuple = ()
    alpha: float | None = None
    beta: float | None = None
    noise: gait.NoiseSpec | None = None

    @property
    def stem(self) -> str:
        return f"{self.cell}__{self.variant}__s{self.seed}"


def run_job(config: ExperimentConfig, job: Job, data: PreparedData, out_dir: Path | None) -> ResultRecord:
    mcfg = config.model_config(job.variant, **dict(job.model_overrides))
    model = hv.HybridModel(mcfg, seed=job.seed)
    alpha = config.alpha if job.alpha is None else job.alpha
    beta = config.beta if job.beta is None else job.beta
    t0 = time.perf_counter()
    outcome = fit(
        model,
        data.split,
        job.seed,
        job.epochs,
        config.batch_size,
        config.lr,
        config.weight_decay,
        config.eps,
        alpha,
        beta,
        job.noise,
    )
    test_mae = evaluate_mae(model, data.split.test, config.batch_size)
    wall = time.perf_counter() - t0
    ckpt = ""
    if out_dir is not None and config.save_checkpoints:
        ckpt_path = out_dir / "checkpoints" / f"{job.stem}.ckpt"
        ckpt_path.parent.mkdir(parents=True, exist_ok=True)
        hv.save_checkpoint(ckpt_path, model, {"experiment_hash": config.hash(), "cell": job.cell})
        ckpt = str(ckpt_path.relative_to(out_dir))
    return ResultRecord(
        config_hash=config.hash(),
        variant=job.variant,
        seed=job.seed,
        cell=job.cell,
        test_mae=test_mae,
        val_mae=outcome.epochs[-1]["val_mae"] if outcome.epochs else evaluate_mae(model, data.split.validation),
        epochs=outcome.epochs,
        noise_samples=job.noise.pct_samples if job.noise else None,
        noise_features=job.noise.pct_features if job.noise else None,
        test_mae_deg=mae_degrees(model, data.split.test, data.stats) if config.degrees else None,
        checkpoint=ckpt,
        wall_clock=wall,
        trace=outcome.trace,
    )


def _run_job_star(args):
    return run_job(*args)


def run_jobs(config: ExperimentConfig, jobs: list[Job], data: PreparedData, out_dir: Path | None) -> list[ResultRecord]:
    """Run independent jobs, serially or on a bounded process pool; order is preserved."""
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_run_job_star, [(config, j, data, out_dir) for j in jobs]))
    return [run_job(config, j, data, out_dir) for j in jobs]


def train(config: ExperimentConfig, data: PreparedData | None = None) -> list[ResultRecord]:
    """Train ``config.variant`` once per seed; writes checkpoints and ``results/train.csv``."""
    out = _prepare_out(config)
    data = data or _setup_data(config, out)
    jobs = [Job(config.variant, s, "train", config.epochs) for s in config.seeds]
    records = run_jobs(config, jobs, data, out)
    _write_outputs(out, "train", records)
    return records


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


def run_variant_suite(config: ExperimentConfig, variants=SUITE_VARIANTS, data: PreparedData | None = None):
    out = _prepare_out(config)
    data = data or _setup_data(config, out)
    jobs = [Job(v, s, "suite", config.epochs) for v in variants for s in config.seeds]
    records = run_jobs(config, jobs, data, out)
    _write_outputs(out, "suite", records)
    write_summary(out / "results" / "suite_summary.csv", records)
    return records


def noise_cells(config: ExperimentConfig) -> list[tuple[str, gait.NoiseSpec | None]]:
    cells: list[tuple[str, gait.NoiseSpec | None]] = [("control", None)]
    for i, ps in enumerate(config.noise_samples):
        for j, pf in enumerate(config.noise_features):
            cells.append((f"s{ps}_f{pf}", gait.NoiseSpec(ps, pf, seed=100 * i + j)))
    return cells


@dataclass
class NoiseGrid:
    variant: str
    samples: tuple
    features: tuple
    mae: np.ndarray  # (len(samples), len(features)), seed-averaged
    control: float
    spearman: list[float]


def noise_sweep(config: ExperimentConfig, variants=None, data: PreparedData | None = None):
    """Train from scratch in every (samples%, features%) cell plus a clean control."""
    variants = tuple(variants or config.noise_variants)
    out = _prepare_out(config)
    data = data or _setup_data(config, out)
    cells = noise_cells(config)
    jobs = [Job(v, s, cell, config.noise_epochs, noise=spec) for v in variants for cell, spec in cells for s in config.seeds]
    records = run_jobs(config, jobs, data, out)
    _write_outputs(out, "noise", records)
    grids = {v: noise_grid(config, v, records) for v in variants}
    for v, g in grids.items():
        write_noise_table(out / "results" / f"noise_{v}.csv", g)
    return records, grids


def noise_grid(config: ExperimentConfig, variant: str, records: list[ResultRecord]) -> NoiseGrid:
    by_cell: dict[str, list[float]] = {}
    for r in records:
        if r.variant == variant:
            by_cell.setdefault(r.cell, []).append(r.test_mae)
    S, F = config.noise_samples, config.noise_features
    mae = np.array([[np.mean(by_cell[f"s{ps}_f{pf}"]) for pf in F] for ps in S])
    rho = []
    for row in mae:
        r = spearmanr(np.arange(len(F)), row).statistic if len(F) > 1 else float("nan")
        rho.append(float(r) if np.isfinite(r) else float("nan"))
    return NoiseGrid(variant, tuple(S), tuple(F), mae, float(np.mean(by_cell["control"])), rho)


ABLATION_CELLS: tuple[tuple[str, str, dict, dict], ...] = (
    # (cell, base variant, model overrides, loss overrides)
    ("latents_only_zA_nf", "NFPhyR", {"phys_family": None}, {}),
    ("latents_only_zP_nf", "NFPhyR", {"aux_family": None}, {}),
    ("latents_only_zA_attnf", "AttNFPhyR", {"phys_family": None}, {}),
    ("latents_only_zP_attnf", "AttNFPhyR", {"aux_family": None}, {}),
    ("mixed_zA_nf_zP_mlp", "NFPhyR", {"phys_family": "gauss"}, {}),
    ("mixed_zA_mlp_zP_nf", "NFPhyR", {"aux_family": "gauss"}, {}),
    ("mixed_zA_attnf_zP_mlp", "AttNFPhyR", {"phys_family": "gauss"}, {}),
    ("mixed_zA_mlp_zP_attnf", "AttNFPhyR", {"aux_family": "gauss"}, {}),
    ("nfatt_zA_nf_zP_attnf", "NFPhyR", {"phys_family": "attnf"}, {}),
    ("nfatt_zA_attnf_zP_nf", "NFPhyR", {"aux_family": "attnf"}, {}),
    ("reg_nf_alpha0", "NFPhyR", {}, {"alpha": 0.0}),
    ("reg_nf_beta0", "NFPhyR", {}, {"beta": 0.0}),
    ("reg_nf_alpha0_beta0", "NFPhyR", {}, {"alpha": 0.0, "beta": 0.0}),
    ("reg_attnf_alpha0", "AttNFPhyR", {}, {"alpha": 0.0}),
    ("reg_attnf_beta0", "AttNFPhyR", {}, {"beta": 0.0}),
    ("reg_attnf_alpha0_beta0", "AttNFPhyR", {}, {"alpha": 0.0, "beta": 0.0}),
)


def ablation_jobs(config: ExperimentConfig, cells=None) -> list[Job]:
    wanted = set(cells) if cells else None
    if wanted is not None:
        unknown = wanted - {c[0] for c in ABLATION_CELLS}
        if unknown:
            raise ValueError(f"unknown ablation cell(s): {sorted(unknown)}")
    jobs = []
    for cell, variant, mo, lo in ABLATION_CELLS:
        if wanted is not None and cell not in wanted:
            continue
        for s in config.seeds:
            jobs.append(Job(variant, s, cell, config.epochs, tuple(sorted(mo.items())), lo.get("alpha"), lo.get("beta")))
    return jobs


def ablation_suite(config: ExperimentConfig, cells=None, data: PreparedData | None = None) -> list[ResultRecord]:
    out = _prepare_out(config)
    data = data or _setup_data(config, out)
    records = run_jobs(config, ablation_jobs(config, cells), data, out)
    _write_outputs(out, "ablation", records)
    write_summary(out / "results" / "ablation_summary.csv", records)
    write_traces(out / "results" / "ablation_traces.csv", records)
    return records


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _prepare_out(config: ExperimentConfig) -> Path:
    out = Path(config.output_dir)
    (out / "results").mkdir(parents=True, exist_ok=True)
    return out


def _setup_data(config: ExperimentConfig, out: Path) -> PreparedData:
    data = prepare_data(config)
    gait.write_manifest(out / "manifest.txt", data.split, data.stats, data.source)
    (out / "config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n")
    return data


def write_results_csv(path, records: list[ResultRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ResultRecord.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow(r.to_row())


def read_results_csv(path) -> list[ResultRecord]:
    with open(path, newline="") as fh:
        return [ResultRecord.from_row(row) for row in csv.DictReader(fh)]


def write_long_csv(path, records: list[ResultRecord]) -> None:
    """Plot-ready rows: (variant, cell, seed, metric, value)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "cell", "seed", "metric", "value"])
        for r in records:
            w.writerow([r.variant, r.cell, r.seed, "test_mae", repr(r.test_mae)])
            if r.test_mae_deg is not None:
                w.writerow([r.variant, r.cell, r.seed, "test_mae_deg", repr(r.test_mae_deg)])
            for e in r.epochs:
                for k in ("total", "elbo", "r_t1", "r_t2", "val_mae"):
                    w.writerow([r.variant, r.cell, r.seed, f"epoch{e['epoch']}_{k}", repr(e[k])])


def write_summary(path, records: list[ResultRecord]) -> None:
    groups: dict[tuple[str, str], list[float]] = {}
    for r in records:
        groups.setdefault((r.cell, r.variant), []).append(r.test_mae)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "variant", "n_seeds", "mean_mae", "std_mae"])
        for (cell, variant), v in groups.items():
            w.writerow([cell, variant, len(v), repr(float(np.mean(v))), repr(float(np.std(v)))])


def write_noise_table(path, grid: NoiseGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pct_samples", *[f"f{pf}" for pf in grid.features], "spearman"])
        for ps, row, rho in zip(grid.samples, grid.mae, grid.spearman):
            w.writerow([ps, *[repr(float(v)) for v in row], repr(rho)])
        w.writerow(["control", repr(grid.control)])


def write_traces(path, records: list[ResultRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "variant", "seed", "step", "total", "neg_elbo"])
        for r in records:
            for i, (tot, ne) in enumerate(r.trace):
                w.writerow([r.cell, r.variant, r.seed, i, repr(tot), repr(ne)])


def _write_outputs(out: Path, name: str, records: list[ResultRecord]) -> None:
    res = out / "results"
    write_results_csv(res / f"{name}.csv", records)
    write_long_csv(res / f"{name}_long.csv", records)
    with open(out / "timings.csv", "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r in records:
            w.writerow([name, r.cell, r.variant, r.seed, f"{r.wall_clock:.3f}"])


def with_config(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **kw)
