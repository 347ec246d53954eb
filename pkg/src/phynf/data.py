"""Gait data: CSV ingestion, a synthetic pendulum-plus-residual generator,
splitting, per-channel z-scoring and feature-corruption masks.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CHANNELS = ("hip", "knee", "ankle")
N_POINTS = 100


class GaitDataError(ValueError):
    """Malformed gait input; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, sample_id: str | None = None):
        self.line = line
        self.sample_id = sample_id
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class ZeroVarianceError(ValueError):
    pass


@dataclass
class GaitSample:
    angles: np.ndarray  # (3, t)
    sample_id: str = ""

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.angles.ndim != 2 or self.angles.shape[0] != len(CHANNELS):
            raise GaitDataError(f"sample {self.sample_id!r} must have 3 channels, got shape {self.angles.shape}")
        if not np.all(np.isfinite(self.angles)):
            raise GaitDataError(f"sample {self.sample_id!r} has non-finite values")


@dataclass
class LoadReport:
    samples: list[GaitSample]
    rejected: dict[str, str] = field(default_factory=dict)


def stack_samples(samples: list[GaitSample]) -> np.ndarray:
    return np.stack([s.angles for s in samples]) if samples else np.zeros((0, 3, N_POINTS))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def load_gait_csv(path, n_points: int = N_POINTS, strict: bool = False) -> LoadReport:
    """Read ``sample_id,channel,v0..v{n-1}`` rows into 3-channel samples.

    Row-level problems raise :class:`GaitDataError` with the line number.
    Samples missing a channel are rejected and listed in ``report.rejected``
    (or raise, with ``strict=True``).
    """
    path = Path(path)
    rows: dict[str, dict[str, np.ndarray]] = {}
    order: list[str] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GaitDataError("empty file", line=1) from None
        if len(header) != n_points + 2:
            raise GaitDataError(f"header has {len(header)} columns, expected {n_points + 2}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n_points + 2:
                raise GaitDataError(f"expected {n_points + 2} columns, got {len(row)}", line=lineno)
            sid, channel = row[0].strip(), row[1].strip().lower()
            if channel not in CHANNELS:
                raise GaitDataError(f"unknown channel tag {row[1]!r}", line=lineno, sample_id=sid)
            try:
                values = np.array([float(c) for c in row[2:]], dtype=np.float64)
            except ValueError as exc:
                raise GaitDataError(f"non-numeric cell ({exc})", line=lineno, sample_id=sid) from None
            if not np.all(np.isfinite(values)):
                raise GaitDataError("non-finite value", line=lineno, sample_id=sid)
            if sid not in rows:
                rows[sid] = {}
                order.append(sid)
            if channel in rows[sid]:
                raise GaitDataError(f"duplicate {channel} row for sample {sid!r}", line=lineno, sample_id=sid)
            rows[sid][channel] = values
    report = LoadReport(samples=[])
    for sid in order:
        chans = rows[sid]
        missing = [c for c in CHANNELS if c not in chans]
        if missing:
            msg = f"missing channel(s): {', '.join(missing)}"
            if strict:
                raise GaitDataError(f"sample {sid!r} {msg}", sample_id=sid)
            log.warning("rejecting sample %s: %s", sid, msg)
            report.rejected[sid] = msg
            continue
        report.samples.append(GaitSample(np.stack([chans[c] for c in CHANNELS]), sample_id=sid))
    return report


def write_gait_csv(path, samples: list[GaitSample]) -> None:
    n_points = samples[0].angles.shape[1] if samples else N_POINTS
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "channel"] + [f"t{i}" for i in range(n_points)])
        for i, s in enumerate(samples):
            sid = s.sample_id or str(i)
            for c, values in zip(CHANNELS, s.angles):
                writer.writerow([sid, c] + [repr(float(v)) for v in values])


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Pendulum + two-harmonic residual generator, in degree-like units."""

    n_points: int = N_POINTS
    omega: float = 2.0 * math.pi  # one pendulum period per stride (small-angle)
    amplitude: tuple[float, float] = (0.4, 0.9)  # rad
    phase: tuple[float, float] = (0.0, 0.6)  # fraction of a stride
    channel_map: tuple[tuple[float, float], ...] = ((20.0, 5.0), (25.0, -15.0), (-8.0, 10.0))
    channel_offset: tuple[float, ...] = (10.0, 30.0, 0.0)
    harmonics: tuple[int, int] = (3, 5)
    # per-channel (sin, cos) loadings for each harmonic
    harmonic_pattern: tuple[tuple[float, ...], ...] = (
        (6.0, 2.0, 1.5, -1.0),
        (-4.0, 7.0, -2.0, 2.5),
        (3.0, -3.0, 2.5, 1.0),
    )
    residual_weight: tuple[float, float] = (0.6, 1.4)
    residual_scale: float = 2.0
    noise_std: float = 0.1  # N(0, 0.01) observation noise
    residual: bool = True


def _pendulum_rhs(y: np.ndarray, omega: float) -> np.ndarray:
    return np.stack([y[:, 1], -(omega**2) * np.sin(y[:, 0])], axis=1)


def _rk4_numpy(y: np.ndarray, h: np.ndarray | float, n_steps: int, omega: float, record_every: int = 0):
    h = np.asarray(h, dtype=np.float64).reshape(-1, 1) if np.ndim(h) else h
    out = [y.copy()] if record_every else None
    for step in range(1, n_steps + 1):
        k1 = _pendulum_rhs(y, omega)
        k2 = _pendulum_rhs(y + 0.5 * h * k1, omega)
        k3 = _pendulum_rhs(y + 0.5 * h * k2, omega)
        k4 = _pendulum_rhs(y + h * k3, omega)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if record_every and step % record_every == 0:
            out.append(y.copy())
    return (y, out) if record_every else y


def pendulum_trajectories(amplitude: np.ndarray, phase: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    """(n, 2, t) array of (angle, angular velocity / omega) on a unit-stride window."""
    n = amplitude.shape[0]
    y0 = np.stack([amplitude, np.zeros(n)], axis=1)
    # advance each pendulum by its phase offset, then sample the stride window
    y = _rk4_numpy(y0, phase / 400.0, 400, cfg.omega)
    sub = 20
    _, traj = _rk4_numpy(y, 1.0 / ((cfg.n_points - 1) * sub), (cfg.n_points - 1) * sub, cfg.omega, record_every=sub)
    traj = np.stack(traj, axis=2)  # (n, 2, t)
    traj[:, 1, :] /= cfg.omega
    return traj


def synth_generate(n: int, seed: int, cfg: SynthConfig | None = None) -> list[GaitSample]:
    """Deterministic stand-in gait data; see :class:`SynthConfig`."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    amp = rng.uniform(*cfg.amplitude, size=n)
    phase = rng.uniform(*cfg.phase, size=n)
    weights = rng.uniform(*cfg.residual_weight, size=(n, len(cfg.harmonics)))
    noise = rng.normal(0.0, cfg.noise_std, size=(n, 3, cfg.n_points))

    traj = pendulum_trajectories(amp, phase, cfg)
    A = np.asarray(cfg.channel_map)  # (3, 2)
    x = np.einsum("cs,nst->nct", A, traj) + np.asarray(cfg.channel_offset)[None, :, None]
    if cfg.residual:
        t = np.linspace(0.0, 1.0, cfg.n_points)
        P = np.asarray(cfg.harmonic_pattern)
        for j, k in enumerate(cfg.harmonics):
            s, c = np.sin(2 * math.pi * k * t), np.cos(2 * math.pi * k * t)
            shape = P[:, 2 * j, None] * s + P[:, 2 * j + 1, None] * c  # (3, t)
            x = x + cfg.residual_scale * weights[:, j, None, None] * shape[None]
    x = x + noise
    return [GaitSample(x[i], sample_id=f"synth-{seed}-{i}") for i in range(n)]


# ---------------------------------------------------------------------------
# splits and normalization
# ---------------------------------------------------------------------------


@dataclass
class DatasetSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    indices: dict[str, list[int]]
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def split_dataset(x: np.ndarray, seed: int, sizes: tuple[int, int, int] | None = None) -> DatasetSplit:
    """Random disjoint split; defaults to 400/100/344 when there is enough data."""
    n = len(x)
    if sizes is None:
        if n >= 844:
            sizes = (400, 100, 344)
        else:
            n_train = int(round(0.5 * n))
            n_val = int(round(0.15 * n))
            sizes = (n_train, n_val, n - n_train - n_val)
    if sum(sizes) > n:
        raise ValueError(f"split sizes {sizes} exceed {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    a, b, c = sizes
    idx = {"train": perm[:a].tolist(), "validation": perm[a : a + b].tolist(), "test": perm[a + b : a + b + c].tolist()}
    return DatasetSplit(x[idx["train"]], x[idx["validation"]], x[idx["test"]], idx, seed)


@dataclass
class NormStats:
    mean: np.ndarray  # (M,)
    std: np.ndarray  # (M,)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean[None, :, None]) / self.std[None, :, None]

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.std[None, :, None] + self.mean[None, :, None]

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> NormStats:
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_normalization(train: np.ndarray) -> NormStats:
    if len(train) == 0:
        raise ValueError("cannot normalize with an empty training set")
    mean = train.mean(axis=(0, 2))
    std = train.std(axis=(0, 2))
    bad = np.flatnonzero(std <= 1e-12)
    if bad.size:
        raise ZeroVarianceError(f"channel(s) {bad.tolist()} have zero variance in the training set")
    return NormStats(mean, std)


def normalize(split: DatasetSplit) -> tuple[DatasetSplit, NormStats]:
    """Z-score every channel with statistics from the training part only."""
    stats = fit_normalization(split.train)
    out = DatasetSplit(
        stats.apply(split.train), stats.apply(split.validation), stats.apply(split.test), split.indices, split.seed
    )
    return out, stats


def write_manifest(path, split: DatasetSplit, stats: NormStats, source: dict) -> None:
    payload = {
        "source": source,
        "split_seed": split.seed,
        "indices": split.indices,
        "normalization": stats.to_dict(),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# feature corruption
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    pct_samples: float
    pct_features: float
    seed: int = 0

    def __post_init__(self):
        for name in ("pct_samples", "pct_features"):
            v = getattr(self, name)
            if not 0 < v <= 100:
                raise ValueError(f"{name} must be in (0, 100], got {v}")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def corruption_mask(n: int, n_features: int, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """0/1 mask zeroing an exact number of features in an exact number of rows."""
    mask = np.ones((n, n_features))
    n_rows = round_half_up(spec.pct_samples * n / 100.0)
    n_cols = round_half_up(spec.pct_features * n_features / 100.0)
    if n_rows < 1 or n_cols < 1:
        log.warning("noise spec %s selects nothing for a batch of %d", spec, n)
        return mask
    rows = rng.choice(n, size=n_rows, replace=False)
    for r in rows:
        mask[r, rng.choice(n_features, size=n_cols, replace=False)] = 0.0
    return mask


def inject_feature_noise(features: np.ndarray, spec: NoiseSpec, rng: np.random.Generator):
    """Return ``(corrupted, mask)`` for an (N, F) activation batch."""
    features = np.asarray(features, dtype=np.float64)
    mask = corruption_mask(features.shape[0], features.shape[1], spec, rng)
    return features * mask, mask
