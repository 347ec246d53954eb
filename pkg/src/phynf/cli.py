"""``phynf`` command line: train, eval, suite, noise-sweep, ablate, synth-data."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import data as gait
from . import harness
from . import hybridvae as hv

FLAG_FIELDS = {
    "variant": str,
    "epochs": int,
    "noise_epochs": int,
    "batch_size": int,
    "lr": float,
    "weight_decay": float,
    "eps": float,
    "alpha": float,
    "beta": float,
    "k_aux": int,
    "k_phys": int,
    "csv_path": str,
    "synth_n": int,
    "data_seed": int,
    "n_points": int,
    "output_dir": str,
    "workers": int,
}


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    for name, typ in FLAG_FIELDS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--seeds", type=_int_list, default=None, help="comma-separated, e.g. 0,1,2")
    p.add_argument("--single-seed", action="store_true", help="use only the first seed")
    p.add_argument("--split-sizes", type=_int_list, default=None, help="train,validation,test")
    p.add_argument("--degrees", action="store_true", default=None, help="also report MAE in original units")
    p.add_argument("--no-checkpoints", action="store_true")
    p.add_argument("--config", type=Path, default=None, help="JSON file; its keys override flags")


def build_config(args: argparse.Namespace) -> harness.ExperimentConfig:
    d: dict = {}
    for f in fields(harness.ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            d[f.name] = v
    if args.no_checkpoints:
        d["save_checkpoints"] = False
    if args.config is not None:
        d.update(json.loads(args.config.read_text()))
    cfg = harness.ExperimentConfig.from_dict({k: list(v) if isinstance(v, tuple) else v for k, v in d.items()})
    if args.single_seed:
        cfg = harness.with_config(cfg, seeds=cfg.seeds[:1])
    return cfg


def _print_records(records) -> None:
    for r in records:
        extra = f" deg={r.test_mae_deg:.4f}" if r.test_mae_deg is not None else ""
        print(f"{r.cell:28s} {r.variant:10s} seed={r.seed} test_mae={r.test_mae:.4f}{extra}")


def cmd_train(args) -> int:
    _print_records(harness.train(build_config(args)))
    return 0


def cmd_suite(args) -> int:
    cfg = build_config(args)
    variants = args.variants.split(",") if args.variants else harness.SUITE_VARIANTS
    _print_records(harness.run_variant_suite(cfg, variants))
    return 0


def cmd_noise(args) -> int:
    cfg = build_config(args)
    variants = args.variants.split(",") if args.variants else None
    _, grids = harness.noise_sweep(cfg, variants)
    for v, g in grids.items():
        print(f"{v}: control {g.control:.4f}; spearman per row {[round(r, 3) for r in g.spearman]}")
        for ps, row in zip(g.samples, g.mae):
            print(f"  {ps:>3}% samples: " + " ".join(f"{m:.4f}" for m in row))
    return 0


def cmd_ablate(args) -> int:
    cfg = build_config(args)
    cells = args.cells.split(",") if args.cells else None
    _print_records(harness.ablation_suite(cfg, cells))
    return 0


def cmd_eval(args) -> int:
    model, meta = hv.load_checkpoint(args.checkpoint)
    manifest = args.manifest or Path(args.checkpoint).resolve().parent.parent / "manifest.txt"
    data = harness.data_from_manifest(manifest)
    mae = harness.evaluate_mae(model, data.split.test)
    out = {"variant": meta["variant"], "config_hash": meta["config_hash"], "test_mae": mae}
    if args.degrees:
        out["test_mae_deg"] = harness.mae_degrees(model, data.split.test, data.stats)
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    samples = gait.synth_generate(args.n, args.seed, gait.SynthConfig(n_points=args.n_points))
    gait.write_gait_csv(args.out, samples)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phynf", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one variant")
    _add_experiment_flags(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("suite", help="train and evaluate every model variant")
    _add_experiment_flags(s)
    s.add_argument("--variants", default=None)
    s.set_defaults(func=cmd_suite)

    n = sub.add_parser("noise-sweep", help="feature-corruption grid")
    _add_experiment_flags(n)
    n.add_argument("--variants", default=None)
    n.set_defaults(func=cmd_noise)

    a = sub.add_parser("ablate", help="latent and regularizer ablations")
    _add_experiment_flags(a)
    a.add_argument("--cells", default=None, help="comma-separated subset of ablation cells")
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="test MAE of a checkpoint")
    e.add_argument("checkpoint", type=Path)
    e.add_argument("--manifest", type=Path, default=None)
    e.add_argument("--degrees", action="store_true")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("synth-data", help="write a synthetic gait CSV")
    g.add_argument("--n", type=int, default=844)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-points", type=int, default=gait.N_POINTS)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, ArithmeticError, gait.GaitDataError) as exc:
        print(f"phynf: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
