"""Command-line front end.

Subcommands: synth, train, perturb, transfer, evaluate, cdf, suite.
Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import channel, data, metrics, suite as suite_mod, transfer
from .data import Dataset, NoiseSpec, apply_norm, fit_norm, inject_noise
from .network import forward, init_model
from .suite import ConfigError, load_config
from .transfer import Checkpoint, fine_tune, load_checkpoint, save_checkpoint, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vlcloc",
                     description="VLC fingerprint localization workbench")
    parser.add_argument("--config", help="experiment config JSON", default=None)
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed overriding all config seeds")
    parser.add_argument("--out", default=None, help="output path or directory")
    parser.add_argument("--fast", action="store_true",
                        help="CI profile: small model, few epochs")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel suite cells")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a fingerprint dataset CSV")
    p.add_argument("--layout", default=None, help="room layout JSON (default: built-in)")

    p = sub.add_parser("train", help="train a base model on a dataset CSV")
    p.add_argument("--data", required=True)

    p = sub.add_parser("perturb", help="write a noise-injected copy of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--nf", type=float, required=True)
    p.add_argument("--sigma-base", type=float, default=None)

    p = sub.add_parser("transfer", help="fine-tune a base checkpoint on target data")
    p.add_argument("--base", required=True, help="base checkpoint path")
    p.add_argument("--train-data", required=True)
    p.add_argument("--val-data", required=True)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint against a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("cdf", help="write the error CDF of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)

    sub.add_parser("suite", help="run the full experiment suite")
    return parser


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _out_path(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(default)


def cmd_synth(args, config) -> int:
    if args.layout:
        layout = channel.load_layout(_require_file(args.layout, "layout file"))
    elif config["layout"]:
        layout = channel.load_layout(_require_file(config["layout"], "layout file"))
    else:
        layout = channel.default_layout()
    params = suite_mod._channel_params(config)
    records = channel.synthesize_dataset(layout, params, config["synth_seed"])
    out = _out_path(args, "dataset.csv")
    data.save_csv(Dataset.from_records(records), out)
    print(f"wrote {len(records)} records to {out}")
    return 0


def cmd_train(args, config) -> int:
    dataset = data.load_csv(_require_file(args.data, "dataset"))
    train_raw, val_raw = data.split(dataset, config["split"]["train_fraction"],
                                    config["split"]["seed"])
    stats = fit_norm(train_raw)
    mcfg = suite_mod._model_config(config)
    model, report = train(init_model(mcfg), apply_norm(train_raw, stats),
                          apply_norm(val_raw, stats),
                          suite_mod._train_config(config),
                          provenance={"kind": "base", "nf": 0})
    out = _out_path(args, "base-run")
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.ckpt.json"
    save_checkpoint(Checkpoint(mcfg, stats, model, provenance={"kind": "base"}),
                    ckpt_path)
    report.checkpoint_path = str(ckpt_path)
    report.write_csv(out / "report.csv")
    report.write_summary(out / "summary.json")
    data.save_csv(train_raw, out / "train_split.csv")
    data.save_csv(val_raw, out / "val_split.csv")
    print(f"final val error {report.final.val_err_m:.4f} m; artifacts in {out}")
    return 0


def cmd_perturb(args, config) -> int:
    dataset = data.load_csv(_require_file(args.data, "dataset"))
    sigma_base = args.sigma_base if args.sigma_base is not None \
        else config["noise"]["sigma_base_db"]
    if args.nf == 0:
        noisy = dataset
    else:
        spec = NoiseSpec(nf=args.nf, sigma_base_db=sigma_base,
                         seed=config["noise"]["seed"])
        noisy = inject_noise(dataset, spec)
    out = _out_path(args, "noisy.csv")
    data.save_csv(noisy, out)
    print(f"wrote noisy dataset (nf={args.nf:g}) to {out}")
    return 0


def cmd_transfer(args, config) -> int:
    base = _require_file(args.base, "base checkpoint")
    train_raw = data.load_csv(_require_file(args.train_data, "training dataset"))
    val_raw = data.load_csv(_require_file(args.val_data, "validation dataset"))
    model, stats, report = fine_tune(base, train_raw, val_raw,
                                     suite_mod._train_config(config, tl=True))
    out = _out_path(args, "tl-run")
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.ckpt.json"
    save_checkpoint(Checkpoint(suite_mod._model_config(config), stats, model,
                               provenance={"kind": "tl", "parent": str(base)}),
                    ckpt_path)
    report.checkpoint_path = str(ckpt_path)
    report.write_csv(out / "report.csv")
    report.write_summary(out / "summary.json")
    print(f"final val error {report.final.val_err_m:.4f} m; artifacts in {out}")
    return 0


def _checkpoint_errors(ckpt_path, data_path):
    ckpt = load_checkpoint(_require_file(ckpt_path, "checkpoint"))
    dataset = data.load_csv(_require_file(data_path, "dataset"))
    pred = forward(ckpt.mlp, apply_norm(dataset, ckpt.norm_stats).rssi)
    return metrics.localization_errors(pred, dataset.positions), dataset


def cmd_evaluate(args, config) -> int:
    errors, _ = _checkpoint_errors(args.checkpoint, args.data)
    delta = config["train"]["success_threshold_m"]
    doc = {
        "n_samples": int(errors.size),
        "mean_err_m": metrics.mean_error(errors),
        "median_err_m": float(np.median(errors)),
        "success_rate": metrics.success_rate(errors, delta),
        "success_threshold_m": delta,
    }
    out = _out_path(args, "metrics.json")
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"mean error {doc['mean_err_m']:.4f} m over {doc['n_samples']} samples; "
          f"wrote {out}")
    return 0


def cmd_cdf(args, config) -> int:
    errors, _ = _checkpoint_errors(args.checkpoint, args.data)
    out = _out_path(args, "cdf.csv")
    metrics.save_cdf_csv(metrics.build_cdf(errors), out)
    print(f"wrote CDF ({errors.size} samples) to {out}")
    return 0


def cmd_suite(args, config) -> int:
    result = suite_mod.run_suite(config, out_dir=args.out, workers=args.workers)
    print(f"suite complete: {len(result.rows)} rows in {result.suite_dir}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "perturb": cmd_perturb,
    "transfer": cmd_transfer,
    "evaluate": cmd_evaluate,
    "cdf": cmd_cdf,
    "suite": cmd_suite,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, fast=args.fast, seed=args.seed)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"vlcloc: config error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"vlcloc: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"vlcloc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
