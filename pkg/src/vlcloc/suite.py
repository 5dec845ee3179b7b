"""Experiment-suite driver.

Chains synth -> base training -> environmental-variation (EV) runs ->
transfer-learning (TL) runs -> limited-data sweep from one declarative JSON
config, and consolidates the per-cell final metrics into a single table.
Cells whose outputs already exist are reused, so deleting one cell's
directory and re-running recomputes only that cell.
"""

from __future__ import annotations

import copy
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import jsonschema
import numpy as np

from . import channel, data, metrics, transfer
from .channel import ChannelParams, default_layout, load_layout
from .data import Dataset, NoiseSpec, apply_norm, fit_norm, inject_noise, subsample
from .network import ModelConfig, forward, init_model
from .transfer import (Checkpoint, PowerClock, TrainConfig, fine_tune,
                       load_checkpoint, save_checkpoint, train)


class ConfigError(ValueError):
    """Invalid experiment configuration; message carries a JSON-pointer path."""


DEFAULT_CONFIG: dict = {
    "layout": None,
    "channel": {
        "semi_angle_deg": 62.0,
        "pd_area_m2": 1e-4,
        # 62 deg characterizes the LED emission lobe (semi_angle_deg above);
        # the photodiode itself sees the whole upper hemisphere.
        "fov_deg": 90.0,
        "tx_power_dbm": 10.0,
        "shadowing_sigma_db": 1.0,
        "measurement_noise_sigma_db": 0.25,
        "noise_floor_dbm": -95.0,
    },
    "synth_seed": 11,
    "split": {"train_fraction": 0.8, "seed": 22},
    "model": {"hidden_sizes": [512, 256, 128, 64, 32], "activation": "relu",
              "init_seed": 33},
    "train": {"optimizer": "adam", "learning_rate": 6e-7, "batch_size": 64,
              "epochs": 600, "success_threshold_m": 1.0,
              "p_cpu_w": 65.0, "p_gpu_w": 0.0, "shuffle_seed": 44,
              "tl_patience": 25, "tl_convergence_eps": 1e-4},
    "noise": {"nfs": [2, 4, 8], "sigma_base_db": 1.0,
              "resample_per_epoch": False, "apply_to_validation": True,
              "seed": 55},
    "data_fractions": [0.3, 0.5, 0.7, 1.0],
    "subsample_seed": 66,
    "base_checkpoint": None,
    "out_dir": "runs",
}

# CI-scale overrides applied by --fast. The smaller network needs a larger
# learning rate (and a correspondingly smaller noise base) to land in the
# same mildly under-converged regime as the full-size profile.
FAST_OVERRIDES = {
    "model": {"hidden_sizes": [64, 64]},
    "train": {"epochs": 150, "learning_rate": 3e-5},
    "noise": {"sigma_base_db": 0.55},
}

CONFIG_SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "layout": {"type": ["string", "null"]},
        "channel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "semi_angle_deg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 90},
                "pd_area_m2": {"type": "number", "exclusiveMinimum": 0},
                "fov_deg": {"type": "number", "exclusiveMinimum": 0, "maximum": 90},
                "tx_power_dbm": {"type": "number"},
                "shadowing_sigma_db": {"type": "number", "minimum": 0},
                "measurement_noise_sigma_db": {"type": "number", "minimum": 0},
                "noise_floor_dbm": {"type": "number"},
            },
        },
        "synth_seed": {"type": "integer"},
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "train_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "seed": {"type": "integer"},
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden_sizes": {"type": "array", "minItems": 1,
                                 "items": {"type": "integer", "minimum": 1}},
                "activation": {"enum": ["relu", "tanh"]},
                "init_seed": {"type": "integer"},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "optimizer": {"enum": ["adam", "sgd"]},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 1},
                "success_threshold_m": {"type": "number", "exclusiveMinimum": 0},
                "p_cpu_w": {"type": "number", "minimum": 0},
                "p_gpu_w": {"type": "number", "minimum": 0},
                "shuffle_seed": {"type": "integer"},
                "tl_patience": {"type": ["integer", "null"], "minimum": 1},
                "tl_convergence_eps": {"type": "number", "minimum": 0},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nfs": {"type": "array", "minItems": 1,
                        "items": {"type": "number", "exclusiveMinimum": 0}},
                "sigma_base_db": {"type": "number", "exclusiveMinimum": 0},
                "resample_per_epoch": {"type": "boolean"},
                "apply_to_validation": {"type": "boolean"},
                "seed": {"type": "integer"},
            },
        },
        "data_fractions": {"type": "array",
                           "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
        "subsample_seed": {"type": "integer"},
        "base_checkpoint": {"type": ["string", "null"]},
        "out_dir": {"type": "string"},
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides: dict | None = None, fast: bool = False,
                seed: int | None = None) -> dict:
    """Merge user config over defaults, validate, and resolve profile flags."""
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    config = _deep_merge(DEFAULT_CONFIG, doc)
    if fast:
        config = _deep_merge(config, FAST_OVERRIDES)
    if overrides:
        config = _deep_merge(config, overrides)
    if seed is not None:
        config["synth_seed"] = seed
        config["split"]["seed"] = seed + 1
        config["model"]["init_seed"] = seed + 2
        config["train"]["shuffle_seed"] = seed + 3
        config["noise"]["seed"] = seed + 4
        config["subsample_seed"] = seed + 5
    validate_config(config)
    return config


def validate_config(config: dict) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ConfigError(f"{pointer}: {err.message}")


def suite_id(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _channel_params(config: dict) -> ChannelParams:
    return ChannelParams(**config["channel"])


def _layout(config: dict):
    if config["layout"]:
        return load_layout(config["layout"])
    return default_layout()


def _model_config(config: dict) -> ModelConfig:
    m = config["model"]
    return ModelConfig(hidden_sizes=tuple(m["hidden_sizes"]),
                       activation=m["activation"], init_seed=m["init_seed"])


def _train_config(config: dict, tl: bool = False) -> TrainConfig:
    t = config["train"]
    return TrainConfig(
        optimizer=t["optimizer"], learning_rate=t["learning_rate"],
        batch_size=t["batch_size"], epochs=t["epochs"],
        success_threshold_m=t["success_threshold_m"],
        p_cpu_w=t["p_cpu_w"], p_gpu_w=t["p_gpu_w"],
        shuffle_seed=t["shuffle_seed"],
        patience=t["tl_patience"] if tl else None,
        convergence_eps=t["tl_convergence_eps"],
    )


def _noise_spec(config: dict, nf: float, validation: bool = False) -> NoiseSpec:
    n = config["noise"]
    # one noise stream per (nf, side) so EV and TL see identical noisy data
    seed = n["seed"] * 1000 + int(round(nf * 10)) + (1 if validation else 0)
    return NoiseSpec(nf=nf, sigma_base_db=n["sigma_base_db"],
                     resample_per_epoch=n["resample_per_epoch"],
                     apply_to_validation=n["apply_to_validation"], seed=seed)


def _noisy_pair(config: dict, train_raw: Dataset, val_raw: Dataset,
                nf: float) -> tuple[Dataset, Dataset]:
    noisy_train = inject_noise(train_raw, _noise_spec(config, nf))
    if config["noise"]["apply_to_validation"]:
        noisy_val = inject_noise(val_raw, _noise_spec(config, nf, validation=True))
    else:
        noisy_val = val_raw
    return noisy_train, noisy_val


def _evaluate_cdf(mlp, stats, raw: Dataset, path) -> None:
    pred = forward(mlp, apply_norm(raw, stats).rssi)
    errors = metrics.localization_errors(pred, raw.positions)
    metrics.save_cdf_csv(metrics.build_cdf(errors), path)


@dataclass
class CellResult:
    cell: str
    rows: list[dict]


def _row(cell: str, kind: str, nf: float, fraction: float,
         report: transfer.RunReport) -> dict:
    f = report.final
    return {
        "cell": cell, "kind": kind, "nf": nf, "data_fraction": fraction,
        "epochs_run": len(report.records),
        "train_err_m": f.train_err_m, "val_err_m": f.val_err_m,
        "train_sr": f.train_sr, "val_sr": f.val_sr,
        "cum_energy_j": f.cum_energy_j, "cum_time_s": report.cum_time_s,
    }


def _write_cell(cell_dir: Path, rows: list[dict], reports: dict) -> None:
    for name, report in reports.items():
        report.write_csv(cell_dir / f"{name}report.csv")
        report.write_summary(cell_dir / f"{name}summary.json")
    with open(cell_dir / "rows.json", "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")


def _cell_done(cell_dir: Path) -> list[dict] | None:
    marker = cell_dir / "rows.json"
    if marker.exists():
        with open(marker) as fh:
            return json.load(fh)
    return None


def run_base_cell(config: dict, cell_dir: Path, train_raw: Dataset,
                  val_raw: Dataset) -> tuple[list[dict], Path]:
    ckpt_path = cell_dir / "checkpoint.ckpt.json"
    cached = _cell_done(cell_dir)
    if cached is not None:
        return cached, ckpt_path
    cell_dir.mkdir(parents=True, exist_ok=True)
    stats = fit_norm(train_raw)
    mcfg = _model_config(config)
    model, report = train(init_model(mcfg), apply_norm(train_raw, stats),
                          apply_norm(val_raw, stats), _train_config(config),
                          provenance={"kind": "base", "nf": 0})
    save_checkpoint(Checkpoint(mcfg, stats, model,
                               provenance={"kind": "base", "nf": 0}), ckpt_path)
    report.checkpoint_path = str(ckpt_path)
    _evaluate_cdf(model, stats, val_raw, cell_dir / "cdf.csv")
    rows = [_row("base", "base", 0.0, 1.0, report)]
    _write_cell(cell_dir, rows, {"": report})
    return rows, ckpt_path


def run_ev_cell(config: dict, cell_dir: Path, cell: str, nf: float,
                fraction: float, train_raw: Dataset, val_raw: Dataset) -> list[dict]:
    cached = _cell_done(cell_dir)
    if cached is not None:
        return cached
    cell_dir.mkdir(parents=True, exist_ok=True)
    noisy_train, noisy_val = _noisy_pair(config, train_raw, val_raw, nf)
    if fraction < 1.0:
        noisy_train = subsample(noisy_train, fraction, config["subsample_seed"])
    stats = fit_norm(noisy_train)
    mcfg = _model_config(config)
    model, report = train(init_model(mcfg), apply_norm(noisy_train, stats),
                          apply_norm(noisy_val, stats), _train_config(config),
                          provenance={"kind": "ev", "nf": nf, "data_fraction": fraction})
    ckpt_path = cell_dir / "checkpoint.ckpt.json"
    save_checkpoint(Checkpoint(mcfg, stats, model,
                               provenance={"kind": "ev", "nf": nf,
                                           "data_fraction": fraction}), ckpt_path)
    report.checkpoint_path = str(ckpt_path)
    _evaluate_cdf(model, stats, noisy_val, cell_dir / "cdf.csv")
    rows = [_row(cell, "ev", nf, fraction, report)]
    _write_cell(cell_dir, rows, {"": report})
    return rows


def _tl_train_config(config: dict, fraction: float) -> TrainConfig:
    # Equal update budget across data fractions: a cell holding fraction f of
    # the target data runs ~1/f as many epochs, so limited-data cells differ
    # only in how much data they see, not in how many optimizer steps they get.
    tc = _train_config(config, tl=True)
    tc.epochs = max(1, int(round(tc.epochs / fraction)))
    return tc


def _tl_fine_tune(config: dict, nf: float, fraction: float, train_raw: Dataset,
                  val_raw: Dataset, base_ckpt: Path):
    """Fine-tune the base checkpoint in the perturbed environment.

    The target training features are the source features with fresh
    environmental noise drawn every epoch (the fine-tuning loop regenerates
    the perturbation), while validation stays on the original clean split so
    the reported error measures recovery toward source-domain accuracy.
    """
    spec = replace(_noise_spec(config, nf), resample_per_epoch=True)
    subset = train_raw if fraction >= 1.0 \
        else subsample(train_raw, fraction, config["subsample_seed"])
    return fine_tune(
        base_ckpt, subset, val_raw, _tl_train_config(config, fraction),
        noise_spec=spec,
        provenance={"kind": "tl", "nf": nf, "data_fraction": fraction})


def run_tl_cell(config: dict, cell_dir: Path, cell: str, nf: float,
                fraction: float, train_raw: Dataset, val_raw: Dataset,
                base_ckpt: Path) -> list[dict]:
    cached = _cell_done(cell_dir)
    if cached is not None:
        return cached
    cell_dir.mkdir(parents=True, exist_ok=True)
    model, stats, report = _tl_fine_tune(config, nf, fraction, train_raw,
                                         val_raw, base_ckpt)
    ckpt_path = cell_dir / "checkpoint.ckpt.json"
    save_checkpoint(Checkpoint(_model_config(config), stats, model,
                               provenance={"kind": "tl", "nf": nf,
                                           "data_fraction": fraction,
                                           "parent": str(base_ckpt)}), ckpt_path)
    report.checkpoint_path = str(ckpt_path)
    _evaluate_cdf(model, stats, val_raw, cell_dir / "cdf.csv")
    rows = [_row(cell, "tl", nf, fraction, report)]
    _write_cell(cell_dir, rows, {"": report})
    return rows


def run_limited_cell(config: dict, cell_dir: Path, cell: str, nf: float,
                     fraction: float, train_raw: Dataset, val_raw: Dataset,
                     base_ckpt: Path) -> list[dict]:
    """Table-4-style before/after pair on a subsampled noisy target set."""
    cached = _cell_done(cell_dir)
    if cached is not None:
        return cached
    cell_dir.mkdir(parents=True, exist_ok=True)
    noisy_train, noisy_val = _noisy_pair(config, train_raw, val_raw, nf)
    if fraction < 1.0:
        noisy_train = subsample(noisy_train, fraction, config["subsample_seed"])

    stats = fit_norm(noisy_train)
    mcfg = _model_config(config)
    _, before = train(init_model(mcfg), apply_norm(noisy_train, stats),
                      apply_norm(noisy_val, stats), _train_config(config),
                      provenance={"kind": "ev", "nf": nf, "data_fraction": fraction})
    _, _, after = _tl_fine_tune(config, nf, fraction, train_raw, val_raw,
                                base_ckpt)
    rows = [_row(cell, "ev", nf, fraction, before),
            _row(cell, "tl", nf, fraction, after)]
    _write_cell(cell_dir, rows, {"before_": before, "after_": after})
    return rows


@dataclass
class SuiteResult:
    suite_dir: Path
    rows: list[dict]
    failed_cells: list[str]

    def lookup(self, cell: str, kind: str) -> dict:
        for row in self.rows:
            if row["cell"] == cell and row["kind"] == kind:
                return row
        raise KeyError(f"no row for cell={cell!r} kind={kind!r}")


CONSOLIDATED_COLUMNS = ["cell", "kind", "nf", "data_fraction", "epochs_run",
                        "train_err_m", "val_err_m", "train_sr", "val_sr",
                        "cum_energy_j", "cum_time_s"]


def run_suite(config: dict, out_dir=None, workers: int = 1) -> SuiteResult:
    layout = _layout(config)
    records = channel.synthesize_dataset(layout, _channel_params(config),
                                         config["synth_seed"])
    dataset = Dataset.from_records(records)
    train_raw, val_raw = data.split(dataset, config["split"]["train_fraction"],
                                    config["split"]["seed"])

    root = Path(out_dir if out_dir is not None else config["out_dir"])
    suite_dir = root / f"suite-{suite_id(config)}"
    suite_dir.mkdir(parents=True, exist_ok=True)
    data.save_csv(dataset, suite_dir / "dataset.csv")
    with open(suite_dir / "config.json", "w") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")

    rows: list[dict] = []
    failed: list[str] = []

    base_rows, base_ckpt = run_base_cell(config, suite_dir / "base", train_raw, val_raw)
    rows.extend(base_rows)
    if config["base_checkpoint"]:
        base_ckpt = Path(config["base_checkpoint"])

    def _nf_tag(nf):
        return f"{nf:g}"

    def _frac_tag(frac):
        return f"{round(frac * 100):d}"

    tasks = []
    for nf in config["noise"]["nfs"]:
        cell = f"ev-nf{_nf_tag(nf)}"
        tasks.append((cell, run_ev_cell,
                      (config, suite_dir / cell, cell, nf, 1.0, train_raw, val_raw)))
        cell = f"tl-nf{_nf_tag(nf)}"
        tasks.append((cell, run_tl_cell,
                      (config, suite_dir / cell, cell, nf, 1.0, train_raw, val_raw,
                       base_ckpt)))
        for frac in config["data_fractions"]:
            cell = f"lim-nf{_nf_tag(nf)}-f{_frac_tag(frac)}"
            tasks.append((cell, run_limited_cell,
                          (config, suite_dir / cell, cell, nf, frac,
                           train_raw, val_raw, base_ckpt)))

    if workers <= 1:
        outcomes = [(cell, _call_safely(fn, args)) for cell, fn, args in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(cell, pool.submit(_call_safely, fn, args))
                       for cell, fn, args in tasks]
            outcomes = [(cell, fut.result()) for cell, fut in futures]

    for cell, outcome in outcomes:
        if isinstance(outcome, Exception):
            failed.append(f"{cell}: {outcome}")
        else:
            rows.extend(outcome)

    _write_consolidated(suite_dir, rows, failed)
    if failed:
        raise RuntimeError("suite failed cells: " + "; ".join(failed))
    return SuiteResult(suite_dir, rows, failed)


def _call_safely(fn, args):
    try:
        return fn(*args)
    except Exception as exc:  # cell independence: finish the other cells
        return exc


def _write_consolidated(suite_dir: Path, rows: list[dict], failed: list[str]) -> None:
    import csv as _csv

    with open(suite_dir / "consolidated.csv", "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=CONSOLIDATED_COLUMNS)
        writer.writeheader()
        for row in sorted(rows, key=lambda r: (r["cell"], r["kind"])):
            writer.writerow({k: row[k] for k in CONSOLIDATED_COLUMNS})
    with open(suite_dir / "consolidated.json", "w") as fh:
        json.dump({"rows": rows, "failed_cells": failed}, fh, indent=2)
        fh.write("\n")
