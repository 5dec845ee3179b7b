"""Weight transfer and fine-tuning: checkpoint persistence, layer freezing
and the epoch loop with error / success-rate / time / energy bookkeeping.
"""

from __future__ import annotations

import base64
import csv
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import metrics
from .data import Dataset, NormStats, NoiseSpec, apply_norm, inject_noise
from .network import (LossWeights, Mlp, ModelConfig, OptimizerState, backward,
                      forward, init_model, optimizer_step)

CHECKPOINT_SCHEMA_VERSION = 1


class CheckpointError(Exception):
    """Base class for checkpoint persistence failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    norm_stats: NormStats
    mlp: Mlp
    provenance: dict = field(default_factory=dict)
    schema_version: int = CHECKPOINT_SCHEMA_VERSION


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(payload: str, shape) -> np.ndarray:
    try:
        raw = base64.b64decode(payload.encode("ascii"), validate=True)
        arr = np.frombuffer(raw, dtype="<f8").astype(float)
    except Exception as exc:
        raise CheckpointCorruptError(f"undecodable parameter payload: {exc}") from exc
    if arr.size != int(np.prod(shape)):
        raise CheckpointCorruptError(
            f"payload holds {arr.size} values, shape {tuple(shape)} needs {int(np.prod(shape))}")
    return arr.reshape(shape)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """JSON envelope with base64-encoded little-endian float64 parameters."""
    layers = [{"weight_shape": list(w.shape), "weight": _encode(w),
               "bias_shape": list(b.shape), "bias": _encode(b)}
              for w, b in zip(ckpt.mlp.weights, ckpt.mlp.biases)]
    doc = {
        "schema_version": ckpt.schema_version,
        "model_config": {
            "input_dim": ckpt.model_config.input_dim,
            "hidden_sizes": list(ckpt.model_config.hidden_sizes),
            "output_dim": ckpt.model_config.output_dim,
            "activation": ckpt.model_config.activation,
            "init_seed": ckpt.model_config.init_seed,
        },
        "norm_stats": {"mean": [f"{v:.17g}" for v in ckpt.norm_stats.mean],
                       "std": [f"{v:.17g}" for v in ckpt.norm_stats.std]},
        "provenance": ckpt.provenance,
        "layers": layers,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: not valid JSON: {exc}") from exc
    try:
        version = doc["schema_version"]
        if version != CHECKPOINT_SCHEMA_VERSION:
            raise CheckpointVersionError(
                f"{path}: schema version {version}, expected {CHECKPOINT_SCHEMA_VERSION}")
        cfg = ModelConfig(
            input_dim=int(doc["model_config"]["input_dim"]),
            hidden_sizes=tuple(int(h) for h in doc["model_config"]["hidden_sizes"]),
            output_dim=int(doc["model_config"]["output_dim"]),
            activation=doc["model_config"]["activation"],
            init_seed=int(doc["model_config"]["init_seed"]),
        )
        stats = NormStats(np.array([float(v) for v in doc["norm_stats"]["mean"]]),
                          np.array([float(v) for v in doc["norm_stats"]["std"]]))
        layers = doc["layers"]
        provenance = doc.get("provenance", {})
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointCorruptError(f"{path}: malformed envelope: {exc}") from exc

    sizes = cfg.layer_sizes
    if len(layers) != cfg.n_layers:
        raise CheckpointShapeError(
            f"{path}: {len(layers)} layers in payload, config expects {cfg.n_layers}")
    weights, biases = [], []
    for l, entry in enumerate(layers):
        w_shape = tuple(entry["weight_shape"])
        b_shape = tuple(entry["bias_shape"])
        if w_shape != (sizes[l], sizes[l + 1]) or b_shape != (sizes[l + 1],):
            raise CheckpointShapeError(
                f"{path}: layer {l} shapes {w_shape}/{b_shape} do not match "
                f"config ({sizes[l]}, {sizes[l + 1]})")
        weights.append(_decode(entry["weight"], w_shape))
        biases.append(_decode(entry["bias"], b_shape))
    mlp = Mlp(weights, biases, cfg.activation)
    return Checkpoint(cfg, stats, mlp, provenance)


def transfer_weights(base: Mlp, target_config: ModelConfig) -> Mlp:
    """Identity transfer: the target starts as an exact copy of the base.

    Architectures must match layer for layer; there is no partial transfer.
    """
    sizes = target_config.layer_sizes
    if base.layer_sizes != sizes:
        raise CheckpointShapeError(
            f"cannot transfer weights: base layers {base.layer_sizes} != "
            f"target layers {sizes}")
    out = base.copy()
    out.activation = target_config.activation
    return out


def default_freeze_mask(config: ModelConfig) -> list[bool]:
    """Freeze every hidden layer except the last; keep the last hidden layer
    and the output layer trainable."""
    n_hidden = len(config.hidden_sizes)
    if n_hidden == 0:
        return [False]
    return [True] * (n_hidden - 1) + [False, False]


@dataclass
class PowerClock:
    """Configured-power energy model: E = (P_cpu + P_gpu) * wall time."""

    p_cpu_w: float = 65.0
    p_gpu_w: float = 0.0
    timer: callable = time.perf_counter

    def energy(self, t_epoch_s: float) -> float:
        return metrics.epoch_energy(self.p_cpu_w, self.p_gpu_w, t_epoch_s)


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 600
    freeze_mask: list[bool] | None = None
    loss_weights: LossWeights = field(default_factory=LossWeights)
    success_threshold_m: float = 1.0
    p_cpu_w: float = 65.0
    p_gpu_w: float = 0.0
    patience: int | None = None          # None disables early stopping
    convergence_eps: float = 1e-4
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.success_threshold_m <= 0:
            raise ValueError("success_threshold_m must be > 0")


@dataclass
class EpochRecord:
    epoch: int
    train_err_m: float
    val_err_m: float
    train_sr: float
    val_sr: float
    epoch_time_s: float
    epoch_energy_j: float
    cum_energy_j: float


@dataclass
class RunReport:
    records: list[EpochRecord]
    kind: str = "train"                  # "train" | "fine_tune"
    provenance: dict = field(default_factory=dict)
    config_echo: dict = field(default_factory=dict)
    checkpoint_path: str | None = None

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    @property
    def cum_time_s(self) -> float:
        return sum(r.epoch_time_s for r in self.records)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_err_m", "val_err_m", "train_sr", "val_sr",
                             "epoch_time_s", "epoch_energy_j", "cum_energy_j"])
            for r in self.records:
                writer.writerow([r.epoch] + [f"{v:.17g}" for v in (
                    r.train_err_m, r.val_err_m, r.train_sr, r.val_sr,
                    r.epoch_time_s, r.epoch_energy_j, r.cum_energy_j)])

    def summary(self) -> dict:
        f = self.final
        return {
            "kind": self.kind,
            "epochs_run": len(self.records),
            "final": {"train_err_m": f.train_err_m, "val_err_m": f.val_err_m,
                      "train_sr": f.train_sr, "val_sr": f.val_sr,
                      "cum_energy_j": f.cum_energy_j, "cum_time_s": self.cum_time_s},
            "provenance": self.provenance,
            "config": self.config_echo,
            "checkpoint": self.checkpoint_path,
        }

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


def _config_echo(config: TrainConfig) -> dict:
    echo = asdict(config)
    echo["loss_weights"] = [config.loss_weights.lambda_s, config.loss_weights.lambda_t]
    return echo


def _evaluate(mlp: Mlp, data: Dataset, threshold_m: float) -> tuple[float, float]:
    errors = metrics.localization_errors(forward(mlp, data.rssi), data.positions)
    return metrics.mean_error(errors), metrics.success_rate(errors, threshold_m)


def train(mlp: Mlp, train_data: Dataset, val_data: Dataset, config: TrainConfig,
          power_clock: PowerClock | None = None, *,
          source_data: Dataset | None = None,
          raw_train: Dataset | None = None,
          noise_spec: NoiseSpec | None = None,
          norm_stats: NormStats | None = None,
          kind: str = "train",
          provenance: dict | None = None) -> tuple[Mlp, RunReport]:
    """Mini-batch training with per-epoch metric capture.

    `train_data` / `val_data` carry normalized features and positions in
    meters.  When `noise_spec.resample_per_epoch` is set, `raw_train` and
    `norm_stats` must be provided: fresh feature noise is drawn on the raw
    dBm values each epoch and re-normalized before batching.  Source-domain
    batches contribute to the gradient only when lambda_s > 0 and
    `source_data` is given.
    """
    if power_clock is None:
        power_clock = PowerClock(config.p_cpu_w, config.p_gpu_w)
    frozen = config.freeze_mask
    state = OptimizerState(config.optimizer, config.learning_rate)
    shuffle_rng = np.random.default_rng(config.shuffle_seed)
    resample = noise_spec is not None and noise_spec.resample_per_epoch
    if resample and (raw_train is None or norm_stats is None):
        raise ValueError("per-epoch noise resampling needs raw_train and norm_stats")
    noise_rng = np.random.default_rng(noise_spec.seed) if resample else None
    lw = config.loss_weights
    use_source = lw.lambda_s > 0 and source_data is not None

    records: list[EpochRecord] = []
    cum_energy = 0.0
    best_val = np.inf
    stall = 0
    for epoch in range(1, config.epochs + 1):
        t_start = power_clock.timer()
        if resample:
            epoch_train = apply_norm(inject_noise(raw_train, noise_spec, noise_rng), norm_stats)
        else:
            epoch_train = train_data
        x, y = epoch_train.rssi, epoch_train.positions
        order = shuffle_rng.permutation(len(x))
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            w_grads, b_grads = backward(mlp, x[idx], y[idx])
            if use_source:
                sw, sb = backward(mlp, source_data.rssi, source_data.positions)
                w_grads = [lw.lambda_t * gt + lw.lambda_s * gs for gt, gs in zip(w_grads, sw)]
                b_grads = [lw.lambda_t * gt + lw.lambda_s * gs for gt, gs in zip(b_grads, sb)]
            mlp = optimizer_step(mlp, (w_grads, b_grads), state, frozen)

        train_err, train_sr = _evaluate(mlp, epoch_train, config.success_threshold_m)
        val_err, val_sr = _evaluate(mlp, val_data, config.success_threshold_m)
        if not (np.isfinite(train_err) and np.isfinite(val_err)):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        t_epoch = power_clock.timer() - t_start
        e_epoch = power_clock.energy(t_epoch)
        cum_energy += e_epoch
        records.append(EpochRecord(epoch, train_err, val_err, train_sr, val_sr,
                                   t_epoch, e_epoch, cum_energy))

        if config.patience is not None:
            if val_err < best_val * (1.0 - config.convergence_eps):
                best_val = val_err
                stall = 0
            else:
                best_val = min(best_val, val_err)
                stall += 1
                if stall >= config.patience:
                    break

    report = RunReport(records, kind=kind, provenance=provenance or {},
                       config_echo=_config_echo(config))
    return mlp, report


def fine_tune(base_checkpoint_path, target_train_raw: Dataset,
              target_val_raw: Dataset, config: TrainConfig,
              power_clock: PowerClock | None = None, *,
              noise_spec: NoiseSpec | None = None,
              provenance: dict | None = None) -> tuple[Mlp, NormStats, RunReport]:
    """Load base weights, freeze shared layers, fine-tune on target data.

    Target features arrive raw (dBm) and are normalized with the statistics
    stored in the base checkpoint; they are never refit.  When `noise_spec`
    is given the target training features are perturbed here — once up front,
    or freshly each epoch if `noise_spec.resample_per_epoch` is set.
    Validation features are used as passed in either case.
    """
    ckpt = load_checkpoint(base_checkpoint_path)
    mlp = transfer_weights(ckpt.mlp, ckpt.model_config)
    mask = config.freeze_mask if config.freeze_mask is not None \
        else default_freeze_mask(ckpt.model_config)
    cfg = TrainConfig(**{**asdict(config), "freeze_mask": mask,
                         "loss_weights": config.loss_weights})
    if noise_spec is not None and noise_spec.nf > 0:
        train_norm = apply_norm(inject_noise(target_train_raw, noise_spec),
                                ckpt.norm_stats)
    else:
        train_norm = apply_norm(target_train_raw, ckpt.norm_stats)
        noise_spec = None
    val_norm = apply_norm(target_val_raw, ckpt.norm_stats)
    prov = dict(provenance or {})
    prov.setdefault("parent", str(base_checkpoint_path))
    prov.setdefault("parent_provenance", ckpt.provenance)
    tuned, report = train(mlp, train_norm, val_norm, cfg, power_clock,
                          raw_train=target_train_raw, noise_spec=noise_spec,
                          norm_stats=ckpt.norm_stats,
                          kind="fine_tune", provenance=prov)
    return tuned, ckpt.norm_stats, report
