"""VLC indoor-localization workbench.

Synthetic RSSI fingerprint generation, from-scratch MLP position
regression, environmental-noise degradation and transfer-learning recovery
with per-epoch error / success-rate / time / energy accounting.
"""

from .channel import (ChannelParams, FingerprintRecord, Patch, RoomLayout,
                      Transmitter, default_layout, lambertian_order, los_gain,
                      synthesize_dataset)
from .data import (Dataset, NoiseSpec, NormStats, apply_norm, fit_norm,
                   inject_noise, load_csv, save_csv, split, subsample)
from .estimators import GaussianNoiseInjector, MlpRegressor, RssiScaler
from .metrics import (build_cdf, epoch_energy, localization_errors, mean_error,
                      success_rate)
from .network import (LossWeights, Mlp, ModelConfig, OptimizerState, adam_step,
                      backward, combined_loss, forward, init_model, mse_loss,
                      sgd_step)
from .suite import load_config, run_suite
from .transfer import (Checkpoint, PowerClock, RunReport, TrainConfig,
                       default_freeze_mask, fine_tune, load_checkpoint,
                       save_checkpoint, train, transfer_weights)

__version__ = "0.1.0"
