"""Dense feed-forward regression network, implemented from scratch on numpy.

Forward pass, MSE / weighted two-domain loss, exact reverse-mode gradients
and SGD / Adam parameter updates.  All arithmetic is float64 so gradient
checks and checkpoint round trips are bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 10
    hidden_sizes: tuple[int, ...] = (512, 256, 128, 64, 32)
    output_dim: int = 2
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden layer sizes must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_sizes, self.output_dim)

    @property
    def n_layers(self) -> int:
        return len(self.hidden_sizes) + 1


@dataclass
class Mlp:
    """Layer parameters: weights[l] is (fan_in, fan_out), biases[l] is (fan_out,)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.activation)


def init_model(config: ModelConfig) -> Mlp:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(config.init_seed)
    sizes = config.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, config.activation)


def config_for(mlp: Mlp, init_seed: int = 0) -> ModelConfig:
    sizes = mlp.layer_sizes
    return ModelConfig(sizes[0], tuple(sizes[1:-1]), sizes[-1], mlp.activation, init_seed)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    return 1.0 - a * a


def forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Predict positions for a single input (d,) or a batch (n, d).

    Hidden layers apply the configured activation; the output layer is
    linear.
    """
    single = x.ndim == 1
    h = np.atleast_2d(np.asarray(x, dtype=float))
    if h.shape[1] != mlp.weights[0].shape[0]:
        raise ValueError(f"input dim {h.shape[1]} != model input dim "
                         f"{mlp.weights[0].shape[0]}")
    for l in range(mlp.n_layers - 1):
        h = _act(h @ mlp.weights[l] + mlp.biases[l], mlp.activation)
    out = h @ mlp.weights[-1] + mlp.biases[-1]
    return out[0] if single else out


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean of squared residuals over all samples and output coordinates."""
    pred = np.atleast_2d(pred)
    target = np.atleast_2d(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    return float(np.mean((pred - target) ** 2))


@dataclass(frozen=True)
class LossWeights:
    """Source/target weighting of the combined fine-tuning loss."""

    lambda_s: float = 0.0
    lambda_t: float = 1.0

    def __post_init__(self):
        if self.lambda_s < 0 or self.lambda_t < 0 or self.lambda_s + self.lambda_t <= 0:
            raise ValueError("loss weights must be >= 0 with a positive sum")


def combined_loss(loss_s: float, loss_t: float, weights: LossWeights) -> float:
    return weights.lambda_s * loss_s + weights.lambda_t * loss_t


def backward(mlp: Mlp, x: np.ndarray, y: np.ndarray
             ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact gradients of mse_loss(forward(mlp, x), y) w.r.t. every parameter.

    Returns (weight_grads, bias_grads) shaped like the model.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = x.shape[0]
    if y.shape != (n, mlp.weights[-1].shape[1]):
        raise ValueError(f"label shape {y.shape} incompatible with batch")

    # forward trace
    acts = [x]
    pre = []
    h = x
    for l in range(mlp.n_layers - 1):
        z = h @ mlp.weights[l] + mlp.biases[l]
        h = _act(z, mlp.activation)
        pre.append(z)
        acts.append(h)
    out = h @ mlp.weights[-1] + mlp.biases[-1]

    # d mse / d out, mean over samples and coordinates
    delta = 2.0 * (out - y) / out.size
    w_grads = [np.empty(0)] * mlp.n_layers
    b_grads = [np.empty(0)] * mlp.n_layers
    for l in range(mlp.n_layers - 1, -1, -1):
        w_grads[l] = acts[l].T @ delta
        b_grads[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ mlp.weights[l].T) * _act_grad(pre[l - 1], acts[l], mlp.activation)
    return w_grads, b_grads


@dataclass
class OptimizerState:
    kind: str  # "sgd" | "adam"
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list[np.ndarray] | None = None
    m_b: list[np.ndarray] | None = None
    v_w: list[np.ndarray] | None = None
    v_b: list[np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")

    def _ensure_moments(self, mlp: Mlp) -> None:
        if self.m_w is None:
            self.m_w = [np.zeros_like(w) for w in mlp.weights]
            self.v_w = [np.zeros_like(w) for w in mlp.weights]
            self.m_b = [np.zeros_like(b) for b in mlp.biases]
            self.v_b = [np.zeros_like(b) for b in mlp.biases]


def _resolve_frozen(frozen, n_layers: int) -> list[bool]:
    if frozen is None:
        return [False] * n_layers
    if len(frozen) != n_layers:
        raise ValueError(f"freeze mask length {len(frozen)} != layer count {n_layers}")
    return list(frozen)


def sgd_step(mlp: Mlp, grads, state: OptimizerState, frozen=None) -> Mlp:
    """W <- W - eta * grad on every unfrozen layer; frozen layers are shared
    by reference so they stay bit-identical."""
    w_grads, b_grads = grads
    mask = _resolve_frozen(frozen, mlp.n_layers)
    weights, biases = [], []
    for l in range(mlp.n_layers):
        if mask[l]:
            weights.append(mlp.weights[l])
            biases.append(mlp.biases[l])
        else:
            weights.append(mlp.weights[l] - state.learning_rate * w_grads[l])
            biases.append(mlp.biases[l] - state.learning_rate * b_grads[l])
    state.step += 1
    return Mlp(weights, biases, mlp.activation)


def adam_step(mlp: Mlp, grads, state: OptimizerState, frozen=None) -> Mlp:
    """Bias-corrected Adam update; frozen layers keep zero moments."""
    if state.kind != "adam":
        raise ValueError("optimizer state is not Adam")
    w_grads, b_grads = grads
    mask = _resolve_frozen(frozen, mlp.n_layers)
    state._ensure_moments(mlp)
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    weights, biases = [], []
    for l in range(mlp.n_layers):
        if mask[l]:
            weights.append(mlp.weights[l])
            biases.append(mlp.biases[l])
            continue
        new_params = []
        for p, g, m, v in ((mlp.weights[l], w_grads[l], state.m_w[l], state.v_w[l]),
                           (mlp.biases[l], b_grads[l], state.m_b[l], state.v_b[l])):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            new_params.append(p - state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps))
        weights.append(new_params[0])
        biases.append(new_params[1])
    return Mlp(weights, biases, mlp.activation)


def optimizer_step(mlp: Mlp, grads, state: OptimizerState, frozen=None) -> Mlp:
    if state.kind == "sgd":
        return sgd_step(mlp, grads, state, frozen)
    return adam_step(mlp, grads, state, frozen)
