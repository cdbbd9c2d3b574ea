"""Feed-forward network engine written directly on numpy.

A network is a stack of affine layers with a relu or tanh nonlinearity and
inverted dropout after every hidden activation. The final affine layer feeds
either a categorical head (one logit per class) or a Gaussian head
(mean, log-variance). Everything is float64.

Random numbers come from numpy's PCG64 bit generator seeded through a
``SeedSequence``; both algorithms are fixed by numpy's documented stream
compatibility policy, so a given seed yields the same masks everywhere.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, StateError

ACTIVATIONS = ("relu", "tanh")
HEADS = ("categorical", "gaussian")

# Log-variance outputs are clamped to this range before exponentiation.
LOGVAR_CLAMP = 10.0


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 generator for ``seed``; ``keys`` derive independent sub-streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


@dataclass(frozen=True)
class MLPConfig:
    layer_widths: tuple
    activation: str = "relu"
    dropout_rate: float = 0.3
    head: str = "categorical"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ConfigError("need input, at least one hidden layer, and output widths")
        if any(w < 1 for w in widths):
            raise ConfigError(f"layer widths must be positive, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}")
        if self.head == "categorical" and widths[-1] < 2:
            raise ConfigError("categorical head needs at least 2 output classes")
        if self.head == "gaussian" and widths[-1] != 2:
            raise ConfigError("gaussian head needs exactly 2 outputs (mean, log-variance)")

    @property
    def n_inputs(self) -> int:
        return self.layer_widths[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_hidden_layers(self) -> int:
        return len(self.layer_widths) - 2


@dataclass
class Grads:
    """Per-layer gradients, shaped like the parameters they belong to."""

    weights: list
    biases: list

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def __add__(self, other: "Grads") -> "Grads":
        return Grads([a + b for a, b in zip(self.weights, other.weights)],
                     [a + b for a, b in zip(self.biases, other.biases)])

    def scaled(self, factor: float) -> "Grads":
        return Grads([w * factor for w in self.weights], [b * factor for b in self.biases])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))

    def clipped(self, max_norm: float) -> "Grads":
        """Rescaled to global L2 norm ``max_norm`` if it exceeds it."""
        total = self.norm()
        return self.scaled(max_norm / total) if total > max_norm else self


@dataclass
class MLPParams:
    weights: list
    biases: list
    momentum_weights: list = field(default_factory=list)
    momentum_biases: list = field(default_factory=list)

    def __post_init__(self):
        if not self.momentum_weights:
            self.momentum_weights = [np.zeros_like(w) for w in self.weights]
        if not self.momentum_biases:
            self.momentum_biases = [np.zeros_like(b) for b in self.biases]

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         [m.copy() for m in self.momentum_weights],
                         [m.copy() for m in self.momentum_biases])

    def arrays(self) -> list:
        """Parameter arrays in layer order: W0, b0, W1, b1, ..."""
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def check_shapes(self, config: MLPConfig):
        widths = config.layer_widths
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise StateError("parameter layer count does not match config")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
                raise StateError(f"layer {i} parameter shapes do not match config")


@dataclass
class ForwardCache:
    config: MLPConfig
    inputs: list  # input to each affine layer
    preacts: list  # hidden pre-activations
    masks: list  # scaled keep-masks per hidden layer, or None
    weights: list


def init_params(config: MLPConfig, seed: int) -> MLPParams:
    """He-normal weights for relu, fan-in Xavier-normal for tanh; zero biases."""
    rng = make_rng(seed, 0)
    gain = 2.0 if config.activation == "relu" else 1.0
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_widths[:-1], config.layer_widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def _activate(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _activate_grad(z, kind):
    if kind == "relu":
        return (z > 0.0).astype(float)
    return 1.0 - np.tanh(z) ** 2


def sample_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward(params: MLPParams, config: MLPConfig, batch, rng: Optional[np.random.Generator] = None,
            masks: Optional[Sequence] = None):
    """Run the network on a (rows, inputs) batch.

    Dropout is off unless ``rng`` is given (fresh masks) or ``masks`` is given
    (replay of an earlier call). Returns the raw head outputs, logits or
    (mean, log-variance) columns, and the cache needed by :func:`backward`.
    """
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != config.n_inputs:
        raise DimensionError(f"batch shape {x.shape} does not match input width {config.n_inputs}")
    if masks is not None and len(masks) != config.n_hidden_layers:
        raise StateError("number of masks does not match hidden layers")
    rate = config.dropout_rate
    inputs, preacts, used_masks = [], [], []
    a = x
    for i in range(config.n_hidden_layers):
        inputs.append(a)
        z = a @ params.weights[i] + params.biases[i]
        preacts.append(z)
        a = _activate(z, config.activation)
        if masks is not None:
            mask = masks[i]
        elif rng is not None and rate > 0.0:
            mask = sample_mask(rng, a.shape, rate)
        else:
            mask = None
        if mask is not None:
            if mask.shape != a.shape:
                raise StateError("mask shape does not match activations")
            a = a * mask
        used_masks.append(mask)
    inputs.append(a)
    out = a @ params.weights[-1] + params.biases[-1]
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite network output")
    return out, ForwardCache(config, inputs, preacts, used_masks, list(params.weights))


def backward(cache: ForwardCache, config: MLPConfig, output_gradient) -> Grads:
    """Reverse-mode gradients of ``sum(output * output_gradient)`` w.r.t. parameters."""
    if cache.config != config:
        raise StateError("cache was produced under a different config")
    g = np.asarray(output_gradient, dtype=float)
    if g.shape != (cache.inputs[-1].shape[0], config.n_outputs):
        raise DimensionError(f"output gradient shape {g.shape} does not match forward output")
    n_layers = len(config.layer_widths) - 1
    dW = [None] * n_layers
    db = [None] * n_layers
    weights = cache.weights
    for i in reversed(range(n_layers)):
        dW[i] = cache.inputs[i].T @ g
        db[i] = g.sum(axis=0)
        if i == 0:
            break
        g = g @ weights[i].T
        if cache.masks[i - 1] is not None:
            g = g * cache.masks[i - 1]
        g = g * _activate_grad(cache.preacts[i - 1], config.activation)
    return Grads(dW, db)


def sgd_step(params: MLPParams, grads: Grads, lr: float, momentum: float = 0.9,
             weight_decay: float = 0.0) -> MLPParams:
    """One SGD-with-momentum update; returns new parameters, input untouched.

    buffer <- momentum * buffer + grad + weight_decay * param
    param  <- param - lr * buffer
    """
    if not lr > 0:
        raise ConfigError(f"lr must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
    if weight_decay < 0:
        raise ConfigError(f"weight_decay must be non-negative, got {weight_decay}")
    for a in (*grads.weights, *grads.biases):
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite gradient, step refused")
    def update(values, gradients, buffers):
        new_values, new_buffers = [], []
        for p, g, buf in zip(values, gradients, buffers):
            buf = momentum * buf + g + weight_decay * p
            new_buffers.append(buf)
            new_values.append(p - lr * buf)
        return new_values, new_buffers

    new_w, buf_w = update(params.weights, grads.weights, params.momentum_weights)
    new_b, buf_b = update(params.biases, grads.biases, params.momentum_biases)
    updated = MLPParams(new_w, new_b, buf_w, buf_b)
    if not np.all(np.isfinite(updated.flat())):
        raise NumericError("parameters became non-finite")
    return updated


def finite_diff_grad(loss_of_params: Callable[[MLPParams], float], params: MLPParams,
                     epsilon: float = 1e-5) -> Grads:
    """Central-difference gradient of a scalar loss, one coordinate at a time.

    ``loss_of_params`` must hold any dropout masks fixed between calls.
    """
    if not epsilon > 0:
        raise ConfigError("epsilon must be positive")
    base = float(loss_of_params(params))
    if not np.isfinite(base):
        raise NumericError("loss is not finite at params")
    probe = params.copy()
    out = []
    for arr in probe.arrays():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            up = float(loss_of_params(probe))
            flat[j] = orig - epsilon
            down = float(loss_of_params(probe))
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("non-finite loss during finite differencing")
            gflat[j] = (up - down) / (2.0 * epsilon)
        out.append(grad)
    return Grads(out[0::2], out[1::2])
