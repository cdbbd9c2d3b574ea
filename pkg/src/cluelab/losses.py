"""Per-sample task losses and the uncertainty-error alignment objective.

The composite loss for one sample with task loss ``L`` and uncertainty ``u`` is

    alpha * L + (1 - alpha) * (L - u) ** 2

and a batch loss is the mean of the per-sample values. During training both
``L`` and ``u`` are computed from the MC-aggregated predictive distribution
of K dropout passes, and the gradient flows back through every pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError
from .nn import LOGVAR_CLAMP, Grads, MLPConfig, MLPParams, backward
from .uncertainty import mc_forward, softmax

PROB_FLOOR = 1e-12

TASK_LOSSES = ("cross_entropy", "mse", "gaussian_nll")
UNCERTAINTY_KINDS = ("normalized_entropy", "variance")
ENTROPY_SOURCES = ("aggregate", "mean_of_passes")


@dataclass(frozen=True)
class CLUEConfig:
    alpha: float = 0.5
    task_loss: str = "cross_entropy"
    uncertainty_kind: str = "normalized_entropy"
    # classification only: entropy of the averaged distribution, or mean of per-pass entropies
    entropy_source: str = "aggregate"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.task_loss not in TASK_LOSSES:
            raise ConfigError(f"unknown task loss {self.task_loss!r}")
        if self.uncertainty_kind not in UNCERTAINTY_KINDS:
            raise ConfigError(f"unknown uncertainty kind {self.uncertainty_kind!r}")
        if self.entropy_source not in ENTROPY_SOURCES:
            raise ConfigError(f"unknown entropy source {self.entropy_source!r}")
        classification = self.task_loss == "cross_entropy"
        if classification != (self.uncertainty_kind == "normalized_entropy"):
            raise ConfigError("cross_entropy pairs with normalized_entropy; mse/gaussian_nll pair with variance")

    @property
    def head(self) -> str:
        return "categorical" if self.task_loss == "cross_entropy" else "gaussian"


def cross_entropy(probs, labels):
    """Per-sample ``-log p[label]`` and its gradient w.r.t. ``probs``.

    Probabilities are floored at 1e-12 inside the log; below the floor the
    gradient is zero.
    """
    p = np.atleast_2d(np.asarray(probs, dtype=float))
    y = np.atleast_1d(np.asarray(labels))
    if y.shape[0] != p.shape[0]:
        raise DomainError("one label per row required")
    if np.any(y < 0) or np.any(y >= p.shape[1]) or not np.all(np.equal(np.mod(y, 1), 0)):
        raise DomainError("label out of range")
    y = y.astype(int)
    rows = np.arange(p.shape[0])
    p_true = p[rows, y]
    loss = -np.log(np.maximum(p_true, PROB_FLOOR))
    grad = np.zeros_like(p)
    grad[rows, y] = np.where(p_true > PROB_FLOOR, -1.0 / np.maximum(p_true, PROB_FLOOR), 0.0)
    return loss, grad


def cross_entropy_from_logits(logits, labels):
    """Per-sample cross-entropy via log-sum-exp, with gradient w.r.t. logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=float))
    y = np.atleast_1d(np.asarray(labels)).astype(int)
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise DomainError("label out of range")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = log_norm - shifted[rows, y]
    grad = softmax(z, axis=1)
    grad[rows, y] -= 1.0
    return loss, grad


def mse(pred_mean, target):
    """Squared error (y - pred)**2 and its derivative 2 * (pred - y)."""
    pred = np.asarray(pred_mean, dtype=float)
    diff = pred - np.asarray(target, dtype=float)
    return diff ** 2, 2.0 * diff


def gaussian_nll(mean, variance, target):
    """Gaussian negative log-likelihood with gradients w.r.t. mean and variance."""
    var = np.asarray(variance, dtype=float)
    if np.any(~(var > 0)):
        raise DomainError("variance must be positive")
    resid = np.asarray(target, dtype=float) - np.asarray(mean, dtype=float)
    loss = 0.5 * np.log(2.0 * np.pi * var) + resid ** 2 / (2.0 * var)
    d_mean = -resid / var
    d_var = 0.5 / var - resid ** 2 / (2.0 * var ** 2)
    return loss, d_mean, d_var


def clue_loss(task_loss_value, u, alpha: float):
    """Composite loss and its partials w.r.t. the task loss and the uncertainty."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    L = np.asarray(task_loss_value, dtype=float)
    gap = L - np.asarray(u, dtype=float)
    loss = alpha * L + (1.0 - alpha) * gap ** 2
    d_task = alpha + 2.0 * (1.0 - alpha) * gap
    d_u = -2.0 * (1.0 - alpha) * gap
    return loss, d_task, d_u


def _classification_terms(logits, labels, cfg: CLUEConfig):
    """Per-sample task loss, uncertainty, and d(loss)/d(logits) for (K, n, C) logits."""
    K, n, C = logits.shape
    probs = softmax(logits, axis=2)
    pbar = probs.mean(axis=0)
    task, d_task_dp = cross_entropy(pbar, labels)
    log_c = np.log(C)
    if cfg.entropy_source == "aggregate":
        logp = np.log(np.maximum(pbar, PROB_FLOOR))
        u = -(pbar * logp).sum(axis=1) / log_c
        du_dpbar = -(logp + 1.0) / log_c
    else:
        logp = np.log(np.maximum(probs, PROB_FLOOR))
        u = -(probs * logp).sum(axis=2).mean(axis=0) / log_c
        du_dp = -(logp + 1.0) / (log_c * K)
    loss, d_task, d_u = clue_loss(task, u, cfg.alpha)
    g_pbar = d_task[:, None] * d_task_dp
    if cfg.entropy_source == "aggregate":
        g_p = np.broadcast_to((g_pbar + d_u[:, None] * du_dpbar) / K, probs.shape)
    else:
        g_p = g_pbar / K + d_u[None, :, None] * du_dp
    # softmax Jacobian-vector product, per pass
    g_z = probs * (g_p - (g_p * probs).sum(axis=2, keepdims=True))
    return loss, g_z


def _regression_terms(outputs, targets, cfg: CLUEConfig):
    """Per-sample loss and d(loss)/d(outputs) for (K, n, 2) Gaussian-head outputs."""
    K = outputs.shape[0]
    m = outputs[..., 0]
    s_raw = outputs[..., 1]
    s = np.clip(s_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    v = np.exp(s)
    mu = m.mean(axis=0)
    total_var = v.mean(axis=0) + ((m - mu) ** 2).mean(axis=0)
    y = np.asarray(targets, dtype=float)
    if cfg.task_loss == "mse":
        task, d_task_dmu = mse(mu, y)
        d_task_dvar = np.zeros_like(mu)
    else:
        task, d_task_dmu, d_task_dvar = gaussian_nll(mu, total_var, y)
    loss, d_task, d_u = clue_loss(task, total_var, cfg.alpha)
    g_mu = d_task * d_task_dmu
    g_var = d_task * d_task_dvar + d_u
    g_m = g_mu[None, :] / K + g_var[None, :] * 2.0 * (m - mu) / K
    inside = (s_raw > -LOGVAR_CLAMP) & (s_raw < LOGVAR_CLAMP)
    g_s = g_var[None, :] * v / K * inside
    return loss, np.stack([g_m, g_s], axis=-1)


def clue_objective(params: MLPParams, config: MLPConfig, batch, targets, cfg: CLUEConfig, K: int = 1,
                   rng: Optional[np.random.Generator] = None, masks=None):
    """Batch-mean composite loss and its exact parameter gradient.

    Runs K dropout passes (fresh masks from ``rng``, or the replayed
    ``masks``), aggregates them, and backpropagates through all passes.
    Returns ``(loss, grads, masks)``; feeding ``masks`` back reproduces the
    same stochastic network, which is what a finite-difference check needs.
    """
    if config.head != cfg.head:
        raise ConfigError(f"{cfg.task_loss} needs a {cfg.head} head, model has {config.head}")
    outputs, cache = mc_forward(params, config, batch, K, rng=rng, masks=masks)
    n = outputs.shape[1]
    if config.head == "categorical":
        per_sample, g_out = _classification_terms(outputs, targets, cfg)
    else:
        per_sample, g_out = _regression_terms(outputs, targets, cfg)
    g_out = g_out.reshape(K * n, config.n_outputs) / n
    grads = backward(cache, config, g_out)
    return float(per_sample.mean()), grads, cache.masks


def clue_batch(params: MLPParams, config: MLPConfig, batch, targets, cfg: CLUEConfig, K: int,
               rng: Optional[np.random.Generator] = None, masks=None):
    """``(batch loss, parameter gradients)`` of the composite objective."""
    loss, grads, _ = clue_objective(params, config, batch, targets, cfg, K, rng=rng, masks=masks)
    return loss, grads


def per_sample_clue(params: MLPParams, config: MLPConfig, batch, targets, cfg: CLUEConfig, K: int,
                    rng: Optional[np.random.Generator] = None, masks=None) -> np.ndarray:
    outputs, _ = mc_forward(params, config, batch, K, rng=rng, masks=masks)
    if config.head == "categorical":
        return _classification_terms(outputs, targets, cfg)[0]
    return _regression_terms(outputs, targets, cfg)[0]


def task_loss_config(head: str, task_loss: Optional[str] = None) -> CLUEConfig:
    """Config whose objective is the plain task loss (alpha = 1)."""
    if head == "categorical":
        return CLUEConfig(alpha=1.0, task_loss="cross_entropy", uncertainty_kind="normalized_entropy")
    return CLUEConfig(alpha=1.0, task_loss=task_loss or "mse", uncertainty_kind="variance")
