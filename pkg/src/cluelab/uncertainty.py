"""MC-dropout sampling, pass aggregation, and scalar uncertainty summaries.

Distributions are batched: a :class:`Categorical` holds an (n, C) matrix of
probabilities, a :class:`Gaussian` holds length-n mean and variance vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DomainError
from .nn import LOGVAR_CLAMP, MLPConfig, MLPParams, forward

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class Categorical:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim == 1:
            p = p[None, :]
        if p.ndim != 2:
            raise DomainError("categorical probabilities must be (n, C)")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise DomainError("categorical rows must lie on the probability simplex")
        object.__setattr__(self, "probs", p)

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    def __len__(self):
        return self.probs.shape[0]


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        v = np.atleast_1d(np.asarray(self.var, dtype=float))
        if m.shape != v.shape or m.ndim != 1:
            raise DomainError("gaussian mean and variance must be equal-length vectors")
        if np.any(~(v > 0)):
            raise DomainError("gaussian variance must be positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "var", v)

    def __len__(self):
        return self.mean.shape[0]


PredictiveDistribution = Union[Categorical, Gaussian]


@dataclass(frozen=True)
class MCSampleSet:
    """K stochastic passes over the same rows."""

    passes: tuple

    def __post_init__(self):
        passes = tuple(self.passes)
        if not passes:
            raise DomainError("need at least one pass")
        kind = type(passes[0])
        if any(type(p) is not kind for p in passes):
            raise TypeError("all passes must share one distribution type")
        shapes = {p.probs.shape if kind is Categorical else p.mean.shape for p in passes}
        if len(shapes) != 1:
            raise DomainError("all passes must share dimensionality")
        object.__setattr__(self, "passes", passes)

    @property
    def K(self) -> int:
        return len(self.passes)


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def head_to_distribution(outputs, config: MLPConfig) -> PredictiveDistribution:
    """Convert raw head outputs of one pass into a distribution."""
    if config.head == "categorical":
        return Categorical(softmax(outputs, axis=1))
    logvar = np.clip(outputs[:, 1], -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return Gaussian(outputs[:, 0], np.exp(logvar))


def mc_forward(params: MLPParams, config: MLPConfig, batch, K: int, rng=None, masks=None):
    """Run K dropout passes as one stacked forward call.

    The batch is tiled K times so pass k occupies rows k*n:(k+1)*n; dropout
    draws an independent mask for every row. Returns outputs reshaped to
    (K, n, outputs) and the stacked forward cache.
    """
    if K < 1:
        raise DomainError("K must be at least 1")
    x = np.asarray(batch, dtype=float)
    n = x.shape[0]
    out, cache = forward(params, config, np.tile(x, (K, 1)), rng=rng, masks=masks)
    return out.reshape(K, n, config.n_outputs), cache


def mc_dropout_predict(params: MLPParams, config: MLPConfig, batch, K: int,
                       rng: np.random.Generator) -> MCSampleSet:
    out, _ = mc_forward(params, config, batch, K, rng=rng)
    return MCSampleSet(tuple(head_to_distribution(out[k], config) for k in range(K)))


def aggregate(samples: Union[MCSampleSet, Sequence[PredictiveDistribution]]) -> PredictiveDistribution:
    """Average K passes (or ensemble members) into one predictive distribution.

    Categorical passes are averaged probability-wise. Gaussian passes combine
    by the law of total variance: mean of variances plus variance of means.
    """
    if not isinstance(samples, MCSampleSet):
        samples = MCSampleSet(tuple(samples))
    passes = samples.passes
    if isinstance(passes[0], Categorical):
        return Categorical(np.mean([p.probs for p in passes], axis=0))
    means = np.array([p.mean for p in passes])
    variances = np.array([p.var for p in passes])
    mu = means.mean(axis=0)
    return Gaussian(mu, variances.mean(axis=0) + ((means - mu) ** 2).mean(axis=0))


def _entropy(probs):
    p = np.asarray(probs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


def normalized_entropy(dist: Categorical) -> np.ndarray:
    """Predictive entropy divided by ln C, so it lies in [0, 1]."""
    C = dist.n_classes
    if C < 2:
        raise DomainError("normalized entropy needs at least 2 classes")
    return np.clip(_entropy(dist.probs) / np.log(C), 0.0, 1.0)


def confidence(dist: Categorical) -> np.ndarray:
    """One minus the top-class probability."""
    return 1.0 - dist.probs.max(axis=1)


def gaussian_entropy(dist: Gaussian) -> np.ndarray:
    """Differential entropy 0.5 * ln(2 pi e var); may be negative."""
    if np.any(~(dist.var > 0)):
        raise DomainError("variance must be positive")
    return 0.5 * np.log(2.0 * np.pi * np.e * dist.var)
