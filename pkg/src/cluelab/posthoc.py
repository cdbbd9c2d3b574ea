"""Post-hoc calibrators fitted on a held-out validation split."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError
from .uncertainty import PredictiveDistribution, aggregate, softmax


@dataclass(frozen=True)
class IsotonicMap:
    """Non-decreasing step function; clamps to the end values outside its range."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if bp.shape != vals.shape or bp.ndim != 1 or bp.size == 0:
            raise DomainError("breakpoints and values must be equal-length, nonempty vectors")
        if np.any(np.diff(bp) <= 0) or np.any(np.diff(vals) < 0):
            raise DomainError("breakpoints must increase and values must not decrease")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    def __call__(self, scores):
        return isotonic_apply(self, scores)

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "IsotonicMap":
        return cls(np.array(data["breakpoints"]), np.array(data["values"]))


def pool_adjacent_violators(y, w=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit to the sequence ``y``."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    # each block: [weighted mean, total weight, length]
    means, weights, lengths = [], [], []
    for yi, wi in zip(y, w):
        means.append(yi)
        weights.append(wi)
        lengths.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, l2 = means.pop(), weights.pop(), lengths.pop()
            total = weights[-1] + w2
            means[-1] = (means[-1] * weights[-1] + m2 * w2) / total
            weights[-1] = total
            lengths[-1] += l2
    return np.repeat(means, lengths)


def isotonic_fit(scores, targets) -> IsotonicMap:
    """Monotone least-squares map from scores to targets.

    Samples with equal scores are pooled into one weighted point first, so the
    fit is a function of the score.
    """
    s = np.asarray(scores, dtype=float)
    t = np.asarray(targets, dtype=float)
    if s.size == 0 or s.shape != t.shape:
        raise DomainError("need equal-length, nonempty scores and targets")
    uniq, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=t)
    fitted = pool_adjacent_violators(sums / counts, counts)
    return IsotonicMap(uniq, fitted)


def isotonic_apply(mapping: IsotonicMap, scores):
    """Value of the block at the largest breakpoint <= score."""
    s = np.asarray(scores, dtype=float)
    idx = np.searchsorted(mapping.breakpoints, s, side="right") - 1
    out = mapping.values[np.clip(idx, 0, mapping.values.size - 1)]
    return out if np.ndim(s) else float(out)


@dataclass(frozen=True)
class TemperatureParam:
    T: float

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise DomainError("temperature must be finite and positive")

    def to_dict(self) -> dict:
        return {"T": self.T}

    @classmethod
    def from_dict(cls, data: dict) -> "TemperatureParam":
        return cls(float(data["T"]))


def temperature_apply(logits, T) -> np.ndarray:
    """Softmax of ``logits / T``; passes stacked on a leading axis are averaged."""
    if isinstance(T, TemperatureParam):
        T = T.T
    z = np.asarray(logits, dtype=float)
    probs = softmax(z / T, axis=-1)
    return probs.mean(axis=0) if z.ndim == 3 else probs


def _tempered_ce(logits, labels, log_t):
    probs = temperature_apply(logits, np.exp(log_t))
    p_true = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(p_true, 1e-12))))


def temperature_fit(logit_sets, labels, log_t_range=(-4.0, 4.0), grid_step=1e-3, tol=1e-6) -> TemperatureParam:
    """Temperature minimizing validation cross-entropy.

    ``logit_sets`` is (n, C) or (K, n, C) for K dropout passes. A grid over
    ln T brackets the best cell, then a bounded scalar search refines it, so
    the result is never worse than the best grid point.
    """
    labels = np.asarray(labels).astype(int)
    if np.unique(labels).size < 2:
        raise DomainError("validation labels contain a single class")
    lo, hi = log_t_range
    grid = np.arange(lo, hi + grid_step / 2, grid_step)
    losses = np.array([_tempered_ce(logit_sets, labels, g) for g in grid])
    best = int(np.argmin(losses))
    a, b = grid[max(best - 1, 0)], grid[min(best + 1, grid.size - 1)]
    refined = minimize_scalar(lambda g: _tempered_ce(logit_sets, labels, g), bounds=(a, b), method="bounded",
                              options={"xatol": tol}).x
    log_t = refined if _tempered_ce(logit_sets, labels, refined) <= losses[best] else grid[best]
    return TemperatureParam(float(np.exp(log_t)))


def ensemble_aggregate(members) -> PredictiveDistribution:
    """Combine member predictions with the same rule as MC-dropout passes."""
    return aggregate(list(members))


def dump_calibrator(calibrator) -> str:
    return json.dumps(calibrator.to_dict(), sort_keys=True)
