"""Calibration and uncertainty-quality metrics.

Every metric takes plain arrays, so it can be checked against hand
computations; :func:`classification_report` and :func:`regression_report`
bundle them for an :class:`EvalRecords` set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm, rankdata

from .errors import DomainError
from .losses import PROB_FLOOR, gaussian_nll
from .uncertainty import Categorical, Gaussian, PredictiveDistribution, confidence, gaussian_entropy, \
    normalized_entropy


@dataclass
class EvalRecords:
    """Column-wise per-sample evaluation data for one model on one split.

    For classification ``correct`` is filled and ``squared_error`` is None;
    for regression the reverse.
    """

    prediction: PredictiveDistribution
    uncertainty: np.ndarray
    uncertainty_kind: str
    per_sample_loss: np.ndarray
    target: np.ndarray
    correct: Optional[np.ndarray] = None
    squared_error: Optional[np.ndarray] = None
    predicted: Optional[np.ndarray] = None  # class labels when they differ from argmax(prediction)

    @property
    def is_classification(self) -> bool:
        return isinstance(self.prediction, Categorical)

    def __len__(self):
        return len(self.target)


def classification_records(dist: Categorical, labels, uncertainty_kind: str = "normalized_entropy") -> EvalRecords:
    labels = np.asarray(labels).astype(int)
    if uncertainty_kind == "normalized_entropy":
        u = normalized_entropy(dist)
    elif uncertainty_kind == "one_minus_confidence":
        u = confidence(dist)
    else:
        raise DomainError(f"unsupported classification uncertainty {uncertainty_kind!r}")
    p_true = dist.probs[np.arange(len(labels)), labels]
    return EvalRecords(dist, u, uncertainty_kind, -np.log(np.maximum(p_true, PROB_FLOOR)), labels,
                       correct=dist.probs.argmax(axis=1) == labels)


def regression_records(dist: Gaussian, targets, uncertainty_kind: str = "variance") -> EvalRecords:
    targets = np.asarray(targets, dtype=float)
    if uncertainty_kind == "variance":
        u = dist.var
    elif uncertainty_kind == "gaussian_entropy":
        u = gaussian_entropy(dist)
    else:
        raise DomainError(f"unsupported regression uncertainty {uncertainty_kind!r}")
    sq = (targets - dist.mean) ** 2
    return EvalRecords(dist, u, uncertainty_kind, sq, targets, squared_error=sq)


@dataclass
class BinnedCalibration:
    edges: np.ndarray
    counts: np.ndarray
    mean_value: np.ndarray  # mean confidence or uncertainty per bin (0 when empty)
    mean_outcome: np.ndarray  # accuracy or error rate per bin (0 when empty)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def gap(self) -> float:
        return float(np.sum(self.counts / self.n * np.abs(self.mean_outcome - self.mean_value)))


def equal_width_bins(values, outcomes, n_bins: int = 10) -> BinnedCalibration:
    """Bin ``values`` in [0, 1] into equal-width bins.

    A value on an interior edge goes to the higher bin; the last bin is
    closed on the right.
    """
    values = np.asarray(values, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    if values.size == 0:
        raise DomainError("empty record set")
    if n_bins < 1:
        raise DomainError("need at least one bin")
    idx = np.clip(np.floor(values * n_bins).astype(int), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sums_v = np.bincount(idx, weights=values, minlength=n_bins)
    sums_o = np.bincount(idx, weights=outcomes, minlength=n_bins)
    safe = np.maximum(counts, 1)
    return BinnedCalibration(np.linspace(0.0, 1.0, n_bins + 1), counts, sums_v / safe, sums_o / safe)


def ece(confidences, correct, n_bins: int = 10) -> float:
    """Occupancy-weighted mean |accuracy - confidence| over confidence bins."""
    return equal_width_bins(confidences, correct, n_bins).gap()


def uce(uncertainty, errors, n_bins: int = 10) -> float:
    """Occupancy-weighted mean |error rate - uncertainty| over uncertainty bins."""
    u = np.asarray(uncertainty, dtype=float)
    if np.any(u < 0) or np.any(u > 1):
        raise DomainError("uncertainty must lie in [0, 1] for UCE")
    return equal_width_bins(u, errors, n_bins).gap()


def regression_ece(mean, var, target, n_levels: int = 10) -> float:
    """Quantile-coverage calibration error of Gaussian predictions.

    For central coverage levels q = m / (n_levels + 1), compares the fraction
    of targets inside mean +/- z(q) * sigma with q and averages |gap|.
    """
    var = np.asarray(var, dtype=float)
    if np.any(~(var > 0)):
        raise DomainError("predicted variance must be positive")
    if var.size == 0:
        raise DomainError("empty record set")
    levels = np.arange(1, n_levels + 1) / (n_levels + 1)
    z = norm.ppf(0.5 + levels / 2.0)
    standardized = np.abs(np.asarray(target, dtype=float) - np.asarray(mean, dtype=float)) / np.sqrt(var)
    coverage = (standardized[None, :] <= z[:, None]).mean(axis=1)
    return float(np.mean(np.abs(coverage - levels)))


def ence(var, squared_error, n_bins: int = 10) -> float:
    """Expected normalized calibration error over equal-count variance bins."""
    var = np.asarray(var, dtype=float)
    sq = np.asarray(squared_error, dtype=float)
    if var.size < n_bins:
        raise DomainError("fewer samples than bins")
    order = np.argsort(var, kind="stable")
    terms = []
    for chunk in np.array_split(order, n_bins):
        rmv = np.sqrt(var[chunk].mean())
        if rmv == 0:
            raise DomainError("a bin has zero root mean variance")
        terms.append(abs(rmv - np.sqrt(sq[chunk].mean())) / rmv)
    return float(np.mean(terms))


def sparsification_curves(uncertainty, error):
    """Remaining-mean-error curves, normalized by the full-set mean error.

    Point k is the mean error after removing the k samples with the highest
    uncertainty (model curve) or highest error (oracle curve), for
    k = 0, ..., n-1. Returns ``(fractions, model, oracle)``.
    """
    u = np.asarray(uncertainty, dtype=float)
    e = np.asarray(error, dtype=float)
    n = e.size
    if n < 2:
        raise DomainError("need at least 2 samples")

    def curve(order):
        # order: most-removed-first; the tail sums give remaining totals
        tail = np.cumsum(e[order][::-1])[::-1]
        return tail / (n - np.arange(n))

    model = curve(np.argsort(-u, kind="stable"))
    oracle = curve(np.argsort(-e, kind="stable"))
    base = model[0]
    if base == 0:
        return np.arange(n) / n, np.zeros(n), np.zeros(n)
    return np.arange(n) / n, model / base, oracle / base


def ause(uncertainty, error) -> float:
    """Trapezoidal area between the model and oracle sparsification curves."""
    f, model, oracle = sparsification_curves(uncertainty, error)
    return float(np.trapezoid(model - oracle, f))


def uncertainty_accuracy(uncertainty, correct, threshold: float = 0.5) -> float:
    """Share of certain-and-correct plus uncertain-and-wrong predictions."""
    u = np.asarray(uncertainty, dtype=float)
    c = np.asarray(correct, dtype=bool)
    if u.size == 0:
        raise DomainError("empty record set")
    return float(np.mean((c & (u < threshold)) | (~c & (u >= threshold))))


def best_uncertainty_threshold(uncertainty, correct):
    """Threshold maximizing uncertainty accuracy, and that accuracy."""
    u = np.asarray(uncertainty, dtype=float)
    candidates = np.unique(np.concatenate([u, [np.inf]]))
    scores = [uncertainty_accuracy(u, correct, t) for t in candidates]
    best = int(np.argmax(scores))
    return float(candidates[best]), float(scores[best])


def uauc(uncertainty, correct) -> float:
    """ROC area of uncertainty as a score for detecting wrong predictions.

    Rank statistic with midranks for ties; NaN when either class is absent.
    """
    u = np.asarray(uncertainty, dtype=float)
    wrong = ~np.asarray(correct, dtype=bool)
    if u.size == 0:
        raise DomainError("empty record set")
    n_pos, n_neg = int(wrong.sum()), int((~wrong).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(u)
    return float((ranks[wrong].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pearson_corr(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size != b.size or a.size < 2:
        raise DomainError("need two equal-length samples of size >= 2")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.sum(da ** 2)), np.sqrt(np.sum(db ** 2))
    if sa == 0 or sb == 0:
        raise DomainError("zero variance")
    return float(np.clip(np.sum(da * db) / (sa * sb), -1.0, 1.0))


def wasserstein1(samples_a, samples_b) -> float:
    """W1 between two empirical distributions: integral of |F_a - F_b|."""
    a = np.sort(np.asarray(samples_a, dtype=float))
    b = np.sort(np.asarray(samples_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise DomainError("both samples must be nonempty")
    merged = np.sort(np.concatenate([a, b]))
    widths = np.diff(merged)
    cdf_a = np.searchsorted(a, merged[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, merged[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * widths))


def classification_stats(predicted, labels):
    """Error rate plus F1/precision/TPR/TNR with class 1 as positive.

    Returns ``(stats, flags)``; a metric whose denominator vanishes is
    reported as 0 and named in ``flags``. Binary stats are only computed
    when both arrays are binary.
    """
    pred = np.asarray(predicted).astype(int)
    y = np.asarray(labels).astype(int)
    if y.size == 0:
        raise DomainError("empty record set")
    stats = {"error": float(np.mean(pred != y))}
    flags = []
    if set(np.unique(y)) | set(np.unique(pred)) <= {0, 1}:
        tp = int(np.sum((pred == 1) & (y == 1)))
        fp = int(np.sum((pred == 1) & (y == 0)))
        tn = int(np.sum((pred == 0) & (y == 0)))
        fn = int(np.sum((pred == 0) & (y == 1)))

        def ratio(name, num, den):
            if den == 0:
                flags.append(name)
                return 0.0
            return num / den

        stats["precision"] = ratio("precision", tp, tp + fp)
        stats["tpr"] = ratio("tpr", tp, tp + fn)
        stats["tnr"] = ratio("tnr", tn, tn + fp)
        stats["f1"] = ratio("f1", 2 * tp, 2 * tp + fp + fn)
    return stats, flags


def nll_eval(dist: PredictiveDistribution, targets) -> float:
    if isinstance(dist, Categorical):
        y = np.asarray(targets).astype(int)
        p_true = dist.probs[np.arange(len(y)), y]
        return float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))
    loss, _, _ = gaussian_nll(dist.mean, dist.var, targets)
    return float(np.mean(loss))


@dataclass
class MetricsReport:
    metrics: dict
    provenance: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def flat(self) -> dict:
        """One flat mapping with lexicographically sorted keys."""
        row = {**self.metrics, **self.provenance, "flags": ";".join(sorted(set(self.flags)))}
        return {k: row[k] for k in sorted(row)}


def _guarded(name, fn, flags):
    try:
        value = fn()
    except DomainError:
        flags.append(name)
        return None
    if value is None or not np.isfinite(value):
        flags.append(name)
        return None
    return float(value)


def classification_report(records: EvalRecords, n_bins: int = 10, threshold: float = 0.5):
    """All classification metrics for one record set; returns ``(metrics, flags)``."""
    flags = []
    probs = records.prediction.probs
    conf = probs.max(axis=1)
    correct = records.correct
    wrong = (~correct).astype(float)
    u = records.uncertainty
    predicted = probs.argmax(axis=1) if records.predicted is None else records.predicted
    stats, stat_flags = classification_stats(predicted, records.target)
    flags.extend(stat_flags)
    best_t, best_ua = best_uncertainty_threshold(u, correct)
    out = {
        **stats,
        "ece": ece(conf, correct, n_bins),
        "uce": _guarded("uce", lambda: uce(u, wrong, n_bins), flags),
        "ua": uncertainty_accuracy(u, correct, threshold),
        "ua_best": best_ua,
        "ua_best_threshold": best_t if np.isfinite(best_t) else None,
        "uauc": _guarded("uauc", lambda: uauc(u, correct), flags),
        "corr_residual": _guarded("corr_residual", lambda: pearson_corr(wrong, u), flags),
        "corr_loss": _guarded("corr_loss", lambda: pearson_corr(records.per_sample_loss, u), flags),
        "wasserstein": _guarded("wasserstein", lambda: wasserstein1(u[correct], u[~correct]), flags),
        "nll": nll_eval(records.prediction, records.target),
    }
    return out, flags


def regression_report(records: EvalRecords, n_bins: int = 10):
    """All regression metrics for one record set; returns ``(metrics, flags)``."""
    flags = []
    dist = records.prediction
    sq = records.squared_error
    out = {
        "mse": float(np.mean(sq)),
        "ece": regression_ece(dist.mean, dist.var, records.target, n_bins),
        "corr_error_pe": _guarded("corr_error_pe", lambda: pearson_corr(sq, gaussian_entropy(dist)), flags),
        "corr_error_var": _guarded("corr_error_var", lambda: pearson_corr(sq, dist.var), flags),
        "nll": nll_eval(dist, records.target),
        "ence": _guarded("ence", lambda: ence(dist.var, sq, n_bins), flags),
        "ause": _guarded("ause", lambda: ause(dist.var, sq), flags),
    }
    return out, flags
