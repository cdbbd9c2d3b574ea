"""Experiment runner: train, calibrate, evaluate, and report.

A run pre-trains with the plain task loss (one dropout pass per step), then
continues for ``clue_epochs`` with the composite objective over ``K_train``
dropout passes. Methods other than ``clue`` spend the second phase on the
same schedule with ``alpha = 1``, so every method gets the same epoch budget
and the same random stream; in particular ``clue`` at ``alpha = 1``
reproduces ``task_loss_only`` bit for bit.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .datasets import Dataset, TargetScaler, gaussian_corrupt, gen_blobs, gen_heteroscedastic, load_boston, \
    load_csv, split, standardize
from .errors import ConfigError, NumericError
from .losses import CLUEConfig, clue_batch, task_loss_config
from .metrics import EvalRecords, MetricsReport, classification_records, classification_report, \
    regression_records, regression_report
from .nn import MLPConfig, MLPParams, forward, init_params, make_rng, sgd_step
from .posthoc import ensemble_aggregate, isotonic_apply, isotonic_fit, temperature_apply, temperature_fit
from .uncertainty import Categorical, Gaussian, aggregate, head_to_distribution, mc_forward, softmax

log = logging.getLogger(__name__)

METHODS = ("task_loss_only", "clue", "ensemble", "posthoc_isotonic", "posthoc_temperature", "nll_head")

NOTES = {
    "classification": "u=normalized predictive entropy of the MC-averaged distribution",
    "regression": ("u=total predictive variance (mean pass variance + variance of pass means), raw units; "
                   "ece=central-interval coverage error over 10 levels; metrics in original target units; "
                   "model=MLP"),
}
BOSTON_NOTE = ("published Boston figures (MSE 15.3, ECE 0.02) come from a different architecture; "
               "this MLP substitute is compared directionally, not for equality")

# random sub-stream keys
_TRAIN, _EVAL, _VAL, _CORRUPT = 1, 2, 3, 4


@dataclass
class ExperimentConfig:
    dataset: dict
    model: dict = field(default_factory=lambda: {"hidden_widths": [64, 64], "activation": "relu",
                                                 "dropout_rate": 0.3})
    method: str = "clue"
    alpha: float = 0.5
    members: int = 5
    pretrain_epochs: int = 30
    clue_epochs: int = 30
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 64
    K_train: int = 5
    K_eval: int = 5
    seed: int = 0
    bins: int = 10
    split: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    entropy_source: str = "aggregate"
    eval_corruption: float = 0.0
    grad_clip: float = 0.0  # max global gradient norm; 0 disables

    def __post_init__(self):
        if not isinstance(self.dataset, dict) or "name" not in self.dataset:
            raise ConfigError("dataset must be an object with a 'name'")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        for name in ("pretrain_epochs", "clue_epochs"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("batch_size", "K_train", "K_eval", "members", "bins"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0 or self.weight_decay < 0:
            raise ConfigError("momentum must lie in [0, 1) and weight_decay be >= 0")
        if self.eval_corruption < 0 or self.grad_clip < 0:
            raise ConfigError("eval_corruption and grad_clip must be >= 0")
        if len(self.split) != 3:
            raise ConfigError("split needs train/val/test fractions")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


@dataclass
class RunResult:
    report: MetricsReport
    trace: list
    duration: float
    time_per_epoch: float
    params_digest: str

    def row(self, include_timing: bool = False) -> dict:
        row = {**self.report.flat(), "params_digest": self.params_digest}
        if include_timing:
            row["time_per_epoch"] = self.time_per_epoch
        return {k: row[k] for k in sorted(row)}


@dataclass
class PreparedData:
    train: Dataset
    val: Dataset
    test: Dataset
    task: str
    n_classes: int
    target_scaler: Optional[TargetScaler]


def build_dataset(spec: dict, seed: int, data_dir=None) -> Dataset:
    spec = dict(spec)
    name = spec.pop("name")
    data_seed = int(spec.pop("seed", seed))
    allowed = {"blobs": {"n_classes", "n", "d", "overlap"}, "heteroscedastic": {"n"}, "boston": set(),
               "csv": {"path", "target_column", "task"}}
    if name not in allowed:
        raise ConfigError(f"unknown dataset {name!r}")
    if set(spec) - allowed[name]:
        raise ConfigError(f"unknown dataset fields for {name!r}: {sorted(set(spec) - allowed[name])}")
    if name == "blobs":
        return gen_blobs(spec.get("n_classes", 4), spec.get("n", 4000), spec.get("d", 2),
                         spec.get("overlap", 0.5), data_seed)
    if name == "heteroscedastic":
        return gen_heteroscedastic(spec.get("n", 2000), data_seed)
    if name == "boston":
        return load_boston()
    if "path" not in spec or "target_column" not in spec:
        raise ConfigError("csv dataset needs 'path' and 'target_column'")
    path = Path(spec["path"])
    if data_dir is not None and not path.is_absolute():
        path = Path(data_dir) / path
    return load_csv(path, spec["target_column"], spec.get("task", "regression"))


def prepare_data(config: ExperimentConfig, data_dir=None) -> PreparedData:
    data = build_dataset(config.dataset, config.seed, data_dir)
    train, val, test = split(data, tuple(config.split), config.seed)
    (train, val, test), _ = standardize(train, val, test)
    if config.eval_corruption > 0:
        test = gaussian_corrupt(test, config.eval_corruption, make_rng(config.seed, _CORRUPT).integers(2 ** 32))
    if data.task == "classification":
        n_classes = int(data.targets.max()) + 1
        return PreparedData(train, val, test, "classification", n_classes, None)
    scaler = TargetScaler.fit(train.targets)
    scaled = [dataclasses.replace(ds, targets=scaler.transform(ds.targets)) for ds in (train, val, test)]
    return PreparedData(*scaled, "regression", 0, scaler)


def model_config(config: ExperimentConfig, data: PreparedData) -> MLPConfig:
    model = dict(config.model)
    hidden = model.pop("hidden_widths", [64, 64])
    activation = model.pop("activation", "relu")
    rate = model.pop("dropout_rate", 0.3)
    if model:
        raise ConfigError(f"unknown model fields: {sorted(model)}")
    out = data.n_classes if data.task == "classification" else 2
    head = "categorical" if data.task == "classification" else "gaussian"
    return MLPConfig((data.train.features.shape[1], *hidden, out), activation, rate, head)


def objectives(config: ExperimentConfig, mlp: MLPConfig):
    """(pre-training objective, second-phase objective) for a method."""
    task = "gaussian_nll" if config.method == "nll_head" else None
    if config.method == "nll_head" and mlp.head != "gaussian":
        raise ConfigError("nll_head needs a regression dataset")
    if config.method.startswith("posthoc") and mlp.head != "categorical":
        raise ConfigError(f"{config.method} is only defined for classification")
    base = task_loss_config(mlp.head, task)
    alpha = config.alpha if config.method == "clue" else 1.0
    return base, dataclasses.replace(base, alpha=alpha, entropy_source=config.entropy_source)


def train_model(config: ExperimentConfig, mlp: MLPConfig, train: Dataset, stream: int = 0):
    """Run both training phases; returns ``(params, trace, epoch_times)``."""
    params = init_params(mlp, config.seed * 1000 + stream)
    rng = make_rng(config.seed, _TRAIN, stream)
    pre, fine = objectives(config, mlp)
    x, y = train.features, train.targets
    n = len(train)
    trace, times = [], []
    schedule = [(pre, 1)] * config.pretrain_epochs + [(fine, config.K_train)] * config.clue_epochs
    for epoch, (objective, K) in enumerate(schedule):
        start = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            loss, grads = clue_batch(params, mlp, x[idx], y[idx], objective, K, rng=rng)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            if config.grad_clip > 0:
                grads = grads.clipped(config.grad_clip)
            params = sgd_step(params, grads, config.lr, config.momentum, config.weight_decay)
            total += loss * len(idx)
        trace.append(total / n)
        times.append(time.perf_counter() - start)
    return params, trace, times


@dataclass
class TrainedModel:
    config: ExperimentConfig
    mlp: MLPConfig
    data: PreparedData
    members: list  # list of MLPParams; one unless method == ensemble
    trace: list
    epoch_times: list

    @property
    def params_digest(self) -> str:
        if len(self.members) == 1:
            return self.members[0].digest()
        h = hashlib.sha256()
        for p in self.members:
            h.update(p.digest().encode())
        return h.hexdigest()


def train(config: ExperimentConfig, data_dir=None) -> TrainedModel:
    data = prepare_data(config, data_dir)
    mlp = model_config(config, data)
    n_members = config.members if config.method == "ensemble" else 1
    members, traces, times = [], [], []
    for i in range(n_members):
        params, trace, t = train_model(config, mlp, data.train, stream=i)
        members.append(params)
        traces.append(trace)
        times.append(t)
        log.info("trained member %d/%d, final loss %.4f", i + 1, n_members, trace[-1] if trace else float("nan"))
    trace = list(np.mean(traces, axis=0)) if traces and traces[0] else []
    epoch_times = list(np.sum(times, axis=0)) if times and times[0] else []
    return TrainedModel(config, mlp, data, members, [float(v) for v in trace], [float(v) for v in epoch_times])


def _mc_logits(model: TrainedModel, features, K: int, rng):
    out, _ = mc_forward(model.members[0], model.mlp, features, K, rng=rng)
    return out


def _recalibrated(probs, new_top):
    """Replace each row's top probability, rescaling the rest to keep a simplex."""
    probs = np.array(probs)
    rows = np.arange(probs.shape[0])
    top = probs.argmax(axis=1)
    old_top = probs[rows, top]
    new_top = np.clip(new_top, 0.0, 1.0)
    rest = 1.0 - old_top
    scale = np.where(rest > 0, (1.0 - new_top) / np.where(rest > 0, rest, 1.0), 0.0)
    out = probs * scale[:, None]
    out[rows, top] = new_top
    # rows with no residual mass spread (1 - new_top) uniformly over the other classes
    stuck = rest <= 0
    if np.any(stuck):
        C = probs.shape[1]
        out[stuck] = ((1.0 - new_top[stuck]) / (C - 1))[:, None]
        out[rows[stuck], top[stuck]] = new_top[stuck]
    return out


def predict(model: TrainedModel, features, K: int, seed_key: int = _EVAL, val_features=None, val_targets=None):
    """Predictive distribution for ``features`` under the run's method.

    Returns ``(distribution, predicted_labels or None)``; posthoc methods
    fit their calibrator on the validation split first.
    """
    cfg = model.config
    rng = make_rng(cfg.seed, seed_key)
    if cfg.method == "ensemble":
        dists = []
        for params in model.members:
            out, _ = forward(params, model.mlp, features)
            dists.append(head_to_distribution(out, model.mlp))
        return ensemble_aggregate(dists), None
    if cfg.method == "posthoc_temperature":
        val_logits = _mc_logits(model, val_features, K, make_rng(cfg.seed, _VAL))
        T = temperature_fit(val_logits, val_targets)
        return Categorical(temperature_apply(_mc_logits(model, features, K, rng), T)), None
    if cfg.method == "posthoc_isotonic":
        val_probs = softmax(_mc_logits(model, val_features, K, make_rng(cfg.seed, _VAL)), axis=2).mean(axis=0)
        correct = (val_probs.argmax(axis=1) == val_targets).astype(float)
        mapping = isotonic_fit(val_probs.max(axis=1), correct)
        probs = softmax(_mc_logits(model, features, K, rng), axis=2).mean(axis=0)
        labels = probs.argmax(axis=1)
        return Categorical(_recalibrated(probs, isotonic_apply(mapping, probs.max(axis=1)))), labels
    out = _mc_logits(model, features, K, rng)
    return aggregate([head_to_distribution(out[k], model.mlp) for k in range(K)]), None


def evaluate(model: TrainedModel, K_eval: Optional[int] = None) -> MetricsReport:
    cfg = model.config
    K = K_eval or cfg.K_eval
    data = model.data
    dist, labels = predict(model, data.test.features, K, val_features=data.val.features,
                           val_targets=data.val.targets)
    if data.task == "classification":
        records = classification_records(dist, data.test.targets)
        if labels is not None:
            records.correct = labels == data.test.targets
            records.predicted = labels
        metrics, flags = classification_report(records, cfg.bins)
    else:
        scaler = data.target_scaler
        dist = Gaussian(scaler.inverse_mean(dist.mean), scaler.inverse_var(dist.var))
        records = regression_records(dist, scaler.inverse_mean(data.test.targets))
        metrics, flags = regression_report(records, cfg.bins)
    provenance = {
        "alpha": cfg.alpha if cfg.method == "clue" else 1.0,
        "config_digest": cfg.digest(),
        "dataset": data.test.name,
        "epochs": cfg.pretrain_epochs + cfg.clue_epochs,
        "k_eval": K,
        "k_train": cfg.K_train,
        "method": cfg.method,
        "n_test": len(data.test),
        "notes": NOTES[data.task] + ("; " + BOSTON_NOTE if cfg.dataset.get("name") == "boston" else ""),
        "seed": cfg.seed,
        "task": data.task,
        "version": __version__,
    }
    return MetricsReport(metrics, provenance, flags)


def _result(model: TrainedModel, report: MetricsReport, duration: float) -> RunResult:
    tpe = float(np.mean(model.epoch_times)) if model.epoch_times else 0.0
    return RunResult(report, model.trace, duration, tpe, model.params_digest)


def run_experiment(config: ExperimentConfig, data_dir=None) -> RunResult:
    start = time.perf_counter()
    model = train(config, data_dir)
    report = evaluate(model)
    return _result(model, report, time.perf_counter() - start)


def sweep_mc_samples(config: ExperimentConfig, Ks: Sequence[int], data_dir=None) -> list:
    """Train once, then evaluate with each number of dropout passes."""
    if not Ks:
        raise ConfigError("need at least one K")
    start = time.perf_counter()
    model = train(config, data_dir)
    results = []
    for K in Ks:
        if int(K) < 1:
            raise ConfigError("every K must be >= 1")
        results.append(_result(model, evaluate(model, int(K)), time.perf_counter() - start))
    return results


def sweep_alpha(config: ExperimentConfig, alphas: Sequence[float], data_dir=None) -> list:
    """One full ``clue`` run per alpha on shared data splits."""
    if not alphas:
        raise ConfigError("need at least one alpha")
    return [run_experiment(dataclasses.replace(config, method="clue", alpha=float(a)), data_dir) for a in alphas]


STRING_FIELDS = {"config_digest", "dataset", "flags", "method", "notes", "params_digest", "task", "version"}
INT_FIELDS = {"epochs", "k_eval", "k_train", "n_test", "seed"}


def _rows(results, include_timing):
    rows = []
    for r in results:
        row = r.row(include_timing) if isinstance(r, RunResult) else dict(r)
        rows.append({k: (None if v == "" or isinstance(v, float) and not np.isfinite(v) else v)
                     for k, v in row.items()})
    return rows


def render_report(results, fmt: str = "json", include_timing: bool = False) -> str:
    """Serialize run results: a JSON array of flat objects, or CSV with sorted columns."""
    if not results:
        raise ValueError("no results to report")
    rows = _rows(results, include_timing)
    if fmt == "json":
        return json.dumps(rows, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if fmt != "csv":
        raise ConfigError(f"unknown report format {fmt!r}")
    columns = sorted(set().union(*rows))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row.get(c) is None else repr(row[c]) if isinstance(row[c], float) else row[c]
                         for c in columns])
    return buf.getvalue()


def emit_report(results, fmt: str, path, include_timing: bool = False) -> Path:
    """Write the report atomically: a temp file in the target directory, then rename."""
    text = render_report(results, fmt, include_timing)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _coerce(key, text):
    if text == "":
        return None
    if key in STRING_FIELDS:
        return text
    if key in INT_FIELDS:
        return int(text)
    return float(text)


def parse_report(text: str, fmt: str = "json") -> list:
    if fmt == "json":
        return json.loads(text)
    reader = csv.DictReader(io.StringIO(text))
    return [{k: _coerce(k, v) for k, v in row.items()} for row in reader]


def read_report(path, fmt: Optional[str] = None) -> list:
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix == ".csv" else "json")
    return parse_report(path.read_text(encoding="utf-8"), fmt)
