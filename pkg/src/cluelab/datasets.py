"""Synthetic generators, CSV ingestion, splitting, scaling, and corruption."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

import numpy as np

from .errors import DomainError, InputError
from .nn import make_rng


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    name: str
    task: str = "classification"
    feature_names: Optional[list] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets)
        if self.features.ndim != 2 or self.features.shape[0] != self.targets.shape[0]:
            raise DomainError("features must be (n, d) with one target per row")
        if not np.all(np.isfinite(self.features)):
            raise DomainError("features must be finite")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        meta = dict(self.meta)
        for key, value in self.meta.items():
            if isinstance(value, np.ndarray) and value.shape[:1] == (len(self),):
                meta[key] = value[idx]
        meta["indices"] = np.asarray(self.meta.get("indices", np.arange(len(self))))[idx]
        return replace(self, features=self.features[idx], targets=self.targets[idx], meta=meta)


def gen_blobs(n_classes: int, n: int, d: int = 2, overlap: float = 0.5, seed: int = 0) -> Dataset:
    """Isotropic Gaussian clusters with per-class standard deviation ``overlap``.

    Cluster centers are standard-normal draws; labels are assigned round-robin
    and then shuffled, so class counts differ by at most one.
    """
    if n_classes < 2 or n < n_classes or d < 1:
        raise DomainError("need n_classes >= 2, n >= n_classes, d >= 1")
    if overlap < 0:
        raise DomainError("overlap must be non-negative")
    rng = make_rng(seed, 11)
    centers = rng.normal(size=(n_classes, d))
    labels = rng.permutation(np.arange(n) % n_classes)
    x = centers[labels] + overlap * rng.normal(size=(n, d))
    return Dataset(x, labels, f"blobs-C{n_classes}-d{d}-s{overlap:g}", "classification",
                   meta={"centers": centers, "overlap": overlap})


def heteroscedastic_std(x):
    return 0.1 + 0.4 * np.abs(x) / 3.0


def gen_heteroscedastic(n: int, seed: int = 0) -> Dataset:
    """y = sin(2x) + noise with std 0.1 + 0.4|x|/3, x uniform on [-3, 3].

    The true mean and variance are kept in ``meta`` for oracle checks.
    """
    if n < 2:
        raise DomainError("need n >= 2")
    rng = make_rng(seed, 12)
    x = rng.uniform(-3.0, 3.0, size=n)
    std = heteroscedastic_std(x)
    y = np.sin(2.0 * x) + std * rng.normal(size=n)
    return Dataset(x[:, None], y, "heteroscedastic-sin", "regression", ["x"],
                   meta={"true_mean": np.sin(2.0 * x), "true_var": std ** 2})


def load_csv(path, target_column: str, task: str = "regression") -> Dataset:
    """Read a numeric, comma-separated table with a header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return _parse_table(rows, target_column, task, str(path))


def _parse_table(rows, target_column, task, source):
    if not rows:
        raise InputError(f"{source}: empty file")
    header = [h.strip() for h in rows[0]]
    if target_column not in header:
        raise InputError(f"{source}: no column named {target_column!r}")
    values = []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{source}: row {r} has {len(row)} cells, expected {len(header)}")
        parsed = []
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{source}: row {r}, column {header[c]!r}: {cell!r} is not a number") from None
            if not math.isfinite(v):
                raise InputError(f"{source}: row {r}, column {header[c]!r}: missing or non-finite value")
            parsed.append(v)
        values.append(parsed)
    table = np.array(values, dtype=float).reshape(len(values), len(header))
    t = header.index(target_column)
    keep = [i for i in range(len(header)) if i != t]
    targets = table[:, t] if task == "regression" else table[:, t].astype(int)
    name = source.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return Dataset(table[:, keep], targets, name, task, [header[i] for i in keep])


def load_boston() -> Dataset:
    """Boston Housing: 506 rows, 13 features, target MEDV (in $1000s)."""
    text = resources.files("cluelab.data").joinpath("boston_housing.csv").read_text(encoding="utf-8")
    return _parse_table(list(csv.reader(text.splitlines())), "MEDV", "regression", "boston_housing.csv")


def split_indices(n: int, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle, then contiguous train/val/test slices.

    Validation and test sizes are rounded from their fractions; train takes
    the remainder.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise DomainError("fractions must be three non-negative numbers summing to 1")
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_train = n - n_val - n_test
    for f, size, label in zip(fractions, (n_train, n_val, n_test), ("train", "val", "test")):
        if f > 0 and size <= 0:
            raise DomainError(f"{label} split would be empty")
    order = make_rng(seed, 13).permutation(n)
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def split(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    return tuple(dataset.subset(idx) for idx in split_indices(len(dataset), fractions, seed))


@dataclass
class Standardizer:
    means: np.ndarray
    stds: np.ndarray
    kept: np.ndarray  # column indices retained (constant columns dropped)

    def transform(self, features):
        return (np.asarray(features, dtype=float)[:, self.kept] - self.means) / self.stds

    def inverse_transform(self, standardized):
        return np.asarray(standardized, dtype=float) * self.stds + self.means


def fit_standardizer(features) -> Standardizer:
    x = np.asarray(features, dtype=float)
    if x.shape[0] == 0:
        raise DomainError("cannot standardize an empty training set")
    stds = x.std(axis=0)
    kept = np.flatnonzero(stds > 0)
    if kept.size < x.shape[1]:
        warnings.warn(f"dropping constant feature columns {np.flatnonzero(stds == 0).tolist()}")
    return Standardizer(x[:, kept].mean(axis=0), stds[kept], kept)


def standardize(train: Dataset, *others: Dataset):
    """Scale features with statistics from ``train`` only.

    Returns ``(datasets, scaler)`` where ``datasets`` lists train first.
    """
    scaler = fit_standardizer(train.features)
    out = []
    for ds in (train, *others):
        names = [ds.feature_names[i] for i in scaler.kept] if ds.feature_names else None
        out.append(replace(ds, features=scaler.transform(ds.features), feature_names=names))
    return out, scaler


@dataclass
class TargetScaler:
    mean: float
    std: float

    @classmethod
    def fit(cls, targets) -> "TargetScaler":
        t = np.asarray(targets, dtype=float)
        std = float(t.std())
        return cls(float(t.mean()), std if std > 0 else 1.0)

    def transform(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std

    def inverse_mean(self, mu):
        return np.asarray(mu, dtype=float) * self.std + self.mean

    def inverse_var(self, var):
        return np.asarray(var, dtype=float) * self.std ** 2


def gaussian_corrupt(dataset: Dataset, severity: float, seed: int = 0) -> Dataset:
    """Add independent Normal(0, severity**2) noise to every feature entry."""
    if severity < 0:
        raise DomainError("severity must be non-negative")
    if severity == 0:
        return replace(dataset, features=dataset.features.copy())
    noise = make_rng(seed, 14).normal(0.0, severity, size=dataset.features.shape)
    return replace(dataset, features=dataset.features + noise, name=f"{dataset.name}+noise{severity:g}")
