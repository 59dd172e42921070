"""Tabular datasets: CSV ingestion, a synthetic drag-like generator, splitting and normalisation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ArgumentError, ConfigError, IngestionError, ShapeError


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    target: float
    category: str | None = None


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Dataset:
    """Immutable, column-oriented collection of samples.

    Samples are stored as parallel arrays (``ids``, ``features``, ``targets``,
    ``categories``) so training code can slice batches directly; iterating
    yields :class:`Sample` objects.
    """

    def __init__(self, ids, features, targets, categories=None, name: str = "dataset"):
        ids = np.asarray(ids, dtype=np.int64).ravel()
        features = np.array(features, dtype=np.float64)
        targets = np.array(targets, dtype=np.float64).ravel()
        if features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {features.shape}")
        n = ids.size
        if n == 0:
            raise ArgumentError(f"dataset {name!r} is empty")
        if features.shape[0] != n or targets.size != n:
            raise ShapeError("ids, features and targets differ in length")
        if features.shape[1] < 1:
            raise ShapeError("feature_dim must be >= 1")
        if np.any(ids < 0) or np.unique(ids).size != n:
            raise ArgumentError("sample ids must be unique non-negative integers")
        if not (np.all(np.isfinite(features)) and np.all(np.isfinite(targets))):
            raise ArgumentError(f"dataset {name!r} holds non-finite values")
        if categories is not None:
            categories = tuple(categories)
            if len(categories) != n:
                raise ShapeError("categories differ in length from samples")
            if all(c is None for c in categories):
                categories = None
        self.ids = _frozen(ids)
        self.features = _frozen(features)
        self.targets = _frozen(targets)
        self.categories: tuple[str | None, ...] | None = categories
        self.name = name

    def __len__(self) -> int:
        return self.ids.size

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Sample:
        cat = self.categories[i] if self.categories is not None else None
        return Sample(int(self.ids[i]), self.features[i], float(self.targets[i]), cat)

    def __repr__(self) -> str:
        return f"Dataset(name={self.name!r}, n={len(self)}, feature_dim={self.feature_dim})"

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def samples(self) -> list[Sample]:
        return list(self)

    @property
    def has_categories(self) -> bool:
        return self.categories is not None and all(c is not None for c in self.categories)

    def subset(self, positions, name: str | None = None) -> Dataset:
        pos = np.asarray(positions, dtype=np.int64)
        cats = None if self.categories is None else [self.categories[p] for p in pos]
        return Dataset(self.ids[pos], self.features[pos], self.targets[pos], cats, name or self.name)

    def with_features(self, features: np.ndarray) -> Dataset:
        return Dataset(self.ids, features, self.targets, self.categories, self.name)

    @classmethod
    def concat(cls, parts: Sequence[Dataset], name: str = "concat") -> Dataset:
        parts = list(parts)
        if not parts:
            raise ArgumentError("nothing to concatenate")
        if len(parts) == 1:
            return parts[0]
        if len({p.feature_dim for p in parts}) != 1:
            raise ShapeError("cannot concatenate datasets with different feature_dim")
        if any(p.categories is None for p in parts):
            cats = None
        else:
            cats = [c for p in parts for c in p.categories]
        return cls(
            np.concatenate([p.ids for p in parts]),
            np.vstack([p.features for p in parts]),
            np.concatenate([p.targets for p in parts]),
            cats,
            name,
        )


def load_csv(path, feature_columns: Sequence[str], target_column: str,
             category_column: str | None = None, name: str | None = None) -> Dataset:
    """Read a comma-delimited UTF-8 file with a header row.

    Row numbers in errors are file line numbers, so the first data row is row 2.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        wanted = list(feature_columns) + [target_column]
        if category_column is not None:
            wanted.append(category_column)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise IngestionError(f"{path}: columns not in header: {missing}")
        fidx = [header.index(c) for c in feature_columns]
        tidx = header.index(target_column)
        cidx = header.index(category_column) if category_column is not None else None

        feats, targets, cats = [], [], []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}: row {row_no} has {len(row)} cells, header has {len(header)}", row=row_no)
            values = []
            for col, j in zip(list(feature_columns) + [target_column], fidx + [tidx]):
                try:
                    v = float(row[j])
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {row_no}, column {col!r}: cannot parse {row[j]!r} as a number",
                        row=row_no, column=col) from None
                if not math.isfinite(v):
                    raise IngestionError(f"{path}: row {row_no}, column {col!r}: non-finite value",
                                         row=row_no, column=col)
                values.append(v)
            feats.append(values[:-1])
            targets.append(values[-1])
            if cidx is not None:
                cats.append(row[cidx])
    if not targets:
        raise IngestionError(f"{path} has no data rows")
    return Dataset(np.arange(len(targets)), feats, targets, cats if cidx is not None else None,
                   name or path.stem)


def write_csv(dataset: Dataset, path, feature_columns: Sequence[str] | None = None,
              target_column: str = "target", category_column: str = "category") -> Path:
    path = Path(path)
    cols = list(feature_columns) if feature_columns else [f"x{i}" for i in range(dataset.feature_dim)]
    if len(cols) != dataset.feature_dim:
        raise ShapeError("feature column names do not match feature_dim")
    header = cols + [target_column]
    with_cat = dataset.categories is not None
    if with_cat:
        header.append(category_column)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in dataset:
            row = [repr(float(v)) for v in s.features] + [repr(s.target)]
            if with_cat:
                row.append("" if s.category is None else s.category)
            w.writerow(row)
    return path


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 2000
    feature_dim: int = 8
    n_categories: int = 3
    noise_std: float = 0.01
    seed: int = 0
    cluster_std: float = 1.0

    def __post_init__(self):
        if self.n_samples < 1 or self.feature_dim < 1 or self.n_categories < 1:
            raise ConfigError("n_samples, feature_dim and n_categories must be positive")
        if self.n_samples < self.n_categories:
            raise ConfigError("n_samples must be >= n_categories")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")
        if not self.cluster_std > 0:
            raise ConfigError("cluster_std must be positive")


CENTER_SPACING = 4.0


def category_centers(spec: SyntheticSpec) -> np.ndarray:
    """Cluster centres on the first feature axis, ``4 * cluster_std`` apart and centred on 0."""
    k = np.arange(spec.n_categories, dtype=np.float64)
    centers = np.zeros((spec.n_categories, spec.feature_dim))
    centers[:, 0] = CENTER_SPACING * spec.cluster_std * (k - (spec.n_categories - 1) / 2.0)
    return centers


def synthetic_target(features) -> np.ndarray:
    """Noise-free synthetic response.

    With ``m`` the row mean and ``q`` the row mean of squares of the features::

        y = 0.5 + 0.15 * m**2 + 0.05 * q + 0.2 * sin(x0 + x1)

    (``x1`` is ``x0`` when there is a single feature). ``y >= 0.3`` everywhere,
    which keeps percent errors well defined.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    m = x.mean(axis=1)
    q = (x * x).mean(axis=1)
    x1 = x[:, 1] if x.shape[1] > 1 else x[:, 0]
    return 0.5 + 0.15 * m * m + 0.05 * q + 0.2 * np.sin(x[:, 0] + x1)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    labels = np.arange(n) % spec.n_categories
    centers = category_centers(spec)
    x = centers[labels] + spec.cluster_std * rng.standard_normal((n, spec.feature_dim))
    y = synthetic_target(x)
    if spec.noise_std > 0:
        y = y + spec.noise_std * rng.standard_normal(n)
    cats = [f"c{k}" for k in labels]
    return Dataset(np.arange(n), x, y, cats, name=f"synthetic-{spec.seed}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_train_test(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded train/test partition, stratified by category when every sample has one.

    The test size is ``round(test_fraction * n)`` (half rounds up); per-category
    quotas use largest-remainder allocation so they add up to that total.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ArgumentError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(dataset)
    n_test = _round_half_up(test_fraction * n)
    rng = np.random.default_rng(seed)

    if dataset.has_categories:
        labels = sorted(set(dataset.categories))
        groups = {c: np.flatnonzero(np.array([s == c for s in dataset.categories])) for c in labels}
    else:
        labels = [None]
        groups = {None: np.arange(n)}

    exact = {c: test_fraction * len(groups[c]) for c in labels}
    quota = {c: int(math.floor(exact[c])) for c in labels}
    leftover = n_test - sum(quota.values())
    by_remainder = sorted(labels, key=lambda c: (-(exact[c] - quota[c]), labels.index(c)))
    for c in by_remainder[:max(leftover, 0)]:
        quota[c] += 1

    test_pos = []
    for c in labels:
        perm = rng.permutation(groups[c])
        test_pos.extend(perm[:quota[c]].tolist())
    is_test = np.zeros(n, dtype=bool)
    is_test[test_pos] = True
    train_pos, test_pos = np.flatnonzero(~is_test), np.flatnonzero(is_test)
    if train_pos.size == 0 or test_pos.size == 0:
        raise ArgumentError(
            f"split of {n} samples at fraction {test_fraction} leaves an empty side")
    return (dataset.subset(train_pos, f"{dataset.name}/train"),
            dataset.subset(test_pos, f"{dataset.name}/test"))


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> NormStats:
        # population std; constant columns keep their mean and get std 1
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def apply(self, dataset: Dataset) -> Dataset:
        if dataset.feature_dim != self.mean.size:
            raise ShapeError("dataset feature_dim does not match the normalisation stats")
        return dataset.with_features((dataset.features - self.mean) / self.std)


def normalize_features(train: Dataset, others: Sequence[Dataset] = ()) -> tuple[Dataset, list[Dataset], NormStats]:
    if train is None or len(train) == 0:
        raise ArgumentError("cannot normalise against an empty train set")
    stats = NormStats.fit(train.features)
    return stats.apply(train), [stats.apply(d) for d in others], stats
