"""Turn a dataset into an ordered stream of experiences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .datasets import Dataset, NormStats, split_train_test
from .errors import ScenarioError

SCENARIOS = ("bin_incremental", "input_incremental")
BIN_MODES = ("quantile", "equal_width")


@dataclass(frozen=True)
class Experience:
    task_id: int
    train: Dataset
    test: Dataset

    @property
    def ids(self) -> np.ndarray:
        return np.concatenate([self.train.ids, self.test.ids])


@dataclass(frozen=True)
class ExperienceStream:
    experiences: tuple[Experience, ...]
    scenario: str
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "experiences", tuple(self.experiences))
        if self.scenario not in SCENARIOS:
            raise ScenarioError(f"unknown scenario {self.scenario!r}")
        if len(self.experiences) < 2:
            raise ScenarioError(f"a stream needs at least 2 experiences, got {len(self.experiences)}")
        seen: set[int] = set()
        for pos, exp in enumerate(self.experiences):
            if exp.task_id != pos:
                raise ScenarioError(f"experience at position {pos} has task_id {exp.task_id}")
            ids = set(exp.ids.tolist())
            if seen & ids:
                raise ScenarioError(f"experience {pos} shares sample ids with an earlier experience")
            seen |= ids
        if self.scenario == "bin_incremental":
            for a, b in zip(self.experiences, self.experiences[1:]):
                if a.train.targets.max() > b.train.targets.min():
                    raise ScenarioError(
                        f"bins {a.task_id} and {b.task_id} overlap in target range")

    def __len__(self) -> int:
        return len(self.experiences)

    def __iter__(self) -> Iterator[Experience]:
        return iter(self.experiences)

    def __getitem__(self, k: int) -> Experience:
        return self.experiences[k]

    @property
    def train_size(self) -> int:
        return sum(len(e.train) for e in self.experiences)

    def all_train(self) -> Dataset:
        return Dataset.concat([e.train for e in self.experiences], "stream/train")

    def all_test(self) -> Dataset:
        return Dataset.concat([e.test for e in self.experiences], "stream/test")

    def map_datasets(self, fn) -> ExperienceStream:
        exps = [Experience(e.task_id, fn(e.train), fn(e.test)) for e in self.experiences]
        return ExperienceStream(tuple(exps), self.scenario, self.provenance)


def _child_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def bin_partition(targets, ids, n_bins: int, mode: str = "quantile") -> list[np.ndarray]:
    """Group sample positions into ``n_bins`` ordered target bins.

    Positions are sorted by target with ties broken by ascending id.
    ``quantile`` cuts the sorted order into contiguous groups whose sizes
    differ by at most one (larger groups first); ``equal_width`` splits
    ``[min, max]`` into equal intervals, closed on the left and with the last
    one also closed on the right. Empty bins come back as empty arrays.
    """
    if n_bins < 2:
        raise ScenarioError(f"n_bins must be >= 2, got {n_bins}")
    if mode not in BIN_MODES:
        raise ScenarioError(f"unknown bin mode {mode!r}")
    y = np.asarray(targets, dtype=np.float64)
    order = np.lexsort((np.asarray(ids), y))
    if mode == "quantile":
        return [g.copy() for g in np.array_split(order, n_bins)]
    edges = np.linspace(y.min(), y.max(), n_bins + 1)
    which = np.searchsorted(edges[1:-1], y[order], side="right")
    return [order[which == b] for b in range(n_bins)]


def build_bin_incremental(dataset: Dataset, n_bins: int, mode: str = "quantile",
                          test_fraction: float = 0.2, seed: int = 0) -> ExperienceStream:
    groups = bin_partition(dataset.targets, dataset.ids, n_bins, mode)
    for b, g in enumerate(groups):
        if g.size < 2:
            raise ScenarioError(f"bin {b} holds {g.size} samples; every bin needs at least 2")
    if len(dataset) < 5 * n_bins:
        raise ScenarioError(f"{len(dataset)} samples is too few for {n_bins} bins (need {5 * n_bins})")
    exps = []
    for b, g in enumerate(groups):
        part = dataset.subset(g, f"{dataset.name}/bin{b}")
        try:
            train, test = split_train_test(part, test_fraction, _child_seed(seed, b))
        except ValueError as exc:
            raise ScenarioError(f"bin {b}: {exc}") from exc
        exps.append(Experience(b, train, test))
    prov = f"bin_incremental(n_bins={n_bins}, mode={mode}, test_fraction={test_fraction}, seed={seed})"
    return ExperienceStream(tuple(exps), "bin_incremental", prov)


def build_input_incremental(dataset: Dataset, category_order: Sequence[str],
                            test_fraction: float = 0.2, seed: int = 0) -> ExperienceStream:
    if not dataset.has_categories:
        raise ScenarioError("input-incremental streams need a category on every sample")
    order = list(category_order)
    if len(set(order)) != len(order):
        raise ScenarioError(f"category_order repeats labels: {order}")
    present = set(dataset.categories)
    unknown_in_order = [c for c in order if c not in present]
    if unknown_in_order:
        raise ScenarioError(f"labels in category_order not found in data: {unknown_in_order}")
    unknown_in_data = sorted(present - set(order))
    if unknown_in_data:
        raise ScenarioError(f"labels in data missing from category_order: {unknown_in_data}")
    if len(order) < 2:
        raise ScenarioError(f"a stream needs at least 2 experiences, got {len(order)} category")
    cats = np.array(dataset.categories, dtype=object)
    exps = []
    for k, label in enumerate(order):
        part = dataset.subset(np.flatnonzero(cats == label), f"{dataset.name}/{label}")
        try:
            train, test = split_train_test(part, test_fraction, _child_seed(seed, k))
        except ValueError as exc:
            raise ScenarioError(f"category {label!r}: {exc}") from exc
        exps.append(Experience(k, train, test))
    prov = f"input_incremental(order={order}, test_fraction={test_fraction}, seed={seed})"
    return ExperienceStream(tuple(exps), "input_incremental", prov)


def normalize_stream(stream: ExperienceStream) -> tuple[ExperienceStream, NormStats]:
    """Z-score features with statistics from the union of all train splits."""
    stats = NormStats.fit(stream.all_train().features)
    return stream.map_datasets(stats.apply), stats
