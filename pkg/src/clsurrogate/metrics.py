"""Regression metrics and forgetting measures over an evaluation matrix.

Indices are 0-based: ``M[k, j]`` is the test MAE on experience ``j`` after
training through experience ``k``. Entries with ``j > k`` are undefined and
held as NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArgumentError, MetricError, ShapeError

MPE_MIN_TARGET = 1e-12


class EvalMatrix:
    """Lower-triangular K x K matrix of per-experience test MAEs."""

    def __init__(self, values):
        v = np.array(values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 1:
            raise ShapeError(f"eval matrix must be square and non-empty, got shape {v.shape}")
        v[np.triu_indices(v.shape[0], 1)] = np.nan
        self.values = v

    @classmethod
    def empty(cls, k: int) -> EvalMatrix:
        return cls(np.full((k, k), np.nan))

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, idx):
        return self.values[idx]

    def __setitem__(self, idx, value):
        k, j = idx
        if j > k:
            raise ArgumentError(f"entry ({k}, {j}) lies above the diagonal")
        self.values[k, j] = value

    def __eq__(self, other) -> bool:
        if not isinstance(other, EvalMatrix):
            return NotImplemented
        return np.array_equal(self.values, other.values, equal_nan=True)

    def __repr__(self) -> str:
        return f"EvalMatrix({self.to_list()!r})"

    def is_complete(self) -> bool:
        tri = self.values[np.tril_indices(self.size)]
        return bool(np.all(np.isfinite(tri)) and np.all(tri >= 0))

    def to_list(self) -> list[list[float | None]]:
        return [[float(x) if j <= k and np.isfinite(x) else None for j, x in enumerate(row)]
                for k, row in enumerate(self.values)]

    @classmethod
    def from_list(cls, rows) -> EvalMatrix:
        return cls([[np.nan if x is None else x for x in row] for row in rows])


def _matrix(m) -> np.ndarray:
    return m.values if isinstance(m, EvalMatrix) else np.asarray(m, dtype=np.float64)


def _pair(predictions, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size != t.size:
        raise ShapeError(f"{p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ArgumentError("metric of an empty set is undefined")
    return p, t


def mae(predictions, targets) -> float:
    p, t = _pair(predictions, targets)
    return float(np.mean(np.abs(t - p)))


def mpe(predictions, targets) -> float:
    """Mean absolute percent error, in percent."""
    p, t = _pair(predictions, targets)
    small = np.flatnonzero(np.abs(t) < MPE_MIN_TARGET)
    if small.size:
        raise MetricError(f"percent error undefined: target of sample {int(small[0])} is ~0")
    return float(100.0 * np.mean(np.abs(t - p) / np.abs(t)))


def _check_pair(m: np.ndarray, k: int, j: int) -> None:
    if not (0 <= j < k < m.shape[0]):
        raise ArgumentError(f"need 0 <= j < k < {m.shape[0]}, got k={k}, j={j}")


def forgetting(eval_matrix, k: int, j: int) -> float:
    """Signed forgetting: ``M[k, j]`` minus the best earlier MAE on ``j``.

    Negative values mean the later training improved experience ``j``.
    """
    m = _matrix(eval_matrix)
    _check_pair(m, k, j)
    return float(m[k, j] - np.min(m[j:k, j]))


def forgetting_ratio(eval_matrix, k: int, j: int) -> float:
    m = _matrix(eval_matrix)
    f = forgetting(m, k, j)
    if f == 0.0:
        return 0.0
    base = m[j, j]
    if not base > 0:
        raise MetricError(f"forgetting ratio undefined: MAE on experience {j} when learned is {base}")
    return float(f / base)


def aggregate_forgetting(eval_matrix, k: int) -> tuple[float, float]:
    """(mean forgetting ratio, mean forgetting) over experiences ``0..k-1``."""
    m = _matrix(eval_matrix)
    if not 1 <= k < m.shape[0]:
        raise ArgumentError(f"need 1 <= k < {m.shape[0]}, got {k}")
    frs = [forgetting_ratio(m, k, j) for j in range(k)]
    fs = [forgetting(m, k, j) for j in range(k)]
    return float(np.mean(frs)), float(np.mean(fs))


def incremental_mae(eval_matrix, j: int) -> float:
    """Mean MAE over experiences seen after training stage ``j``."""
    m = _matrix(eval_matrix)
    if not 0 <= j < m.shape[0]:
        raise ArgumentError(f"stage {j} out of range for {m.shape[0]} experiences")
    return float(np.mean(m[j, : j + 1]))


def best_forgetting_over_trials(avg_frs: Sequence[float]) -> float:
    vals = list(avg_frs)
    if not vals:
        raise ArgumentError("best forgetting needs at least one trial")
    return float(min(vals))


@dataclass
class MetricsReport:
    final_mae: float
    final_mpe: float
    per_experience_mae: list[float]
    forgetting: list[list[float | None]]
    forgetting_ratio: list[list[float | None]]
    avg_fr: list[float | None]
    avg_f: list[float | None]
    incremental_mae: list[float]
    best_fr: float | None = field(default=None)

    @property
    def final_avg_fr(self) -> float:
        return self.avg_fr[-1]


def metrics_report(eval_matrix, final_mae: float, final_mpe: float) -> MetricsReport:
    m = _matrix(eval_matrix)
    K = m.shape[0]
    f = [[forgetting(m, k, j) if j < k else None for j in range(K)] for k in range(K)]
    fr = [[forgetting_ratio(m, k, j) if j < k else None for j in range(K)] for k in range(K)]
    agg = [aggregate_forgetting(m, k) if k >= 1 else (None, None) for k in range(K)]
    return MetricsReport(
        final_mae=final_mae,
        final_mpe=final_mpe,
        per_experience_mae=[float(x) for x in m[K - 1]],
        forgetting=f,
        forgetting_ratio=fr,
        avg_fr=[a for a, _ in agg],
        avg_f=[b for _, b in agg],
        incremental_mae=[incremental_mae(m, j) for j in range(K)],
    )
